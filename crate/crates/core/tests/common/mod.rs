//! Independent oracles and case generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use adnflex::capability::{CapabilityParams, LimitKind};
use adnflex::model::{load_case, parse_case, NetworkCase};
use adnflex::powerflow::{IbgMode, OperatingPoint, PowerFlow, SlackVoltage, SourceMode};
use nalgebra::{Complex, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn case(name: &str) -> NetworkCase {
    load_case(data(name)).unwrap()
}

type C = Complex<f64>;

fn ybus(case: &NetworkCase) -> Vec<Vec<C>> {
    assert!(case.transformers.is_empty(), "oracle handles lines only");
    let n = case.buses.len();
    let idx = |id: &str| case.bus_index(id).unwrap();
    let mut y = vec![vec![C::new(0.0, 0.0); n]; n];
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (a, b) = (idx(&br.from), idx(&br.to));
        let ys = C::new(1.0, 0.0) / C::new(br.r, br.x);
        let sh = C::new(0.0, br.b / 2.0);
        y[a][a] += ys + sh;
        y[b][b] += ys + sh;
        y[a][b] -= ys;
        y[b][a] -= ys;
    }
    y
}

/// Polar power flow result: magnitudes, angles (rad) and loss slack (MW).
pub struct PolarSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub delta_l: f64,
    x: DVector<f64>,
}

/// Transmission power flow in polar form with a distributed slack and a
/// finite-difference Newton Jacobian; generator buses are PV at `v_ref`.
pub fn polar_powerflow(case: &NetworkCase, lambda: f64) -> Option<PolarSolution> {
    polar_from(case, lambda, None)
}

fn polar_from(case: &NetworkCase, lambda: f64, warm: Option<&PolarSolution>) -> Option<PolarSolution> {
    let n = case.buses.len();
    let base = case.base_mva;
    let y = ybus(case);
    let slack = case.slack_index().unwrap();
    let idx = |id: &str| case.bus_index(id).unwrap();
    let mut v_fix: Vec<Option<f64>> = vec![None; n];
    for g in &case.generators {
        v_fix[idx(&g.bus)] = Some(g.v_ref);
    }
    if v_fix[slack].is_none() {
        v_fix[slack] = Some(case.buses[slack].v_set.unwrap_or(1.0));
    }
    let w_sum: f64 = case.generators.iter().map(|g| g.w).sum();
    let mut p_dem = vec![0.0; n];
    let mut q_dem = vec![0.0; n];
    for l in &case.loads {
        p_dem[idx(&l.bus)] += l.p0;
        q_dem[idx(&l.bus)] += l.q0;
    }
    for a in &case.adns {
        p_dem[idx(&a.pcc_bus)] += a.p0;
        q_dem[idx(&a.pcc_bus)] += a.q0;
    }
    let mut s_tot = 0.0;
    if let Some(d) = &case.stress {
        for (b, v) in &d.dp {
            p_dem[idx(b)] += lambda * v;
            s_tot += v;
        }
        for (b, v) in &d.dq {
            q_dem[idx(b)] += lambda * v;
        }
    }
    let angles: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let mags: Vec<usize> = (0..n).filter(|&k| v_fix[k].is_none()).collect();
    let nx = angles.len() + mags.len() + 1;
    let unpack = |x: &DVector<f64>| {
        let mut vm: Vec<f64> = (0..n).map(|k| v_fix[k].unwrap_or(1.0)).collect();
        let mut va = vec![0.0; n];
        for (i, &k) in angles.iter().enumerate() {
            va[k] = x[i];
        }
        for (i, &k) in mags.iter().enumerate() {
            vm[k] = x[angles.len() + i];
        }
        (vm, va, x[nx - 1])
    };
    let mismatch = |x: &DVector<f64>| {
        let (vm, va, dl) = unpack(x);
        let v: Vec<C> = (0..n).map(|k| C::from_polar(vm[k], va[k])).collect();
        let mut p_gen = vec![0.0; n];
        let shift = dl + lambda * s_tot;
        for g in &case.generators {
            p_gen[idx(&g.bus)] += g.p_g0 + g.w / w_sum * shift;
        }
        if case.generators.is_empty() {
            p_gen[slack] += shift;
        }
        let mut r = DVector::zeros(nx);
        let mut row = 0;
        let mut q_rows = Vec::new();
        for k in 0..n {
            let i: C = (0..n).map(|m| y[k][m] * v[m]).sum();
            let s = v[k] * i.conj();
            r[row] = s.re - (p_gen[k] - p_dem[k]) / base;
            row += 1;
            if v_fix[k].is_none() {
                q_rows.push(s.im + q_dem[k] / base);
            }
        }
        for q in q_rows {
            r[row] = q;
            row += 1;
        }
        r
    };
    let mut x = match warm {
        Some(w) => w.x.clone(),
        None => {
            let mut x = DVector::zeros(nx);
            for i in 0..mags.len() {
                x[angles.len() + i] = 1.0;
            }
            x
        }
    };
    for _ in 0..40 {
        let f = mismatch(&x);
        if f.amax() < 1e-11 {
            let (vm, va, dl) = unpack(&x);
            return Some(PolarSolution { vm, va, delta_l: dl, x });
        }
        let h = 1e-7;
        let mut j = DMatrix::zeros(nx, nx);
        for c in 0..nx {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            j.set_column(c, &((mismatch(&xp) - mismatch(&xm)) / (2.0 * h)));
        }
        x -= j.lu().solve(&f)?;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

/// Largest stress level reached by warm-started polar continuation with
/// step halving, after shifting each ADN by `adj` (MW, Mvar). Generators
/// stay voltage controlled, so only unlimited cases qualify.
pub fn polar_nose(case: &NetworkCase, adj: &[(f64, f64)]) -> f64 {
    let mut c = case.clone();
    for (a, &(dp, dq)) in c.adns.iter_mut().zip(adj) {
        a.p0 += dp;
        a.q0 += dq;
    }
    let mut sol = polar_from(&c, 0.0, None).expect("base case solves");
    let (mut lam, mut h) = (0.0, 0.05);
    while h > 1e-9 {
        match polar_from(&c, lam + h, Some(&sol)) {
            // small voltage moves keep Newton on the upper branch
            Some(next) if next.vm.iter().zip(&sol.vm).all(|(a, b)| (a - b).abs() < 0.05) => {
                lam += h;
                sol = next;
            }
            _ => h *= 0.5,
        }
    }
    lam
}

/// State of the two-bus feeder at given MV and converter voltages.
#[derive(Clone, Copy, Debug)]
pub struct TwoBusState {
    pub p_pcc: f64,
    pub q_pcc: f64,
    pub q_g: f64,
    pub tap: f64,
    pub feasible: bool,
}

/// Closed-form description of a feeder made of an LTC, an MV load bus `d`
/// and a converter bus `g`, taken from the case data.
pub struct TwoBusOracle {
    y: C,
    x_t: f64,
    load: (f64, f64, f64, f64),
    p_g: f64,
    s_max: f64,
    v_pcc: f64,
    tap: (f64, f64),
    base: f64,
    pub v_d: (f64, f64),
    pub v_g: (f64, f64),
    pub v_d0: f64,
    pub q_g0: f64,
}

impl TwoBusOracle {
    pub fn new(case: &NetworkCase) -> Self {
        let t = &case.transformers[0];
        let br = &case.branches[0];
        let l = &case.loads[0];
        let g = &case.ibgs[0];
        let bus = |id: &str| &case.buses[case.bus_index(id).unwrap()];
        let slack = case.slack_index().unwrap();
        Self {
            y: C::new(1.0, 0.0) / C::new(br.r, br.x),
            x_t: t.x,
            load: (l.p0 / case.base_mva, l.q0 / case.base_mva, l.a, l.b),
            p_g: g.p_g0 / case.base_mva,
            s_max: g.s_nom * g.i_n / case.base_mva,
            v_pcc: case.buses[slack].v_set.unwrap_or(1.0),
            tap: (t.tap_min, t.tap_max),
            base: case.base_mva,
            v_d: (bus(&t.mv_bus).v_min, bus(&t.mv_bus).v_max),
            v_g: (bus(&g.bus).v_min, bus(&g.bus).v_max),
            v_d0: t.v_set,
            q_g0: g.q_g0,
        }
    }

    /// Solves the converter angle from its active balance by bisection.
    pub fn state(&self, v_d: f64, v_g: f64) -> Option<TwoBusState> {
        let inj = |th: f64| {
            let vg = C::from_polar(v_g, th);
            vg * (self.y * (vg - C::new(v_d, 0.0))).conj()
        };
        let (mut lo, mut hi) = (-1.0, 1.2);
        if inj(lo).re > self.p_g || inj(hi).re < self.p_g {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if inj(mid).re < self.p_g {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let th = 0.5 * (lo + hi);
        let sg = inj(th);
        let vg = C::from_polar(v_g, th);
        let vd = C::new(v_d, 0.0);
        let s_line = vd * (self.y * (vd - vg)).conj();
        let (p0, q0, a, b) = self.load;
        let p_d = p0 * v_d.powf(a) + s_line.re;
        let q_d = q0 * v_d.powf(b) + s_line.im;
        let q_pcc = q_d + self.x_t * (p_d * p_d + q_d * q_d) / (v_d * v_d);
        let v_s = C::new(v_d + self.x_t * q_d / v_d, self.x_t * p_d / v_d).norm();
        let tap = self.v_pcc / v_s;
        let feasible = tap >= self.tap.0 - 1e-12
            && tap <= self.tap.1 + 1e-12
            && sg.norm() <= self.s_max * v_g * (1.0 + 1e-12);
        Some(TwoBusState {
            p_pcc: p_d * self.base,
            q_pcc: q_pcc * self.base,
            q_g: sg.im * self.base,
            tap,
            feasible,
        })
    }

    /// Base consumption: MV voltage at the LTC setpoint, converter at its
    /// scheduled reactive output.
    pub fn base(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (0.8, 1.2);
        let q = |v: f64| self.state(self.v_d0, v).unwrap().q_g - self.q_g0;
        assert!(q(lo) < 0.0 && q(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = self.state(self.v_d0, 0.5 * (lo + hi)).unwrap();
        (s.p_pcc, s.q_pcc)
    }

    /// Feasible `(ΔP, ΔQ)` over a `steps x steps` grid of both voltages.
    pub fn grid(&self, steps: usize) -> Vec<(f64, f64)> {
        let (p0, q0) = self.base();
        let mut out = Vec::new();
        for i in 0..=steps {
            let v_d = self.v_d.0 + (self.v_d.1 - self.v_d.0) * i as f64 / steps as f64;
            for j in 0..=steps {
                let v_g = self.v_g.0 + (self.v_g.1 - self.v_g.0) * j as f64 / steps as f64;
                if let Some(s) = self.state(v_d, v_g) {
                    if s.feasible {
                        out.push((s.p_pcc - p0, s.q_pcc - q0));
                    }
                }
            }
        }
        out
    }
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random connected transmission case with `n` buses: a spanning tree plus
/// a few meshing branches, constant-power loads, one to three voltage
/// controlled generators (one at the slack) and an optional ADN.
pub fn random_transmission(rng: &mut StdRng, n: usize) -> NetworkCase {
    assert!(n >= 2);
    let mut buses = Vec::new();
    let n_gen = rng.random_range(1..=3.min(n));
    for k in 0..n {
        let kind = if k == 0 {
            "slack"
        } else if k < n_gen {
            "generator"
        } else {
            "load"
        };
        buses.push(serde_json::json!({"id": format!("b{k}"), "kind": kind, "v_min": 0.5, "v_max": 1.5}));
    }
    let mut branches = Vec::new();
    let mut add = |rng: &mut StdRng, a: usize, b: usize, i: usize| {
        branches.push(serde_json::json!({
            "id": format!("l{i}"), "from": format!("b{a}"), "to": format!("b{b}"),
            "r": rng.random_range(0.002..0.03), "x": rng.random_range(0.02..0.12),
            "b": rng.random_range(0.0..0.04)
        }));
    };
    for k in 1..n {
        let parent = rng.random_range(0..k);
        add(rng, parent, k, k);
    }
    for i in 0..rng.random_range(0..=n / 2) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            add(rng, a, b, n + i);
        }
    }
    let mut loads = Vec::new();
    let mut total = 0.0;
    for k in n_gen..n {
        let p = rng.random_range(5.0..40.0);
        total += p;
        loads.push(serde_json::json!({"bus": format!("b{k}"), "p0": p, "q0": rng.random_range(0.0..0.4) * p}));
    }
    let mut generators = Vec::new();
    for k in 0..n_gen {
        generators.push(serde_json::json!({
            "id": format!("g{k}"), "bus": format!("b{k}"),
            "p_g0": total / n_gen as f64 * rng.random_range(0.6..1.0),
            "p_min": -1e5, "p_max": 1e5,
            "v_ref": rng.random_range(1.0..1.05), "w": rng.random_range(0.2..1.0)
        }));
    }
    let last = format!("b{}", n - 1);
    let adns = if n > n_gen && rng.random_bool(0.5) {
        serde_json::json!([{"id": "adn", "pcc_bus": last, "p0": rng.random_range(-5.0..10.0), "q0": rng.random_range(-3.0..3.0)}])
    } else {
        serde_json::json!([])
    };
    let stress = serde_json::json!({"dp": {last.clone(): 10.0}, "dq": {last: 2.0}});
    let text = serde_json::json!({
        "name": "random", "base_mva": 100.0,
        "buses": buses, "branches": branches, "loads": loads,
        "generators": generators, "adns": adns, "stress": stress
    })
    .to_string();
    parse_case(&text).unwrap()
}

/// Random feeder-scope case with voltage-dependent loads and converters.
pub fn random_feeder(rng: &mut StdRng, n: usize) -> NetworkCase {
    let mut c = random_transmission(rng, n);
    c.scope = adnflex::model::Scope::Feeder;
    for l in &mut c.loads {
        l.a = rng.random_range(0.0..2.0);
        l.b = rng.random_range(0.0..3.0);
    }
    let n_gen = c.generators.len();
    for k in n_gen..n {
        if rng.random_bool(0.4) {
            c.ibgs.push(adnflex::model::IbgUnit {
                id: format!("ibg{k}"),
                bus: format!("b{k}"),
                s_nom: rng.random_range(5.0..30.0),
                i_n: 1.0,
                p_g0: rng.random_range(0.0..5.0),
                p_g_min: 0.0,
                p_g_max: 5.0,
                q_g0: rng.random_range(-2.0..2.0),
                v_set: None,
            });
        }
    }
    c
}

pub fn machine(rng: &mut StdRng) -> CapabilityParams {
    CapabilityParams {
        s_n: rng.random_range(100.0..300.0),
        v_n: 1.0,
        e_lim: rng.random_range(1.8..2.6),
        x_l: rng.random_range(0.1..0.2),
        x_ad: rng.random_range(1.5..2.2),
        m: rng.random_range(0.05..0.2),
        n: rng.random_range(5.0..8.0),
        p_n: rng.random_range(40.0..80.0),
    }
}

/// Random device modes exercising every residual branch.
pub fn scrambled(seed: u64) -> (PowerFlow, OperatingPoint) {
    let mut r = rng(seed);
    let n = r.random_range(2..=10);
    let case = if r.random_bool(0.5) {
        random_transmission(&mut r, n)
    } else {
        random_feeder(&mut r, n)
    };
    let mut pf = PowerFlow::new(&case).unwrap();
    let slack = pf.slack;
    for s in pf.sources.iter_mut().filter(|s| s.bus != slack) {
        if r.random_bool(0.5) {
            s.caps = Some(machine(&mut r));
            let kind = if r.random_bool(0.5) { LimitKind::Field } else { LimitKind::Armature };
            s.mode = SourceMode::Limited { kind, k: r.random_range(0.6..1.0) };
        }
    }
    for g in pf.ibgs.iter_mut() {
        g.mode = match r.random_range(0..3) {
            0 => IbgMode::FixedQ(r.random_range(-3.0..3.0)),
            1 => IbgMode::Voltage(r.random_range(0.98..1.04)),
            _ => IbgMode::CurrentLimit { sign: if r.random_bool(0.5) { 1.0 } else { -1.0 }, v_set: None },
        };
    }
    if r.random_bool(0.3) && n > 1 {
        for g in pf.ibgs.iter_mut().filter(|g| g.bus == n - 1) {
            g.mode = IbgMode::FixedQ(0.5);
        }
        if pf.sources.iter().all(|s| s.bus != n - 1) {
            pf.slack_voltage = SlackVoltage::Regulate { bus: n - 1, v: 1.0 };
        }
    }
    let adj: Vec<(f64, f64)> = (0..pf.adns.len()).map(|_| (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0))).collect();
    pf.set_adjustments(&adj).unwrap();
    let pt = OperatingPoint {
        e: (0..n).map(|_| r.random_range(0.9..1.1)).collect(),
        f: (0..n).map(|_| r.random_range(-0.2..0.2)).collect(),
        delta_l: r.random_range(-20.0..20.0),
        lambda: r.random_range(0.0..1.0),
    };
    (pf, pt)
}

/// Largest entry error of the analytic Jacobian against central
/// differences, relative to `max(|entry|, 1)`.
pub fn jacobian_error(pf: &PowerFlow, pt: &OperatingPoint) -> f64 {
    let n = pt.n();
    let j = pf.jacobian(pt).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for col in 0..2 * n + 2 {
        let at = |s: f64| {
            let mut p = pt.clone();
            match col {
                c if c < n => p.e[c] += s,
                c if c < 2 * n => p.f[c - n] += s,
                c if c == 2 * n => p.delta_l += s,
                _ => p.lambda += s,
            }
            pf.residual(&p).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        for row in 0..2 * n + 1 {
            let a = j[(row, col)];
            worst = worst.max((fd[row] - a).abs() / a.abs().max(1.0));
        }
    }
    worst
}

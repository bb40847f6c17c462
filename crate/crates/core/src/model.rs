//! Per-unit network data model and case-file handling.
//!
//! A case file is a JSON document with a mandatory `base_mva` header and the
//! sections `buses`, `branches`, `transformers`, `loads`, `ibgs`,
//! `generators`, `adns` and `stress`. Powers are written in MW/Mvar,
//! impedances in pu on `base_mva`. Distribution feeders are nested cases
//! inside `adns`, so one model serves both network levels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capability::CapabilityParams;
use crate::error::{Error, Result};
use crate::flex::FlexPolygon;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
    AdnPcc,
    FeederInternal,
}

/// Which load law applies to the loads of a case.
///
/// Transmission-level loads are restored to constant power by the LTCs
/// that are not modelled explicitly; loads inside a feeder keep their
/// voltage exponents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    Transmission,
    Feeder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub base_kv: f64,
    /// Voltage magnitude held by the slack source, when the slack bus has no
    /// synchronous generator of its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split equally between both ends.
    #[serde(default)]
    pub b: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn default_first_delay() -> f64 {
    30.0
}

fn default_delay() -> f64 {
    10.0
}

/// HV/MV transformer with an on-load tap changer regulating the MV side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerLtc {
    pub id: String,
    pub hv_bus: String,
    pub mv_bus: String,
    /// Leakage reactance (pu), transformer assumed lossless.
    pub x: f64,
    pub v_set: f64,
    pub deadband_half: f64,
    pub tap_min: f64,
    pub tap_max: f64,
    pub tap_step: f64,
    /// Delay between consecutive tap moves (s).
    #[serde(default = "default_delay")]
    pub delay_s: f64,
    /// Delay before the first move after the voltage leaves the deadband (s).
    #[serde(default = "default_first_delay")]
    pub first_delay_s: f64,
}

fn default_v0() -> f64 {
    1.0
}

fn default_a() -> f64 {
    1.0
}

fn default_b() -> f64 {
    2.0
}

/// Exponential load `P = P0 (V/V0)^a`, `Q = Q0 (V/V0)^b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpLoad {
    pub bus: String,
    pub p0: f64,
    pub q0: f64,
    #[serde(default = "default_v0")]
    pub v0: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
}

fn default_one() -> f64 {
    1.0
}

/// Inverter based generator, possibly backed by storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbgUnit {
    pub id: String,
    pub bus: String,
    /// Converter rating (MVA).
    pub s_nom: f64,
    /// Current limit in pu of the rating.
    #[serde(default = "default_one")]
    pub i_n: f64,
    pub p_g0: f64,
    pub p_g_min: f64,
    pub p_g_max: f64,
    #[serde(default)]
    pub q_g0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
}

impl IbgUnit {
    /// Apparent power limit at terminal voltage `v` (MVA).
    pub fn s_limit(&self, v: f64) -> f64 {
        v * self.i_n * self.s_nom
    }

    pub fn dispatchable(&self) -> bool {
        self.p_g_max > self.p_g_min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncGen {
    pub id: String,
    pub bus: String,
    pub p_g0: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub v_ref: f64,
    /// Participation factor in the distributed slack.
    pub w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caps: Option<CapabilityParams>,
}

/// An active distribution network seen from its point of common coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdnAttachment {
    pub id: String,
    pub pcc_bus: String,
    /// Initial consumption at the PCC (MW, Mvar).
    pub p0: f64,
    pub q0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feeder: Option<Box<NetworkCase>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<FlexPolygon>,
}

/// Per-bus stress coefficients in MW (Mvar) per unit of stress level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StressDirection {
    #[serde(default)]
    pub dp: BTreeMap<String, f64>,
    #[serde(default)]
    pub dq: BTreeMap<String, f64>,
}

impl StressDirection {
    pub fn total_dp(&self) -> f64 {
        self.dp.values().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_dp() > 0.0 {
            Ok(())
        } else {
            Err(Error::DegenerateStress)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    #[serde(default)]
    pub scope: Scope,
    #[serde(default)]
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub transformers: Vec<TransformerLtc>,
    #[serde(default)]
    pub loads: Vec<ExpLoad>,
    #[serde(default)]
    pub ibgs: Vec<IbgUnit>,
    #[serde(default)]
    pub generators: Vec<SyncGen>,
    #[serde(default)]
    pub adns: Vec<AdnAttachment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stress: Option<StressDirection>,
}

/// MW/Mvar to per-unit conversion on a single MVA base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerUnit {
    pub base_mva: f64,
}

impl PerUnit {
    pub fn to_pu(self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    pub fn to_mw(self, pu: f64) -> f64 {
        pu * self.base_mva
    }
}

impl NetworkCase {
    pub fn per_unit(&self) -> PerUnit {
        PerUnit {
            base_mva: self.base_mva,
        }
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub(crate) fn index_map(&self) -> HashMap<&str, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect()
    }

    pub fn slack_index(&self) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or(Error::NoSlackBus)
    }

    /// The LTC transformer of a feeder.
    pub fn ltc(&self) -> Result<&TransformerLtc> {
        match self.transformers.as_slice() {
            [t] => Ok(t),
            _ => Err(Error::InvalidCase(format!(
                "feeder '{}' must contain exactly one LTC transformer",
                self.name
            ))),
        }
    }

    pub fn branch(&self, id: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    /// Magnitude held at the slack bus by the slack source.
    pub fn slack_voltage(&self) -> Result<f64> {
        let s = self.slack_index()?;
        let id = &self.buses[s].id;
        if let Some(g) = self.generators.iter().find(|g| &g.bus == id) {
            return Ok(g.v_ref);
        }
        Ok(self.buses[s].v_set.unwrap_or(1.0))
    }

    pub fn to_json(&self) -> String {
        // serializing plain data cannot fail
        serde_json::to_string_pretty(self).expect("case serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Checks that every cross reference names an existing bus.
    fn resolve(&self) -> Result<()> {
        if self.buses.is_empty() || self.slack_index().is_err() {
            return Err(Error::NoSlackBus);
        }
        let ids: HashSet<&str> = self.buses.iter().map(|b| b.id.as_str()).collect();
        let check = |context: String, bus: &str| -> Result<()> {
            if ids.contains(bus) {
                Ok(())
            } else {
                Err(Error::DanglingBus {
                    context,
                    bus: bus.to_string(),
                })
            }
        };
        for br in &self.branches {
            check(format!("branch '{}'", br.id), &br.from)?;
            check(format!("branch '{}'", br.id), &br.to)?;
        }
        for t in &self.transformers {
            check(format!("transformer '{}'", t.id), &t.hv_bus)?;
            check(format!("transformer '{}'", t.id), &t.mv_bus)?;
        }
        for l in &self.loads {
            check("load".to_string(), &l.bus)?;
        }
        for g in &self.ibgs {
            check(format!("ibg '{}'", g.id), &g.bus)?;
        }
        for g in &self.generators {
            check(format!("generator '{}'", g.id), &g.bus)?;
        }
        for a in &self.adns {
            check(format!("adn '{}'", a.id), &a.pcc_bus)?;
            if let Some(f) = &a.feeder {
                f.resolve()?;
            }
        }
        if let Some(s) = &self.stress {
            for bus in s.dp.keys().chain(s.dq.keys()) {
                check("stress".to_string(), bus)?;
            }
        }
        Ok(())
    }
}

fn check_base(v: &serde_json::Value) -> Result<()> {
    let obj = v.as_object().ok_or(Error::Parse {
        line: 1,
        column: 1,
        message: "case must be a JSON object".into(),
    })?;
    if !obj.get("base_mva").is_some_and(|b| b.is_number()) {
        return Err(Error::MissingBase);
    }
    if let Some(adns) = obj.get("adns").and_then(|a| a.as_array()) {
        for a in adns {
            if let Some(f) = a.get("feeder") {
                check_base(f)?;
            }
        }
    }
    Ok(())
}

/// Parses and resolves a case from its JSON text.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    check_base(&value)?;
    let mut case: NetworkCase = serde_json::from_str(text)?;
    for a in &mut case.adns {
        if let Some(f) = a.feeder.as_mut() {
            f.scope = Scope::Feeder;
        }
    }
    case.resolve()?;
    Ok(case)
}

pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub subject: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn contains(&self, message: &str) -> bool {
        self.findings.iter().any(|f| f.message.contains(message))
    }

    fn push(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            subject: subject.into(),
            message: message.into(),
        });
    }
}

/// Lists every violated type invariant of a parsed case.
pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut report = ValidationReport::default();
    validate_into(case, "", &mut report);
    report
}

fn validate_into(case: &NetworkCase, prefix: &str, report: &mut ValidationReport) {
    let subject = |s: String| format!("{prefix}{s}");

    if !(case.base_mva > 0.0) {
        report.push(subject("case".into()), "base_mva must be positive");
    }
    let slacks = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .count();
    match slacks {
        0 => report.push(subject("case".into()), "no slack bus"),
        1 => {}
        _ => report.push(subject("case".into()), "more than one slack bus"),
    }
    for b in &case.buses {
        if !(b.v_min < b.v_max) {
            report.push(subject(format!("bus {}", b.id)), "v_min must be below v_max");
        }
    }
    for br in &case.branches {
        if br.x == 0.0 {
            report.push(subject(format!("branch {}", br.id)), "zero series reactance");
        }
        if br.r < 0.0 {
            report.push(subject(format!("branch {}", br.id)), "negative resistance");
        }
    }
    for t in &case.transformers {
        if !(t.tap_min < t.tap_max) {
            report.push(subject(format!("transformer {}", t.id)), "degenerate tap range");
        }
        if !(t.deadband_half > 0.0) {
            report.push(
                subject(format!("transformer {}", t.id)),
                "deadband half-width must be positive",
            );
        }
        if t.x == 0.0 {
            report.push(subject(format!("transformer {}", t.id)), "zero leakage reactance");
        }
    }
    for l in &case.loads {
        if !(l.v0 > 0.0) {
            report.push(subject(format!("load at {}", l.bus)), "reference voltage must be positive");
        }
    }
    for g in &case.ibgs {
        if !(g.p_g_min <= g.p_g0 && g.p_g0 <= g.p_g_max) {
            report.push(subject(format!("ibg {}", g.id)), "initial output outside dispatch range");
        }
        if !(g.i_n > 0.0) {
            report.push(subject(format!("ibg {}", g.id)), "current limit must be positive");
        }
    }
    for g in &case.generators {
        if !(g.p_min <= g.p_g0 && g.p_g0 <= g.p_max) {
            report.push(subject(format!("generator {}", g.id)), "dispatch outside active limits");
        }
        if let Some(c) = &g.caps {
            for msg in c.violations() {
                report.push(subject(format!("generator {}", g.id)), msg);
            }
        }
    }
    if !case.generators.is_empty() {
        let sum_w: f64 = case.generators.iter().map(|g| g.w).sum();
        if (sum_w - 1.0).abs() > 1e-9 {
            report.push(subject("generators".into()), "participation factors not normalized");
        }
        if let Ok(s) = case.slack_index() {
            let id = &case.buses[s].id;
            if !case.generators.iter().any(|g| &g.bus == id) {
                report.push(subject("case".into()), "slack bus hosts no generator");
            }
        }
    }
    if let Some(s) = &case.stress {
        if !(s.total_dp() > 0.0) {
            report.push(subject("stress".into()), "stress direction has no positive active component");
        }
    }
    if case.scope == Scope::Feeder {
        validate_feeder_topology(case, prefix, report);
    }
    for a in &case.adns {
        if let Some(f) = &a.feeder {
            validate_into(f, &format!("{prefix}adn {}: ", a.id), report);
        }
        if let Some(p) = &a.polygon {
            if let Err(e) = p.check() {
                report.push(subject(format!("adn {}", a.id)), format!("invalid polygon: {e}"));
            }
        }
    }
}

fn validate_feeder_topology(case: &NetworkCase, prefix: &str, report: &mut ValidationReport) {
    let Ok(s) = case.slack_index() else { return };
    let pcc = &case.buses[s].id;
    let connecting = case
        .transformers
        .iter()
        .filter(|t| &t.hv_bus == pcc)
        .count();
    if case.transformers.len() != 1 || connecting != 1 {
        report.push(
            format!("{prefix}feeder"),
            "feeder must contain exactly one LTC transformer connected to the PCC",
        );
    }
}

//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for usage and input errors, 2 when a solver
//! fails, 3 when the case itself is infeasible.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::control::{qss_simulate, track_setpoint, ControlSchedule, QssOptions, SetpointCommand};
use crate::error::{Error, Result};
use crate::flex::{
    corner_points_2bus, corner_polygon, radial_scan, reduce_polygon, FeederBase, FlexPolygon, FrReport,
    ScanOptions,
};
use crate::model::{load_case, NetworkCase};
use crate::nlp::NlpOptions;
use crate::vsm::{pv_curve, screen_contingencies, solve_vsm, AdnMode, PvOptions, VsmProblemSpec};

#[derive(Parser, Debug)]
#[command(name = "adnflex", version, about = "ADN flexibility regions and voltage stability margins")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Corners,
    Scan,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flexibility region of a feeder.
    Flex {
        case: PathBuf,
        #[arg(long, value_enum, default_value = "scan")]
        method: Method,
        #[arg(long, default_value_t = 3.0)]
        dtheta: f64,
        #[arg(long, default_value_t = 6)]
        vertices: usize,
        /// Scan directions one after another.
        #[arg(long)]
        sequential: bool,
        /// Writes `<out>.json` and `<out>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voltage stability margin of a transmission case.
    Vsm {
        case: PathBuf,
        /// Let ADNs move within their flexibility regions.
        #[arg(long)]
        flex: bool,
        /// Branch to take out of service, or `all` to screen every branch.
        #[arg(long)]
        contingency: Option<String>,
        /// Polygon files, one per ADN in case order; overrides the case.
        #[arg(long)]
        polygon: Vec<PathBuf>,
        /// Angular step when a polygon has to be computed from a feeder.
        #[arg(long, default_value_t = 3.0)]
        dtheta: f64,
        #[arg(long, default_value_t = 6)]
        vertices: usize,
        /// JSON-lines report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive a feeder towards a PCC setpoint.
    Track {
        case: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        pref: f64,
        #[arg(long, allow_negative_numbers = true)]
        qref: f64,
        /// Read `pref`/`qref` as changes from the base consumption.
        #[arg(long)]
        delta: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quasi-steady-state simulation of a control schedule.
    Simulate {
        case: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value_t = 600.0)]
        horizon: f64,
        /// Trace CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PV curve along the case stress direction by continuation.
    PvCurve {
        case: PathBuf,
        /// Bus whose voltage is reported; defaults to the first stressed bus.
        #[arg(long)]
        bus: Option<String>,
        /// Initial load increment (MW).
        #[arg(long, default_value_t = 5.0)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the study.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Status code reported for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::Islanding(_) | Error::NoReactiveHeadroom { .. } => 3,
        Error::Optimization(_)
        | Error::NonConvergence { .. }
        | Error::SaturationDiverged(_)
        | Error::TraceAborted { .. }
        | Error::NoSlackCapacity => 2,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::Flex {
            case,
            method,
            dtheta,
            vertices,
            sequential,
            out,
        } => {
            let case = load_case(case)?;
            let opts = ScanOptions {
                dtheta_deg: *dtheta,
                parallel: !sequential,
                ..ScanOptions::default()
            };
            let report = flex_report(&case, *method, &opts, *vertices)?;
            if let Some(prefix) = out {
                write_atomic(&prefix.with_extension("json"), &report.to_json()?)?;
                write_atomic(&prefix.with_extension("csv"), &report.polygon.to_csv())?;
            }
            if cli.json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!(
                    "{} polygon with {} vertices, area {:.3} MW*Mvar, anchor ({:.3} MW, {:.3} Mvar)",
                    report.method,
                    report.polygon.vertices.len(),
                    report.area,
                    report.p_j0,
                    report.q_j0
                );
                for (v, (a, b)) in report.polygon.vertices.iter().zip(&report.polygon.half_planes) {
                    println!("  dP {:>10.4}  dQ {:>10.4}   alpha {:>10.6}  beta {:>10.6}", v.0, v.1, a, b);
                }
            }
        }
        Command::Vsm {
            case,
            flex,
            contingency,
            polygon,
            dtheta,
            vertices,
            out,
        } => {
            let case = load_case(case)?;
            let dir = case
                .stress
                .clone()
                .ok_or_else(|| Error::InvalidCase("case defines no stress direction".into()))?;
            let mut spec = VsmProblemSpec::new(case.clone(), dir);
            if *flex {
                spec.adn_mode = AdnMode::Flexible(adn_polygons(&case, polygon, *dtheta, *vertices)?);
            }
            let lines: Vec<String> = match contingency.as_deref() {
                Some("all") => {
                    let branches: Vec<String> = case
                        .branches
                        .iter()
                        .filter(|b| b.in_service)
                        .map(|b| b.id.clone())
                        .collect();
                    screen_contingencies(&spec, &branches)
                        .iter()
                        .map(serde_json::to_string)
                        .collect::<std::result::Result<_, _>>()?
                }
                other => {
                    spec.contingency = other.map(str::to_owned);
                    let sol = solve_vsm(&spec)?;
                    if !cli.json {
                        println!("VSM {:.4} MW at stress level {:.6}", sol.vsm_mw, sol.lambda_star);
                        for g in &sol.gen_report {
                            let state = match (g.limit, g.at_p_limit) {
                                (_, true) => "P-limited".to_string(),
                                (Some(k), _) => format!("{k:?}-limited").to_lowercase(),
                                (None, _) => "voltage-controlled".to_string(),
                            };
                            println!(
                                "  {:<8} P {:>9.3}  Q {:>9.3}  V {:.4}  {state}",
                                g.id, g.p_mw, g.q_mvar, g.v
                            );
                        }
                        for ((a, (dp, dq)), b) in
                            case.adns.iter().zip(&sol.adn_adjustments).zip(&sol.binding_fr_constraints)
                        {
                            println!("  {:<8} dP {dp:>9.3}  dQ {dq:>9.3}  binding edges {b:?}", a.id);
                        }
                    }
                    vec![serde_json::to_string(&sol)?]
                }
            };
            let body = lines.join("\n") + "\n";
            if let Some(p) = out {
                write_atomic(p, &body)?;
            }
            if cli.json || contingency.as_deref() == Some("all") {
                print!("{body}");
            }
        }
        Command::Track {
            case,
            pref,
            qref,
            delta,
            out,
        } => {
            let base = FeederBase::new(&load_case(case)?)?;
            let cmd = if *delta {
                SetpointCommand::from_delta(&base, *pref, *qref)
            } else {
                SetpointCommand {
                    p_ref: *pref,
                    q_ref: *qref,
                }
            };
            let r = track_setpoint(&base, cmd, &NlpOptions::from_env())?;
            let text = serde_json::to_string_pretty(&r)?;
            if let Some(p) = out {
                write_atomic(p, &text)?;
            }
            if cli.json {
                println!("{}", serde_json::to_string(&r)?);
            } else {
                println!(
                    "reached P {:.4} MW, Q {:.4} Mvar; distance {:.4} MVA; V_d {:.4}, tap {:.4}",
                    r.p_j, r.q_j, r.distance, r.v_d, r.tap
                );
                for g in &r.ibgs {
                    println!("  {:<8} V {:.4}  P {:>8.3}  Q {:>8.3}", g.id, g.v, g.p_mw, g.q_mvar);
                }
            }
        }
        Command::Simulate {
            case,
            schedule,
            horizon,
            out,
        } => {
            let base = FeederBase::new(&load_case(case)?)?;
            let sched = ControlSchedule::from_json(&read(schedule)?)?;
            let opts = QssOptions {
                horizon_s: *horizon,
                ..QssOptions::default()
            };
            let trace = qss_simulate(&base, &sched, &opts)?;
            let csv = trace.to_csv();
            if let Some(p) = out {
                write_atomic(p, &csv)?;
            }
            let last = trace.last();
            let summary = SimSummary {
                samples: trace.samples.len(),
                final_t_s: last.t_s,
                tap_pos: last.tap_pos,
                v_d: last.v[trace.mv_bus],
                p_j: last.p_j,
                q_j: last.q_j,
                ramp_start_s: trace.ramp_start_s,
                ramp_end_s: trace.ramp_end_s,
                tap_exhausted: trace.tap_exhausted,
                quiescent_at: trace.quiescent_at,
            };
            if cli.json {
                println!("{}", serde_json::to_string(&summary)?);
            } else if out.is_none() {
                print!("{csv}");
            } else {
                println!(
                    "{} samples; final t {} s, tap {}, V_d {:.4}, P_j {:.3} MW, Q_j {:.3} Mvar",
                    summary.samples, summary.final_t_s, summary.tap_pos, summary.v_d, summary.p_j, summary.q_j
                );
            }
        }
        Command::PvCurve { case, bus, step, out } => {
            let case = load_case(case)?;
            let dir = case
                .stress
                .clone()
                .ok_or_else(|| Error::InvalidCase("case defines no stress direction".into()))?;
            let bus_id = match bus {
                Some(b) => b.clone(),
                None => dir
                    .dp
                    .keys()
                    .next()
                    .cloned()
                    .ok_or_else(|| Error::InvalidCase("stress direction is empty".into()))?,
            };
            let k = case.bus_index(&bus_id).ok_or_else(|| Error::DanglingBus {
                context: "pv-curve".into(),
                bus: bus_id.clone(),
            })?;
            if !(*step > 0.0) {
                return Err(Error::InvalidCase("step must be positive".into()));
            }
            let opts = PvOptions {
                step: step / dir.total_dp(),
                ..PvOptions::default()
            };
            let pv = pv_curve(&case, &dir, &[], &opts)?;
            let mut csv = format!("lambda,p_mw,v_{bus_id}\n");
            for p in &pv.points {
                csv.push_str(&format!("{:.9},{:.6},{:.6}\n", p.lambda, p.p_mw, p.v[k]));
            }
            if let Some(p) = out {
                write_atomic(p, &csv)?;
            }
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "bus": bus_id,
                        "points": pv.points.len(),
                        "lambda_max": pv.lambda_max,
                        "vsm_mw": pv.vsm_mw,
                        "v_nose": pv.points.last().map(|p| p.v[k]),
                    })
                );
            } else if out.is_none() {
                print!("{csv}");
            } else {
                println!("nose at {:.4} MW (stress level {:.6})", pv.vsm_mw, pv.lambda_max);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimSummary {
    samples: usize,
    final_t_s: f64,
    tap_pos: i32,
    v_d: f64,
    p_j: f64,
    q_j: f64,
    ramp_start_s: Option<f64>,
    ramp_end_s: Option<f64>,
    tap_exhausted: bool,
    quiescent_at: Option<f64>,
}

fn flex_report(case: &NetworkCase, method: Method, opts: &ScanOptions, vertices: usize) -> Result<FrReport> {
    match method {
        Method::Corners => {
            let base = FeederBase::new(case)?;
            let pts = corner_points_2bus(case)?;
            let polygon = corner_polygon(&pts, (base.p_j0, base.q_j0))?;
            Ok(FrReport {
                case: case.name.clone(),
                method: "corners".into(),
                dtheta_deg: None,
                p_j0: base.p_j0,
                q_j0: base.q_j0,
                area: polygon.area(),
                polygon,
                scan: None,
            })
        }
        Method::Scan => {
            let (base, scan) = radial_scan(case, &[], opts)?;
            let polygon = reduce_polygon(&scan.coords(), vertices, (base.p_j0, base.q_j0))?;
            Ok(FrReport {
                case: case.name.clone(),
                method: "scan".into(),
                dtheta_deg: Some(opts.dtheta_deg),
                p_j0: base.p_j0,
                q_j0: base.q_j0,
                area: polygon.area(),
                polygon,
                scan: Some(scan),
            })
        }
    }
}

/// Polygons for every ADN: from files, from the case, or computed from the
/// nested feeder.
fn adn_polygons(case: &NetworkCase, files: &[PathBuf], dtheta: f64, vertices: usize) -> Result<Vec<FlexPolygon>> {
    if !files.is_empty() {
        if files.len() != case.adns.len() {
            return Err(Error::InvalidCase(format!(
                "{} polygon files for {} ADNs",
                files.len(),
                case.adns.len()
            )));
        }
        return files.iter().map(|f| read_polygon(f)).collect();
    }
    case.adns
        .iter()
        .map(|a| match (&a.polygon, &a.feeder) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(f)) => {
                let opts = ScanOptions {
                    dtheta_deg: dtheta,
                    ..ScanOptions::default()
                };
                Ok(flex_report(f, Method::Scan, &opts, vertices)?.polygon)
            }
            (None, None) => Err(Error::InvalidCase(format!(
                "ADN '{}' has neither a polygon nor a feeder",
                a.id
            ))),
        })
        .collect()
}

/// Reads a bare polygon or the `polygon` member of a region report.
fn read_polygon(path: &Path) -> Result<FlexPolygon> {
    let v: serde_json::Value = serde_json::from_str(&read(path)?)?;
    let inner = v.get("polygon").cloned().unwrap_or(v);
    let p: FlexPolygon = serde_json::from_value(inner)?;
    if !p.is_single_point() {
        p.check()?;
    }
    Ok(p)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(name: &str) -> String {
        format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["adnflex"]), 1);
        assert_eq!(run(["adnflex", "flex"]), 1);
        assert_eq!(run(["adnflex", "vsm", "/nonexistent/case.json"]), 1);
        assert_eq!(run(["adnflex", "--help"]), 0);
    }

    #[test]
    fn corners_write_polygon_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("fr");
        let code = run([
            "adnflex".to_string(),
            "flex".into(),
            data("two_bus_adn.json"),
            "--method".into(),
            "corners".into(),
            "--out".into(),
            prefix.display().to_string(),
        ]);
        assert_eq!(code, 0);
        let poly = read_polygon(&prefix.with_extension("json")).unwrap();
        assert_eq!(poly.vertices.len(), 6);
        let csv = fs::read_to_string(prefix.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn islanding_contingency_exits_three() {
        let code = run([
            "adnflex".to_string(),
            "vsm".into(),
            data("lossless_2bus.json"),
            "--contingency".into(),
            "l".into(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Optimization("x".into())), 2);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 3);
        assert_eq!(exit_code(&Error::MissingBase), 1);
    }
}

//! Stage runner: executes a parsed run config against the demo registry,
//! writing branch CSVs, point snapshots, multiplier files, and a run log.
//! Runs are deterministic: identical configs on the same build produce
//! identical outputs (no wall clock, no unseeded randomness).

use crate::appkit::config::{parse_f64, parse_f64_list, parse_usize, ConfigError, RunConfig, Stage};
use crate::appkit::{branchcsv, plots, snapshot};
use crate::branching::{self, HoswibraOpts, PoSwitchSign};
use crate::c64;
use crate::demos;
use crate::floquet::{self, PoBifEvent};
use crate::hopf::{cont_po, newton_po, HopfBranch, HopfOrbit, PoMode, PoSettings};
use crate::problem::{ConstraintCtx, PdeProblem};
use crate::specialpoints::{bpcontini, bpcont, hpcontini, hpcont};
use crate::steady::{cont_steady, Branch, ContSettings, PointType, SteadyState};
use crate::timeint::{hotintxs, TintSettings};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("unknown demo '{0}'")]
    UnknownDemo(String),
    #[error("stage {stage} ({kind}): {message}")]
    Stage { stage: usize, kind: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Snapshot(#[from] snapshot::SnapshotError),
}

fn stage_err(stage: usize, kind: &str, message: impl ToString) -> RunError {
    RunError::Stage { stage, kind: kind.into(), message: message.to_string() }
}

/// Results a later stage can reference.
struct RunState {
    steady: BTreeMap<String, Branch>,
    orbits: BTreeMap<String, HopfBranch>,
    events: BTreeMap<String, Vec<PoBifEvent>>,
    pending_orbits: BTreeMap<String, HopfOrbit>,
    pending_steady: BTreeMap<String, (SteadyState, ConstraintCtx)>,
    log: String,
}

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub log: String,
}

/// Execute all stages of a config. Partial outputs stay on disk when a stage
/// fails; the failure reason lands in the run log.
pub fn cli_run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let root = std::env::var(crate::appkit::OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("."));
    let out_dir = root.join(&cfg.out_dir);
    fs::create_dir_all(&out_dir)?;

    let prob = demos::by_name(&cfg.demo, cfg.mesh_n)
        .ok_or_else(|| RunError::UnknownDemo(cfg.demo.clone()))?;
    let mut st = RunState {
        steady: BTreeMap::new(),
        orbits: BTreeMap::new(),
        events: BTreeMap::new(),
        pending_orbits: BTreeMap::new(),
        pending_steady: BTreeMap::new(),
        log: String::new(),
    };
    let _ = writeln!(st.log, "run demo={} n={:?} stages={}", cfg.demo, cfg.mesh_n, cfg.stages.len());

    let result = (|| -> Result<(), RunError> {
        for (idx, stage) in cfg.stages.iter().enumerate() {
            run_stage(idx, stage, cfg, prob.as_ref(), &mut st, &out_dir)?;
        }
        Ok(())
    })();
    if let Err(e) = &result {
        let _ = writeln!(st.log, "FAILED: {e}");
    } else {
        let _ = writeln!(st.log, "ok");
    }
    fs::write(out_dir.join("run.log"), &st.log)?;
    result.map(|_| RunOutcome { out_dir, log: st.log })
}

fn stage_problem(
    idx: usize,
    stage: &Stage,
    cfg: &RunConfig,
) -> Result<Option<Box<dyn PdeProblem>>, RunError> {
    match stage.get("demo") {
        None => Ok(None),
        Some(name) => {
            let n = match stage.get("n") {
                Some(v) => Some(v.parse().map_err(|_| stage_err(idx, &stage.kind, "bad n"))?),
                None => cfg.mesh_n,
            };
            Ok(Some(
                demos::by_name(name, n).ok_or_else(|| RunError::UnknownDemo(name.to_string()))?,
            ))
        }
    }
}

fn run_stage(
    idx: usize,
    stage: &Stage,
    cfg: &RunConfig,
    default_prob: &dyn PdeProblem,
    st: &mut RunState,
    out: &Path,
) -> Result<(), RunError> {
    let override_prob = stage_problem(idx, stage, cfg)?;
    let prob: &dyn PdeProblem = override_prob.as_deref().unwrap_or(default_prob);
    let kind = stage.kind.as_str();
    let name = stage.name().unwrap_or("unnamed").to_string();
    match kind {
        "cont-steady" => {
            let (mut start, mut cs) = resolve_steady_start(idx, stage, prob, st)?;
            if let Some(l0) = parse_f64(idx, stage, "lambda0")? {
                start.params.set_primary(l0);
            }
            let mut settings = ContSettings::default();
            if let Some(v) = parse_f64(idx, stage, "ds")? {
                settings.ds = v;
            }
            if let Some(v) = parse_f64(idx, stage, "dsmax")? {
                settings.dsmax = v;
            }
            if let Some(v) = parse_f64(idx, stage, "tol")? {
                settings.tol = v;
            }
            if let Some(v) = parse_usize(idx, stage, "neig")? {
                settings.n_eig = v;
            }
            if let Some(v) = parse_f64(idx, stage, "mu2")? {
                settings.mu2 = v;
            }
            let shifts = parse_f64_list(idx, stage, "shifts")?;
            if !shifts.is_empty() {
                settings.shifts = shifts.into_iter().map(|w| c64::new(0.0, w)).collect();
            }
            settings.usrlam = parse_f64_list(idx, stage, "usrlam")?;
            if let Some(v) = stage.get("detect") {
                settings.detect = v == "true";
            }
            let steps = parse_usize(idx, stage, "steps")?.unwrap_or(20);
            let dir = parse_f64(idx, stage, "dir")?.unwrap_or(1.0);
            let branch = cont_steady(prob, start, &settings, &mut cs, steps, dir)
                .map_err(|e| stage_err(idx, kind, e))?;
            let _ = writeln!(
                st.log,
                "stage {idx} cont-steady {name}: {} points, {} bifurcations{}",
                branch.points.len(),
                branch.bifurcations().count(),
                branch
                    .stall_reason
                    .as_deref()
                    .map(|r| format!(" (stalled: {r})"))
                    .unwrap_or_default()
            );
            fs::write(out.join(format!("{name}.csv")), branchcsv::steady_branch_csv(prob, &branch))?;
            for (k, pt) in branch.points.iter().enumerate() {
                let sp = snapshot::SavedSteady {
                    demo: prob.name().to_string(),
                    mesh_n: prob.mesh().n_points() - 1,
                    ptype: pt.ptype.tag().to_string(),
                    u: pt.u.clone(),
                    params: pt.params.clone(),
                };
                snapshot::save_point(
                    &out.join(&name).join(format!("pt{k}")),
                    &snapshot::SavedPoint::Steady(sp),
                )?;
            }
            st.steady.insert(name, branch);
        }
        "hoswibra" => {
            let hp = resolve_steady_point(idx, stage, st)?;
            let mut opts = HoswibraOpts {
                dlam: parse_f64(idx, stage, "dlam")?,
                al: parse_f64(idx, stage, "al")?,
                ..Default::default()
            };
            if let Some(v) = parse_usize(idx, stage, "tl")? {
                opts.tl = v;
            }
            if let Some(v) = stage.get("free-t") {
                opts.free_t = v == "true";
            }
            opts.aux = parse_f64_list(idx, stage, "aux")?.into_iter().map(|v| v as usize).collect();
            if let Some(v) = parse_usize(idx, stage, "x0i")? {
                opts.x0i = v;
            }
            let orbit = branching::hoswibra(prob, &hp, &opts).map_err(|e| stage_err(idx, kind, e))?;
            let _ = writeln!(
                st.log,
                "stage {idx} hoswibra {name}: T = {:.5}, lambda = {:.5}",
                orbit.period,
                orbit.lambda()
            );
            st.pending_orbits.insert(name, orbit);
        }
        "cont-po" => {
            let (orbit, mut cs) = resolve_orbit_start(idx, stage, st)?;
            let mut settings = PoSettings::default();
            if let Some(v) = parse_f64(idx, stage, "ds")? {
                settings.ds = v;
            }
            if let Some(v) = parse_f64(idx, stage, "dsmax")? {
                settings.dsmax = v;
            }
            if let Some(v) = parse_f64(idx, stage, "tol")? {
                settings.tol = v;
            }
            if let Some(v) = parse_f64(idx, stage, "first-tol")? {
                settings.first_tol = Some(v);
            }
            if let Some(v) = parse_usize(idx, stage, "flcheck")? {
                settings.flcheck = v as u8;
            }
            if let Some(v) = parse_usize(idx, stage, "nfloq")? {
                settings.nfloq = v;
            }
            if let Some(v) = parse_f64(idx, stage, "fltol")? {
                settings.fltol = v;
            }
            if let Some(v) = parse_usize(idx, stage, "bisec")? {
                settings.bisec = v;
            }
            if let Some(v) = stage.get("detect") {
                settings.detect = v == "true";
            }
            let steps = parse_usize(idx, stage, "steps")?.unwrap_or(10);
            let branch =
                cont_po(prob, orbit, &settings, &mut cs, steps).map_err(|e| stage_err(idx, kind, e))?;
            let _ = writeln!(
                st.log,
                "stage {idx} cont-po {name}: {} records, {} events{}",
                branch.records.len(),
                branch.events.len(),
                branch
                    .stall_reason
                    .as_deref()
                    .map(|r| format!(" (stalled: {r})"))
                    .unwrap_or_default()
            );
            fs::write(out.join(format!("{name}.csv")), branchcsv::orbit_branch_csv(prob, &branch))?;
            fs::write(out.join(format!("{name}_mult.csv")), branchcsv::multiplier_csv(&branch))?;
            for (k, rec) in branch.records.iter().enumerate() {
                let so = snapshot::SavedOrbit {
                    demo: prob.name().to_string(),
                    mesh_n: prob.mesh().n_points() - 1,
                    ptype: rec.ptype.tag().to_string(),
                    orbit: rec.orbit.clone(),
                };
                snapshot::save_point(
                    &out.join(&name).join(format!("pt{k}")),
                    &snapshot::SavedPoint::Orbit(so),
                )?;
            }
            st.events.insert(name.clone(), branch.events.clone());
            st.orbits.insert(name, branch);
        }
        "twswibra" => {
            let hp = resolve_steady_point(idx, stage, st)?;
            let spar = parse_usize(idx, stage, "spar")?
                .ok_or_else(|| stage_err(idx, kind, "missing spar"))?;
            let kwnr = parse_f64(idx, stage, "kwnr")?.unwrap_or(1.0);
            let eps = parse_f64(idx, stage, "eps")?.unwrap_or(0.1);
            let z1 = c64::new(
                parse_f64(idx, stage, "z1re")?.unwrap_or(1.0),
                parse_f64(idx, stage, "z1im")?.unwrap_or(0.0),
            );
            let state = branching::twswibra(prob, &hp, spar, kwnr, eps, z1)
                .map_err(|e| stage_err(idx, kind, e))?;
            let cs = ConstraintCtx { u_ref: Some(state.u.clone()) };
            let _ = writeln!(
                st.log,
                "stage {idx} twswibra {name}: s = {:.5}",
                state.params.values[spar]
            );
            st.pending_steady.insert(name, (state, cs));
        }
        "poswibra" => {
            let event = resolve_event(idx, stage, st)?;
            let sign = match stage.get("sign") {
                Some("+1") | Some("1") => PoSwitchSign::PlusOne,
                Some("-1") => PoSwitchSign::MinusOne,
                _ => PoSwitchSign::Auto,
            };
            let child = branching::poswibra(prob, &event, sign).map_err(|e| stage_err(idx, kind, e))?;
            let _ = writeln!(
                st.log,
                "stage {idx} poswibra {name}: gamma = {:.4}{:+.4}i, m = {}",
                event.gamma.re,
                event.gamma.im,
                child.m_slices()
            );
            st.pending_orbits.insert(name, child);
        }
        "hpcont" | "bpcont" => {
            let pt = resolve_steady_point(idx, stage, st)?;
            let wpar = parse_usize(idx, stage, "wpar")?
                .ok_or_else(|| stage_err(idx, kind, "missing wpar"))?;
            let steps = parse_usize(idx, stage, "steps")?.unwrap_or(10);
            let ds = parse_f64(idx, stage, "ds")?.unwrap_or(0.02);
            let curve = if kind == "hpcont" {
                let state = hpcontini(&pt).map_err(|e| stage_err(idx, kind, e))?;
                hpcont(prob, &state, wpar, steps, ds).map_err(|e| stage_err(idx, kind, e))?
            } else {
                let state = bpcontini(prob, &pt).map_err(|e| stage_err(idx, kind, e))?;
                bpcont(prob, &state, wpar, steps, ds).map_err(|e| stage_err(idx, kind, e))?
            };
            let mut csv = String::from("step,lambda,w,aux\n");
            for (k, cp) in curve.points.iter().enumerate() {
                let _ = writeln!(csv, "{k},{:.12e},{:.12e},{:.12e}", cp.lambda, cp.w, cp.aux);
            }
            fs::write(out.join(format!("{name}.csv")), csv)?;
            let _ = writeln!(
                st.log,
                "stage {idx} {kind} {name}: {} curve points{}",
                curve.points.len(),
                curve
                    .stall_reason
                    .as_deref()
                    .map(|r| format!(" (stalled: {r})"))
                    .unwrap_or_default()
            );
        }
        "floquet" => {
            let (orbit, _) = resolve_orbit_start(idx, stage, st)?;
            let fl = match stage.get("alg") {
                Some("fa2") => floquet::floq_fa2(prob, &orbit, 1e-4),
                _ => floquet::floq_fa1(prob, &orbit, parse_usize(idx, stage, "nfloq")?.unwrap_or(20), 1e-4),
            }
            .map_err(|e| stage_err(idx, kind, e))?;
            let mut csv = String::from("re,im,abs\n");
            for g in &fl.multipliers {
                let _ = writeln!(csv, "{:.12e},{:.12e},{:.12e}", g.re, g.im, g.norm());
            }
            fs::write(out.join(format!("{name}_mult.csv")), csv)?;
            fs::write(out.join(format!("{name}_mult.svg")), plots::multipliers_svg(&fl.multipliers))?;
            let _ = writeln!(
                st.log,
                "stage {idx} floquet {name}: {} multipliers, err = {:.3e}, ind = {}",
                fl.multipliers.len(),
                fl.err,
                fl.ind
            );
        }
        "timeint" => {
            let (orbit, _) = resolve_orbit_start(idx, stage, st)?;
            let npp = match parse_usize(idx, stage, "npp")? {
                Some(v) => v,
                None => {
                    let factor = parse_usize(idx, stage, "npp-factor")?.unwrap_or(10);
                    factor * orbit.m_slices()
                }
            };
            let periods = parse_usize(idx, stage, "periods")?.unwrap_or(4);
            let mut tset = TintSettings::default();
            if let Some(v) = parse_usize(idx, stage, "save-every")? {
                tset.save_every = v;
            }
            let u0 = orbit.y.column(0).to_owned();
            let series =
                hotintxs(prob, &orbit, &u0, npp, periods, &tset).map_err(|e| stage_err(idx, kind, e))?;
            let mut csv = String::from("t,err\n");
            for (t, e) in series.times.iter().zip(series.errors.iter()) {
                let _ = writeln!(csv, "{t:.12e},{e:.12e}");
            }
            fs::write(out.join(format!("{name}_ts.csv")), csv)?;
            let _ = writeln!(
                st.log,
                "stage {idx} timeint {name}: {} steps, final err = {:.3e}",
                series.times.len() - 1,
                series.errors.last().unwrap_or(&0.0)
            );
        }
        other => return Err(stage_err(idx, other, "unhandled stage kind")),
    }
    Ok(())
}

fn resolve_steady_start(
    idx: usize,
    stage: &Stage,
    prob: &dyn PdeProblem,
    st: &RunState,
) -> Result<(SteadyState, ConstraintCtx), RunError> {
    match stage.get("from") {
        None => {
            let params = prob.default_params_dyn();
            let u = prob.initial_state(&params);
            Ok((SteadyState { u, params }, ConstraintCtx::default()))
        }
        Some(fr) => {
            if let Some(name) = fr.strip_prefix("pend:") {
                let (state, cs) = st
                    .pending_steady
                    .get(name)
                    .ok_or_else(|| stage_err(idx, &stage.kind, format!("no pending start '{name}'")))?;
                return Ok((state.clone(), cs.clone()));
            }
            if let Some(path) = fr.strip_prefix("file:") {
                return match snapshot::load_point(Path::new(path))? {
                    snapshot::SavedPoint::Steady(sp) => Ok((
                        SteadyState { u: sp.u, params: sp.params },
                        ConstraintCtx::default(),
                    )),
                    _ => Err(stage_err(idx, &stage.kind, "snapshot is not a steady point")),
                };
            }
            let pt = resolve_steady_point(idx, stage, st)?;
            Ok((SteadyState { u: pt.u, params: pt.params }, ConstraintCtx::default()))
        }
    }
}

fn resolve_steady_point(
    idx: usize,
    stage: &Stage,
    st: &RunState,
) -> Result<crate::steady::BranchPoint, RunError> {
    let fr = stage
        .get("from")
        .ok_or_else(|| stage_err(idx, &stage.kind, "missing 'from'"))?;
    let (bname, sel) = fr
        .split_once('/')
        .ok_or_else(|| stage_err(idx, &stage.kind, format!("bad point reference '{fr}'")))?;
    let branch = st
        .steady
        .get(bname)
        .ok_or_else(|| stage_err(idx, &stage.kind, format!("no steady branch '{bname}'")))?;
    let pick = |ptype: PointType, k: usize| -> Option<crate::steady::BranchPoint> {
        branch.points.iter().filter(|p| p.ptype == ptype).nth(k).cloned()
    };
    let pt = if sel == "last" {
        branch.points.last().cloned()
    } else if let Some(k) = sel.strip_prefix("pt") {
        k.parse::<usize>().ok().and_then(|k| branch.points.get(k).cloned())
    } else if let Some(k) = sel.strip_prefix("hp") {
        k.parse::<usize>().ok().and_then(|k| pick(PointType::Hopf, k.saturating_sub(1)))
    } else if let Some(k) = sel.strip_prefix("bp") {
        k.parse::<usize>().ok().and_then(|k| pick(PointType::Branch, k.saturating_sub(1)))
    } else if let Some(k) = sel.strip_prefix("fp") {
        k.parse::<usize>().ok().and_then(|k| pick(PointType::Fold, k.saturating_sub(1)))
    } else if let Some(k) = sel.strip_prefix("ul") {
        k.parse::<usize>().ok().and_then(|k| pick(PointType::UserLam, k.saturating_sub(1)))
    } else {
        None
    };
    pt.ok_or_else(|| stage_err(idx, &stage.kind, format!("point '{fr}' not found")))
}

fn resolve_orbit_start(
    idx: usize,
    stage: &Stage,
    st: &mut RunState,
) -> Result<(HopfOrbit, ConstraintCtx), RunError> {
    let name = stage.name().unwrap_or("unnamed");
    // continue a pending orbit of the same name unless 'from' says otherwise
    if let Some(fr) = stage.get("from") {
        if let Some(pname) = fr.strip_prefix("pend:") {
            let orbit = st
                .pending_orbits
                .remove(pname)
                .ok_or_else(|| stage_err(idx, &stage.kind, format!("no pending orbit '{pname}'")))?;
            let cs = ConstraintCtx { u_ref: Some(orbit_ref(&orbit)) };
            return Ok((orbit, cs));
        }
        if let Some(path) = fr.strip_prefix("file:") {
            return match snapshot::load_point(Path::new(path))? {
                snapshot::SavedPoint::Orbit(so) => {
                    let cs = ConstraintCtx { u_ref: Some(orbit_ref(&so.orbit)) };
                    Ok((so.orbit, cs))
                }
                _ => Err(stage_err(idx, &stage.kind, "snapshot is not an orbit")),
            };
        }
        let (bname, sel) = fr
            .split_once('/')
            .ok_or_else(|| stage_err(idx, &stage.kind, format!("bad orbit reference '{fr}'")))?;
        let branch = st
            .orbits
            .get(bname)
            .ok_or_else(|| stage_err(idx, &stage.kind, format!("no orbit branch '{bname}'")))?;
        let orbit = if sel == "last" {
            branch.records.last().map(|r| r.orbit.clone())
        } else if let Some(k) = sel.strip_prefix("pt") {
            k.parse::<usize>().ok().and_then(|k| branch.records.get(k).map(|r| r.orbit.clone()))
        } else {
            None
        };
        let orbit =
            orbit.ok_or_else(|| stage_err(idx, &stage.kind, format!("orbit '{fr}' not found")))?;
        let cs = ConstraintCtx { u_ref: Some(orbit_ref(&orbit)) };
        return Ok((orbit, cs));
    }
    let orbit = st
        .pending_orbits
        .remove(name)
        .ok_or_else(|| stage_err(idx, &stage.kind, format!("no pending orbit '{name}'")))?;
    let cs = ConstraintCtx { u_ref: Some(orbit_ref(&orbit)) };
    Ok((orbit, cs))
}

fn orbit_ref(orbit: &HopfOrbit) -> ndarray::Array1<f64> {
    orbit.y.column(0).to_owned()
}

fn resolve_event(idx: usize, stage: &Stage, st: &RunState) -> Result<PoBifEvent, RunError> {
    let fr = stage
        .get("from")
        .ok_or_else(|| stage_err(idx, &stage.kind, "missing 'from'"))?;
    let (bname, sel) = fr
        .split_once('/')
        .ok_or_else(|| stage_err(idx, &stage.kind, format!("bad event reference '{fr}'")))?;
    let events = st
        .events
        .get(bname)
        .ok_or_else(|| stage_err(idx, &stage.kind, format!("no events for branch '{bname}'")))?;
    let ev = sel
        .strip_prefix("ev")
        .and_then(|k| k.parse::<usize>().ok())
        .and_then(|k| events.get(k.saturating_sub(1)).cloned());
    ev.ok_or_else(|| stage_err(idx, &stage.kind, format!("event '{fr}' not found")))
}

/// Correct a loaded orbit once at fixed parameter (used by the CLI to verify
/// resumed points).
pub fn polish_orbit(
    prob: &dyn PdeProblem,
    orbit: &mut HopfOrbit,
    cs: &ConstraintCtx,
) -> Result<(), crate::hopf::HopfError> {
    let settings = PoSettings::default();
    newton_po(prob, orbit, cs, &settings, PoMode::FixedLambda, None, None, 0.0, None)?;
    Ok(())
}

//! Command-line driver: batch runs from config files plus small utilities to
//! plot, recompute multipliers, time-integrate, and inspect saved points.

use clap::{Parser, Subcommand};
use ndarray::prelude::*;
use pdecont::appkit::{self, cli_run, load_point, RunConfig, SavedPoint};
use pdecont::appkit::plots;
use pdecont::demos;
use pdecont::floquet;
use pdecont::problem::PdeProblem;
use pdecont::timeint::{hotintxs, TintSettings};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pdecont", about = "Continuation and bifurcation runs for 1D PDE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the stages of a run config.
    Run {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Render plots from a run directory.
    Plot {
        /// Run directory containing branch CSVs / snapshots.
        dir: PathBuf,
        /// bd | spacetime | multipliers
        #[arg(long, default_value = "bd")]
        kind: String,
        /// Branch name (bd) or point path relative to dir (others).
        #[arg(long)]
        target: Option<String>,
        /// Plot the period instead of the norm on the y axis (bd).
        #[arg(long)]
        period: bool,
    },
    /// Compute Floquet multipliers of a saved orbit point.
    Floquet {
        /// Path to a saved orbit point.
        point: PathBuf,
        /// fa1 | fa2
        #[arg(long, default_value = "fa1")]
        alg: String,
        #[arg(long, default_value_t = 20)]
        nfloq: usize,
    },
    /// Time-integrate from a saved orbit point.
    Tint {
        point: PathBuf,
        #[arg(long, default_value_t = 4)]
        periods: usize,
        /// Steps per period; defaults to 10x the orbit slice count.
        #[arg(long)]
        npp: Option<usize>,
    },
    /// Print header information of a saved point.
    Inspect { point: PathBuf },
}

fn load_problem(point: &SavedPoint) -> Result<Box<dyn PdeProblem>, String> {
    demos::by_name(point.demo(), Some(point.mesh_n()))
        .ok_or_else(|| format!("unknown demo '{}' in snapshot", point.demo()))
}

fn cmd_run(config: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(config).map_err(|e| format!("read {config:?}: {e}"))?;
    let cfg = RunConfig::parse(&text).map_err(|e| e.to_string())?;
    let outcome = cli_run(&cfg).map_err(|e| e.to_string())?;
    print!("{}", outcome.log);
    println!("outputs in {}", outcome.out_dir.display());
    Ok(())
}

fn read_branch_csv(path: &Path, want_period: bool) -> Result<Vec<(f64, f64)>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("read {path:?}: {e}"))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty csv")?;
    let cols: Vec<&str> = header.split(',').collect();
    let xcol = cols.iter().position(|c| *c == "lambda").ok_or("no lambda column")?;
    let ycol = if want_period {
        cols.iter().position(|c| *c == "T").ok_or("no T column")?
    } else {
        cols.iter().position(|c| *c == "norm").ok_or("no norm column")?
    };
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() <= ycol.max(xcol) {
            continue;
        }
        let x: f64 = f[xcol].parse().map_err(|_| "bad number in csv")?;
        let y: f64 = f[ycol].parse().map_err(|_| "bad number in csv")?;
        out.push((x, y));
    }
    Ok(out)
}

fn cmd_plot(dir: &Path, kind: &str, target: Option<&str>, period: bool) -> Result<(), String> {
    match kind {
        "bd" => {
            let mut series = Vec::new();
            match target {
                Some(name) => {
                    let pts = read_branch_csv(&dir.join(format!("{name}.csv")), period)?;
                    series.push((name.to_string(), pts));
                }
                None => {
                    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
                        .map_err(|e| e.to_string())?
                        .filter_map(|e| e.ok())
                        .map(|e| e.path())
                        .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
                        .collect();
                    entries.sort();
                    for p in entries {
                        let name = p.file_stem().unwrap().to_string_lossy().to_string();
                        if name.ends_with("_mult") || name.ends_with("_ts") {
                            continue;
                        }
                        if let Ok(pts) = read_branch_csv(&p, period) {
                            series.push((name, pts));
                        }
                    }
                }
            }
            let ylab = if period { "T" } else { "norm" };
            let svg = plots::bd_svg(&series, &[], "lambda", ylab);
            let out = dir.join(format!("bd_{ylab}.svg"));
            std::fs::write(&out, svg).map_err(|e| e.to_string())?;
            println!("wrote {}", out.display());
        }
        "spacetime" => {
            let target = target.ok_or("spacetime needs --target <point path>")?;
            let point = load_point(&dir.join(target)).map_err(|e| e.to_string())?;
            let prob = load_problem(&point)?;
            match point {
                SavedPoint::Orbit(so) => {
                    let (svg, csv) = plots::spacetime(prob.as_ref(), &so.orbit, 0);
                    let base = dir.join(target.replace('/', "_"));
                    std::fs::write(base.with_extension("svg"), svg).map_err(|e| e.to_string())?;
                    std::fs::write(base.with_extension("csv"), csv).map_err(|e| e.to_string())?;
                    println!("wrote {}.svg/.csv", base.display());
                }
                _ => return Err("spacetime plots need an orbit point".into()),
            }
        }
        "multipliers" => {
            let target = target.ok_or("multipliers needs --target <point path>")?;
            let point = load_point(&dir.join(target)).map_err(|e| e.to_string())?;
            let prob = load_problem(&point)?;
            match point {
                SavedPoint::Orbit(so) => {
                    let fl = floquet::floq_fa1(prob.as_ref(), &so.orbit, 20, 1e-4)
                        .map_err(|e| e.to_string())?;
                    let base = dir.join(target.replace('/', "_"));
                    std::fs::write(base.with_extension("svg"), plots::multipliers_svg(&fl.multipliers))
                        .map_err(|e| e.to_string())?;
                    println!("wrote {}.svg (err = {:.3e}, ind = {})", base.display(), fl.err, fl.ind);
                }
                _ => return Err("multiplier plots need an orbit point".into()),
            }
        }
        other => return Err(format!("unknown plot kind '{other}'")),
    }
    Ok(())
}

fn cmd_floquet(point_path: &Path, alg: &str, nfloq: usize) -> Result<(), String> {
    let point = load_point(point_path).map_err(|e| e.to_string())?;
    let prob = load_problem(&point)?;
    let orbit = match point {
        SavedPoint::Orbit(so) => so.orbit,
        _ => return Err("not an orbit point".into()),
    };
    let fl = match alg {
        "fa2" => floquet::floq_fa2(prob.as_ref(), &orbit, 1e-4),
        _ => floquet::floq_fa1(prob.as_ref(), &orbit, nfloq, 1e-4),
    }
    .map_err(|e| e.to_string())?;
    println!("algorithm: {alg}");
    println!("trivial multiplier error: {:.3e}", fl.err);
    println!("index (|gamma| > 1 + {:.1e}): {}", fl.fltol, fl.ind);
    for (k, g) in fl.multipliers.iter().take(nfloq).enumerate() {
        println!("gamma[{k}] = {:+.8e} {:+.8e} i  (|.| = {:.6e})", g.re, g.im, g.norm());
    }
    Ok(())
}

fn cmd_tint(point_path: &Path, periods: usize, npp: Option<usize>) -> Result<(), String> {
    let point = load_point(point_path).map_err(|e| e.to_string())?;
    let prob = load_problem(&point)?;
    let orbit = match point {
        SavedPoint::Orbit(so) => so.orbit,
        _ => return Err("not an orbit point".into()),
    };
    let npp = npp.unwrap_or(10 * orbit.m_slices());
    let u0: Array1<f64> = orbit.y.column(0).to_owned();
    let series = hotintxs(prob.as_ref(), &orbit, &u0, npp, periods, &TintSettings::default())
        .map_err(|e| e.to_string())?;
    let out = point_path.with_extension("ts.csv");
    let mut csv = String::from("t,err\n");
    for (t, e) in series.times.iter().zip(series.errors.iter()) {
        csv.push_str(&format!("{t:.12e},{e:.12e}\n"));
    }
    std::fs::write(&out, csv).map_err(|e| e.to_string())?;
    println!(
        "integrated {} periods ({} steps/period); final |u - u0|_inf = {:.4e}; series in {}",
        periods,
        npp,
        series.errors.last().unwrap_or(&0.0),
        out.display()
    );
    Ok(())
}

fn cmd_inspect(point_path: &Path) -> Result<(), String> {
    let point = load_point(point_path).map_err(|e| e.to_string())?;
    match &point {
        SavedPoint::Steady(sp) => {
            println!("kind: steady point ({})", sp.ptype);
            println!("demo: {} (n = {})", sp.demo, sp.mesh_n);
            println!("lambda (p{}): {:.8e}", sp.params.primary, sp.params.primary_value());
            println!("params: {:?}", sp.params.values);
            println!("n_u: {}", sp.u.len());
        }
        SavedPoint::Orbit(so) => {
            let o = &so.orbit;
            println!("kind: orbit point ({})", so.ptype);
            println!("demo: {} (n = {})", so.demo, so.mesh_n);
            println!("lambda (p{}): {:.8e}", o.params.primary, o.params.primary_value());
            println!("period: {:.8e} (freeT = {})", o.period, o.free_t);
            println!("slices: {} x {}", o.n_u(), o.m_slices());
            println!("params: {:?}", o.params.values);
            println!("tangent stored: {}", o.tau.is_some());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let _ = appkit::OUT_ROOT_ENV; // documented override, read by the runner
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Plot { dir, kind, target, period } => {
            cmd_plot(dir, kind, target.as_deref(), *period)
        }
        Command::Floquet { point, alg, nfloq } => cmd_floquet(point, alg, *nfloq),
        Command::Tint { point, periods, npp } => cmd_tint(point, *periods, *npp),
        Command::Inspect { point } => cmd_inspect(point),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

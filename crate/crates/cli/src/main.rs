use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use lfgate_core::config::{format_number, table_csv, Mode, OutputFormat, RunConfig, SweepAxis};
use lfgate_core::design::{GateMode, GateParams};
use lfgate_core::drive::mode_label;
use lfgate_core::experiments::{
    analytic_gate, decoherence_curve, multi_pair_experiment, phase_space_trajectory, residual_field_experiment,
    run_gate, sweep_motional_offset, sweep_oscillating_shift, sweep_static_shift, RateKind, Table,
};
use lfgate_core::Error;

#[derive(Parser)]
#[command(name = "lfgate", version, about = "Design and simulate laser-free two-qubit gates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Divide every frequency by F and stretch every time by F.
    #[arg(long, global = true, value_name = "F")]
    scale: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    fock_dim: Option<usize>,
    /// Relative integrator tolerance (also for multipair runs); the absolute
    /// one is set 100× tighter.
    #[arg(long, global = true, value_name = "X")]
    tol: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the gate frequencies.
    Design,
    /// Propagate one gate and report its Bell fidelity.
    Simulate,
    /// Scan one noise parameter.
    Sweep,
    /// Conditional phase-space trajectory of one spin branch.
    Trajectory,
    /// Static-gradient gate with several microwave pairs.
    Multipair,
}

#[derive(ValueEnum, Clone, Copy)]
enum Format {
    Csv,
    Json,
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            Error::InvalidParameter(_)
            | Error::Infeasible(_)
            | Error::OutOfRange(_)
            | Error::NoSignChange { .. }
            | Error::FockTooSmall(_)
            | Error::AntisymmetricAxis => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.mode = match cli.command {
        Command::Design => Mode::Design,
        Command::Simulate => Mode::Simulate,
        Command::Sweep => Mode::Sweep,
        Command::Trajectory => Mode::Trajectory,
        Command::Multipair => Mode::Multipair,
    };
    if let Some(out) = &cli.out {
        cfg.out = Some(out.display().to_string());
    }
    if let Some(f) = cli.format {
        cfg.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    if let Some(s) = cli.scale {
        cfg.scale = s;
    }
    if let Some(n) = cli.fock_dim {
        cfg.fock_dim = n;
        cfg.pair_fock_dim = n;
    }
    if let Some(t) = cli.tol {
        cfg.rel_tol = t;
        cfg.abs_tol = t * 1e-2;
        cfg.pair_rel_tol = t;
        cfg.pair_abs_tol = t * 1e-2;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn hz(w: f64) -> f64 {
    w / (2.0 * std::f64::consts::PI)
}

fn design_json(p: &GateParams) -> Value {
    let freq = |w: f64| json!({ "rad_per_s": w, "hz": hz(w) });
    let residuals = p.residuals();
    let mut out = json!({
        "gate": mode_label(p),
        "j": p.j,
        "loops": p.loops,
        "idd_index": p.idd_index,
        "idd_point": p.bessel_arg,
        "gradient_rabi": freq(p.gradient_rabi),
        "motional_freq": freq(p.motional_freq),
        "detuning": freq(p.detuning),
        "gradient_freq": freq(p.gradient_freq),
        "loop_detuning": freq(p.loop_detuning),
        "microwave_rabi": freq(p.microwave_rabi),
        "t_loop": p.t_loop,
        "t_gate": p.t_gate,
        "residuals": {
            "lower_sideband": residuals.lower_sideband,
            "upper_sideband": residuals.upper_sideband,
            "half_gradient": residuals.half_gradient,
            "closure": residuals.closure,
        },
    });
    if matches!(p.mode, GateMode::IddSingle) {
        out["j2"] = json!(p.j2());
    } else {
        out["j4"] = json!(p.j4());
        out["j8"] = json!(p.j8());
        out["ratio"] = json!(p.j8() / p.j4());
    }
    out
}

fn with_config(cfg: &RunConfig, body: Value) -> Value {
    json!({ "config": serde_json::to_value(cfg).expect("config serializes"), "result": body })
}

fn table_output(cfg: &RunConfig, table: &Table) -> String {
    match cfg.format {
        OutputFormat::Csv => table_csv(table, cfg),
        OutputFormat::Json => pretty(&with_config(cfg, serde_json::to_value(table).expect("table serializes"))),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json output");
    s.push('\n');
    s
}

fn design(cfg: &RunConfig) -> Result<String, Failure> {
    let p = cfg.design()?;
    let body = design_json(&p);
    info!("{} gate: 4Ω_μ/δ = {:.10}, t_G = {:e} s", mode_label(&p), p.bessel_arg, p.t_gate);
    Ok(match cfg.format {
        OutputFormat::Json => pretty(&with_config(cfg, body)),
        OutputFormat::Csv => {
            let mut rows = vec![("idd_point".to_string(), p.bessel_arg)];
            for (name, w) in [
                ("gradient_rabi", p.gradient_rabi),
                ("motional_freq", p.motional_freq),
                ("detuning", p.detuning),
                ("gradient_freq", p.gradient_freq),
                ("loop_detuning", p.loop_detuning),
                ("microwave_rabi", p.microwave_rabi),
            ] {
                rows.push((format!("{name}_rad_per_s"), w));
                rows.push((format!("{name}_hz"), hz(w)));
            }
            if let Some(o) = body.as_object() {
                for key in ["j2", "j4", "j8", "ratio"] {
                    if let Some(v) = o.get(key).and_then(Value::as_f64) {
                        rows.push((key.to_string(), v));
                    }
                }
            }
            rows.push(("t_loop".into(), p.t_loop));
            rows.push(("t_gate".into(), p.t_gate));
            let mut out = format!("# config: {}\nkey,value\n", serde_json::to_string(cfg).expect("config serializes"));
            for (k, v) in rows {
                out.push_str(&format!("{k},{}\n", format_number(v)));
            }
            out
        }
    })
}

fn simulate(cfg: &RunConfig) -> Result<String, Failure> {
    let spec = cfg.sequence()?;
    let result = run_gate(&spec)?;
    info!("1 - F = {:e} after {} steps", result.infidelity(), result.diagnostics.stats.accepted);
    Ok(match cfg.format {
        OutputFormat::Json => {
            let analytic = analytic_gate(&spec)?;
            pretty(&with_config(
                cfg,
                json!({
                    "fidelity": result.fidelity,
                    "infidelity": result.infidelity(),
                    "analytic": analytic,
                    "design": design_json(&spec.params),
                    "diagnostics": result.diagnostics,
                }),
            ))
        }
        OutputFormat::Csv => {
            let table = Table {
                columns: ["t", "up_re", "up_im", "down_re", "down_im"].iter().map(|s| s.to_string()).collect(),
                rows: result.trajectory.iter().map(|p| vec![p.t, p.up_re, p.up_im, p.down_re, p.down_im]).collect(),
                labels: None,
            };
            table_csv(&table, cfg)
        }
    })
}

fn sweep(cfg: &RunConfig) -> Result<String, Failure> {
    let spec = cfg.sequence()?;
    let (axis, grid) = cfg.sweep_values(&spec.params)?;
    let table = match axis {
        SweepAxis::StaticShift => sweep_static_shift(&spec, &grid, spec.noise.symmetry)?,
        SweepAxis::OscillatingShift => {
            let eps = if spec.noise.epsilon > 0.0 { spec.noise.epsilon } else { spec.params.gradient_rabi / 5.0 };
            sweep_oscillating_shift(&spec, &grid, eps)?
        }
        SweepAxis::MotionalOffset => sweep_motional_offset(std::slice::from_ref(&spec), &grid)?,
        SweepAxis::Heating | SweepAxis::Dephasing => {
            let loops: Vec<u32> = grid.iter().map(|&k| k as u32).collect();
            decoherence_curve(&spec, &loops, RateKind::from_axis(axis).expect("rate axis"))?
        }
        SweepAxis::ResidualField => residual_field_experiment(&spec, &grid)?,
    };
    info!("{} sweep points", table.rows.len());
    Ok(table_output(cfg, &table))
}

fn trajectory(cfg: &RunConfig) -> Result<String, Failure> {
    let spec = cfg.sequence()?;
    let points = phase_space_trajectory(&spec, cfg.branch.basis())?;
    let table = Table {
        columns: vec!["t".into(), "re".into(), "im".into()],
        rows: points.iter().map(|(t, a)| vec![*t, a.re, a.im]).collect(),
        labels: None,
    };
    Ok(table_output(cfg, &table))
}

fn multipair(cfg: &RunConfig) -> Result<String, Failure> {
    let spec = cfg.multi_pair()?;
    let (table, results) = multi_pair_experiment(&spec, &cfg.pair_ratios)?;
    Ok(match cfg.format {
        OutputFormat::Csv => table_csv(&table, cfg),
        OutputFormat::Json => {
            let runs: Vec<Value> = results
                .iter()
                .map(|r| {
                    json!({
                        "field_ratio": r.field_ratio,
                        "gradient_rabi": r.gradient_rabi,
                        "fidelity": r.fidelity,
                        "closure": r.closure,
                        "max_displacement": r.max_displacement,
                        "residual_predicted": r.residual_predicted,
                        "residual_measured": r.residual_measured,
                        "trajectory": r.trajectory.iter().map(|(t, a)| [*t, a.re, a.im]).collect::<Vec<_>>(),
                    })
                })
                .collect();
            pretty(&with_config(cfg, json!({ "table": table, "runs": runs })))
        }
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = resolve(cli)?;
    // the destination is not part of the provenance, so reruns into
    // different files stay byte-identical
    let out = cfg.out.take();
    let text = match cfg.mode {
        Mode::Design => design(&cfg)?,
        Mode::Simulate => simulate(&cfg)?,
        Mode::Sweep => sweep(&cfg)?,
        Mode::Trajectory => trajectory(&cfg)?,
        Mode::Multipair => multipair(&cfg)?,
    };
    match &out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {path}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use switchcert::config::{ExperimentConfig, Scale};
use switchcert::experiments::{self, Benchmark};
use switchcert::metrics;
use switchcert::ops::SwitchedOperatorSet;
use switchcert::Result;

#[derive(Parser)]
#[command(name = "switchcert", version, about = "Certified reduced MPC for the switched two-room heat benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the benchmark and write its operators in Matrix Market format.
    Assemble(Common),
    /// Open-loop bound study over a rank sweep.
    Openloop(Common),
    /// FOM-MPC against FOM-ROM-MPC and ROM-ROM-MPC.
    Mpc(Common),
    /// Relative errors between two closed-loop runs stored as CSV.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Args)]
struct Common {
    /// Flat key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory holding `config.toml` and the closed-loop CSV files of an `mpc` run.
    #[arg(long)]
    run: PathBuf,
    /// Reduced run tag such as `rom-rom_1e-2`.
    #[arg(long)]
    tag: String,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.scale {
            cfg.apply_scale(match s {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Paper => Scale::Paper,
            });
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn assemble(cfg: &ExperimentConfig) -> Result<usize> {
    let bench = Benchmark::build(cfg)?;
    let dir = cfg.out.join("operators");
    bench.assembly.ops.save_dir(&dir, Some(&bench.signal))?;
    std::fs::write(cfg.out.join("config.toml"), cfg.to_flat_string())?;
    let ops: &SwitchedOperatorSet = &bench.assembly.ops;
    println!("assembled N = {} (rho = {}, p = {}, modes = {}) into {}", ops.dim(), ops.n_inputs(), ops.n_outputs(), ops.n_modes(), dir.display());
    Ok(0)
}

fn openloop(cfg: &ExperimentConfig) -> Result<usize> {
    let bench = Benchmark::build(cfg)?;
    let study = experiments::run_openloop_study(&bench, cfg)?;
    experiments::write_openloop_csv(&study, cfg, &cfg.out)?;
    println!("seed  r    eff_theta  eff_p      eff_A      eff_B      eff_tB     valid");
    for r in &study.rows {
        println!(
            "{:<5} {:<4} {:<10.3e} {:<10.3e} {:<10.3e} {:<10.3e} {:<10.3e} {}",
            r.seed,
            r.rank,
            r.eff_theta(),
            r.eff_p(),
            r.eff_a(),
            r.eff_b(),
            r.eff_tilde_b(),
            r.is_valid()
        );
    }
    for (seed, r) in &study.skipped {
        println!("seed {seed}: rank {r} exceeds the POD rank, skipped");
    }
    Ok(study.violations())
}

fn mpc(cfg: &ExperimentConfig) -> Result<usize> {
    let bench = Benchmark::build(cfg)?;
    let cmp = experiments::run_mpc_comparison(&bench, cfg)?;
    experiments::write_mpc_csv(&cmp, cfg, &bench.horizon, &cfg.out)?;
    println!("fom       wall {:.2}s", cmp.fom.wall_time.as_secs_f64());
    for r in &cmp.runs {
        let m = &r.metrics;
        println!(
            "{:<9} tol {:.0e}  wall {:.2}s  speedup {:.2}  avg r {:.1}  updates {}  e_u {:.2e}  e_theta {:.2e}  e_y {:.2e}  e_J {:.2e}",
            r.result.scheme.name(),
            r.tolerance,
            r.result.wall_time.as_secs_f64(),
            r.speedup(&cmp.fom),
            r.result.average_rank(),
            r.result.n_updates(),
            m.e_u,
            m.e_theta,
            m.e_y,
            m.e_j
        );
        if m.e_j > m.e_y {
            println!("  note: e_J > e_y for this run");
        }
    }
    Ok(cmp.violations())
}

fn read_matrix(path: &std::path::Path) -> Result<nalgebra::DMatrix<f64>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let col = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| switchcert::Error::Invalid(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        cols.push(col);
    }
    let rows = cols.first().map_or(0, Vec::len);
    Ok(nalgebra::DMatrix::from_fn(rows, cols.len(), |i, k| cols[k][i]))
}

/// Metrics from stored controls and outputs; the state metric needs the
/// trajectories in memory and is reported by `mpc` directly.
fn metrics_cmd(args: &MetricsArgs) -> Result<usize> {
    let cfg = ExperimentConfig::from_file(&args.run.join("config.toml"))?;
    let bench = Benchmark::build(&cfg)?;
    let u_f = read_matrix(&args.run.join("fom_controls.csv"))?;
    let y_f = read_matrix(&args.run.join("fom_outputs.csv"))?;
    let u_r = read_matrix(&args.run.join(format!("{}_controls.csv", args.tag)))?;
    let y_r = read_matrix(&args.run.join(format!("{}_outputs.csv", args.tag)))?;
    if u_f.shape() != u_r.shape() || y_f.shape() != y_r.shape() {
        return Err(switchcert::Error::Dimension("runs live on different grids".into()));
    }
    let cost = bench.cost.window(0, u_f.ncols())?;
    let tau = bench.horizon.tau();
    let m = metrics::output_control_metrics(&cost, tau, (&u_f, &y_f), (&u_r, &y_r))?;
    println!("e_u {:e}\ne_y {:e}\ne_J {:e}", m.e_u, m.e_y, m.e_j);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Assemble(c) => c.resolve().and_then(|cfg| assemble(&cfg)),
        Command::Openloop(c) => c.resolve().and_then(|cfg| openloop(&cfg)),
        Command::Mpc(c) => c.resolve().and_then(|cfg| mpc(&cfg)),
        Command::Metrics(a) => metrics_cmd(a),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} validity violation(s)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

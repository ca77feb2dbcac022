//! Command-line harness for the conditional transport toolkit.
//!
//! Every subcommand is deterministic from `--seed`: rerunning with the same
//! configuration reproduces output files byte for byte. Commands that verify
//! analytic guarantees exit nonzero when any assertion fails, so the binary
//! can serve as a smoke check in scripts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use condot::experiments::{
    beta_sweep, counterexample_rows, mnist_coupling, prop_checks, run_experiment, ExperimentKind,
    RunSettings,
};
use condot::generator::LossVariant;

#[derive(Parser)]
#[command(
    name = "condot",
    version,
    about = "Conditional optimal transport: exact solvers, entropic divergences, generators"
)]
struct Cli {
    /// JSON config file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV and JSON reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-point family where the joint distance stays at 1 while the
    /// conditional distance grows like n.
    Counterexample {
        /// Values of n, comma-separated.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<f64>>,
    },
    /// Off-diagonal decay of the `‖Δx‖² + β‖Δy‖²` plan as β grows.
    BetaSweep {
        /// Sample count.
        #[arg(long)]
        n: Option<usize>,
        /// β grid, comma-separated.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Exact joint coupling on noisy digit observations, with a shuffled
    /// control.
    MnistCoupling {
        /// IDX image file (e.g. train-images-idx3-ubyte); synthetic digits
        /// are rendered when absent.
        #[arg(long)]
        idx: Option<PathBuf>,
        /// Number of image pairs.
        #[arg(long)]
        n: Option<usize>,
        /// Observation noise standard deviation.
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Train the three generator variants and report their metrics.
    Experiment {
        /// Which benchmark to run.
        #[arg(value_enum)]
        kind: Option<KindArg>,
        /// Size profile: minutes-scale desk run (default) or full-scale run.
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Loss variants to train, comma-separated.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<VariantArg>>,
        /// Training runs (seeds) per variant.
        #[arg(long)]
        runs: Option<usize>,
        /// Training iterations per run.
        #[arg(long)]
        iters: Option<usize>,
        /// Batch size.
        #[arg(long)]
        batch: Option<usize>,
        /// Condition-transport weight for the beta variant
        /// (diameter-normalized).
        #[arg(long)]
        beta: Option<f64>,
        /// Training blur, relative to the probed squared diameter.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run the analytic self-check battery.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Mixture,
    RandomImages,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Joint,
    Beta,
    Diagonal,
}

impl From<VariantArg> for LossVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Joint => LossVariant::Joint,
            VariantArg::Beta => LossVariant::Beta,
            VariantArg::Diagonal => LossVariant::Diagonal,
        }
    }
}

/// Optional JSON configuration; any present field acts as a default that
/// command-line flags override.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    ns: Option<Vec<f64>>,
    n: Option<usize>,
    betas: Option<Vec<f64>>,
    beta: Option<f64>,
    epsilon: Option<f64>,
    iters: Option<usize>,
    batch: Option<usize>,
    runs: Option<usize>,
    variants: Option<Vec<String>>,
    noise_std: Option<f64>,
    profile: Option<String>,
    idx: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(FileConfig::default()),
    }
}

fn out_dir(cli: &Cli, cfg: &FileConfig) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("condot-out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_variants(names: &[String]) -> Result<Vec<LossVariant>> {
    names
        .iter()
        .map(|name| match name.as_str() {
            "joint" => Ok(LossVariant::Joint),
            "beta" => Ok(LossVariant::Beta),
            "diagonal" => Ok(LossVariant::Diagonal),
            other => bail!("unknown variant {other:?} (expected joint, beta, diagonal)"),
        })
        .collect()
}

fn main() -> ExitCode {
    match run() {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let dir = out_dir(&cli, &cfg)?;

    match &cli.command {
        Command::Counterexample { ns } => {
            let ns = ns
                .clone()
                .or_else(|| cfg.ns.clone())
                .unwrap_or_else(|| vec![1.0, 5.0, 100.0]);
            let rows = counterexample_rows(&ns)?;
            let mut csv = String::from("n,joint_w1,conditional_w1\n");
            let mut ok = true;
            for row in &rows {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    row.n, row.joint_w1, row.conditional_w1
                ));
                let deviation = (row.joint_w1 - 1.0).abs().max((row.conditional_w1 - row.n).abs());
                if deviation > 1e-12 {
                    eprintln!(
                        "counterexample n = {}: joint {} conditional {} deviates by {deviation}",
                        row.n, row.joint_w1, row.conditional_w1
                    );
                    ok = false;
                }
            }
            write_file(&dir.join("counterexample.csv"), &csv)?;
            write_file(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&rows)?,
            )?;
            println!(
                "counterexample: {} rows, {}",
                rows.len(),
                if ok { "all exact" } else { "DEVIATIONS" }
            );
            Ok(ok)
        }
        Command::BetaSweep { n, betas } => {
            let n = n.or(cfg.n).unwrap_or(200);
            let betas = betas
                .clone()
                .or_else(|| cfg.betas.clone())
                .unwrap_or_else(|| vec![1.0, 10.0, 100.0, 1000.0, 10_000.0, 100_000.0]);
            let sweep = beta_sweep(n, &betas, seed)?;
            let mut csv = String::from("beta,offdiag_mass,offdiag_ycost,bound,pass\n");
            for row in &sweep.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.beta, row.offdiag_mass, row.offdiag_ycost, row.bound, row.pass
                ));
            }
            write_file(&dir.join("beta_sweep.csv"), &csv)?;
            write_file(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&sweep)?,
            )?;
            println!(
                "beta sweep at n = {n}: conditional value^2 = {}, {}",
                sweep.conditional_value_p,
                if sweep.pass { "bound holds" } else { "BOUND VIOLATED" }
            );
            Ok(sweep.pass)
        }
        Command::MnistCoupling { idx, n, noise_std } => {
            let idx = idx.clone().or_else(|| cfg.idx.clone());
            let n = n.or(cfg.n).unwrap_or(100);
            let noise_std = noise_std.or(cfg.noise_std).unwrap_or(0.1);
            let report = mnist_coupling(idx.as_deref(), n, noise_std, seed)?;
            write_file(&dir.join("coupling.csv"), &report.coupling.to_csv())?;
            write_file(
                &dir.join("coupling_shuffled.csv"),
                &report.shuffled_coupling.to_csv(),
            )?;
            let summary = serde_json::json!({
                "n": report.n,
                "source": report.source,
                "noise_std": noise_std,
                "offdiag_mass": report.offdiag_mass,
                "shuffled_offdiag_mass": report.shuffled_offdiag_mass,
            });
            write_file(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&summary)?,
            )?;
            let ok = report.offdiag_mass == 0.0 && report.shuffled_offdiag_mass > 0.0;
            println!(
                "coupling on {} {} pairs: offdiag mass {}, shuffled control {}",
                report.n, report.source, report.offdiag_mass, report.shuffled_offdiag_mass
            );
            if !ok {
                eprintln!("expected a diagonal plan and an off-diagonal shuffled control");
            }
            Ok(ok)
        }
        Command::Experiment {
            kind,
            profile,
            variants,
            runs,
            iters,
            batch,
            beta,
            epsilon,
        } => {
            let kind = match (kind, cfg.experiment.as_deref()) {
                (Some(KindArg::Mixture), _) => ExperimentKind::Mixture,
                (Some(KindArg::RandomImages), _) => ExperimentKind::RandomImages,
                (None, Some("mixture")) => ExperimentKind::Mixture,
                (None, Some("random-images" | "random_images")) => ExperimentKind::RandomImages,
                (None, Some(other)) => bail!("unknown experiment {other:?} in config"),
                (None, None) => bail!("specify an experiment (mixture or random-images)"),
            };
            let full = match (profile, cfg.profile.as_deref()) {
                (Some(ProfileArg::Full), _) => true,
                (Some(ProfileArg::Desk), _) => false,
                (None, None | Some("desk")) => false,
                (None, Some("full")) => true,
                (None, Some(other)) => bail!("unknown profile {other:?} in config"),
            };
            let mut settings = match (kind, full) {
                (ExperimentKind::Mixture, false) => RunSettings::mixture_desk(),
                (ExperimentKind::Mixture, true) => RunSettings::mixture_full(),
                (ExperimentKind::RandomImages, false) => RunSettings::images_desk(),
                (ExperimentKind::RandomImages, true) => RunSettings::images_full(),
            };
            settings.seed = seed;
            if let Some(runs) = runs.or(cfg.runs) {
                settings.runs = runs;
            }
            if let Some(iters) = iters.or(cfg.iters) {
                settings.iters = iters;
            }
            if let Some(batch) = batch.or(cfg.batch) {
                settings.batch = batch;
            }
            if let Some(beta) = beta.or(cfg.beta) {
                settings.beta = beta;
            }
            if let Some(eps) = epsilon.or(cfg.epsilon) {
                settings.train_epsilon_rel = eps;
            }
            let variants: Vec<LossVariant> = match (variants, cfg.variants.as_ref()) {
                (Some(v), _) => v.iter().map(|&v| v.into()).collect(),
                (None, Some(names)) => parse_variants(names)?,
                (None, None) => {
                    vec![LossVariant::Joint, LossVariant::Beta, LossVariant::Diagonal]
                }
            };

            let output = run_experiment(kind, &variants, &settings)?;
            let mut csv = String::from("variant,metric,run,value\n");
            for row in &output.rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.variant, row.metric, row.run, row.value
                ));
            }
            write_file(&dir.join("metrics.csv"), &csv)?;
            let report = serde_json::json!({
                "experiment": kind.name(),
                "settings": settings,
                "summaries": output.summaries,
                "unconverged_steps": output.unconverged_steps,
            });
            write_file(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            println!("{} experiment, {} runs per variant:", kind.name(), settings.runs);
            for s in &output.summaries {
                println!(
                    "  {:<9} {:<26} mean {:>12.6}  std {:>12.6}",
                    s.variant, s.metric, s.mean, s.std
                );
            }
            Ok(true)
        }
        Command::Check => {
            let reports = prop_checks(seed)?;
            let mut ok = true;
            for report in &reports {
                let status = if report.pass { "pass" } else { "FAIL" };
                println!(
                    "{status}  {:<26} value {:>14.6e}  bound {:>10.1e}  {}",
                    report.name, report.value, report.bound, report.details
                );
                ok &= report.pass;
            }
            write_file(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&reports)?,
            )?;
            Ok(ok)
        }
    }
}

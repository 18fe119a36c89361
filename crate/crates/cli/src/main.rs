mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gafi::evaluation::real_accuracy;
use gafi::models::fit_classifier;
use gafi::pipeline::{
    ablate_expansion, ablate_filtering, ablate_recycle_periods, run_gafi, with_jobs, EvalContext, SweepCurve,
};
use gafi::GeneratorCheckpoint;
use serde::Serialize;

use config::{ConfigError, RunConfig};
use output::{summary, write_atomic, write_curve, write_json, ARTIFACT_VERSION};

#[derive(Parser)]
#[command(name = "gafi", version, about = "Generate, filter and recycle synthetic training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: one per logical core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the generator and save every checkpoint with a manifest.
    FitGenerator,
    /// Run the full pipeline and write report.json, curves and summary.txt.
    RunGafi,
    /// Sweep a single technique with everything else at baseline.
    Ablate {
        #[arg(long, value_enum)]
        technique: Technique,
        /// Use this checkpoint instead of training the generator.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy of the classifier trained on real data.
    RealAccuracy,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Technique {
    Filtering,
    Recycle,
    Expansion,
}

#[derive(Serialize)]
struct Artifact<'a, T> {
    artifact_version: &'static str,
    command: &'a str,
    run_config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct ManifestEntry {
    epoch: usize,
    file: String,
    fingerprint: String,
}

fn hex(x: u64) -> String {
    format!("{x:016x}")
}

fn resolve(cli: &Cli) -> Result<(RunConfig, PathBuf, usize)> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| ConfigError("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| ConfigError("no output directory: pass --out or set `out`".into()))?;
    Ok((cfg, out, cli.jobs.unwrap_or(0)))
}

fn fit_generator(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let (train, _) = cfg.load_data()?;
    let gafi = cfg.gafi();
    let seed = gafi.generator_seed(0);
    let checkpoints = with_jobs(jobs, || cfg.generator.fit(&train, seed)).context("generator training")?;
    let mut entries = Vec::new();
    for ckpt in &checkpoints {
        let file = format!("epoch_{:04}.ckpt", ckpt.epoch);
        write_atomic(&out.join(&file), &ckpt.to_bytes())?;
        entries.push(ManifestEntry {
            epoch: ckpt.epoch,
            file,
            fingerprint: hex(ckpt.fingerprint()),
        });
    }
    #[derive(Serialize)]
    struct Body {
        generator_seed: u64,
        checkpoints: Vec<ManifestEntry>,
    }
    let body = Body {
        generator_seed: seed,
        checkpoints: entries,
    };
    write_json(&out.join("manifest.json"), &artifact("fit-generator", cfg, body))?;
    eprintln!("wrote {} checkpoints to {}", checkpoints.len(), out.display());
    Ok(())
}

fn artifact<'a, T>(command: &'a str, run_config: &'a RunConfig, body: T) -> Artifact<'a, T> {
    Artifact {
        artifact_version: ARTIFACT_VERSION,
        command,
        run_config,
        body,
    }
}

fn run(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let report = run_gafi(&train, &test, &cfg.gafi(), jobs)?;
    for rep in &report.repetitions {
        let suffix = if rep.index == 0 { String::new() } else { format!("_rep{}", rep.index) };
        for curve in [&rep.checkpoint_curve, &rep.stddev_curve, &rep.threshold_curve] {
            write_curve(out, curve, &suffix)?;
        }
    }
    #[derive(Serialize)]
    struct Body<'a> {
        report: &'a gafi::pipeline::GafiReport,
    }
    write_json(&out.join("report.json"), &artifact("run-gafi", cfg, Body { report: &report }))?;
    let text = summary(&report);
    write_atomic(&out.join("summary.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn ablate(cfg: &RunConfig, out: &Path, jobs: usize, technique: Technique, checkpoint: Option<&Path>) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let gafi = cfg.gafi();
    let curves: Vec<SweepCurve> = with_jobs(jobs, || {
        let generator = match checkpoint {
            Some(path) => GeneratorCheckpoint::load(path).map_err(|e| e.context(format!("loading {}", path.display())))?,
            None => cfg.generator.fit(&train, gafi.generator_seed(0))?.pop().expect("at least one checkpoint"),
        };
        let oracle = fit_classifier(gafi.classifier, &train, &gafi.budget, gafi.oracle_seed())?;
        let ctx = EvalContext::from_config(&gafi, &oracle, &train, &test, gafi.sweep_seed(0));
        Ok(match technique {
            Technique::Filtering => vec![ablate_filtering(&generator, &ctx)?],
            Technique::Recycle => vec![ablate_recycle_periods(&generator, &ctx, &cfg.recycle_periods)?],
            Technique::Expansion => {
                let (a, b) = ablate_expansion(&generator, &ctx)?;
                vec![a, b]
            }
        })
    })
    .with_context(|| format!("{technique:?} ablation").to_lowercase())?;
    for curve in &curves {
        write_curve(out, curve, "")?;
        for p in &curve.points {
            let score = p.cas().map_or("failed".to_string(), |c| format!("{:.4}", c.cas_mean));
            println!("{:<18} {:>8}  {score}", curve.axis, p.label);
        }
    }
    #[derive(Serialize)]
    struct Body<'a> {
        technique: Technique,
        curves: &'a [SweepCurve],
    }
    write_json(&out.join("ablation.json"), &artifact("ablate", cfg, Body { technique, curves: &curves }))
}

fn real(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let gafi = cfg.gafi();
    let cas_cfg = gafi::evaluation::CasConfig::new(gafi.classifier, gafi.budget.clone(), gafi.accurate_seeds())?;
    let result = with_jobs(jobs, || real_accuracy(&train, &test, &cas_cfg))?;
    println!("real accuracy {:.2}% over {} seeds", 100.0 * result.cas_mean, result.seeds.len());
    #[derive(Serialize)]
    struct Body<'a> {
        real: &'a gafi::evaluation::CasResult,
    }
    write_json(&out.join("real_accuracy.json"), &artifact("real-accuracy", cfg, Body { real: &result }))
}

fn execute(cli: &Cli) -> Result<()> {
    let (cfg, out, jobs) = resolve(cli)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::FitGenerator => fit_generator(&cfg, &out, jobs),
        Command::RunGafi => run(&cfg, &out, jobs),
        Command::Ablate { technique, checkpoint } => ablate(&cfg, &out, jobs, *technique, checkpoint.as_deref()),
        Command::RealAccuracy => real(&cfg, &out, jobs),
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.downcast_ref::<gafi::Error>()
                .is_some_and(|g| matches!(g.root(), gafi::Error::Config(_) | gafi::Error::Usage(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

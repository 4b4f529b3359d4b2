use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use planestitch::dataset::{fit_bins, write_dataset};
use planestitch::eval::{evaluate, load_eval_pairs, to_csv};
use planestitch::export::export_obj;
use planestitch::format::{read_json, to_json, write_json, BinFile, PoseDto};
use planestitch::pipeline::{is_pair_dir, report_path, run_batch, thread_pool};
use planestitch::{PipelineConfig, Report};
use planestitch_core::synth::sample_training_poses;

#[derive(Parser)]
#[command(name = "planestitch", version, about = "Stitch planar reconstructions from two sparse views")]
struct Cli {
    /// Pipeline configuration (JSON); built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthetic data, bin fitting and keypoint RANSAC.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skip continuous refinement and keep the selected bin pose.
    #[arg(long, global = true)]
    skip_continuous: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit translation and rotation bins to training poses.
    FitBins {
        /// JSON list of {"rotation": [w,x,y,z], "translation": [x,y,z]};
        /// synthetic poses are sampled when absent.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Number of synthetic poses to sample.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic pairs with ground truth.
    Synth {
        #[arg(long)]
        bins: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        pairs: usize,
    },
    /// Stitch one pair directory, or every pair subdirectory of a batch.
    Stitch {
        input: PathBuf,
        /// Report file for a single pair, or output root for a batch.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate reports against ground truth.
    Eval {
        /// Directory of pair subdirectories holding report.json.
        dir: PathBuf,
        /// Directory holding the matching gt.json files; defaults to DIR.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Metrics JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Export a report's reconstruction as an OBJ mesh.
    Export {
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.skip_continuous {
        cfg.skip_continuous = true;
    }
    if let Some(seed) = cli.seed {
        cfg.refine.ransac_seed = seed;
    }
    Ok(cfg)
}

fn threads(cli: &Cli) -> usize {
    cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Writes every report and fails when any pair failed.
fn stitch(cli: &Cli, cfg: &PipelineConfig, input: &Path, out: Option<&Path>) -> Result<()> {
    let single = is_pair_dir(input);
    let results = run_batch(input, cfg, &thread_pool(threads(cli)))?;
    let mut failed = 0;
    for (dir, report) in &results {
        let path = if single {
            out.map(Path::to_path_buf).unwrap_or_else(|| report_path(input, dir, None))
        } else {
            report_path(input, dir, out)
        };
        write_json(&path, report)?;
        if let Some(e) = &report.error {
            failed += 1;
            eprintln!("{}: {e}", dir.display());
        }
        for w in &report.warnings {
            eprintln!("{}: warning: {w}", dir.display());
        }
    }
    if failed > 0 {
        bail!("{failed} of {} pairs failed", results.len());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::FitBins { poses, samples, out } => {
            let poses: Vec<PoseDto> = match poses {
                Some(p) => read_json(p)?,
                None => sample_training_poses(*samples, cfg.synth.max_rotation_deg, cfg.synth.max_translation, seed)
                    .iter()
                    .map(PoseDto::from)
                    .collect(),
            };
            let bins = fit_bins(&poses, seed)?;
            write_json(out, &BinFile::from(&bins))?;
        }
        Command::Synth { bins, out, pairs } => {
            let bins = read_json::<BinFile>(bins)?.to_bins()?;
            write_dataset(out, &bins, &cfg, *pairs, seed, &thread_pool(threads(cli)))?;
        }
        Command::Stitch { input, out } => stitch(cli, &cfg, input, out.as_deref())?,
        Command::Eval { dir, gt, out, csv } => {
            let pairs = load_eval_pairs(dir, gt.as_deref().unwrap_or(dir))?;
            if pairs.is_empty() {
                bail!("no report.json found under {}", dir.display());
            }
            let data: Vec<_> = pairs.into_iter().map(|(_, r, g)| (r, g)).collect();
            let metrics = evaluate(&data)?;
            match out {
                Some(p) => write_json(p, &metrics)?,
                None => print!("{}", to_json(&metrics)),
            }
            if let Some(p) = csv {
                std::fs::write(p, to_csv(&metrics)).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Export { report, out } => {
            let report: Report = read_json(report)?;
            if let Some(e) = &report.error {
                bail!("report records a failed run: {e}");
            }
            for w in export_obj(&report.reconstruction()?, &report.intrinsics()?, out)? {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // a stitch that cannot even start still leaves a JSON report
            if let Command::Stitch { input, out } = &cli.command {
                if !input.is_dir() {
                    let cfg = effective_config(&cli).unwrap_or_default();
                    let report = Report::failure(&format!("{e:#}"), &cfg);
                    match out {
                        Some(p) => {
                            let _ = write_json(p, &report);
                        }
                        None => print!("{}", to_json(&report)),
                    }
                }
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

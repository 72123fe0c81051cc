//! `hopa`: dataset synthesis, training, evaluation, ablations and reports.
//!
//! Exit status is 0 on success, 1 for configuration, validation and runtime
//! errors, and 2 for usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hopa_core::backbone::{stage_metadata, BackboneConfig};
use hopa_core::checkpoint;
use hopa_core::config::{parse_toml, ExperimentConfig};
use hopa_core::data::synthetic::{gen_synthetic, SyntheticSpec};
use hopa_core::data::{dataset::INDEX_FILE, load_all, SegSample};
use hopa_core::experiment::{self, ablation_table, iou_table};
use hopa_core::infer::InferConfig;
use hopa_core::model::Model;
use hopa_core::paired_aspp::{scale_coverage, Combination, PairedAsppConfig};
use hopa_core::report::{merge, Table};

#[derive(Parser)]
#[command(
    name = "hopa",
    version,
    about = "High-order paired-ASPP segmentation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a texture segmentation dataset.
    Gen(GenArgs),
    /// Train a model; writes checkpoints and metrics.
    Train(TrainArgs),
    /// Per-class IoU of a checkpoint on a split.
    Eval(EvalArgs),
    /// Train variants under shared seeds and compare mIoU.
    #[command(subcommand)]
    Ablate(Ablate),
    /// Static analyses.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Merge CSV metric tables into one text and CSV table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Spec file (TOML) or preset name: order3, first_order.
    #[arg(long)]
    spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset root (with train/ and optionally val/) or a split directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print every n-th iteration to stderr (0: silent).
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split directory containing index.txt, or a dataset root with val/.
    #[arg(long)]
    data: PathBuf,
    /// Use scales 0.5..1.75 with flipping instead of the configured inference.
    #[arg(long)]
    multi_scale: bool,
    /// Also write the table to <out>.txt and <out>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateCommon {
    #[arg(long)]
    config: PathBuf,
    /// Dataset root with train/ and val/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Writes <out>.txt and <out>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Ablate {
    /// HR order R over the given values.
    Orders {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        orders: Vec<usize>,
    },
    /// Combination-1 against combination-2.
    Pairing {
        #[command(flatten)]
        common: AblateCommon,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Paper,
}

#[derive(Subcommand)]
enum Analyze {
    /// Receptive-field intervals of the atrous branches for both pairings.
    Scales {
        #[arg(long, value_enum, default_value = "toy")]
        backbone: Preset,
        /// Rates in combination-1 order (V34, V24, V14, Y4).
        #[arg(long, value_delimiter = ',', num_args = 4, default_value = "18,12,6,1")]
        rates: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// CSV tables written by eval, ablate or analyze.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Analyze(Analyze::Scales {
            backbone,
            rates,
            out,
        }) => analyze_scales(backbone, &rates, out),
        Command::Report(a) => report(a),
    }
}

fn emit(table: &Table, out: Option<&Path>) -> Result<()> {
    print!("{}", table.to_text());
    if let Some(stem) = out {
        table.write_both(stem)?;
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = match SyntheticSpec::preset(&a.spec) {
        Ok(s) => s,
        Err(_) => {
            let path = Path::new(&a.spec);
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            parse_toml::<SyntheticSpec>(&text)?
        }
    };
    gen_synthetic(&spec, a.seed, &a.out)?;
    println!(
        "wrote {} train and {} val samples to {}",
        spec.train_count,
        spec.val_count,
        a.out.display()
    );
    Ok(())
}

/// `dir` itself if it holds an index, otherwise `dir/<split>`.
fn split_dir(dir: &Path, split: &str) -> PathBuf {
    if dir.join(INDEX_FILE).is_file() {
        dir.to_path_buf()
    } else {
        dir.join(split)
    }
}

fn load_split(dir: &Path, split: &str, k: usize) -> Result<Vec<SegSample>> {
    let d = split_dir(dir, split);
    load_all(&d, k).with_context(|| format!("loading {}", d.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let train_set = load_split(&a.data, "train", cfg.num_classes)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cfg_text = cfg.to_toml();
    fs::write(a.out.join("config.toml"), &cfg_text)?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))?;
    let every = cfg.train.checkpoint_every;
    let trainer = experiment::train(&cfg, &train_set, |t, rec| {
        writeln!(
            metrics,
            "{}",
            serde_json::to_string(rec).expect("record serializes")
        )
        .map_err(|e| hopa_core::Error::io(&metrics_path, e))?;
        if a.log_every > 0 && (rec.iter + 1) % a.log_every == 0 {
            eprintln!(
                "iter {:>6}  lr {:.6}  loss {:.5}",
                rec.iter + 1,
                rec.lr,
                rec.loss
            );
        }
        if every > 0 && t.iter % every == 0 && t.iter < t.cfg.max_iter {
            checkpoint::save(
                &a.out.join(format!("checkpoint-{}", t.iter)),
                &t.model,
                Some(&t.sgd),
                t.iter,
                t.cfg.seed,
                &cfg_text,
            )?;
        }
        Ok(())
    })?;
    let ckpt = a.out.join("checkpoint");
    checkpoint::save(
        &ckpt,
        &trainer.model,
        Some(&trainer.sgd),
        trainer.iter,
        cfg.train.seed,
        &cfg_text,
    )?;
    println!("checkpoint written to {}", ckpt.display());

    let val_dir = a.data.join("val");
    if val_dir.join(INDEX_FILE).is_file() {
        let val = load_split(&val_dir, "val", cfg.num_classes)?;
        let table = iou_table(&experiment::evaluate_miou(&trainer.model, &cfg, &val)?);
        emit(&table, Some(&a.out.join("iou")))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let mut cfg = ExperimentConfig::from_toml(&ckpt.manifest.config)
        .context("configuration stored in checkpoint")?;
    if a.multi_scale {
        cfg.infer = InferConfig::multi_scale();
    }
    let model = Model::new(cfg.model()?, &mut hopa_core::seed::rng(&[0]))?;
    ckpt.restore_model(&model)?;
    let val = load_split(&a.data, "val", cfg.num_classes)?;
    let table = iou_table(&experiment::evaluate_miou(&model, &cfg, &val)?);
    emit(&table, a.out.as_deref())
}

fn ablate(a: Ablate) -> Result<()> {
    let (common, orders) = match a {
        Ablate::Orders { common, orders } => (common, Some(orders)),
        Ablate::Pairing { common } => (common, None),
    };
    if common.seeds.is_empty() {
        bail!("--seeds must name at least one seed");
    }
    let cfg = ExperimentConfig::load(&common.config)?;
    let train_set = load_split(&common.data, "train", cfg.num_classes)?;
    let val = load_split(&common.data, "val", cfg.num_classes)?;
    let progress = |label: &str, seed: u64, m: f64| eprintln!("{label} seed {seed}: mIoU {m:.4}");
    let (header, rows) = match orders {
        Some(orders) => (
            "order",
            experiment::ablate_orders(&cfg, &orders, &common.seeds, &train_set, &val, progress)?,
        ),
        None => (
            "pairing",
            experiment::ablate_pairing(&cfg, &common.seeds, &train_set, &val, progress)?,
        ),
    };
    emit(
        &ablation_table(header, &rows, &common.seeds),
        common.out.as_deref(),
    )
}

fn analyze_scales(preset: Preset, rates: &[usize], out: Option<PathBuf>) -> Result<()> {
    let backbone = match preset {
        Preset::Toy => BackboneConfig::toy(),
        Preset::Paper => BackboneConfig::paper(),
    };
    let meta = stage_metadata(&backbone);
    let mut table = Table::new(
        [
            "combination",
            "branch",
            "rate",
            "rf_min",
            "rf_max",
            "union_span",
            "overlaps",
        ]
        .map(String::from)
        .to_vec(),
    );
    for comb in [Combination::One, Combination::Two] {
        let mut pa = PairedAsppConfig::new(comb, 1, 1);
        pa.rates = rates.try_into().expect("clap enforces four rates");
        pa.validate()?;
        let cov = scale_coverage(&pa, &meta);
        for iv in &cov.intervals {
            table.push(vec![
                comb.to_string(),
                iv.source.clone(),
                iv.rate.to_string(),
                iv.lo.to_string(),
                iv.hi.to_string(),
                cov.union_span.to_string(),
                cov.overlaps.to_string(),
            ]);
        }
    }
    let stages: Vec<String> = meta
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| format!("Y{}: stride {} rf {}", i + 1, s.stride, s.receptive_field))
        .collect();
    println!("{}", stages.join(", "));
    emit(&table, out.as_deref())
}

fn report(a: ReportArgs) -> Result<()> {
    let tables = a
        .inputs
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            Ok((name, Table::read_csv(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&merge(&tables), a.out.as_deref())
}

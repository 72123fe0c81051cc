//! Whole runs: build a model from a configuration, train it, evaluate it,
//! and the two ablations over HR order and rate pairing.

use crate::config::ExperimentConfig;
use crate::data::SegSample;
use crate::error::Result;
use crate::infer::evaluate;
use crate::metrics::{miou, IouReport};
use crate::model::Model;
use crate::paired_aspp::Combination;
use crate::report::Table;
use crate::seed::{self, stream};
use crate::train::{StepRecord, Trainer};

const EVAL_BATCH: usize = 16;

/// Initial weights depend only on the configuration and `train.seed`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<Model> {
    Model::new(
        cfg.model()?,
        &mut seed::rng(&[cfg.train.seed, stream::INIT]),
    )
}

/// Trains from scratch to `max_iter`.
pub fn train<'a>(
    cfg: &ExperimentConfig,
    data: &'a [SegSample],
    on_step: impl FnMut(&Trainer<'a>, &StepRecord) -> Result<()>,
) -> Result<Trainer<'a>> {
    cfg.validate()?;
    let mut trainer = Trainer::new(build_model(cfg)?, cfg.train.clone(), data)?;
    trainer.run(on_step)?;
    Ok(trainer)
}

pub fn evaluate_miou(
    model: &Model,
    cfg: &ExperimentConfig,
    val: &[SegSample],
) -> Result<IouReport> {
    miou(&evaluate(model, val, &cfg.infer, EVAL_BATCH)?)
}

/// One ablation cell: a labelled variant trained under several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub per_seed: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.per_seed.iter().sum::<f64>() / self.per_seed.len() as f64
    }
}

fn run_variants(
    variants: Vec<(String, ExperimentConfig)>,
    seeds: &[u64],
    train_set: &[SegSample],
    val: &[SegSample],
    mut progress: impl FnMut(&str, u64, f64),
) -> Result<Vec<AblationRow>> {
    variants
        .into_iter()
        .map(|(label, cfg)| {
            let per_seed = seeds
                .iter()
                .map(|&s| {
                    let mut c = cfg.clone();
                    c.train.seed = s;
                    let trainer = train(&c, train_set, |_, _| Ok(()))?;
                    let m = evaluate_miou(&trainer.model, &c, val)?.mean;
                    progress(&label, s, m);
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow { label, per_seed })
        })
        .collect()
}

/// Same configuration and seeds, HR order varied.
pub fn ablate_orders(
    base: &ExperimentConfig,
    orders: &[usize],
    seeds: &[u64],
    train_set: &[SegSample],
    val: &[SegSample],
    progress: impl FnMut(&str, u64, f64),
) -> Result<Vec<AblationRow>> {
    let variants = orders
        .iter()
        .map(|&r| {
            let mut c = base.clone();
            c.hr.order = r;
            (format!("R={r}"), c)
        })
        .collect();
    run_variants(variants, seeds, train_set, val, progress)
}

/// Same configuration and seeds, rate pairing varied.
pub fn ablate_pairing(
    base: &ExperimentConfig,
    seeds: &[u64],
    train_set: &[SegSample],
    val: &[SegSample],
    progress: impl FnMut(&str, u64, f64),
) -> Result<Vec<AblationRow>> {
    let variants = [Combination::One, Combination::Two]
        .into_iter()
        .map(|comb| {
            let mut c = base.clone();
            c.paired_aspp.combination = comb;
            (comb.to_string(), c)
        })
        .collect();
    run_variants(variants, seeds, train_set, val, progress)
}

/// `variant | mIoU | seed … columns`.
pub fn ablation_table(first_header: &str, rows: &[AblationRow], seeds: &[u64]) -> Table {
    let mut headers = vec![first_header.to_string(), "mIoU".to_string()];
    headers.extend(seeds.iter().map(|s| format!("seed {s}")));
    let mut table = Table::new(headers);
    for row in rows {
        let mut cells = vec![row.label.clone(), format!("{:.4}", row.mean())];
        cells.extend(row.per_seed.iter().map(|m| format!("{m:.4}")));
        table.push(cells);
    }
    table
}

/// `class | IoU` plus a closing mean row.
pub fn iou_table(report: &IouReport) -> Table {
    let mut table = Table::new(vec!["class".into(), "IoU".into()]);
    for (k, iou) in report.per_class.iter().enumerate() {
        table.push(vec![
            k.to_string(),
            iou.map_or("n/a".into(), |v| format!("{v:.4}")),
        ]);
    }
    table.push(vec!["mean".into(), format!("{:.4}", report.mean)]);
    table
}

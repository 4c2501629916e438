//! Repeated random-split evaluation with percentile intervals.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{roc_points, Metrics, RocCurve};
use super::split::{split_dataset, Split};
use crate::config::EvalConfig;
use crate::error::{Error, Result};

/// What a repeat's model builder sees.
#[derive(Debug, Clone, Copy)]
pub struct RepeatContext<'a> {
    pub repeat: usize,
    /// `seed_base + repeat`; drives the split and everything trained in it.
    pub seed: u64,
    pub split: &'a Split,
}

/// Test-set MCI probabilities (in `split.test` order) plus an optional
/// serialized model.
#[derive(Debug, Clone, Default)]
pub struct RepeatOutput {
    pub scores: Vec<f64>,
    pub artifact: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub roc: RocCurve,
    pub test_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub artifact: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepeatRow {
    pub repeat: usize,
    pub seed: u64,
    pub n_test: usize,
    pub metrics: Metrics,
}

/// Mean and percentile interval of one metric across repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MetricSummary {
    /// Mean with the 2.5th and 97.5th percentiles.
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        MetricSummary {
            // Rounding can push the mean of a constant sequence off its value.
            mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
            lower: percentile(&sorted, 2.5),
            upper: percentile(&sorted, 97.5),
        }
    }
}

/// Linear-interpolation percentile of an ascending, non-empty slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub name: String,
    pub threshold: f64,
    pub seed_base: u64,
    pub rows: Vec<RepeatRow>,
    /// Indexed like [`Metrics::NAMES`].
    pub summary: [MetricSummary; 4],
    /// Repeat whose AUC is the median (lower middle for an even count).
    pub median_repeat: usize,
}

impl EvalReport {
    pub fn from_rows(name: &str, threshold: f64, seed_base: u64, rows: Vec<RepeatRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Metric(format!("{name}: no repeats to summarize")));
        }
        let summary = std::array::from_fn(|k| {
            let v: Vec<f64> = rows.iter().map(|r| r.metrics.values()[k]).collect();
            MetricSummary::of(&v)
        });
        let mut by_auc: Vec<&RepeatRow> = rows.iter().collect();
        by_auc.sort_by(|a, b| a.metrics.auc.total_cmp(&b.metrics.auc).then(a.repeat.cmp(&b.repeat)));
        let median_repeat = by_auc[(by_auc.len() - 1) / 2].repeat;
        Ok(EvalReport {
            name: name.to_string(),
            threshold,
            seed_base,
            rows,
            summary,
            median_repeat,
        })
    }

    pub fn auc(&self) -> MetricSummary {
        self.summary[0]
    }

    /// `repeat,seed,n_test,auc,acc,sen,spe`
    pub fn write_repeats_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("writing report: {e}"));
        wr.write_record(["repeat", "seed", "n_test", "auc", "acc", "sen", "spe"])
            .map_err(err)?;
        for r in &self.rows {
            let mut rec = vec![r.repeat.to_string(), r.seed.to_string(), r.n_test.to_string()];
            rec.extend(r.metrics.values().iter().map(|v| format!("{v:.6}")));
            wr.write_record(&rec).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::data(format!("writing report: {e}")))
    }

    /// `metric,mean,ci_lower,ci_upper`
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("writing summary: {e}"));
        wr.write_record(["metric", "mean", "ci_lower", "ci_upper"]).map_err(err)?;
        for (name, s) in Metrics::NAMES.iter().zip(&self.summary) {
            wr.write_record([
                name.to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.lower),
                format!("{:.6}", s.upper),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::data(format!("writing summary: {e}")))
    }
}

/// Fixed-width table: one row per model, `mean [lower-upper]` per metric.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0).max(14);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Input modality");
    for m in Metrics::NAMES {
        let _ = write!(out, "  {:<21}", m.to_uppercase());
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<width$}", r.name);
        for s in &r.summary {
            let _ = write!(out, "  {:<21}", format!("{:.3} [{:.3}-{:.3}]", s.mean, s.lower, s.upper));
        }
        out.push('\n');
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(
            out,
            "\n{} repeats, seed base {}, threshold {}",
            r.rows.len(),
            r.seed_base,
            r.threshold
        );
    }
    out
}

/// Report plus the full result of the median-AUC repeat.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub report: EvalReport,
    pub median: RepeatResult,
}

/// Runs `cfg.repeats` independent splits, each seeded `seed_base + r`.
///
/// `run` trains on `split.train`/`split.val` and returns test-set
/// probabilities. Repeats run on `cfg.jobs` threads (0 picks the rayon
/// default); results are gathered in repeat order, so the report does not
/// depend on the thread count.
pub fn repeated_eval<F>(name: &str, labels: &[bool], cfg: &EvalConfig, run: F) -> Result<ProtocolRun>
where
    F: Fn(&RepeatContext<'_>) -> Result<RepeatOutput> + Sync,
{
    cfg.validate()?;
    let one = |r: usize| -> Result<RepeatResult> {
        let seed = cfg.seed_base + r as u64;
        let wrap = |e: Error| Error::Repeat {
            repeat: r,
            source: Box::new(e),
        };
        let split = split_dataset(labels, cfg.ratios, seed, cfg.stratify).map_err(wrap)?;
        let ctx = RepeatContext { repeat: r, seed, split: &split };
        let out = run(&ctx).map_err(wrap)?;
        if out.scores.len() != split.test.len() {
            return Err(wrap(Error::Metric(format!(
                "{} test scores for {} test records",
                out.scores.len(),
                split.test.len()
            ))));
        }
        let y: Vec<bool> = split.test.iter().map(|&i| labels[i]).collect();
        let metrics = Metrics::compute(&out.scores, &y, cfg.threshold).map_err(wrap)?;
        let roc = roc_points(&out.scores, &y).map_err(wrap)?;
        log::info!("{name}: repeat {r} auc {:.4}", metrics.auc);
        Ok(RepeatResult {
            repeat: r,
            seed,
            metrics,
            roc,
            test_ids: split.test.clone(),
            scores: out.scores,
            artifact: out.artifact,
        })
    };
    let results: Vec<Result<RepeatResult>> = if cfg.jobs == 1 {
        (0..cfg.repeats).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| (0..cfg.repeats).into_par_iter().map(one).collect())
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = results
        .iter()
        .map(|r| RepeatRow {
            repeat: r.repeat,
            seed: r.seed,
            n_test: r.test_ids.len(),
            metrics: r.metrics,
        })
        .collect();
    let report = EvalReport::from_rows(name, cfg.threshold, cfg.seed_base, rows)?;
    let median = results
        .into_iter()
        .nth(report.median_repeat)
        .expect("median repeat is one of the results");
    Ok(ProtocolRun { report, median })
}

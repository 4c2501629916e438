//! End-to-end runs shared by the command-line tool and the tests: the
//! repeated protocol per model variant, the baseline suite, single training
//! runs and external evaluation of a saved checkpoint.

use std::path::{Path, PathBuf};

use rcft_tensor::{DType, Scalar};

use crate::baselines::{LogisticOptions, ScoreBaseline};
use crate::config::{FusionMode, Precision, RunConfig, TrainConfig};
use crate::data::{load_samples, CohortManifest};
use crate::error::{Error, Result};
use crate::eval::{format_table, repeated_eval, split_dataset, Metrics, ProtocolRun, RepeatOutput, RocCurve};
use crate::model::{load_checkpoint, peek_dtype, save_checkpoint, write_predictions, MultiStreamModel, Prediction, Sample};
use crate::training::{train, TrainHistory};

/// One row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Score(ScoreBaseline),
    SpatialOnly,
    ScoringOnly,
    MultiStream,
}

impl Variant {
    /// Logistic baselines, the image-only network, then the fused model.
    pub const SUITE: [Variant; 5] = [
        Variant::Score(ScoreBaseline::Mmse),
        Variant::Score(ScoreBaseline::ExpertScores),
        Variant::Score(ScoreBaseline::AiScores),
        Variant::SpatialOnly,
        Variant::MultiStream,
    ];

    pub const ALL: [Variant; 6] = [
        Variant::Score(ScoreBaseline::Mmse),
        Variant::Score(ScoreBaseline::ExpertScores),
        Variant::Score(ScoreBaseline::AiScores),
        Variant::SpatialOnly,
        Variant::ScoringOnly,
        Variant::MultiStream,
    ];

    /// Inverse of [`Variant::slug`]; hyphens are accepted for underscores.
    pub fn from_slug(s: &str) -> Result<Variant> {
        let key = s.trim().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.slug() == key)
            .ok_or_else(|| {
                let known: Vec<&str> = Variant::ALL.iter().map(|v| v.slug()).collect();
                Error::config(format!("unknown variant {s:?} (expected one of {})", known.join(", ")))
            })
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Score(b) => b.label(),
            Variant::SpatialOnly => "Only RCFT images",
            Variant::ScoringOnly => "Only scoring stream",
            Variant::MultiStream => "Multi-stream",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Score(b) => b.slug(),
            Variant::SpatialOnly => "spatial_only",
            Variant::ScoringOnly => "scoring_only",
            Variant::MultiStream => "multi_stream",
        }
    }

    fn fusion(self) -> Option<FusionMode> {
        match self {
            Variant::Score(_) => None,
            Variant::SpatialOnly => Some(FusionMode::SpatialOnly),
            Variant::ScoringOnly => Some(FusionMode::ScoringOnly),
            Variant::MultiStream => Some(FusionMode::Average),
        }
    }
}

fn with_fusion(cfg: &RunConfig, fusion: FusionMode) -> RunConfig {
    RunConfig { fusion, ..cfg.clone() }
}

fn pick<T: Scalar>(samples: &[Sample<T>], idx: &[usize]) -> Vec<Sample<T>> {
    idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>()
}

fn train_config(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

fn run_deep<T: Scalar>(label: &str, manifest: &CohortManifest, cfg: &RunConfig) -> Result<ProtocolRun> {
    let model_cfg = cfg.model();
    let template = MultiStreamModel::<T>::new(&model_cfg, cfg.seed)?;
    let samples = load_samples(&template, manifest)?;
    let labels = manifest.labels();
    let threshold = cfg.eval.threshold;
    repeated_eval(label, &labels, &cfg.eval, |ctx| {
        let model = MultiStreamModel::<T>::new(&model_cfg, ctx.seed)?;
        let tr = pick(&samples, &ctx.split.train);
        let va = pick(&samples, &ctx.split.val);
        let te = pick(&samples, &ctx.split.test);
        let (model, history) = train(model, &tr, &va, &train_config(&cfg.train, ctx.seed))?;
        log::debug!(
            "{label}: repeat {} stopped at epoch {}, best {}",
            ctx.repeat,
            history.stopped_epoch,
            history.best_epoch
        );
        let preds = model.predict(&te, threshold)?;
        Ok(RepeatOutput {
            scores: preds.iter().map(|p| p.p_final[1]).collect(),
            artifact: Some(save_checkpoint(&model)),
        })
    })
}

/// Runs the repeated protocol for one variant.
pub fn run_variant(variant: Variant, manifest: &CohortManifest, cfg: &RunConfig) -> Result<ProtocolRun> {
    match variant {
        Variant::Score(b) => {
            let opts = LogisticOptions::default();
            repeated_eval(b.label(), &manifest.labels(), &cfg.eval, |ctx| {
                let (_, p) = b.fit_predict(&manifest.records, &ctx.split.train, &ctx.split.test, &opts)?;
                Ok(RepeatOutput {
                    scores: p,
                    artifact: None,
                })
            })
        }
        v => {
            let c = with_fusion(cfg, v.fusion().expect("deep variant"));
            c.validate()?;
            match c.train.precision {
                Precision::F32 => run_deep::<f32>(v.label(), manifest, &c),
                Precision::F64 => run_deep::<f64>(v.label(), manifest, &c),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub runs: Vec<(Variant, ProtocolRun)>,
    /// Variants that could not run, with the reason.
    pub skipped: Vec<(Variant, String)>,
}

impl SuiteOutcome {
    pub fn get(&self, v: Variant) -> Option<&ProtocolRun> {
        self.runs.iter().find(|(k, _)| *k == v).map(|(_, r)| r)
    }

    pub fn table(&self) -> String {
        let reports: Vec<_> = self.runs.iter().map(|(_, r)| r.report.clone()).collect();
        let mut t = format_table(&reports);
        for (v, why) in &self.skipped {
            t.push_str(&format!("skipped {}: {why}\n", v.label()));
        }
        t
    }
}

/// Runs `variants` in order. A data problem specific to one variant (such
/// as missing MMSE values) skips that variant; other errors abort.
pub fn run_suite(variants: &[Variant], manifest: &CohortManifest, cfg: &RunConfig) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome {
        runs: Vec::new(),
        skipped: Vec::new(),
    };
    for &v in variants {
        if v == Variant::Score(ScoreBaseline::Mmse) && !manifest.has_mmse() {
            log::warn!("skipping {}: manifest has no MMSE values", v.label());
            out.skipped.push((v, "manifest has no MMSE values".into()));
            continue;
        }
        match run_variant(v, manifest, cfg) {
            Ok(r) => out.runs.push((v, r)),
            Err(Error::Repeat { source, .. }) if matches!(*source, Error::Data(_)) && matches!(v, Variant::Score(_)) => {
                log::warn!("skipping {}: {source}", v.label());
                out.skipped.push((v, source.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes per-variant `<slug>_repeats.csv`, `<slug>_summary.csv` and
/// `<slug>_roc_median.csv`, the median repeat's checkpoint for network
/// variants, and `table.txt`.
pub fn write_suite(out: &SuiteOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (v, run) in &out.runs {
        let slug = v.slug();
        let p = dir.join(format!("{slug}_repeats.csv"));
        run.report.write_repeats_csv(create(&p)?)?;
        written.push(p);
        let p = dir.join(format!("{slug}_summary.csv"));
        run.report.write_summary_csv(create(&p)?)?;
        written.push(p);
        let p = dir.join(format!("{slug}_roc_median.csv"));
        run.median.roc.write_csv(create(&p)?)?;
        written.push(p);
        if let Some(bytes) = &run.median.artifact {
            let p = dir.join(format!("{slug}_median.ckpt"));
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
    }
    let p = dir.join("table.txt");
    std::fs::write(&p, out.table()).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}

/// Result of one train/validation/test run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Vec<u8>,
    pub history: TrainHistory,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

fn train_once<T: Scalar>(manifest: &CohortManifest, cfg: &RunConfig) -> Result<TrainOutcome> {
    let model_cfg = cfg.model();
    let model = MultiStreamModel::<T>::new(&model_cfg, cfg.seed)?;
    let samples = load_samples(&model, manifest)?;
    let split = split_dataset(&manifest.labels(), cfg.eval.ratios, cfg.seed, cfg.eval.stratify)?;
    let (tr, va, te) = (pick(&samples, &split.train), pick(&samples, &split.val), pick(&samples, &split.test));
    let (model, history) = train(model, &tr, &va, &train_config(&cfg.train, cfg.seed))?;
    let predictions = model.predict(&te, cfg.eval.threshold)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.p_final[1]).collect();
    let y: Vec<bool> = te.iter().map(|s| s.label.is_positive()).collect();
    Ok(TrainOutcome {
        checkpoint: save_checkpoint(&model),
        history,
        metrics: Metrics::compute(&scores, &y, cfg.eval.threshold)?,
        predictions,
    })
}

/// Trains on one split seeded by `cfg.seed` and scores its test part.
pub fn train_single(manifest: &CohortManifest, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.train.precision {
        Precision::F32 => train_once::<f32>(manifest, cfg),
        Precision::F64 => train_once::<f64>(manifest, cfg),
    }
}

#[derive(Debug, Clone)]
pub struct ExternalOutcome {
    pub metrics: Metrics,
    pub roc: RocCurve,
    pub predictions: Vec<Prediction>,
}

fn external<T: Scalar>(bytes: &[u8], manifest: &CohortManifest, threshold: f64) -> Result<ExternalOutcome> {
    let model = load_checkpoint::<T>(bytes, None)?;
    model.arch.normalizer.audit(&model.store)?;
    let samples = load_samples(&model, manifest)?;
    let predictions = model.predict(&samples, threshold)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.p_final[1]).collect();
    let y = manifest.labels();
    Ok(ExternalOutcome {
        metrics: Metrics::compute(&scores, &y, threshold)?,
        roc: crate::eval::roc_points(&scores, &y)?,
        predictions,
    })
}

/// Scores every record of `manifest` with a saved model; nothing is trained
/// or written.
pub fn evaluate_external(checkpoint: &[u8], manifest: &CohortManifest, threshold: f64) -> Result<ExternalOutcome> {
    match peek_dtype(checkpoint)? {
        DType::F32 => external::<f32>(checkpoint, manifest, threshold),
        DType::F64 => external::<f64>(checkpoint, manifest, threshold),
    }
}

pub fn write_prediction_file(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_predictions(create(path)?, preds)
}

//! The two-stream model and average fusion of its softmax outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcft_tensor::{Scalar, Tensor, Var};

use super::attention::{ImageSet, SpatialStream};
use super::layers::Builder;
use super::params::{ParamStore, Session};
use super::scoring::{raw_features, Normalizer, Scorer, ScorerInput, ScoringStream, FEATURES};
use crate::config::{FusionMode, ModelConfig};
use crate::domain::{Demographics, Label, ScoreTriple, SplitRole};
use crate::error::{Error, Result};

const PROB_TOLERANCE: f64 = 1e-6;

fn check_distribution(name: &str, p: &[f64; 2]) -> Result<()> {
    let ok = p.iter().all(|v| v.is_finite() && *v >= 0.0) && ((p[0] + p[1]) - 1.0).abs() <= PROB_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(Error::Tensor(rcft_tensor::TensorError::Contract(format!(
            "{name} {p:?} is not a probability vector"
        ))))
    }
}

/// Elementwise mean of two class-probability vectors.
pub fn fuse(p_spatial: [f64; 2], p_scoring: [f64; 2]) -> Result<[f64; 2]> {
    check_distribution("p_spatial", &p_spatial)?;
    check_distribution("p_scoring", &p_scoring)?;
    Ok([(p_spatial[0] + p_scoring[0]) * 0.5, (p_spatial[1] + p_scoring[1]) * 0.5])
}

/// MCI iff `p_mci ≥ threshold`.
pub fn decide(p_mci: f64, threshold: f64) -> Label {
    Label::from_positive(p_mci >= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub p_spatial: Option<[f64; 2]>,
    pub p_scoring: Option<[f64; 2]>,
    pub p_final: [f64; 2],
    pub label: Label,
    pub threshold: f64,
}

/// One subject ready for the model: stacked `[3, 1, S, S]` images, the
/// scorer's triple (when the scoring stream is used) and demographics.
#[derive(Debug, Clone)]
pub struct Sample<T: Scalar> {
    pub id: String,
    pub images: Tensor<T>,
    pub scores: Option<ScoreTriple>,
    pub demographics: Demographics,
    pub label: Label,
}

impl<T: Scalar> Sample<T> {
    /// Splits the stacked images back into one `[1, S, S]` tensor per condition.
    pub fn image_set(&self) -> ImageSet<T> {
        let side = self.images.shape()[2];
        let n = side * side;
        let d = self.images.data();
        let one = |i: usize| Tensor::new(&[1, side, side], d[i * n..(i + 1) * n].to_vec()).expect("stacked images");
        ImageSet::new(one(0), one(1), one(2))
    }

    pub fn raw_features(&self) -> Result<[f64; FEATURES]> {
        let s = self
            .scores
            .as_ref()
            .ok_or_else(|| Error::data(format!("subject {}: no scores for the scoring stream", self.id)))?;
        Ok(raw_features(s, &self.demographics))
    }
}

/// Graph outputs of one forward pass, each `[B, 2]`.
#[derive(Debug, Clone, Copy)]
pub struct StreamOutputs {
    pub spatial: Option<Var>,
    pub scoring: Option<Var>,
    pub fused: Var,
}

/// Layer layout of the model; the values live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Architecture {
    pub config: ModelConfig,
    pub scorer: Scorer,
    pub normalizer: Normalizer,
    pub spatial: Option<SpatialStream>,
    pub scoring: Option<ScoringStream>,
}

impl Architecture {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, images: Option<Var>, features: Option<Var>) -> Result<StreamOutputs> {
        let spatial = match (&self.spatial, images) {
            (Some(st), Some(x)) => Some(st.probabilities(s, x)?),
            (Some(_), None) => return Err(Error::State("spatial stream needs images".into())),
            _ => None,
        };
        let scoring = match (&self.scoring, features) {
            (Some(st), Some(x)) => Some(st.probabilities(s, x)?),
            (Some(_), None) => return Err(Error::State("scoring stream needs features".into())),
            _ => None,
        };
        let fused = match (spatial, scoring) {
            (Some(a), Some(b)) => {
                let sum = s.graph.add(a, b)?;
                s.graph.scale(sum, T::of_f64(0.5))
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::State("model has no active stream".into())),
        };
        Ok(StreamOutputs { spatial, scoring, fused })
    }
}

#[derive(Debug, Clone)]
pub struct MultiStreamModel<T: Scalar> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
}

impl<T: Scalar> MultiStreamModel<T> {
    /// Fresh He-initialized model. Streams disabled by the fusion mode are
    /// not built.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let scorer = Scorer::new(&mut store, &config.scoring);
        let normalizer = Normalizer::new(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let spatial = if config.fusion.uses_spatial() {
            Some(SpatialStream::new(&mut b, config)?)
        } else {
            None
        };
        let scoring = config.fusion.uses_scoring().then(|| ScoringStream::new(&mut b));
        Ok(MultiStreamModel {
            arch: Architecture {
                config: config.clone(),
                scorer,
                normalizer,
                spatial,
                scoring,
            },
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn fusion(&self) -> FusionMode {
        self.arch.config.fusion
    }

    pub fn input_size(&self) -> usize {
        self.arch.config.backbone.input_size
    }

    /// Runs the frozen scorer and packages one subject.
    pub fn make_sample(
        &self,
        id: &str,
        images: &ImageSet<T>,
        manifest_scores: Option<ScoreTriple>,
        demographics: Demographics,
        label: Label,
    ) -> Result<Sample<T>> {
        let stacked = images
            .stacked(self.input_size())
            .map_err(|e| match e {
                Error::Data(m) => Error::data(format!("subject {id}: {m}")),
                other => other,
            })?;
        let scores = if self.arch.scoring.is_some() {
            let input = ScorerInput {
                subject_id: id,
                manifest_scores,
                images: Some(images),
            };
            Some(self.arch.scorer.score(&self.store, &input)?)
        } else {
            manifest_scores
        };
        Ok(Sample {
            id: id.to_string(),
            images: stacked,
            scores,
            demographics,
            label,
        })
    }

    /// Fits the scoring-feature normalizer on training samples.
    pub fn fit_normalizer(&mut self, train: &[Sample<T>]) -> Result<()> {
        self.fit_normalizer_on(train, SplitRole::Train)
    }

    pub fn fit_normalizer_on(&mut self, samples: &[Sample<T>], role: SplitRole) -> Result<()> {
        if self.arch.scoring.is_none() {
            return Ok(());
        }
        let rows = samples.iter().map(|s| s.raw_features()).collect::<Result<Vec<_>>>()?;
        self.arch.normalizer.fit(&mut self.store, &rows, role)
    }

    /// Stacked inputs for a batch: images `[3B, 1, S, S]` and normalized
    /// features `[B, 6]`, each only when the matching stream exists.
    pub fn batch_inputs(&self, samples: &[&Sample<T>]) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        if samples.is_empty() {
            return Err(Error::data("empty batch"));
        }
        let side = self.input_size();
        let images = if self.arch.spatial.is_some() {
            let mut data = Vec::with_capacity(samples.len() * 3 * side * side);
            for s in samples {
                data.extend_from_slice(s.images.data());
            }
            Some(Tensor::new(&[3 * samples.len(), 1, side, side], data)?)
        } else {
            None
        };
        let features = if self.arch.scoring.is_some() {
            let mut data = Vec::with_capacity(samples.len() * FEATURES);
            for s in samples {
                let x = self.arch.normalizer.transform(&self.store, &s.raw_features()?)?;
                data.extend(x.iter().map(|&v| T::of_f64(v)));
            }
            Some(Tensor::new(&[samples.len(), FEATURES], data)?)
        } else {
            None
        };
        Ok((images, features))
    }

    /// Eval-mode predictions, processed in chunks to bound graph size.
    pub fn predict(&self, samples: &[Sample<T>], threshold: f64) -> Result<Vec<Prediction>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(CHUNK) {
            let refs: Vec<&Sample<T>> = chunk.iter().collect();
            let (images, features) = self.batch_inputs(&refs)?;
            let mut s = Session::eval(&self.store);
            let iv = images.map(|t| s.graph.constant(t));
            let fv = features.map(|t| s.graph.constant(t));
            let o = self.arch.forward(&mut s, iv, fv)?;
            let pair = |v: Option<Var>, i: usize| -> Option<[f64; 2]> {
                v.map(|v| {
                    let d = s.graph.value(v);
                    [d[2 * i].as_f64(), d[2 * i + 1].as_f64()]
                })
            };
            for (i, sample) in chunk.iter().enumerate() {
                let ps = pair(o.spatial, i);
                let pc = pair(o.scoring, i);
                let p_final = match (ps, pc) {
                    (Some(a), Some(b)) => fuse(a, b)?,
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => unreachable!("forward requires a stream"),
                };
                if !p_final.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric(format!("subject {}: non-finite prediction", sample.id)));
                }
                out.push(Prediction {
                    subject_id: sample.id.clone(),
                    p_spatial: ps,
                    p_scoring: pc,
                    p_final,
                    label: decide(p_final[1], threshold),
                    threshold,
                });
            }
        }
        Ok(out)
    }

    /// Rebuilds a model from stored values, checking that names, roles and
    /// shapes match the layout implied by `config`.
    pub fn from_store(config: &ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        if fresh.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                fresh.store.len(),
                store.len()
            )));
        }
        for (want, got) in fresh.store.entries().iter().zip(store.entries()) {
            if want.name != got.name || want.role != got.role || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} ({:?}, {:?}) does not match expected {} ({:?}, {:?})",
                    got.name,
                    got.role,
                    got.tensor.shape(),
                    want.name,
                    want.role,
                    want.tensor.shape()
                )));
            }
        }
        Ok(MultiStreamModel {
            arch: fresh.arch,
            store,
        })
    }
}

/// Writes `subject_id, p_spatial_MCI, p_scoring_MCI, p_final_MCI, label`.
pub fn write_predictions<W: std::io::Write>(w: W, preds: &[Prediction]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::data(format!("writing predictions: {e}"));
    wr.write_record(["subject_id", "p_spatial_MCI", "p_scoring_MCI", "p_final_MCI", "label"])
        .map_err(io)?;
    let opt = |p: Option<[f64; 2]>| p.map(|v| format!("{:.10}", v[1])).unwrap_or_default();
    for p in preds {
        wr.write_record([
            p.subject_id.clone(),
            opt(p.p_spatial),
            opt(p.p_scoring),
            format!("{:.10}", p.p_final[1]),
            p.label.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush().map_err(|e| Error::data(format!("writing predictions: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BackboneConfig;
    use crate::domain::Sex;

    #[test]
    fn fuse_examples() {
        let f = fuse([0.6, 0.4], [0.8, 0.2]).unwrap();
        assert!((f[0] - 0.7).abs() < 1e-15 && (f[1] - 0.3).abs() < 1e-15);
        assert_eq!(fuse([0.25, 0.75], [0.25, 0.75]).unwrap(), [0.25, 0.75]);
        assert_eq!(fuse([0.1, 0.9], [0.7, 0.3]).unwrap(), fuse([0.7, 0.3], [0.1, 0.9]).unwrap());
        assert!(fuse([0.6, 0.5], [0.5, 0.5]).is_err());
    }

    #[test]
    fn decision_boundary_and_monotonicity() {
        assert_eq!(decide(0.5, 0.5), Label::Mci);
        assert_eq!(decide(0.4999, 0.5), Label::Cn);
        for p in [0.1, 0.3, 0.5, 0.77] {
            let mut prev = decide(p, 0.0);
            for k in 1..=20 {
                let cur = decide(p, k as f64 / 20.0);
                assert!(!(prev == Label::Cn && cur == Label::Mci));
                prev = cur;
            }
        }
    }

    fn tiny() -> ModelConfig {
        let mut cfg = ModelConfig {
            backbone: BackboneConfig::tiny(),
            ..ModelConfig::default()
        };
        cfg.attention.fc1_width = 8;
        cfg
    }

    fn sample(model: &MultiStreamModel<f64>, id: &str, k: f64) -> Sample<f64> {
        let s = model.input_size();
        let img = |off: f64| Tensor::new(&[1, s, s], (0..s * s).map(|i| ((i as f64 * 0.37 + off + k).sin() + 1.0) / 2.0).collect()).unwrap();
        let set = ImageSet::new(img(0.0), img(1.0), img(2.0));
        let scores = ScoreTriple::new(30.0 - k, 20.0 - k, 18.0 - k).unwrap();
        let demo = Demographics::new(70.0 + k, if k > 1.0 { Sex::Male } else { Sex::Female }, 10.0 + k).unwrap();
        model.make_sample(id, &set, Some(scores), demo, Label::Cn).unwrap()
    }

    #[test]
    fn fused_prediction_is_mean_of_streams() {
        let mut model = MultiStreamModel::<f64>::new(&tiny(), 3).unwrap();
        let samples: Vec<_> = (0..4).map(|i| sample(&model, &format!("s{i}"), i as f64)).collect();
        model.fit_normalizer(&samples).unwrap();
        let preds = model.predict(&samples, 0.5).unwrap();
        for (p, s) in preds.iter().zip(&samples) {
            let sp = super::super::attention::spatial_stream_forward(
                model.arch.spatial.as_ref().unwrap(),
                &model.store,
                &s.image_set(),
            )
            .unwrap();
            let sc = super::super::scoring::scoring_stream_forward(
                model.arch.scoring.as_ref().unwrap(),
                &model.arch.normalizer,
                &model.store,
                s.scores.as_ref().unwrap(),
                &s.demographics,
            )
            .unwrap();
            for c in 0..2 {
                assert!((p.p_final[c] - (sp[c] + sc[c]) / 2.0).abs() < 1e-12);
            }
            assert!((p.p_final[0] + p.p_final[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_stream_modes_skip_the_other_stream() {
        let mut cfg = tiny();
        cfg.fusion = FusionMode::SpatialOnly;
        let model = MultiStreamModel::<f64>::new(&cfg, 0).unwrap();
        assert!(model.arch.scoring.is_none());
        let s = sample(&model, "a", 0.0);
        let p = model.predict(&[s], 0.5).unwrap();
        assert_eq!(p[0].p_final, p[0].p_spatial.unwrap());
        assert!(p[0].p_scoring.is_none());
    }

    #[test]
    fn missing_image_names_subject_and_condition() {
        let model = MultiStreamModel::<f64>::new(&tiny(), 0).unwrap();
        let set = ImageSet {
            copy: Some(Tensor::zeros(&[1, 16, 16])),
            immediate: Some(Tensor::zeros(&[1, 16, 16])),
            delayed: None,
        };
        let demo = Demographics::new(70.0, Sex::Female, 10.0).unwrap();
        let err = model
            .make_sample("subj-9", &set, Some(ScoreTriple::new(1.0, 1.0, 1.0).unwrap()), demo, Label::Cn)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("subj-9") && msg.contains("delayed"), "{msg}");
    }

    #[test]
    fn only_scorer_entries_are_frozen() {
        let model = MultiStreamModel::<f64>::new(&ModelConfig::default(), 0).unwrap();
        for e in model.store.entries() {
            assert_eq!(e.role == super::super::params::Role::Frozen, e.name.starts_with("scorer."), "{}", e.name);
        }
    }
}

//! Scoring stream: a frozen scorer turns the three drawings into a score
//! triple, which joins the demographics in a single FC layer.

use rand::Rng;
use rcft_tensor::{Scalar, Tensor, Var};

use super::attention::ImageSet;
use super::layers::{Builder, Linear};
use super::params::{ParamId, ParamStore, Role, Session};
use crate::config::{ScorerKind, ScoringConfig};
use crate::domain::{Condition, Demographics, ScoreTriple, SplitRole, MAX_SCORE};
use crate::error::{Error, Result};

/// Number of scoring-stream input features.
pub const FEATURES: usize = 6;
/// Features that are z-scored: three scores, age, education.
const CONTINUOUS: [usize; 5] = [0, 1, 2, 3, 5];

/// What a scorer may look at for one subject.
#[derive(Debug, Clone, Copy)]
pub struct ScorerInput<'a, T: Scalar> {
    pub subject_id: &'a str,
    /// Precomputed scores from the manifest (`ai_*` columns).
    pub manifest_scores: Option<ScoreTriple>,
    pub images: Option<&'a ImageSet<T>>,
}

/// A frozen score predictor. Its state lives in the parameter store under
/// the `scorer.` prefix with the [`Role::Frozen`] label.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub kind: ParamId,
    pub saturation: ParamId,
}

impl Scorer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ScoringConfig) -> Self {
        let code = match cfg.scorer {
            ScorerKind::File => 0.0,
            ScorerKind::Stub => 1.0,
        };
        let kind = store.add("scorer.kind", Role::Frozen, Tensor::from_f64(&[1], &[code]).unwrap());
        let saturation = store.add(
            "scorer.ink_saturation",
            Role::Frozen,
            Tensor::from_f64(&[1], &[cfg.stub_saturation]).unwrap(),
        );
        Scorer { kind, saturation }
    }

    pub fn kind<T: Scalar>(&self, store: &ParamStore<T>) -> ScorerKind {
        if store.get(self.kind).data()[0].as_f64() == 0.0 {
            ScorerKind::File
        } else {
            ScorerKind::Stub
        }
    }

    /// Score triple for one subject, clamped to `[0, 36]`.
    pub fn score<T: Scalar>(&self, store: &ParamStore<T>, input: &ScorerInput<'_, T>) -> Result<ScoreTriple> {
        match self.kind(store) {
            ScorerKind::File => input.manifest_scores.ok_or_else(|| {
                Error::data(format!(
                    "subject {}: file-backed scorer needs ai_copy/ai_imm/ai_del",
                    input.subject_id
                ))
            }),
            ScorerKind::Stub => {
                let images = input
                    .images
                    .ok_or_else(|| Error::data(format!("subject {}: stub scorer needs images", input.subject_id)))?;
                let sat = store.get(self.saturation).data()[0].as_f64();
                let mut v = [0.0; 3];
                for c in Condition::ALL {
                    let img = images
                        .get(c)
                        .ok_or_else(|| Error::data(format!("subject {}: missing {c} image", input.subject_id)))?;
                    v[c.index()] = stub_score(ink_coverage(img), sat);
                }
                Ok(ScoreTriple::clamped(v[0], v[1], v[2]))
            }
        }
    }
}

/// Mean ink intensity of a preprocessed image (ink = 1, background = 0).
pub fn ink_coverage<T: Scalar>(img: &Tensor<T>) -> f64 {
    img.data().iter().map(|v| v.as_f64()).sum::<f64>() / img.numel() as f64
}

/// Linear in coverage up to `saturation`, then capped at 36.
pub fn stub_score(coverage: f64, saturation: f64) -> f64 {
    (MAX_SCORE * coverage / saturation).clamp(0.0, MAX_SCORE)
}

/// Little-endian dump of every frozen entry, names included.
pub fn frozen_state<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    for e in store.entries().iter().filter(|e| e.role == Role::Frozen) {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        for v in e.tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// True iff the two serialized scorer states are bitwise identical.
pub fn assert_frozen(before: &[u8], after: &[u8]) -> bool {
    before == after
}

/// Raw (unnormalized) scoring features: scores, age, sex, education.
pub fn raw_features(scores: &ScoreTriple, demo: &Demographics) -> [f64; FEATURES] {
    [
        scores.copy,
        scores.immediate,
        scores.delayed,
        demo.age,
        demo.sex.indicator(),
        demo.education,
    ]
}

/// Z-score statistics for the continuous features, kept as buffers so they
/// travel with checkpoints. `meta` holds (fitted flag, split role code).
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub stats: ParamId,
    pub meta: ParamId,
}

impl Normalizer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>) -> Self {
        let stats = store.add("normalizer.stats", Role::Buffer, Tensor::zeros(&[2, FEATURES]));
        let meta = store.add("normalizer.meta", Role::Buffer, Tensor::zeros(&[2]));
        Normalizer { stats, meta }
    }

    /// Fits mean and sample SD per continuous feature. Constant features
    /// get SD 1 so they normalize to zero.
    pub fn fit<T: Scalar>(&self, store: &mut ParamStore<T>, rows: &[[f64; FEATURES]], role: SplitRole) -> Result<()> {
        if rows.len() < 2 {
            return Err(Error::data("normalizer needs at least two rows"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; FEATURES];
        let mut sd = [1.0; FEATURES];
        for &j in &CONTINUOUS {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
            mean[j] = m;
            sd[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let data: Vec<T> = mean.iter().chain(&sd).map(|&v| T::of_f64(v)).collect();
        store.set_values(self.stats, &data)?;
        store.set_values(self.meta, &[T::one(), T::of_f64(role.code() as f64)])?;
        Ok(())
    }

    pub fn is_fitted<T: Scalar>(&self, store: &ParamStore<T>) -> bool {
        store.get(self.meta).data()[0] == T::one()
    }

    pub fn fitted_on<T: Scalar>(&self, store: &ParamStore<T>) -> Option<SplitRole> {
        if !self.is_fitted(store) {
            return None;
        }
        SplitRole::from_code(store.get(self.meta).data()[1].as_f64() as u8)
    }

    /// Fails unless the statistics came from a training split.
    pub fn audit<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        match self.fitted_on(store) {
            Some(SplitRole::Train) => Ok(()),
            Some(role) => Err(Error::State(format!("normalizer was fitted on the {role} split"))),
            None => Err(Error::State("normalizer is not fitted".into())),
        }
    }

    pub fn transform<T: Scalar>(&self, store: &ParamStore<T>, raw: &[f64; FEATURES]) -> Result<[f64; FEATURES]> {
        if !self.is_fitted(store) {
            return Err(Error::State("normalizer is not fitted".into()));
        }
        let st = store.get(self.stats).data();
        let mut out = *raw;
        for &j in &CONTINUOUS {
            out[j] = (raw[j] - st[j].as_f64()) / st[FEATURES + j].as_f64();
        }
        Ok(out)
    }
}

/// Single FC layer `6 → 2`.
#[derive(Debug, Clone)]
pub struct ScoringStream {
    pub fc: Linear,
}

impl ScoringStream {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>) -> Self {
        ScoringStream {
            fc: Linear::new(b, "scoring.fc", FEATURES, 2, true),
        }
    }

    /// `features: [B, 6]` (already normalized) → logits `[B, 2]`.
    pub fn logits<T: Scalar>(&self, s: &mut Session<'_, T>, features: Var) -> Result<Var> {
        self.fc.forward(s, features)
    }

    pub fn probabilities<T: Scalar>(&self, s: &mut Session<'_, T>, features: Var) -> Result<Var> {
        let l = self.logits(s, features)?;
        Ok(s.graph.softmax(l, 1)?)
    }
}

/// `[p_CN, p_MCI]` for one subject, eval mode.
pub fn scoring_stream_forward<T: Scalar>(
    stream: &ScoringStream,
    normalizer: &Normalizer,
    store: &ParamStore<T>,
    scores: &ScoreTriple,
    demo: &Demographics,
) -> Result<[T; 2]> {
    let x = normalizer.transform(store, &raw_features(scores, demo))?;
    let mut s = Session::eval(store);
    let xv = s.graph.constant(Tensor::from_f64(&[1, FEATURES], &x)?);
    let p = stream.probabilities(&mut s, xv)?;
    let v = s.graph.value(p);
    Ok([v[0], v[1]])
}

//! Synthetic cohort: line drawings of an 18-element figure, scores and
//! demographics driven by two independent per-subject latents.
//!
//! * `z_struct` decides how many elements survive in each drawing, and so
//!   the expert scores (2 points per intact element) and the AI scores.
//! * `z_tex` decides stroke texture: fainter ink and stronger tremor.
//!
//! Both are shifted for MCI subjects. Scores see only `z_struct`; the
//! images carry both, with texture invisible to the scores.

use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{image_id, save_manifest, CohortManifest, SubjectRecord, FORMAT_TAG};
use super::preprocess::save_png;
use crate::domain::{Condition, Label, ScoreTriple, Sex, MAX_SCORE};
use crate::error::{Error, Result};
use crate::qc::{write_corrections, write_qc_records, Correction, QcRecord};

pub const ELEMENTS: usize = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// Side of the square PNGs.
    pub image_size: u32,
    /// Mean of `z_struct` for MCI (CN mean is 0, both unit variance).
    pub struct_effect: f64,
    /// Mean of `z_tex` for MCI.
    pub texture_effect: f64,
    /// SD of per-drawing noise on the element-survival logit.
    pub score_noise_sd: f64,
    /// SD of AI-minus-expert noise, truncated at ±8 points.
    pub ai_noise_sd: f64,
    /// Drawings whose recorded expert score is off from the AI score by
    /// more than 10 points.
    pub gross_errors: usize,
    /// How many of the gross errors the corrections fixture repairs.
    pub corrected: usize,
    /// Mean age difference, MCI minus CN, in years.
    pub age_shift: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            image_size: 64,
            struct_effect: 1.8,
            texture_effect: 1.8,
            score_noise_sd: 0.3,
            ai_noise_sd: 2.0,
            gross_errors: 0,
            corrected: 26,
            age_shift: 2.0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 20 {
            return Err(Error::config(format!("synthetic cohort needs n >= 20, got {n}")));
        }
        if !(16..=1024).contains(&self.image_size) {
            return Err(Error::config(format!("image_size {} outside [16, 1024]", self.image_size)));
        }
        let finite = [self.struct_effect, self.texture_effect, self.score_noise_sd, self.ai_noise_sd, self.age_shift];
        if finite.iter().any(|v| !v.is_finite()) || self.score_noise_sd < 0.0 || self.ai_noise_sd < 0.0 {
            return Err(Error::config("generator effects must be finite and noise SDs non-negative"));
        }
        if self.gross_errors > 3 * n {
            return Err(Error::config(format!(
                "{} gross errors requested but only {} drawings exist",
                self.gross_errors,
                3 * n
            )));
        }
        if self.corrected > self.gross_errors && self.gross_errors > 0 {
            return Err(Error::config(format!(
                "cannot correct {} of {} gross errors",
                self.corrected, self.gross_errors
            )));
        }
        Ok(())
    }
}

/// Element-survival logit offsets per condition: copy keeps the most.
const CONDITION_OFFSET: [f64; 3] = [2.2, 0.8, 0.6];
const STRUCT_SLOPE: f64 = 0.9;
const AI_NOISE_LIMIT: f64 = 8.0;

type Polyline = Vec<(f64, f64)>;

/// The figure in a 100 × 70 design space.
fn template() -> [Vec<Polyline>; ELEMENTS] {
    let circle = |cx: f64, cy: f64, r: f64| -> Polyline {
        (0..=16)
            .map(|k| {
                let t = k as f64 / 16.0 * std::f64::consts::TAU;
                (cx + r * t.cos(), cy + r * t.sin())
            })
            .collect()
    };
    [
        vec![vec![(20.0, 15.0), (80.0, 15.0), (80.0, 55.0), (20.0, 55.0), (20.0, 15.0)]],
        vec![vec![(20.0, 15.0), (80.0, 55.0)], vec![(20.0, 55.0), (80.0, 15.0)]],
        vec![vec![(20.0, 35.0), (80.0, 35.0)]],
        vec![vec![(50.0, 15.0), (50.0, 55.0)]],
        vec![vec![(8.0, 8.0), (8.0, 26.0)], vec![(2.0, 14.0), (20.0, 14.0)]],
        vec![vec![(24.0, 40.0), (38.0, 40.0), (38.0, 52.0), (24.0, 52.0), (24.0, 40.0)]],
        vec![vec![(24.0, 31.0), (38.0, 31.0)]],
        vec![vec![(25.0, 19.0), (33.0, 24.0)], vec![(29.0, 17.0), (37.0, 22.0)], vec![(33.0, 15.5), (41.0, 20.5)]],
        vec![vec![(55.0, 15.0), (67.0, 4.0), (80.0, 15.0)]],
        vec![vec![(70.0, 18.0), (70.0, 30.0)]],
        vec![circle(62.0, 24.0, 4.0)],
        vec![vec![(57.0, 41.0), (61.0, 37.0)], vec![(62.0, 44.5), (66.0, 40.5)], vec![(67.0, 48.0), (71.0, 44.0)]],
        vec![vec![(80.0, 15.0), (96.0, 35.0), (80.0, 55.0)]],
        vec![vec![(96.0, 31.0), (99.0, 35.0), (96.0, 39.0), (93.0, 35.0), (96.0, 31.0)]],
        vec![vec![(87.0, 25.0), (87.0, 45.0)]],
        vec![vec![(80.0, 35.0), (93.0, 35.0)]],
        vec![vec![(50.0, 55.0), (50.0, 66.0)], vec![(44.0, 66.0), (56.0, 66.0)]],
        vec![vec![(10.0, 45.0), (20.0, 45.0)], vec![(10.0, 45.0), (20.0, 55.0)]],
    ]
}

/// Stroke appearance shared by a subject's three drawings.
#[derive(Debug, Clone, Copy)]
struct Texture {
    intensity: f64,
    tremor: f64,
}

impl Texture {
    fn from_latent(z: f64) -> Self {
        Texture {
            intensity: (0.9 - 0.12 * z).clamp(0.3, 1.0),
            tremor: (0.35 + 0.35 * z).clamp(0.0, 1.8),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws the surviving elements into an ink-coverage canvas in `[0, 1]`.
fn render(side: u32, keep: &[bool; ELEMENTS], jitter_sd: f64, tex: Texture, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = side as f64;
    let margin = s * 0.06;
    let scale = (s - 2.0 * margin) / 100.0;
    let y0 = (s - 70.0 * scale) / 2.0;
    let mut canvas = vec![0.0f64; (side * side) as usize];
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let radius = (s / 64.0).max(0.8);
    for (element, strokes) in template().iter().enumerate() {
        if !keep[element] {
            continue;
        }
        let dx = jitter_sd * unit.sample(rng);
        let dy = jitter_sd * unit.sample(rng);
        for line in strokes {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut arc = 0.0;
            for seg in line.windows(2) {
                let (ax, ay) = (margin + seg[0].0 * scale + dx, y0 + seg[0].1 * scale + dy);
                let (bx, by) = (margin + seg[1].0 * scale + dx, y0 + seg[1].1 * scale + dy);
                let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
                if len == 0.0 {
                    continue;
                }
                let (nx, ny) = (-(by - ay) / len, (bx - ax) / len);
                let steps = (len / 0.35).ceil() as usize;
                for k in 0..=steps {
                    let t = k as f64 / steps as f64;
                    let a = arc + t * len;
                    let wobble = tex.tremor * ((a * 1.9 + phase).sin() + 0.35 * unit.sample(rng));
                    let px = ax + t * (bx - ax) + nx * wobble;
                    let py = ay + t * (by - ay) + ny * wobble;
                    splat(&mut canvas, side, px, py, radius, tex.intensity);
                }
                arc += len;
            }
        }
    }
    canvas
}

fn splat(canvas: &mut [f64], side: u32, x: f64, y: f64, r: f64, value: f64) {
    let lo_x = (x - r).floor().max(0.0) as i64;
    let hi_x = (x + r).ceil().min(side as f64 - 1.0) as i64;
    let lo_y = (y - r).floor().max(0.0) as i64;
    let hi_y = (y + r).ceil().min(side as f64 - 1.0) as i64;
    for py in lo_y..=hi_y {
        for px in lo_x..=hi_x {
            let d = ((px as f64 + 0.5 - x).powi(2) + (py as f64 + 0.5 - y).powi(2)).sqrt();
            let w = (1.0 - d / (r + 0.5)).clamp(0.0, 1.0);
            let cell = &mut canvas[py as usize * side as usize + px as usize];
            *cell = cell.max(value * w);
        }
    }
}

fn page(side: u32, canvas: &[f64]) -> GrayImage {
    let px = canvas.iter().map(|v| 255 - (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    GrayImage::from_raw(side, side, px).expect("canvas matches dimensions")
}

/// In-memory result of one generation run.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub manifest: CohortManifest,
    /// Page-convention PNG rasters, `[subject][condition]`.
    pub images: Vec<[GrayImage; 3]>,
    pub qc_records: Vec<QcRecord>,
    pub corrections: Vec<Correction>,
    /// Image ids carrying a gross expert error, in generation order.
    pub gross_error_ids: Vec<String>,
}

fn subject_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("S{:0width$}", i + 1)
}

/// Recorded expert score at least 11 points from `ai`, on the even grid.
fn gross_value(ai: f64, magnitude: f64, up_first: bool) -> f64 {
    let try_side = |up: bool| -> Option<f64> {
        let target = if up { ai + magnitude } else { ai - magnitude };
        let mut v = ((target / 2.0).round() * 2.0).clamp(0.0, MAX_SCORE);
        while (v - ai).abs() <= 10.0 {
            v += if up { 2.0 } else { -2.0 };
            if !(0.0..=MAX_SCORE).contains(&v) {
                return None;
            }
        }
        Some(v)
    };
    try_side(up_first)
        .or_else(|| try_side(!up_first))
        .expect("one side of [0, 36] is at least 18 points from any score")
}

/// Generates `n` subjects. Identical inputs give identical output.
pub fn generate_synthetic_cohort(n: usize, seed: u64, params: &GeneratorParams) -> Result<SyntheticCohort> {
    params.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut labels: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    let mut true_expert = Vec::with_capacity(n);
    let mut ai_scores = Vec::with_capacity(n);
    for (i, &mci) in labels.iter().enumerate() {
        let y = if mci { 1.0 } else { 0.0 };
        let z_struct = params.struct_effect * y + unit.sample(&mut rng);
        let z_tex = params.texture_effect * y + unit.sample(&mut rng);
        let tex = Texture::from_latent(z_tex);
        let jitter_sd = 0.4 + 0.3 * z_struct.max(0.0);
        let id = subject_id(i, n);

        let mut expert = [0.0; 3];
        let mut ai = [0.0; 3];
        let mut pages: Vec<GrayImage> = Vec::with_capacity(3);
        for c in Condition::ALL {
            let logit = CONDITION_OFFSET[c.index()] - STRUCT_SLOPE * z_struct + params.score_noise_sd * unit.sample(&mut rng);
            let intact = (ELEMENTS as f64 * sigmoid(logit)).round() as usize;
            let mut order: Vec<usize> = (0..ELEMENTS).collect();
            order.shuffle(&mut rng);
            let mut keep = [false; ELEMENTS];
            for &e in &order[..intact] {
                keep[e] = true;
            }
            expert[c.index()] = 2.0 * intact as f64;
            let noise = (params.ai_noise_sd * unit.sample(&mut rng)).clamp(-AI_NOISE_LIMIT, AI_NOISE_LIMIT);
            ai[c.index()] = ((expert[c.index()] + noise).clamp(0.0, MAX_SCORE) * 10.0).round() / 10.0;
            let canvas = render(params.image_size, &keep, jitter_sd, tex, &mut rng);
            pages.push(page(params.image_size, &canvas));
        }

        let age = (71.0 + params.age_shift * y + 6.0 * unit.sample(&mut rng)).clamp(50.0, 95.0).round();
        let sex = if rng.random_bool(0.62) { Sex::Female } else { Sex::Male };
        let education = (11.0 - 1.0 * y + 3.5 * unit.sample(&mut rng)).clamp(0.0, 22.0).round();
        let mmse = (28.4 - 1.2 * y - 0.6 * z_struct + 1.2 * unit.sample(&mut rng)).clamp(0.0, 30.0).round();
        let label = Label::from_positive(mci);
        records.push(SubjectRecord {
            subject_id: id.clone(),
            age,
            sex,
            education,
            mmse: Some(mmse),
            cdr: Some(if mci { 0.5 } else { 0.0 }),
            label,
            expert_scores: None,
            ai_scores: Some(ScoreTriple::new(ai[0], ai[1], ai[2])?),
            images: Condition::ALL.map(|c| Some(PathBuf::from("images").join(format!("{}.png", image_id(&id, c))))),
        });
        images.push([pages[0].clone(), pages[1].clone(), pages[2].clone()]);
        true_expert.push(expert);
        ai_scores.push(ai);
    }

    // Gross rater errors on randomly chosen drawings.
    let mut recorded = true_expert.clone();
    let mut slots: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..3).map(move |c| (i, c))).collect();
    slots.shuffle(&mut rng);
    let chosen = &slots[..params.gross_errors];
    let mut gross_error_ids = Vec::with_capacity(chosen.len());
    for &(i, c) in chosen {
        let magnitude = rng.random_range(11..=20) as f64;
        recorded[i][c] = gross_value(ai_scores[i][c], magnitude, rng.random_bool(0.5));
        gross_error_ids.push(image_id(&records[i].subject_id, Condition::ALL[c]));
    }
    let corrections = chosen[..params.corrected.min(chosen.len())]
        .iter()
        .map(|&(i, c)| Correction {
            image_id: image_id(&records[i].subject_id, Condition::ALL[c]),
            corrected_score: true_expert[i][c],
            note: "re-rated".into(),
        })
        .collect();

    let mut qc_records = Vec::with_capacity(3 * n);
    for (i, r) in records.iter_mut().enumerate() {
        let e = recorded[i];
        r.expert_scores = Some(ScoreTriple::new(e[0], e[1], e[2])?);
        for c in Condition::ALL {
            qc_records.push(QcRecord {
                image_id: r.image_id(c),
                condition: c,
                expert_score: e[c.index()],
                ai_score: ai_scores[i][c.index()],
            });
        }
    }

    let provenance = format!(
        "{FORMAT_TAG} synthetic n={n} seed={seed} {}",
        toml::to_string(params)
            .expect("params serialize")
            .lines()
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(SyntheticCohort {
        manifest: CohortManifest {
            provenance: Some(provenance),
            records,
            base_dir: PathBuf::new(),
        },
        images,
        qc_records,
        corrections,
        gross_error_ids,
    })
}

/// Paths written by [`write_cohort`].
#[derive(Debug, Clone)]
pub struct CohortFiles {
    pub manifest: PathBuf,
    pub qc_scores: PathBuf,
    pub corrections: PathBuf,
    pub image_count: usize,
}

/// Writes `manifest.csv`, `images/*.png`, `qc_scores.csv` and
/// `corrections.csv` under `dir`.
pub fn write_cohort(cohort: &SyntheticCohort, dir: &Path) -> Result<CohortFiles> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut count = 0;
    for (rec, pages) in cohort.manifest.records.iter().zip(&cohort.images) {
        for c in Condition::ALL {
            let rel = rec.image(c).expect("generated records reference every image");
            save_png(&pages[c.index()], &dir.join(rel))?;
            count += 1;
        }
    }
    let manifest = dir.join("manifest.csv");
    save_manifest(&cohort.manifest, &manifest)?;
    let qc_scores = dir.join("qc_scores.csv");
    let f = std::fs::File::create(&qc_scores).map_err(|e| Error::io(&qc_scores, e))?;
    write_qc_records(std::io::BufWriter::new(f), &cohort.qc_records)?;
    let corrections = dir.join("corrections.csv");
    let f = std::fs::File::create(&corrections).map_err(|e| Error::io(&corrections, e))?;
    write_corrections(std::io::BufWriter::new(f), &cohort.corrections)?;
    Ok(CohortFiles {
        manifest,
        qc_scores,
        corrections,
        image_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_cohort() {
        let p = GeneratorParams {
            image_size: 32,
            gross_errors: 4,
            corrected: 2,
            ..GeneratorParams::default()
        };
        let a = generate_synthetic_cohort(20, 5, &p).unwrap();
        let b = generate_synthetic_cohort(20, 5, &p).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.images, b.images);
        assert_eq!(a.qc_records, b.qc_records);
        let c = generate_synthetic_cohort(20, 6, &p).unwrap();
        assert_ne!(a.manifest, c.manifest);
    }

    #[test]
    fn scores_follow_the_conventions() {
        let p = GeneratorParams {
            image_size: 32,
            gross_errors: 9,
            corrected: 5,
            ..GeneratorParams::default()
        };
        let cohort = generate_synthetic_cohort(30, 1, &p).unwrap();
        assert_eq!(cohort.manifest.labels().iter().filter(|&&l| l).count(), 15);
        for r in &cohort.qc_records {
            assert_eq!(r.expert_score % 2.0, 0.0);
            assert!((0.0..=36.0).contains(&r.ai_score));
        }
        let big = cohort
            .qc_records
            .iter()
            .filter(|r| (r.expert_score - r.ai_score).abs() > 10.0)
            .count();
        assert_eq!(big, 9);
        assert_eq!(cohort.corrections.len(), 5);
    }

    #[test]
    fn gross_value_clears_ten_points() {
        for ai in [0.0, 5.3, 17.9, 18.0, 25.5, 36.0] {
            for m in 11..=20 {
                for up in [true, false] {
                    let v = gross_value(ai, m as f64, up);
                    assert!((v - ai).abs() > 10.0 && (0.0..=36.0).contains(&v) && v % 2.0 == 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        let p = GeneratorParams::default();
        assert!(matches!(generate_synthetic_cohort(5, 0, &p), Err(Error::Config(_))));
        let q = GeneratorParams { gross_errors: 100, ..p };
        assert!(matches!(generate_synthetic_cohort(20, 0, &q), Err(Error::Config(_))));
    }
}

//! Manifests, preprocessing, the synthetic generator and sample loading.

pub mod manifest;
pub mod preprocess;
pub mod synthetic;

pub use manifest::{image_id, load_manifest, save_manifest, CohortManifest, SubjectRecord};
pub use preprocess::{preprocess_image, to_page_raster};
pub use synthetic::{generate_synthetic_cohort, write_cohort, GeneratorParams, SyntheticCohort};

use rcft_tensor::{Scalar, Tensor};

use crate::config::ScorerKind;
use crate::domain::Condition;
use crate::error::{Error, Result};
use crate::model::{ImageSet, MultiStreamModel, Sample};

/// Preprocessed images of one record; conditions without a path stay empty.
pub fn load_image_set<T: Scalar>(manifest: &CohortManifest, rec: &SubjectRecord, side: usize) -> Result<ImageSet<T>> {
    let mut set = ImageSet::empty();
    for c in Condition::ALL {
        if let Some(p) = manifest.image_path(rec, c) {
            set.set(c, preprocess::load_preprocessed(&p, side as u32)?);
        }
    }
    Ok(set)
}

/// Turns every record into a model sample, running the model's frozen
/// scorer. Images are read only when some part of the model uses them.
pub fn load_samples<T: Scalar>(model: &MultiStreamModel<T>, manifest: &CohortManifest) -> Result<Vec<Sample<T>>> {
    let side = model.input_size();
    let needs_images = model.arch.spatial.is_some()
        || (model.arch.scoring.is_some() && model.config().scoring.scorer == ScorerKind::Stub);
    manifest
        .records
        .iter()
        .map(|rec| {
            let images = if needs_images {
                load_image_set(manifest, rec, side)?
            } else {
                let blank = || Tensor::zeros(&[1, side, side]);
                ImageSet::new(blank(), blank(), blank())
            };
            let demo = rec.demographics()?;
            model
                .make_sample(&rec.subject_id, &images, rec.ai_scores, demo, rec.label)
                .map_err(|e| match e {
                    Error::Data(m) if !m.contains(&rec.subject_id) => {
                        Error::data(format!("subject {}: {m}", rec.subject_id))
                    }
                    other => other,
                })
        })
        .collect()
}

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod fusion;
pub mod layers;
pub mod params;
pub mod scoring;

pub use attention::{spatial_stream_forward, ImageSet, MultiHeadAttention, SpatialStream};
pub use backbone::{backbone_forward, flatten_tokens, unflatten_tokens, Backbone, FeatureMap, MbConv, SeBlock};
pub use checkpoint::{load_checkpoint, peek_dtype, read_checkpoint, save_checkpoint, write_checkpoint};
pub use fusion::{decide, fuse, write_predictions, MultiStreamModel, Prediction, Sample};
pub use params::{ParamId, ParamStore, Role, Session};
pub use scoring::{assert_frozen, frozen_state, scoring_stream_forward, Normalizer, Scorer, ScoringStream};

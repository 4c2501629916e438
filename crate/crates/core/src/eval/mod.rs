//! Metrics, splits, the repeated-split protocol and group summaries.

pub mod metrics;
pub mod protocol;
pub mod split;
pub mod summary;

pub use metrics::{auc, compute_metrics, roc_points, Metrics, RocCurve, RocPoint};
pub use protocol::{format_table, repeated_eval, EvalReport, MetricSummary, ProtocolRun, RepeatContext, RepeatOutput};
pub use split::{split_dataset, Split};
pub use summary::{group_summary, GroupSummary};

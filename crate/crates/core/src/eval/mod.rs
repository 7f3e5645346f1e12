//! Clean-train/distorted-test probing, invariance metrics, distortion
//! diagnostics and the split-averaged embedding visualization.

mod cache;
mod embed;
mod invariance;
mod probe;
mod report;
mod repr;
mod silhouette;
mod tsne;

pub use cache::{ConditionCache, ConditionEntry, ConditionSet, SetKey};
pub use embed::{metadata_csv, split_average_embeddings, split_bounds, EmbeddingMatrix};
pub use invariance::invariance_score;
pub use probe::{train_probe, LinearProbe, MultiLabelScores, ProbeConfig, ProbeKind, ProbeTargets};
pub use report::{
    distortion_probe, eval_probe, evaluate, evaluate_with_probe, required_sets, test_reps, train_downstream_probe, visual_embeddings,
    DistortionProbeReport, EvalConfig, EvalReport, RepMemo,
};
pub use repr::{extract_all, extract_repr, FrozenModel, LogMelFeatures};
pub use silhouette::silhouette;
pub use tsne::{affinities, tsne, TsneConfig, TsneResult};

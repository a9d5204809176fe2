//! Ranking metrics, the signed-rank test, data splits and the ablation
//! protocol.

mod ablation;
mod metrics;
mod split;
mod wilcoxon;

pub use metrics::{auprc, auroc, best_f1_threshold, f1_at, f1_at_validation_threshold, midranks, RunResult};
pub use split::{default_split, stratified_split, Split};
pub use wilcoxon::{exact_p, normal_p, wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};
pub use ablation::{
    finish_variant, fusion_data, prepare_variant, run_ablation_suite, run_variant, AblationTable, ExperimentConfig,
    PreparedVariant, SeedData, SuiteRow, Variant, VariantRun, VariantSummary,
};

//! Recall metrics, the availability condition matrix, ablations, sweeps and
//! embedding export.

mod ablation;
mod conditions;
mod export;
mod metrics;
mod recon;

pub use ablation::{
    cross_validate, macro_average, run_ablation, sweep, train_and_evaluate, AblationRow,
    AblationTable, Variant, ABLATION_HEADER, SWEEP_HEADER, SWEEP_PARAMS,
};
pub use conditions::{
    evaluate_checkpoint, evaluate_conditions, evaluate_mask, ConditionReport, ConditionRow,
    REPORT_HEADER,
};
pub use export::{embedding_rows, embeddings_tsv, export_embeddings, mean_gap, EmbeddingRow};
pub use metrics::{uar, war};
pub use recon::{reconstruction_errors, ReconErrors};

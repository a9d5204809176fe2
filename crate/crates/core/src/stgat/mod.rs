//! Edge-aware graph attention over exposure snapshots with recurrent
//! temporal aggregation, its training loop, and investigator feedback on
//! attention weights.

mod feedback;
mod gat;
mod gru;
mod loss;
mod model;
mod train;

pub use feedback::{disposition_delta, feedback_update, InEdgeAttention};
pub use gat::{
    attention_coefficients, attention_tape, dropout_mask, gat_forward, gat_layer_tape, AttentionMode, GatLayerParams,
    GatLayerVars, SnapshotInput,
};
pub use gru::{gru_cell_tape, temporal_aggregate, temporal_tape, GruLayer, GruLayerVars, TemporalParams};
pub use loss::{focal_loss, focal_loss_tape, FocalOutcome, PROB_CLAMP};
pub use model::{rows, DiffusionMode, StgatConfig, StgatForward, StgatModel, StgatOutput, StgatVars};
pub use train::{stage3_loss_tape, train_stage3, Stage3Data, Stage3Trainer};

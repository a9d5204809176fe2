//! Stage 4: bidirectional LSTM with additive attention over per-account
//! transaction sequences.

mod ingest;
mod lstm;
mod model;
mod synthetic;
#[cfg(test)]
mod tests;

pub use ingest::{
    impute_median, ingest_transactions_csv, median, Codebook, IngestReport, TxEncoder, TxSchema, CHANNELS, CHANNEL_NAMES,
    DEFAULT_SEQ_LEN,
};
pub use lstm::{bilstm_tape, lstm_cell_tape, LstmParams, LstmVars};
pub use model::{
    attention_tape, stage4_loss_tape, temporal_attention, train_stage4, SeqConfig, SeqForward, SeqModel, SeqVars,
    TxScore, TxSequence,
};
pub use synthetic::{planted_sequences, PlantedConfig};

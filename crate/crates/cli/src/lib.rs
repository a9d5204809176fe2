//! Command implementations behind the `scafds` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use commands::{cmd_attribute, cmd_evaluate, cmd_generate, cmd_sar, cmd_train, load_seed_data};
pub use config::PipelineConfig;

use scafds::ScafdsError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_STATE: i32 = 5;

/// Process exit status for an error.
pub fn exit_code(e: &ScafdsError) -> i32 {
    match e {
        ScafdsError::Config(_) | ScafdsError::TooManyFeatures { .. } => EXIT_CONFIG,
        ScafdsError::Io(_) | ScafdsError::Csv(_) | ScafdsError::Json(_) | ScafdsError::Schema(_) => EXIT_IO,
        ScafdsError::Shape(_)
        | ScafdsError::Domain(_)
        | ScafdsError::Numeric(_)
        | ScafdsError::Infeasible(_)
        | ScafdsError::Convergence { .. }
        | ScafdsError::NanLoss { .. } => EXIT_NUMERIC,
        ScafdsError::State(_) => EXIT_STATE,
    }
}

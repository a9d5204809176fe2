//! Interbank fraud surveillance pipeline: synthetic network construction,
//! co-occurrence edge features, edge-aware graph attention, sequence
//! scoring, bilinear fusion, attribution and gated SAR assertions.

pub mod error;
pub mod numkernel;

pub use error::{Result, ScafdsError};
pub mod cooccur;
pub mod graphcore;
pub mod synthnet;
pub mod util;
pub mod optim;
pub mod stgat;
pub mod seqmodel;
pub mod fusion;
pub mod attribution;
pub mod sargen;
pub mod cases;
pub mod eval;

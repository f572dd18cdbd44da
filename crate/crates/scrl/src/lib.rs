//! Cross-modal image-voice retrieval toolkit.
//!
//! Pipeline: WAV decoding and MFCC extraction feed a dilated 1-D convolutional
//! voice encoder; images go through a pluggable feature provider. Two Siamese
//! projection heads map both modalities into a shared embedding space trained
//! with pairwise / intra-modality / inter-modality consistency losses plus a
//! per-branch classification loss, optimized with RMSProp. A retrieval
//! evaluator reports mAP, P@k, and precision curves for the image→voice and
//! voice→image protocols.

pub mod error;
pub mod gradcheck;
pub mod mfcc;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod optim;
pub mod ops;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod ppm;
pub mod representation;
pub mod retrieval;
pub mod seeding;
pub mod synth;
pub mod trainer;
pub mod tensor;
pub mod tensor_file;
pub mod wav;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// CLI entry point; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::run()
}

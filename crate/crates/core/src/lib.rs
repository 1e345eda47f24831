//! Character-level phishing email classification on the CPU.
//!
//! The crate covers the whole lifecycle of a character-level detector:
//!
//! - [`corpus`]: ingest eml/mbox/csv/jsonl sources, deduplicate, stratified split
//! - [`encoder`]: 95-symbol character quantization to fixed-length index sequences
//! - [`nn`]: a small dense numeric core with hand-written reverse-mode gradients
//! - [`models`]: CharCNN (with squeeze-and-excitation), CharGRU and CharBiLSTM,
//!   plus the `CPNN` checkpoint format
//! - [`gradcam`]: character-level Grad-CAM relevance maps and HTML heatmaps
//! - [`attack`]: budgeted black-box character perturbation attacks
//! - [`pipeline`]: training, adversarial training, metrics and the three
//!   evaluation scenarios
//! - [`llm`]: a generic text-generation endpoint client used as a baseline
//! - [`fixtures`]: a synthetic corpus generator and rule-based stub oracles
//! - [`cli`]: the `charphish` command line front end
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory.

pub mod attack;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod fixtures;
pub mod gradcam;
pub mod llm;
pub mod models;
pub mod nn;
pub mod pipeline;

pub use corpus::{CorpusSplit, CorpusStore, Label, RawEmail};
pub use encoder::{Alphabet, EncodedEmail};
pub use models::{Model, ModelKind, NetworkSpec};

/// Default seed used wherever a caller does not supply one.
pub const DEFAULT_SEED: u64 = 42;

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes.as_ref()))
}

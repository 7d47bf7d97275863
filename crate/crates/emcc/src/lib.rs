//! Length-flexible cancelable fingerprint templates.
//!
//! Minutiae become fixed-length cylinder descriptors ([`build_cylinders`]);
//! a seeded re-indexing keeps a chosen fraction of each cylinder, and a
//! nested-difference / two-bit-code / XOR-fold chain turns the selection
//! into a compact, non-invertible bit template ([`enroll`]). Matching runs
//! entirely on the protected bits ([`score_matrix`],
//! [`greedy_decision_score`]), so raw minutiae never leave enrollment, and
//! changing the seed revokes a template without touching the finger.
//!
//! ```
//! use emcc::{
//!     enroll, greedy_decision_score, score_matrix, Depth, GreedyParams, LengthFraction,
//!     MccParams, MinutiaeRecord, TransformKey,
//! };
//!
//! // a small print: "x y theta" per line, radians, after a size header
//! let record = MinutiaeRecord::parse_text(
//!     "300 300
//!      100 100 0.30
//!      140 120 2.00
//!      120 160 5.10
//!      160 170 1.25
//!      90 150 3.40
//!      150 80 0.75
//!      180 130 4.20
//!      110 60 2.80",
//! )?;
//! let key = TransformKey::new(42, LengthFraction::TWO_THIRDS, 0.2, Depth::Two)?;
//! let template = enroll(&record, &MccParams::default(), &key)?;
//!
//! let matrix = score_matrix(&template, &template)?;
//! let decision = greedy_decision_score(&matrix, &GreedyParams::default());
//! assert_eq!(decision.score, 1.0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bits;
pub mod config;
pub mod eval;
pub mod matcher;
pub mod mcc;
pub mod minutiae;
pub mod template;
pub mod transform;

pub use bits::Bits;
pub use config::{Config, ConfigError, KeyStore};
pub use eval::{
    compute_eer, compute_fmr1000, det_curve, protocol_pairs, run_fvc_protocol, synth_dataset,
    EvalError, EvalReport, SynthNoise, SynthParams,
};
pub use matcher::{
    feature_similarity, greedy_decision_score, score_matrix, GreedyParams, MatchDecision,
    MatcherError, ScoreMatrix,
};
pub use mcc::{build_cylinders, CylinderFeature, MccError, MccParams};
pub use minutiae::{
    parse_minutiae_file, read_dataset_dir, write_minutiae_file, Minutia, MinutiaeError,
    MinutiaeFormat, MinutiaeRecord,
};
pub use template::{
    deserialize_template, enroll, seed_identifier, serialize_template, CancelableTemplate,
    EnrollError, TemplateError, TemplateHeader,
};
pub use transform::{
    derive_index_set, make_cancelable_feature, trace_pipeline, CancelableFeature, Depth, IndexSet,
    LengthFraction, StageTrace, TransformError, TransformKey,
};

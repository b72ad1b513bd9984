//! Two-phase binary-choice questionnaire harness.
//!
//! A question battery is asked to a model endpoint in an *initial* phase and
//! again in an *opposing* phase where the prompt carries a stated opinion that
//! contradicts the model's initial leaning. Raw answers are classified into
//! answer values in {-1, 0, 1} and reduced to per-question bias, willingness
//! and bias shift, then compared across languages and models.
//!
//! The numeric core ([`metrics`], [`stats`]) is generic over the scalar type.
//! The pipeline itself runs on `f64`; exact rational arithmetic is available
//! through the [`Exact`] alias and is used as a cross-check in tests.

pub mod bank;
pub mod classifier;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod provider;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod store;

pub use bank::{Question, QuestionBank, SplitSide};
pub use classifier::{Category, ClassifyMode, Classification, Lexicon};
pub use prompting::{Phase, PromptTemplate, Stance};
pub use scalar::Scalar;

/// Exact rational scalar for oracle computations.
pub type Exact = num_rational::Ratio<i64>;

pub type QuestionMetrics = metrics::QuestionMetrics<f64>;
pub type ShiftMetrics = metrics::ShiftMetrics<f64>;
pub type MergedResult = metrics::MergedResult<f64>;
pub type ExactQuestionMetrics = metrics::QuestionMetrics<Exact>;
pub type CorrelationReport = stats::CorrelationReport<f64>;
pub type ChiSquare = stats::ChiSquare<f64>;

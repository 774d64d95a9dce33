//! Aspect-based sentiment analysis framed as sentence-pair classification.
//!
//! Each `(review, aspect)` instance becomes one or three sentence pairs via an
//! auxiliary sentence ([`auxpair`]); pairs are tokenized ([`tokenizer`]),
//! classified by a transformer encoder with a linear head on `[CLS]`
//! ([`encoder`]), trained with cross-entropy and Adam ([`training`]), and
//! scored with accuracy and F1 ([`evaluation`]). [`pipeline`] wires the stages
//! behind the `absa-pair` command line.

pub mod auxpair;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod pipeline;
pub mod tokenizer;
pub mod training;

pub use auxpair::{AuxMode, PairDataset, PairExample, TemplateSet};
pub use corpus::{AspectInstance, ClassCounts, Corpus, Polarity};
pub use encoder::{EncoderConfig, ModelParams};
pub use evaluation::{EvalReport, PredictionSet};
pub use training::{TrainConfig, TrainHistory};

//! Self-synthesized rehearsal for continual instruction tuning.
//!
//! The pipeline synthesizes rehearsal instances from a base model by
//! in-context prompting ([`synth`]), rewrites their outputs with the latest
//! model ([`refine`]), keeps a diverse subset via K-means ([`cluster`]) and
//! mixes them into each stage's training data ([`schedule`]). Runs are scored
//! with ROUGE-L and summarized as AR/FWT/BWT ([`metrics`]). A toy retrieval
//! learner with tunable forgetting ([`toylab`]) makes whole curricula
//! runnable without any model server.

pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod genbackend;
pub mod http;
pub mod metrics;
pub mod refine;
pub mod schedule;
pub mod seeds;
pub mod synth;
pub mod toylab;

pub use corpus::{CurriculumConfig, Instance, Origin, Strategy, TaskSpec};
pub use metrics::{compute_ar, compute_bwt, compute_fwt, rouge_l, PerformanceMatrix};

//! Cost-aware stance triage over video metadata.
//!
//! A local scorer labels every (video, myth) pair; uncertain or
//! low-performing predictions are deferred to a costlier oracle. The crate
//! also evaluates labels, accounts for time, money and emissions, and
//! summarises stance prevalence and recommendation drift.

pub mod analysis;
pub mod costmodel;
pub mod deferral;
pub mod domain;
pub mod metrics;
pub mod pipeline;
pub mod scorers;
pub mod seeding;

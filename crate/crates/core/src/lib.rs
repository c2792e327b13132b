//! Noisy-channel sentence processing toolkit.
//!
//! The crate is organised around the analysis chain for noisy-channel
//! garden-path experiments:
//!
//! - [`lexicon`]: vocabulary, edit distance, neighbours, morphological variants
//! - [`prior`]: next-word language-model priors (built-in n-gram, remote service)
//! - [`noise`]: the error channel over intended words
//! - [`smc`]: particle-filter inference with rejuvenation, plus an exact
//!   enumeration oracle
//! - [`stimuli`]: item expansion into conditions and Latin-square lists
//! - [`measures`]: mouse-trajectory reading measures, exclusions, aggregation
//! - [`pmi`]: masked-prediction PMI and the Wilcoxon signed-rank test
//! - [`service`]: HTTP client for the language-model service
//! - [`toy`]: small bundled worlds for checking inference against exact answers

pub mod lexicon;
pub mod math;
pub mod measures;
pub mod noise;
pub mod pmi;
pub mod prior;
pub mod service;
pub mod smc;
pub mod stimuli;
pub mod toy;

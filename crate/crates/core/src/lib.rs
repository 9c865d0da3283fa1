//! Mining macro-pattern templates from dialogue-act sequences, plus the
//! decision-detection, wrap-up timing and persuasive-word analyses that
//! accompany it.
//!
//! The central pieces are [`template`] (templates, instantiations, the
//! edit-distance loss and the regularized objective) and [`anneal`] (the
//! simulated-annealing search). [`generalization`] gives the uniform risk
//! bound for a template class, and [`baselines`] holds the Markov-chain and
//! profile-HMM comparisons.

pub mod anneal;
pub mod baselines;
pub mod classify;
pub mod corpus;
pub mod detect;
pub mod error;
pub mod generalization;
pub mod stats;
pub mod template;
pub mod wrapup;

pub use corpus::{ActLabel, Alphabet, Corpus, DialogueAct, Meeting, Suggestion, Sym};
pub use error::{Error, Result};
pub use template::{LossMode, ObjectiveParams, Template};

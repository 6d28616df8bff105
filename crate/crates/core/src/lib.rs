//! Deployment-time mitigation of token-level shortcuts in text classifiers.
//!
//! The pipeline: a biased classifier is trained by ERM ([`textenc`]);
//! gradient×input saliency picks each input's most influential tokens
//! ([`attribution`]); a LoRA adapter ([`adapter`]) is fitted on an unlabeled
//! deployment batch with a masked contrastive objective ([`maskcl`]); and a
//! single blend strength is chosen on a few labeled examples ([`calibrate`]).
//! [`benchgen`] builds shortcut-injected benchmarks, [`metrics`] scores them,
//! and [`theorylab`] checks the information-theoretic limits of
//! deployment-time identification on exact discrete chains.

pub mod adapter;
pub mod artifact;
pub mod attribution;
pub mod benchgen;
pub mod calibrate;
pub mod diffcore;
pub mod error;
pub mod maskcl;
pub mod metrics;
pub mod optim;
pub mod textenc;
pub mod theorylab;

pub use error::{Error, Result};

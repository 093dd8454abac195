//! Collaborative sample selection for learning with noisy labels.
//!
//! A classifier's per-sample loss and an auxiliary zero-shot scorer's
//! probability for the observed label are fused by a two-component 2D
//! Gaussian mixture into a per-sample clean posterior. The resulting
//! clean/noisy partition drives a semi-supervised co-training loop
//! (supervised, confidence-masked pseudo-label, contrastive and
//! uniform-prior losses) that updates both the classifier and the
//! scorer's learnable context vectors.

pub mod aux_model;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mixture;
pub mod net;
pub mod par;
pub mod report;
pub mod rng;
pub mod selection;
pub mod selfcheck;
pub mod training;

pub use error::{CssError, Result};

//! Multi-branch template tracking.
//!
//! Several embedding branches are applied siamese-style to a fixed exemplar
//! and to a search region; their cross-correlation responses locate the
//! target. Every few frames the branch with the most discriminative weighted
//! response is selected and used until the next selection. The crate also
//! ships an OTB-style evaluation harness and a synthetic sequence generator.

pub mod bench;
pub mod branches;
pub mod correlation;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod selection;
pub mod synth;
pub mod tracker;

pub use branches::{BranchConfig, BranchId, BranchKind, BranchSpec, FeatureMap};
pub use correlation::{xcorr, xcorr_fft, ResponseMap};
pub use error::{Error, Result};
pub use imaging::{BoundingBox, ImageBuffer, Patch, Point};
pub use selection::{SelectionScore, SelectionState};
pub use tracker::{TrackerConfig, TrackerState};

//! A self-contained few-shot metric-learning framework.
//!
//! Everything runs on CPU with no external ML dependencies: a reverse-mode
//! autodiff tensor core, an episodic N-way K-shot data pipeline with a
//! deterministic synthetic image generator, five metric-learning heads
//! (siamese triplet, relation, matching, prototypical, and the hybrid
//! prototype head over a residual encoder), episodic training with early
//! stopping, macro evaluation metrics, and CAM-family explainability with
//! heatmap overlays.

pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use graph::{Graph, Var};
pub use ops::Mode;
pub use params::{Buffer, ParamStore, Parameter};
pub use tensor::{Scalar, Tensor};

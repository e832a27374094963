//! Context-aware scheduling of object-detection models across heterogeneous
//! accelerators.
//!
//! The pipeline is: a [`catalog::Catalog`] of model/accelerator profiles and a
//! characterization trace feed [`confidence_graph::build_prediction_map`];
//! at run time [`scheduler::SchedulerState`] picks a pair per frame from the
//! prediction map, the scene similarity of [`context`], and the normalized
//! costs, while [`loader`] tracks which models are resident.

pub mod catalog;
pub mod confidence_graph;
pub mod context;
pub mod error;
pub mod loader;
pub mod scheduler;
pub mod sim;

pub use catalog::{
    iou, load_trace, AcceleratorId, AcceleratorSpec, BoundingBox, Catalog,
    CharacterizationTrace, DetectionOutcome, FrameRecord, GrayscaleImage, ModelId, ModelProfile,
    Pair,
};
pub use confidence_graph::{build_prediction_map, GraphParams, Prediction, PredictionMap};
pub use context::{similarity, SimilarityScore};
pub use error::{Error, Result};
pub use loader::{AcceleratorMemory, LoadKind, LoadOutcome, ModelLoader};
pub use scheduler::{Decision, Knobs, SchedulerConfig, SchedulerState};
pub use sim::{run, PolicyKind, Policy, RunOptions, SimulationReport};

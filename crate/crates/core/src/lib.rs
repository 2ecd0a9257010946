//! Evaluation engine and pipeline toolkit for video face anonymization.
//!
//! The crate scores an anonymized video against its original through paired
//! per-frame face observations (identity, attributes, gaze, eye and mouth
//! openness, head orientation) and per-video temporal statistics. It also
//! measures how much anonymization degrades person detection and pose
//! estimation with COCO-style AP against a pseudo ground truth. It builds the
//! convex-hull face mask and plans and runs the external inpainting and
//! face-swap stages of the anonymization pipeline.
//!
//! Features arrive from upstream models as newline-delimited JSON records (see
//! [`feature_model`]); nothing here decodes video or runs a network.

pub mod cli;
pub mod config;
pub mod evaluate;
pub mod face_metrics;
pub mod feature_model;
pub mod geometry;
pub mod orchestrator;
pub mod pose_eval;
pub mod report;
pub mod stats;
pub mod synthetic;
pub mod video_metrics;

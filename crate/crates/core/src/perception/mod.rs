//! Image-only perception: needle tip detection on microscope frames, contact
//! and puncture classification on B-scans, and classifier scoring.
//!
//! Every entry point takes frames, never world state.

mod bscan;
pub mod components;
mod metrics;
mod tip;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bscan::{classify_contact, contact_probability, detect_puncture, CONTACT_STEEPNESS_PER_PX};
pub use metrics::{evaluate_classifier, ClassMetrics, MetricsTable};
pub use tip::{detect_tip, TipDetectorConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerceptionError {
    #[error("no needle detected in microscope frame")]
    NoNeedleDetected,
    #[error("needle not visible in B-scan")]
    NeedleNotInScan,
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
}

/// Axis-aligned pixel rectangle, inclusive of `x0, y0` and exclusive of `x1, y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipDetection {
    pub tip_px: [f64; 2],
    /// 50x50 px box centered on the tip, clipped to the frame.
    pub bbox: PixelBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactDecision {
    pub probability: f64,
    pub decision: bool,
    pub threshold_used: f64,
    /// Signed gap in pixels from needle center to wall, positive above.
    /// `None` when no wall ridge is visible.
    pub gap_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PunctureDecision {
    pub bbox: PixelBox,
    pub decision: bool,
    pub confidence: f64,
}

impl PunctureDecision {
    /// Positive and confident enough to act on.
    pub fn confirmed(&self, conf_min: f64) -> bool {
        self.decision && self.confidence >= conf_min
    }
}

/// One scored prediction: true and predicted binary labels for a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub frame_id: String,
    pub true_label: u8,
    pub predicted_label: u8,
    pub confidence: f64,
}

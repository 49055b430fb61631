//! Deterministic simulator of OCT-guided retinal vein cannulation.
//!
//! A world model of needle and vein, synthetic microscope and B-scan
//! rendering, perception over those images, the procedure state machine,
//! a batch harness, and a session server for interactive clients.

pub mod controller;
pub mod harness;
pub mod imaging;
pub mod perception;
pub mod rng;
pub mod service;
pub mod world;

pub use controller::{ControllerConfig, ControllerPhase, ControllerState, Percept, PerceptKind};
pub use harness::{BatchReport, HarnessError, Mode, OutcomeClass, Scenario, Trial, TrialRecord};
pub use imaging::{BScanFrame, GrayImage, ImagingConfig, MicroscopeFrame};
pub use perception::{ContactDecision, MetricsTable, PunctureDecision, TipDetection};
pub use world::{MotionCommand, NeedleModel, Pose3, TissuePhase, VeinModel, WorldState};

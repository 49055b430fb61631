//! Controller fuzz driver shared by the property and acceptance suites.
//!
//! Perception outcomes are random; geometry is tracked kinematically so the
//! controller sees exact pose feedback and exact tip pixels.

#![allow(dead_code)]

use cannula_core::controller::{
    Actuation, ControllerConfig, ControllerPhase, ControllerState, Percept, PerceptKind, PoseFeedback, MAX_REACQUIRE,
};
use cannula_core::perception::{ContactDecision, PerceptionError, PixelBox, PunctureDecision, TipDetection};
use cannula_core::world::{MotionCommand, Pose3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.1;
pub const FRAME: (usize, usize) = (512, 512);

#[derive(Debug, Clone)]
pub struct FuzzReport {
    pub ticks: u64,
    pub bound: u64,
    pub phase: ControllerPhase,
    pub attempts: u32,
    pub max_attempts: u32,
    /// Forward axial insertions emitted before any positive contact decision.
    pub early_insertions: u32,
    pub forward_insertions: u32,
}

/// Tick bound for one execution: navigation, seek depth and all stroke
/// attempts, each progress tick preceded by at most MAX_REACQUIRE - 1 failed percepts.
pub fn tick_bound(cfg: &ControllerConfig, d0_px: f64) -> u64 {
    let step_px = cfg.nav_speed_cap_mm_s * DT / cfg.microscope_scale_mm_per_px;
    let nav = (d0_px / step_px).ceil() as u64 + 1;
    let seek = (cfg.max_seek_depth_mm / cfg.z_step_mm).ceil() as u64 + 1;
    let per_attempt = 2 * cfg.increments_per_attempt() as u64 + 1;
    let stroke = cfg.max_puncture_attempts as u64 * per_attempt + 2;
    MAX_REACQUIRE as u64 * (nav + seek + stroke + 1)
}

fn random_config(rng: &mut ChaCha8Rng) -> ControllerConfig {
    let inc = rng.random_range(0.02..0.1);
    ControllerConfig {
        z_step_mm: rng.random_range(0.005..0.03),
        stroke_increment_mm: inc,
        attempt_stroke_mm: inc * rng.random_range(1..=5) as f64,
        max_puncture_attempts: rng.random_range(1..=6),
        max_seek_depth_mm: rng.random_range(0.3..3.0),
        retract_fraction: rng.random_range(0.1..0.9),
        ..ControllerConfig::default()
    }
}

fn axis() -> [f64; 3] {
    let a = 70f64.to_radians();
    [a.cos(), 0.0, -a.sin()]
}

pub fn fuzz_execution(seed: u64) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng);
    let p_fail = rng.random_range(0.0..0.5);
    let p_contact = rng.random_range(0.0..0.6);
    let p_puncture = rng.random_range(0.0..0.6);

    let target: [f64; 2] = [rng.random_range(20.0..490.0), rng.random_range(20.0..490.0)];
    let mut tip_px = [rng.random_range(20.0..490.0), rng.random_range(20.0..490.0)];
    let mut z = 1.0;
    let d0 = (target[0] - tip_px[0]).hypot(target[1] - tip_px[1]);
    let bound = tick_bound(&cfg, d0);

    let mut state = ControllerState::new().set_target(target, FRAME).expect("target inside frame");
    let mut seen_contact = false;
    let (mut early, mut forward) = (0, 0);
    let mut ticks = 0u64;
    while !state.phase.is_terminal() && ticks <= bound {
        let failed = rng.random_bool(p_fail);
        let percept = match state.needed_percept() {
            PerceptKind::None => Percept::None,
            PerceptKind::Tip if failed => Percept::Tip(Err(PerceptionError::NoNeedleDetected)),
            PerceptKind::Tip => Percept::Tip(Ok(TipDetection {
                tip_px,
                bbox: PixelBox { x0: tip_px[0] - 25.0, y0: tip_px[1] - 25.0, x1: tip_px[0] + 25.0, y1: tip_px[1] + 25.0 },
                confidence: rng.random_range(0.0..1.0),
            })),
            PerceptKind::Contact if failed => Percept::Contact(Err(PerceptionError::NeedleNotInScan)),
            PerceptKind::Contact => {
                let decision = rng.random_bool(p_contact);
                let probability = if decision { rng.random_range(0.5..1.0) } else { rng.random_range(0.0..0.5) };
                Percept::Contact(Ok(ContactDecision { probability, decision, threshold_used: 0.5, gap_px: None }))
            }
            PerceptKind::Puncture if failed => Percept::Puncture(Err(PerceptionError::NeedleNotInScan)),
            PerceptKind::Puncture => Percept::Puncture(Ok(PunctureDecision {
                bbox: PixelBox { x0: 100.0, y0: 80.0, x1: 124.0, y1: 104.0 },
                decision: rng.random_bool(p_puncture),
                confidence: rng.random_range(0.0..1.0),
            })),
        };
        if let Percept::Contact(Ok(c)) = &percept {
            seen_contact |= c.decision;
        }
        let fb = PoseFeedback { tip: Pose3::new(0.0, 0.0, z), insertion_axis: axis() };
        let (act, next) = state.tick(&cfg, &percept, &fb, DT).expect("controller accepts its own percept kind");
        apply(&act, &cfg, &mut tip_px, &mut z);
        if let MotionCommand::AxialInsertion { speed } = act.command {
            if speed > 0.0 {
                forward += 1;
                if !seen_contact {
                    early += 1;
                }
            }
        }
        state = next;
        ticks += 1;
    }
    FuzzReport {
        ticks,
        bound,
        phase: state.phase,
        attempts: state.attempts,
        max_attempts: cfg.max_puncture_attempts,
        early_insertions: early,
        forward_insertions: forward,
    }
}

fn apply(act: &Actuation, cfg: &ControllerConfig, tip_px: &mut [f64; 2], z: &mut f64) {
    match act.command {
        MotionCommand::PlanarVelocity { vx, vy } => {
            tip_px[0] += vx * act.duration_s / cfg.microscope_scale_mm_per_px;
            tip_px[1] += vy * act.duration_s / cfg.microscope_scale_mm_per_px;
        }
        MotionCommand::ZStep { dz } => *z += dz,
        MotionCommand::AxialInsertion { speed } => *z += speed * act.duration_s * axis()[2],
        MotionCommand::Hold => {}
    }
}

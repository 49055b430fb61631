use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::OperatorModel;
use crate::controller::{
    plan_navigation_step, Actuation, ControllerConfig, ControllerError, ControllerPhase, ControllerState, NavStep,
    Percept, PerceptKind, PoseFeedback,
};
use crate::rng::{rng_for, stream, SimRng};
use crate::world::MotionCommand;

/// Keyboard operator driving the same procedure: discrete key steps, a pause
/// for reaction between observations, and tremor added to every commanded
/// pose. Navigation uses its own key-step policy; later phases follow the
/// procedure state machine with key-sized steps.
#[derive(Debug, Clone)]
pub struct ManualOperator {
    model: OperatorModel,
    latency_ticks: u32,
    cooldown: u32,
    /// Current tremor offset of the commanded pose, mm.
    jitter: [f64; 3],
    tremor: Option<Normal<f64>>,
    rng: SimRng,
}

impl ManualOperator {
    pub fn new(model: &OperatorModel, seed: u64, dt: f64) -> Self {
        let sigma = model.tremor_rms_um / 1000.0 / 3f64.sqrt();
        Self {
            model: model.clone(),
            latency_ticks: (model.reaction_latency_s / dt).round() as u32,
            cooldown: 0,
            jitter: [0.0; 3],
            tremor: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma")),
            rng: rng_for(seed, stream::OPERATOR, 0),
        }
    }

    /// Controller settings the operator works with: key-sized descent and strokes.
    pub fn adapt_config(model: &OperatorModel, base: &ControllerConfig) -> ControllerConfig {
        ControllerConfig { z_step_mm: model.key_step_mm, stroke_increment_mm: model.key_step_mm, ..base.clone() }
    }

    pub fn needed_percept(&self, ctrl: &ControllerState) -> PerceptKind {
        if self.cooldown > 0 {
            PerceptKind::None
        } else {
            ctrl.needed_percept()
        }
    }

    pub fn tick(
        &mut self,
        ctrl: &ControllerState,
        cfg: &ControllerConfig,
        percept: &Percept,
        feedback: &PoseFeedback,
        dt: f64,
    ) -> Result<(Actuation, ControllerState), ControllerError> {
        if self.cooldown > 0 && !ctrl.phase.is_terminal() {
            self.cooldown -= 1;
            return Ok((Actuation { command: MotionCommand::Hold, duration_s: dt }, ctrl.clone()));
        }
        let out = match (ctrl.phase, percept) {
            (ControllerPhase::Navigating, Percept::Tip(Ok(tip))) => {
                let target = ctrl.target_px.ok_or(ControllerError::WrongPhase(ctrl.phase))?;
                match plan_navigation_step(tip.tip_px, target, cfg) {
                    NavStep::Stop => ctrl.tick(cfg, percept, feedback, dt)?,
                    NavStep::Move(_) => {
                        let d = [target[0] - tip.tip_px[0], target[1] - tip.tip_px[1]];
                        let axis = usize::from(d[1].abs() > d[0].abs());
                        let mut step = [0.0; 2];
                        step[axis] = self.key_step() * d[axis].signum();
                        let j = self.next_jitter();
                        let disp = [step[0] + j[0] - self.jitter[0], step[1] + j[1] - self.jitter[1]];
                        self.jitter[0] = j[0];
                        self.jitter[1] = j[1];
                        let (mut vx, mut vy) = (disp[0] / dt, disp[1] / dt);
                        let cap = 0.99 * 10.0;
                        let speed = vx.hypot(vy);
                        if speed > cap {
                            vx *= cap / speed;
                            vy *= cap / speed;
                        }
                        let mut next = ctrl.clone();
                        next.reacquire_failures = 0;
                        (Actuation { command: MotionCommand::PlanarVelocity { vx, vy }, duration_s: dt }, next)
                    }
                }
            }
            _ => {
                let (mut act, next) = ctrl.tick(cfg, percept, feedback, dt)?;
                if let MotionCommand::ZStep { dz } = act.command {
                    let step = dz.signum() * self.key_step();
                    let jz = self.next_jitter()[2];
                    act.command = MotionCommand::ZStep { dz: step + jz - self.jitter[2] };
                    self.jitter[2] = jz;
                }
                (act, next)
            }
        };
        self.cooldown = self.latency_ticks;
        Ok(out)
    }

    /// Key step with occasional overshoot or missed press.
    fn key_step(&mut self) -> f64 {
        let p = self.model.decision_noise;
        let u: f64 = self.rng.random();
        if u < p / 2.0 {
            2.0 * self.model.key_step_mm
        } else if u < p {
            0.0
        } else {
            self.model.key_step_mm
        }
    }

    fn next_jitter(&mut self) -> [f64; 3] {
        match self.tremor {
            Some(n) => [n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng)],
            None => [0.0; 3],
        }
    }
}

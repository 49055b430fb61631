use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::{EventLog, LogLine};
use super::{HarnessError, ManualOperator, Mode, OutcomeClass, Scenario, TrialRecord, TrialSetup};
use crate::controller::{
    AbortReason, Actuation, ControllerConfig, ControllerEvent, ControllerPhase, ControllerState, Percept, PerceptKind,
    PoseFeedback, Timers,
};
use crate::imaging::{
    apply_artifacts, palette, render_bscan, render_microscope, ArtifactConfig, BScanFrame, GrayImage, ImagingConfig,
    MicroscopeFrame, Occlusion, Scanline, RIDGE_THICKNESS_PX,
};
use crate::perception::{classify_contact, detect_puncture, detect_tip, TipDetectorConfig};
use crate::rng::{fnv1a64, rng_for, stream};
use crate::world::{inject_air, AirVerdict, WorldState};

/// Frames seen by perception this tick, after corruption.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameSet {
    pub microscope: Option<MicroscopeFrame>,
    pub bscan: Option<BScanFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub event: ControllerEvent,
    pub frames: FrameSet,
    pub frame_digest: u64,
    pub world_digest: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    /// Controller claimed a puncture.
    pub claimed: bool,
    pub air: AirVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct OcclusionEvent {
    remaining: u32,
    size: i64,
    offset: [f64; 2],
}

/// One procedure from start to terminal phase, advanced a tick at a time.
#[derive(Debug, Clone)]
pub struct Trial {
    pub scenario: Scenario,
    pub setup: TrialSetup,
    pub mode: Mode,
    pub trial_id: u64,
    pub seed: u64,
    pub world: WorldState,
    pub controller: ControllerState,
    pub cfg: ControllerConfig,
    pub tick: u64,
    pub timers: Timers,
    pub commit: Option<Commit>,
    pub last_percept: Percept,
    /// Render both modalities every tick even if perception needs neither.
    pub render_all: bool,
    imaging: ImagingConfig,
    operator: Option<ManualOperator>,
    occlusion: Option<OcclusionEvent>,
}

impl Trial {
    /// Trial waiting in Idle for a target.
    pub fn new(scenario: &Scenario, mode: Mode, trial_id: u64, seed: u64) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let setup = scenario.setup(seed);
        let world = WorldState::new(setup.needle, setup.vein, scenario.physics, seed)
            .map_err(|e| HarnessError::ScenarioInvalid(e.to_string()))?;
        let imaging = ImagingConfig { microscope_origin: Some(setup.microscope_origin), ..scenario.imaging.clone() };
        let (cfg, operator) = match mode {
            Mode::Autonomous => (scenario.controller.clone(), None),
            Mode::ScriptedManual => (
                ManualOperator::adapt_config(&scenario.operator, &scenario.controller),
                Some(ManualOperator::new(&scenario.operator, seed, scenario.dt_s)),
            ),
        };
        Ok(Self {
            scenario: scenario.clone(),
            setup,
            mode,
            trial_id,
            seed,
            world,
            controller: ControllerState::new(),
            cfg,
            tick: 0,
            timers: Timers { navigation_s: 0.0, puncture_s: 0.0 },
            commit: None,
            last_percept: Percept::None,
            render_all: false,
            imaging,
            operator,
            occlusion: None,
        })
    }

    /// Trial already navigating toward the scenario's goal.
    pub fn started(scenario: &Scenario, mode: Mode, trial_id: u64, seed: u64) -> Result<Self, HarnessError> {
        let mut t = Self::new(scenario, mode, trial_id, seed)?;
        let target = t.setup.target_px;
        t.set_target(target)?;
        Ok(t)
    }

    pub fn set_target(&mut self, target_px: [f64; 2]) -> Result<(), HarnessError> {
        let size = (self.imaging.microscope_width, self.imaging.microscope_height);
        self.controller = self.controller.set_target(target_px, size).map_err(|e| HarnessError::Controller(e.to_string()))?;
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.controller.phase.is_terminal()
    }

    pub fn imaging(&self) -> &ImagingConfig {
        &self.imaging
    }

    /// B-scan slice across the vein through the navigation goal.
    pub fn scanline(&self) -> Scanline {
        let s = self.imaging.microscope_scale_mm_per_px;
        let o = self.setup.microscope_origin;
        let t = self.controller.target_px.unwrap_or(self.setup.target_px);
        Scanline::across(self.world.vein.axis_dir, [o[0] + t[0] * s, o[1] + t[1] * s])
    }

    pub fn tip_detector_config(&self) -> TipDetectorConfig {
        let n = &self.world.needle;
        TipDetectorConfig {
            insertion_azimuth_deg: n.azimuth_deg,
            expected_shaft_px: n.shaft_length_mm * n.insertion_angle_deg.to_radians().cos()
                / self.imaging.microscope_scale_mm_per_px,
            ..TipDetectorConfig::default()
        }
    }

    fn feedback(&self) -> PoseFeedback {
        PoseFeedback { tip: self.world.needle.tip, insertion_axis: self.world.needle.insertion_axis() }
    }

    fn needed(&self) -> PerceptKind {
        match &self.operator {
            Some(op) => op.needed_percept(&self.controller),
            None => self.controller.needed_percept(),
        }
    }

    /// Stop the procedure from outside; air is injected as for any abort.
    pub fn abort_external(&mut self) -> Result<(), HarnessError> {
        if self.is_finished() {
            return Ok(());
        }
        self.controller.abort(AbortReason::External);
        self.commit_if_needed()
    }

    fn commit_if_needed(&mut self) -> Result<(), HarnessError> {
        let phase = self.controller.phase;
        if self.commit.is_none() && matches!(phase, ControllerPhase::FullRetract | ControllerPhase::Aborted) {
            let (w, air) = inject_air(&self.world).map_err(|e| HarnessError::World(e.to_string()))?;
            self.world = w;
            self.commit = Some(Commit { claimed: phase == ControllerPhase::FullRetract, air });
        }
        Ok(())
    }

    /// Render, corrupt and perceive, tick the controller, then step the world.
    pub fn step(&mut self) -> Result<TickReport, HarnessError> {
        let dt = self.scenario.dt_s;
        let phase = self.controller.phase;
        let needed = self.needed();
        self.advance_occlusion();
        let frames = self.render(needed)?;
        let percept = match needed {
            PerceptKind::None => Percept::None,
            PerceptKind::Tip => Percept::Tip(detect_tip(frames.microscope.as_ref().expect("rendered"), &self.tip_detector_config())),
            PerceptKind::Contact => {
                Percept::Contact(classify_contact(frames.bscan.as_ref().expect("rendered"), self.cfg.contact_threshold))
            }
            PerceptKind::Puncture => {
                Percept::Puncture(detect_puncture(frames.bscan.as_ref().expect("rendered"), self.cfg.puncture_conf_min))
            }
        };

        let feedback = self.feedback();
        let (act, next) = match &mut self.operator {
            Some(op) => op.tick(&self.controller, &self.cfg, &percept, &feedback, dt),
            None => self.controller.tick(&self.cfg, &percept, &feedback, dt),
        }
        .map_err(|e| HarnessError::Controller(e.to_string()))?;

        let t = self.world.t;
        self.controller = next;
        self.commit_if_needed()?;
        self.apply(act)?;
        self.charge(phase, act.duration_s);

        let event = ControllerEvent {
            tick: self.tick,
            t,
            phase,
            next_phase: self.controller.phase,
            percept: percept.clone(),
            command: act.command,
            duration_s: act.duration_s,
        };
        if percept != Percept::None {
            self.last_percept = percept;
        }
        self.tick += 1;
        let frame_digest = digest_frames(&frames);
        let world_digest = fnv1a64(self.world.to_json().as_bytes());
        Ok(TickReport { event, frames, frame_digest, world_digest })
    }

    /// Tick driven by an external operator. Perception still runs for
    /// display, but the controller does not act or change phase.
    pub fn step_teleop(&mut self, act: Actuation) -> Result<TickReport, HarnessError> {
        let phase = self.controller.phase;
        let needed = self.controller.needed_percept();
        self.advance_occlusion();
        let frames = self.render(needed)?;
        let percept = match needed {
            PerceptKind::Tip => frames.microscope.as_ref().map(|f| Percept::Tip(detect_tip(f, &self.tip_detector_config()))),
            PerceptKind::Contact => {
                frames.bscan.as_ref().map(|f| Percept::Contact(classify_contact(f, self.cfg.contact_threshold)))
            }
            PerceptKind::Puncture => {
                frames.bscan.as_ref().map(|f| Percept::Puncture(detect_puncture(f, self.cfg.puncture_conf_min)))
            }
            PerceptKind::None => None,
        }
        .unwrap_or(Percept::None);
        let t = self.world.t;
        self.apply(act)?;
        self.charge(phase, act.duration_s);
        let event = ControllerEvent {
            tick: self.tick,
            t,
            phase,
            next_phase: phase,
            percept: percept.clone(),
            command: act.command,
            duration_s: act.duration_s,
        };
        if percept != Percept::None {
            self.last_percept = percept;
        }
        self.tick += 1;
        let frame_digest = digest_frames(&frames);
        let world_digest = fnv1a64(self.world.to_json().as_bytes());
        Ok(TickReport { event, frames, frame_digest, world_digest })
    }

    fn apply(&mut self, act: Actuation) -> Result<(), HarnessError> {
        self.world = self.world.step(act.command, act.duration_s).map_err(|e| HarnessError::World(e.to_string()))?;
        Ok(())
    }

    fn charge(&mut self, phase: ControllerPhase, duration: f64) {
        match phase {
            ControllerPhase::Navigating => self.timers.navigation_s += duration,
            ControllerPhase::Idle | ControllerPhase::Done | ControllerPhase::Aborted => {}
            _ => self.timers.puncture_s += duration,
        }
    }

    fn advance_occlusion(&mut self) {
        let Some(profile) = &self.scenario.artifacts else { return };
        if let Some(ev) = &mut self.occlusion {
            ev.remaining = ev.remaining.saturating_sub(1);
            if ev.remaining == 0 {
                self.occlusion = None;
            }
            return;
        }
        let mut rng = rng_for(self.seed, stream::ARTIFACT, self.tick.wrapping_mul(4).wrapping_add(3));
        if profile.occlusion_rate > 0.0 && rng.random_bool(profile.occlusion_rate) {
            let [t0, t1] = profile.occlusion_ticks;
            let [s0, s1] = profile.occlusion_size_px;
            let size = rng.random_range(s0..=s1);
            let q = size as f64 / 4.0;
            let offset = [rng.random_range(-q..=q), rng.random_range(-q..=q)];
            self.occlusion = Some(OcclusionEvent { remaining: rng.random_range(t0.max(1)..=t1.max(1)), size, offset });
        }
    }

    /// Render frames for this tick. Corruption draws depend on trial seed and tick only.
    pub fn render(&self, needed: PerceptKind) -> Result<FrameSet, HarnessError> {
        let want_micro = self.render_all || needed == PerceptKind::Tip;
        let want_bscan = self.render_all || matches!(needed, PerceptKind::Contact | PerceptKind::Puncture);
        let mut out = FrameSet::default();
        if want_micro {
            let mut f = render_microscope(&self.world, &self.imaging);
            if let Some(cfg) = self.artifact_config(0, |ev| {
                let tip = f.mm_to_px(self.world.needle.tip.xy());
                let s = ev.size;
                Occlusion {
                    x: (tip[0] + ev.offset[0]).round() as i64 - s / 2,
                    y: (tip[1] + ev.offset[1]).round() as i64 - s / 2,
                    width: s,
                    height: s,
                    fill: palette::VEIN as u8,
                }
            }) {
                f.image = self.corrupt(&f.image, &cfg)?;
            }
            out.microscope = Some(f);
        }
        if want_bscan {
            let scan = self.scanline();
            let mut f = match render_bscan(&self.world, &self.imaging, &scan) {
                Ok(f) => f,
                Err(_) => blank_bscan(&self.world, &self.imaging, scan),
            };
            if let Some(cfg) = self.artifact_config(1, |ev| {
                let tip = f.mm_to_px([scan.along(self.world.needle.tip.xy()), self.world.needle.tip.z]);
                let wall_row = (f.top_z - self.world.vein.depth_z) / f.scale_mm_per_px;
                let s = ev.size;
                Occlusion {
                    x: (tip[0] + ev.offset[0] / 2.0).round() as i64 - s / 2,
                    y: wall_row.floor() as i64,
                    width: s,
                    height: RIDGE_THICKNESS_PX as i64 + 1,
                    fill: palette::RIDGE as u8,
                }
            }) {
                f.image = self.corrupt(&f.image, &cfg)?;
            }
            out.bscan = Some(f);
        }
        Ok(out)
    }

    fn artifact_config(&self, modality: u64, occluder: impl Fn(&OcclusionEvent) -> Occlusion) -> Option<ArtifactConfig> {
        let profile = self.scenario.artifacts.as_ref()?;
        let mut rng = rng_for(self.seed, stream::ARTIFACT, self.tick.wrapping_mul(4).wrapping_add(modality));
        let mut cfg = profile.draw(&mut rng);
        cfg.occlusion = self.occlusion.as_ref().map(occluder);
        Some(cfg)
    }

    fn corrupt(&self, image: &GrayImage, cfg: &ArtifactConfig) -> Result<GrayImage, HarnessError> {
        apply_artifacts(image, cfg).map_err(|e| HarnessError::ScenarioInvalid(e.to_string()))
    }

    pub fn record(&self) -> TrialRecord {
        let commit = self.commit.unwrap_or(Commit {
            claimed: false,
            air: AirVerdict { success: false, reason: crate::world::AirReason::NoPuncture },
        });
        TrialRecord {
            trial_id: self.trial_id,
            mode: self.mode,
            seed: self.seed,
            navigation_s: round_time(self.timers.navigation_s),
            puncture_s: round_time(self.timers.puncture_s),
            attempts: self.controller.attempts,
            verdict: u8::from(commit.claimed),
            ground_truth: u8::from(commit.air.success),
            outcome_class: OutcomeClass::from_verdicts(commit.claimed, commit.air.success),
            abort_reason: self.controller.abort_reason.map(|r| r.as_str().to_string()),
        }
    }
}

/// Round accumulated times to the microsecond so sums of tick lengths print cleanly.
fn round_time(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn blank_bscan(world: &WorldState, cfg: &ImagingConfig, scanline: Scanline) -> BScanFrame {
    BScanFrame {
        image: GrayImage::filled(cfg.bscan_width, cfg.bscan_height, palette::BACKGROUND_MEAN as u8),
        scale_mm_per_px: cfg.bscan_scale_mm_per_px,
        scanline,
        top_z: world.vein.depth_z + cfg.bscan_headroom_mm,
        t: world.t,
    }
}

fn digest_frames(frames: &FrameSet) -> u64 {
    let mut bytes = Vec::new();
    if let Some(f) = &frames.microscope {
        bytes.extend_from_slice(&fnv1a64(&f.image.pixels).to_le_bytes());
    }
    if let Some(f) = &frames.bscan {
        bytes.extend_from_slice(&fnv1a64(&f.image.pixels).to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Run one trial to completion.
pub fn run_trial(scenario: &Scenario, mode: Mode, trial_id: u64, seed: u64) -> Result<TrialRecord, HarnessError> {
    run_trial_logged(scenario, mode, trial_id, seed, None)
}

/// Run one trial, optionally appending every tick to an event log.
pub fn run_trial_logged(
    scenario: &Scenario,
    mode: Mode,
    trial_id: u64,
    seed: u64,
    mut log: Option<&mut EventLog>,
) -> Result<TrialRecord, HarnessError> {
    let mut trial = Trial::started(scenario, mode, trial_id, seed)?;
    if let Some(l) = log.as_deref_mut() {
        l.push(LogLine::header(scenario, mode, trial_id, seed));
    }
    while !trial.is_finished() {
        if trial.tick >= scenario.tick_budget {
            return Err(HarnessError::TickBudgetExceeded(scenario.tick_budget));
        }
        let report = trial.step()?;
        if let Some(l) = log.as_deref_mut() {
            l.push(LogLine::tick(&report));
        }
    }
    let record = trial.record();
    if let Some(l) = log {
        l.push(LogLine::trailer(trial.tick, &record));
    }
    Ok(record)
}

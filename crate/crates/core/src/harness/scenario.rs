use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::ControllerConfig;
use crate::imaging::{ArtifactConfig, ImagingConfig};
use crate::rng::{fnv1a64, rng_for, stream};
use crate::world::{NeedleModel, Physics, Pose3, VeinModel, VeinPreset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VeinSpec {
    Preset { preset: VeinPreset },
    Explicit(VeinModel),
}

impl Default for VeinSpec {
    fn default() -> Self {
        VeinSpec::Preset { preset: VeinPreset::Embryo }
    }
}

impl VeinSpec {
    pub fn model(&self) -> VeinModel {
        match *self {
            VeinSpec::Preset { preset } => VeinModel::preset(preset),
            VeinSpec::Explicit(v) => v,
        }
    }
}

/// Per-frame imaging corruption. Magnitudes are drawn uniformly inside the
/// ranges for every frame; occlusion events span several ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactProfile {
    pub brightness_pct: [f64; 2],
    pub exposure_pct: [f64; 2],
    pub noise_frac: [f64; 2],
    /// Draw magnitudes at the range ends only.
    pub extremes: bool,
    /// Probability per tick that an occlusion event starts.
    pub occlusion_rate: f64,
    pub occlusion_ticks: [u32; 2],
    pub occlusion_size_px: [i64; 2],
}

impl Default for ArtifactProfile {
    fn default() -> Self {
        Self::calibrated()
    }
}

impl ArtifactProfile {
    pub fn calibrated() -> Self {
        Self {
            brightness_pct: [-ArtifactConfig::BRIGHTNESS_MAX_PCT, ArtifactConfig::BRIGHTNESS_MAX_PCT],
            exposure_pct: [-ArtifactConfig::EXPOSURE_MAX_PCT, ArtifactConfig::EXPOSURE_MAX_PCT],
            noise_frac: [0.0, ArtifactConfig::NOISE_MAX_FRAC],
            extremes: false,
            occlusion_rate: 0.01,
            occlusion_ticks: [5, 30],
            occlusion_size_px: [10, 30],
        }
    }

    /// Every magnitude at its bound and frequent, long occlusions.
    pub fn maxed() -> Self {
        Self { extremes: true, occlusion_rate: 0.05, occlusion_ticks: [20, 60], ..Self::calibrated() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let check = |a: f64, b: f64, bound_lo: f64, bound_hi: f64| a <= b && a >= bound_lo && b <= bound_hi;
        let b = ArtifactConfig::BRIGHTNESS_MAX_PCT;
        let e = ArtifactConfig::EXPOSURE_MAX_PCT;
        let ok = check(self.brightness_pct[0], self.brightness_pct[1], -b, b)
            && check(self.exposure_pct[0], self.exposure_pct[1], -e, e)
            && check(self.noise_frac[0], self.noise_frac[1], 0.0, ArtifactConfig::NOISE_MAX_FRAC)
            && (0.0..=1.0).contains(&self.occlusion_rate)
            && self.occlusion_ticks[0] <= self.occlusion_ticks[1]
            && self.occlusion_size_px[0] >= 0
            && self.occlusion_size_px[0] <= self.occlusion_size_px[1];
        if ok {
            Ok(())
        } else {
            Err(HarnessError::ScenarioInvalid("artifact ranges out of bounds".into()))
        }
    }

    /// Global photometric corruption for one frame.
    pub fn draw(&self, rng: &mut impl Rng) -> ArtifactConfig {
        let mut pick = |r: [f64; 2]| {
            if self.extremes {
                if rng.random_bool(0.5) {
                    r[0]
                } else {
                    r[1]
                }
            } else if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..=r[1])
            }
        };
        let brightness_pct = pick(self.brightness_pct);
        let exposure_pct = pick(self.exposure_pct);
        let noise_frac = if self.extremes { self.noise_frac[1] } else { pick(self.noise_frac) };
        ArtifactConfig { brightness_pct, exposure_pct, noise_frac, hflip: false, occlusion: None, seed: rng.random() }
    }
}

/// Per-trial randomization ranges. Offsets are uniform in `[-v, v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Randomization {
    pub vein_diameter_mm: Option<[f64; 2]>,
    /// Shift of the vein axis across its own direction.
    pub vein_offset_mm: f64,
    /// Jitter of the needle start position in XOY.
    pub start_jitter_mm: f64,
    /// Target position along the vein axis, relative to the axis point.
    pub target_along_mm: f64,
}

impl Default for Randomization {
    fn default() -> Self {
        Self { vein_diameter_mm: None, vein_offset_mm: 0.5, start_jitter_mm: 0.5, target_along_mm: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorModel {
    pub reaction_latency_s: f64,
    pub key_step_mm: f64,
    pub tremor_rms_um: f64,
    /// Probability that a key press overshoots (double step) or undershoots (no step).
    pub decision_noise: f64,
}

impl Default for OperatorModel {
    fn default() -> Self {
        Self { reaction_latency_s: 0.3, key_step_mm: 0.05, tremor_rms_um: 182.0, decision_noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub vein: VeinSpec,
    pub needle: NeedleModel,
    pub physics: Physics,
    pub imaging: ImagingConfig,
    /// `None` renders artifact-free frames.
    pub artifacts: Option<ArtifactProfile>,
    pub controller: ControllerConfig,
    pub operator: OperatorModel,
    pub randomize: Randomization,
    /// Fixed navigation goal in microscope pixels; otherwise a point on the vein axis.
    pub target_px: Option<[f64; 2]>,
    pub dt_s: f64,
    pub tick_budget: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            vein: VeinSpec::default(),
            needle: NeedleModel::default(),
            physics: Physics::default(),
            imaging: ImagingConfig::default(),
            artifacts: None,
            controller: ControllerConfig::default(),
            operator: OperatorModel::default(),
            randomize: Randomization::default(),
            target_px: None,
            dt_s: 0.1,
            tick_budget: 20_000,
        }
    }
}

/// Scenario after per-trial randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub vein: VeinModel,
    pub needle: NeedleModel,
    pub target_px: [f64; 2],
    pub microscope_origin: [f64; 2],
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::ScenarioInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Stable digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::ScenarioInvalid(m));
        if let Err(e) = self.needle.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.vein.model().validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.imaging.validate() {
            return invalid(e);
        }
        if let Err(e) = self.controller.validate() {
            return invalid(e.to_string());
        }
        if let Some(a) = &self.artifacts {
            a.validate()?;
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) || self.tick_budget == 0 {
            return invalid("dt_s and tick_budget must be positive".into());
        }
        if let Some([lo, hi]) = self.randomize.vein_diameter_mm {
            if !(lo > 0.0 && lo <= hi) {
                return invalid("vein diameter range must be positive and ordered".into());
            }
        }
        let o = &self.operator;
        if o.reaction_latency_s < 0.0 || o.key_step_mm <= 0.0 || o.tremor_rms_um < 0.0 || !(0.0..=1.0).contains(&o.decision_noise) {
            return invalid("operator model out of range".into());
        }
        Ok(())
    }

    /// Randomize geometry for one trial. Depends only on `trial_seed`, so both
    /// modes of a paired trial see the same scene.
    pub fn setup(&self, trial_seed: u64) -> TrialSetup {
        let mut rng = rng_for(trial_seed, stream::SCENE, 0);
        let r = &self.randomize;
        let mut sym = |v: f64| if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 };
        let mut vein = self.vein.model();
        let across = [-vein.axis_dir[1], vein.axis_dir[0]];
        let shift = sym(r.vein_offset_mm);
        let along = sym(r.target_along_mm);
        let jx = sym(r.start_jitter_mm);
        let jy = sym(r.start_jitter_mm);
        if let Some([lo, hi]) = r.vein_diameter_mm {
            vein.diameter_mm = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        }
        let base = vein.axis_point;
        vein.axis_point = [base[0] + shift * across[0], base[1] + shift * across[1]];
        let mut needle = self.needle;
        needle.tip = Pose3::new(needle.tip.x + jx, needle.tip.y + jy + shift * across[1], needle.tip.z);

        let origin = self.imaging.microscope_origin_for(base);
        let target_px = self.target_px.unwrap_or_else(|| {
            let p = [vein.axis_point[0] + along * vein.axis_dir[0], vein.axis_point[1] + along * vein.axis_dir[1]];
            let s = self.imaging.microscope_scale_mm_per_px;
            [(p[0] - origin[0]) / s, (p[1] - origin[1]) / s]
        });
        TrialSetup { vein, needle, target_px, microscope_origin: origin }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default_scenario() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.vein.model().diameter_mm, 1.27);
    }

    #[test]
    fn preset_and_explicit_veins_parse() {
        let s = Scenario::from_json(r#"{"vein": {"preset": "target"}}"#).unwrap();
        assert_eq!(s.vein.model().diameter_mm, 0.35);
        let v = serde_json::to_string(&VeinModel::preset(VeinPreset::Embryo)).unwrap();
        let s = Scenario::from_json(&format!(r#"{{"vein": {v}}}"#)).unwrap();
        assert_eq!(s.vein.model(), VeinModel::preset(VeinPreset::Embryo));
    }

    #[test]
    fn round_trip_and_digest() {
        let s = Scenario { artifacts: Some(ArtifactProfile::calibrated()), ..Scenario::default() };
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
        assert_ne!(Scenario::default().digest(), s.digest());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Scenario::from_json(r#"{"dt_s": 0}"#).is_err());
        assert!(Scenario::from_json(r#"{"artifacts": {"brightness_pct": [-20, 0]}}"#).is_err());
        assert!(Scenario::from_json(r#"{"controller": {"retract_fraction": 1.5}}"#).is_err());
        assert!(Scenario::from_json("not json").is_err());
    }

    #[test]
    fn setup_is_seeded_and_target_is_on_axis() {
        let s = Scenario::default();
        assert_eq!(s.setup(9), s.setup(9));
        assert_ne!(s.setup(9), s.setup(10));
        let t = s.setup(3);
        let scale = s.imaging.microscope_scale_mm_per_px;
        let p = [t.microscope_origin[0] + t.target_px[0] * scale, t.microscope_origin[1] + t.target_px[1] * scale];
        assert!(t.vein.lateral_offset(p[0], p[1]).abs() < 1e-9);
    }

    #[test]
    fn maxed_profile_draws_bounds() {
        let mut rng = rng_for(1, stream::ARTIFACT, 0);
        for _ in 0..20 {
            let a = ArtifactProfile::maxed().draw(&mut rng);
            assert_eq!(a.brightness_pct.abs(), 15.0);
            assert_eq!(a.exposure_pct.abs(), 10.0);
            assert_eq!(a.noise_frac, 0.001);
            assert!(a.validate().is_ok());
        }
    }
}

//! Ground-truth world: needle, vein, and the tissue interaction between them.
//!
//! The task frame is millimeters with z pointing up; its XOY plane is the
//! microscope image plane. [`WorldState`] is an immutable value and
//! [`WorldState::step`] returns the successor state.

mod tissue;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tissue::{evaluate_tissue_state, inject_air, AirReason, AirVerdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("command out of bounds: {0}")]
    CommandOutOfBounds(String),
    #[error("workspace exceeded: tip at ({x:.3}, {y:.3}, {z:.3}) mm")]
    WorkspaceExceeded { x: f64, y: f64, z: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("air already injected in this trial")]
    AlreadyInjected,
    #[error("invalid world parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Pose3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Rigid needle. The tip is the point that touches tissue; the shaft extends
/// backwards and upwards along the insertion axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleModel {
    pub tip: Pose3,
    /// Elevation of the insertion axis below the vein plane.
    pub insertion_angle_deg: f64,
    /// Direction of advance in XOY, degrees from +x.
    #[serde(default)]
    pub azimuth_deg: f64,
    pub tip_diameter_um: f64,
    pub shaft_length_mm: f64,
}

impl Default for NeedleModel {
    fn default() -> Self {
        Self {
            tip: Pose3::new(-2.0, 0.0, 1.0),
            insertion_angle_deg: 70.0,
            azimuth_deg: 0.0,
            tip_diameter_um: 100.0,
            shaft_length_mm: 4.0,
        }
    }
}

impl NeedleModel {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.insertion_angle_deg > 0.0 && self.insertion_angle_deg < 90.0) {
            return Err(WorldError::InvalidParameter(format!(
                "insertion angle {} not in (0, 90)",
                self.insertion_angle_deg
            )));
        }
        if !(self.tip_diameter_um > 0.0) || !(self.shaft_length_mm > 0.0) {
            return Err(WorldError::InvalidParameter("needle dimensions must be positive".into()));
        }
        if !self.tip.is_finite() || !self.azimuth_deg.is_finite() {
            return Err(WorldError::InvalidParameter("needle pose not finite".into()));
        }
        Ok(())
    }

    /// Unit vector of advance in XOY.
    pub fn azimuth_xy(&self) -> [f64; 2] {
        let a = self.azimuth_deg.to_radians();
        [a.cos(), a.sin()]
    }

    /// Unit vector of forward insertion in 3D (pointing down into tissue).
    pub fn insertion_axis(&self) -> [f64; 3] {
        let el = self.insertion_angle_deg.to_radians();
        let [ax, ay] = self.azimuth_xy();
        [el.cos() * ax, el.cos() * ay, -el.sin()]
    }

    pub fn tip_radius_mm(&self) -> f64 {
        self.tip_diameter_um * 1e-3 / 2.0
    }

    /// Projection of the shaft's far end onto XOY.
    pub fn entry_point_xy(&self) -> [f64; 2] {
        let reach = self.shaft_length_mm * self.insertion_angle_deg.to_radians().cos();
        let [ax, ay] = self.azimuth_xy();
        [self.tip.x - reach * ax, self.tip.y - reach * ay]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VeinPreset {
    /// Chicken embryo surrogate vessel.
    Embryo,
    /// Retinal target vessel.
    Target,
}

/// Straight vein along a line in XOY. The lumen cross-section is modeled as a
/// slab: the top wall surface lies at `depth_z` for every point within half a
/// diameter of the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VeinModel {
    pub axis_point: [f64; 2],
    pub axis_dir: [f64; 2],
    pub depth_z: f64,
    pub diameter_mm: f64,
    pub wall_thickness_mm: f64,
    pub max_deflection_mm: f64,
    pub puncture_velocity_mm_s: f64,
}

impl VeinModel {
    pub fn preset(preset: VeinPreset) -> Self {
        let diameter_mm = match preset {
            VeinPreset::Embryo => 1.27,
            VeinPreset::Target => 0.35,
        };
        Self {
            axis_point: [0.0, 0.0],
            axis_dir: [1.0, 0.0],
            depth_z: 0.0,
            diameter_mm,
            wall_thickness_mm: 0.03,
            max_deflection_mm: 0.15,
            puncture_velocity_mm_s: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let norm = self.axis_dir[0].hypot(self.axis_dir[1]);
        let ok = self.diameter_mm > 0.0
            && self.wall_thickness_mm > 0.0
            && self.wall_thickness_mm < self.diameter_mm
            && self.max_deflection_mm >= 0.0
            && self.puncture_velocity_mm_s > 0.0
            && (norm - 1.0).abs() < 1e-9
            && self.depth_z.is_finite();
        if ok {
            Ok(())
        } else {
            Err(WorldError::InvalidParameter(format!("invalid vein model {self:?}")))
        }
    }

    /// Signed distance from the axis in XOY (positive to the left of `axis_dir`).
    pub fn lateral_offset(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.axis_point[0];
        let dy = y - self.axis_point[1];
        self.axis_dir[0] * dy - self.axis_dir[1] * dx
    }

    /// Whether an XOY point lies over the vessel.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        self.lateral_offset(x, y).abs() <= self.diameter_mm / 2.0
    }

    /// Top surface of the far (bottom) wall.
    pub fn bottom_z(&self) -> f64 {
        self.depth_z - self.diameter_mm
    }

    /// Open interval of z occupied by the lumen under the top wall.
    pub fn lumen_z(&self) -> (f64, f64) {
        (self.bottom_z(), self.depth_z - self.wall_thickness_mm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TissuePhase {
    Free,
    Contact,
    Deformed,
    Punctured,
    DoublePunctured,
}

impl TissuePhase {
    /// Top wall has been ruptured; this never reverts.
    pub fn is_breached(self) -> bool {
        matches!(self, TissuePhase::Punctured | TissuePhase::DoublePunctured)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueState {
    pub phase: TissuePhase,
    pub deflection_mm: f64,
    /// Vertical tip travel below the undeformed wall surface.
    pub depth_beyond_contact_mm: f64,
    /// XOY location where the top wall ruptured.
    pub puncture_site: Option<[f64; 2]>,
}

impl TissueState {
    pub const FREE: TissueState = TissueState {
        phase: TissuePhase::Free,
        deflection_mm: 0.0,
        depth_beyond_contact_mm: 0.0,
        puncture_site: None,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub contact_tolerance_mm: f64,
    pub v_max_mm_s: f64,
    pub z_step_cap_mm: f64,
    pub workspace_center: Pose3,
    pub workspace_half_extent_mm: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            contact_tolerance_mm: 0.005,
            v_max_mm_s: 10.0,
            z_step_cap_mm: 1.0,
            workspace_center: Pose3::new(0.0, 0.0, 0.0),
            workspace_half_extent_mm: 10.0,
        }
    }
}

impl Physics {
    fn inside(&self, p: &Pose3) -> bool {
        let c = &self.workspace_center;
        let h = self.workspace_half_extent_mm;
        (p.x - c.x).abs() <= h && (p.y - c.y).abs() <= h && (p.z - c.z).abs() <= h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MotionCommand {
    /// Move in the image plane at (vx, vy) mm/s.
    PlanarVelocity { vx: f64, vy: f64 },
    /// Move along the insertion axis; negative speed retracts.
    AxialInsertion { speed: f64 },
    /// Vertical displacement executed over the tick.
    ZStep { dz: f64 },
    Hold,
}

impl MotionCommand {
    fn check(&self, physics: &Physics) -> Result<(), WorldError> {
        let (ok, what) = match *self {
            MotionCommand::PlanarVelocity { vx, vy } => {
                (vx.is_finite() && vy.is_finite() && vx.hypot(vy) <= physics.v_max_mm_s, "planar speed")
            }
            MotionCommand::AxialInsertion { speed } => {
                (speed.is_finite() && speed.abs() <= physics.v_max_mm_s, "axial speed")
            }
            MotionCommand::ZStep { dz } => (dz.is_finite() && dz.abs() <= physics.z_step_cap_mm, "z step"),
            MotionCommand::Hold => (true, ""),
        };
        if ok {
            Ok(())
        } else {
            Err(WorldError::CommandOutOfBounds(format!("{what} in {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub needle: NeedleModel,
    pub vein: VeinModel,
    pub tissue: TissueState,
    pub physics: Physics,
    pub air_injected: bool,
    pub rng_seed: u64,
    /// Tip speed during the last step.
    pub tip_speed_mm_s: f64,
}

impl WorldState {
    pub fn new(needle: NeedleModel, vein: VeinModel, physics: Physics, rng_seed: u64) -> Result<Self, WorldError> {
        needle.validate()?;
        vein.validate()?;
        let mut world = Self {
            t: 0.0,
            needle,
            vein,
            tissue: TissueState::FREE,
            physics,
            air_injected: false,
            rng_seed,
            tip_speed_mm_s: 0.0,
        };
        if !physics.inside(&needle.tip) {
            let p = needle.tip;
            return Err(WorldError::WorkspaceExceeded { x: p.x, y: p.y, z: p.z });
        }
        world.tissue = evaluate_tissue_state(&world);
        world.clamp_to_wall();
        Ok(world)
    }

    /// Advance by `dt` seconds under `cmd` (explicit Euler, one substep).
    pub fn step(&self, cmd: MotionCommand, dt: f64) -> Result<WorldState, WorldError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(WorldError::InvalidTimeStep(dt));
        }
        cmd.check(&self.physics)?;

        let (dx, dy, dz) = match cmd {
            MotionCommand::PlanarVelocity { vx, vy } => (vx * dt, vy * dt, 0.0),
            MotionCommand::AxialInsertion { speed } => {
                let [ax, ay, az] = self.needle.insertion_axis();
                (speed * dt * ax, speed * dt * ay, speed * dt * az)
            }
            MotionCommand::ZStep { dz } => (0.0, 0.0, dz),
            MotionCommand::Hold => (0.0, 0.0, 0.0),
        };

        let mut next = self.clone();
        next.t = self.t + dt;
        if matches!(cmd, MotionCommand::Hold) {
            next.tip_speed_mm_s = 0.0;
            return Ok(next);
        }

        let tip = Pose3::new(self.needle.tip.x + dx, self.needle.tip.y + dy, self.needle.tip.z + dz);
        if !self.physics.inside(&tip) {
            return Err(WorldError::WorkspaceExceeded { x: tip.x, y: tip.y, z: tip.z });
        }
        next.needle.tip = tip;
        next.tip_speed_mm_s = (dx * dx + dy * dy + dz * dz).sqrt() / dt;
        next.tissue = evaluate_tissue_state(&next);
        next.clamp_to_wall();
        Ok(next)
    }

    /// An intact wall at maximum deflection stops the tip.
    fn clamp_to_wall(&mut self) {
        if self.tissue.phase == TissuePhase::Deformed {
            let floor = self.vein.depth_z - self.vein.max_deflection_mm;
            if self.needle.tip.z < floor {
                self.needle.tip.z = floor;
                self.tissue.depth_beyond_contact_mm = self.vein.max_deflection_mm;
            }
        }
    }

    /// Tip is inside the lumen (below the top wall, above the far wall).
    pub fn tip_in_lumen(&self) -> bool {
        let tip = self.needle.tip;
        let (lo, hi) = self.vein.lumen_z();
        self.vein.covers(tip.x, tip.y) && tip.z > lo && tip.z < hi
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn world_at(tip: Pose3) -> WorldState {
        let needle = NeedleModel { tip, ..NeedleModel::default() };
        WorldState::new(needle, VeinModel::preset(VeinPreset::Embryo), Physics::default(), 1).unwrap()
    }

    #[test]
    fn hold_changes_only_time() {
        let w = world_at(Pose3::new(0.0, 0.0, 5.0));
        let n = w.step(MotionCommand::Hold, 0.1).unwrap();
        assert_eq!(n.needle, w.needle);
        assert_eq!(n.tissue, w.tissue);
        assert_abs_diff_eq!(n.t, 0.1);
    }

    #[test]
    fn planar_velocity_integrates_linearly() {
        let w = world_at(Pose3::new(0.0, 0.0, 5.0));
        let n = w.step(MotionCommand::PlanarVelocity { vx: 0.6, vy: 0.8 }, 1.0).unwrap();
        assert_abs_diff_eq!(n.needle.tip.x, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(n.needle.tip.y, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(n.needle.tip.z, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn axial_insertion_follows_seventy_degree_axis() {
        let w = world_at(Pose3::new(0.0, 0.0, 5.0));
        let n = w.step(MotionCommand::AxialInsertion { speed: 1.0 }, 1.0).unwrap();
        // sin 70° = 0.939693, cos 70° = 0.342020
        assert_abs_diff_eq!(n.needle.tip.z - 5.0, -0.939_692_620_785_908_4, epsilon = 1e-12);
        assert_abs_diff_eq!(n.needle.tip.x, 0.342_020_143_325_668_7, epsilon = 1e-12);
        assert_abs_diff_eq!(n.needle.tip.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_commands_are_rejected() {
        let w = world_at(Pose3::new(0.0, 0.0, 5.0));
        assert!(matches!(
            w.step(MotionCommand::PlanarVelocity { vx: 50.0, vy: 0.0 }, 0.1),
            Err(WorldError::CommandOutOfBounds(_))
        ));
        assert!(matches!(w.step(MotionCommand::ZStep { dz: -2.0 }, 0.1), Err(WorldError::CommandOutOfBounds(_))));
        assert!(matches!(w.step(MotionCommand::Hold, 0.0), Err(WorldError::InvalidTimeStep(_))));
    }

    #[test]
    fn leaving_workspace_is_an_error() {
        let w = world_at(Pose3::new(9.95, 0.0, 5.0));
        let r = w.step(MotionCommand::PlanarVelocity { vx: 1.0, vy: 0.0 }, 0.1);
        assert!(matches!(r, Err(WorldError::WorkspaceExceeded { .. })));
    }

    #[test]
    fn slow_push_clamps_at_max_deflection() {
        let w = world_at(Pose3::new(0.0, 0.0, 0.01));
        let mut s = w;
        for _ in 0..40 {
            s = s.step(MotionCommand::ZStep { dz: -0.01 }, 0.1).unwrap();
        }
        assert_eq!(s.tissue.phase, TissuePhase::Deformed);
        assert_abs_diff_eq!(s.tissue.deflection_mm, 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(s.needle.tip.z, -0.15, epsilon = 1e-12);
    }

    #[test]
    fn snapshot_round_trip_is_byte_identical() {
        let w = world_at(Pose3::new(0.123_456_789, -1.0 / 3.0, 0.7));
        let w = w.step(MotionCommand::AxialInsertion { speed: 0.37 }, 0.1).unwrap();
        let json = w.to_json();
        let back = WorldState::from_json(&json).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn presets_carry_both_diameters() {
        assert_eq!(VeinModel::preset(VeinPreset::Embryo).diameter_mm, 1.27);
        assert_eq!(VeinModel::preset(VeinPreset::Target).diameter_mm, 0.35);
    }
}

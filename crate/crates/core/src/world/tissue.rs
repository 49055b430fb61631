use serde::{Deserialize, Serialize};

use super::{TissuePhase, TissueState, WorldError, WorldState};

/// Ground-truth interaction state for the current tip pose.
///
/// Pure in the tip pose, the last-step tip speed, and the tissue history
/// (`world.tissue`), which carries wall rupture forward.
pub fn evaluate_tissue_state(world: &WorldState) -> TissueState {
    let vein = &world.vein;
    let tip = world.needle.tip;
    let prev = world.tissue;
    let over = vein.covers(tip.x, tip.y);
    let penetration = vein.depth_z - tip.z;
    let depth = penetration.max(0.0);

    if prev.phase.is_breached() {
        let phase = if over && tip.z <= vein.bottom_z() {
            TissuePhase::DoublePunctured
        } else {
            prev.phase
        };
        return TissueState { phase, deflection_mm: 0.0, depth_beyond_contact_mm: depth, puncture_site: prev.puncture_site };
    }

    if !over || penetration < -world.physics.contact_tolerance_mm {
        return TissueState::FREE;
    }
    if penetration <= 0.0 {
        return TissueState { phase: TissuePhase::Contact, ..TissueState::FREE };
    }
    if penetration <= vein.max_deflection_mm {
        return TissueState {
            phase: TissuePhase::Deformed,
            deflection_mm: penetration,
            depth_beyond_contact_mm: penetration,
            puncture_site: None,
        };
    }
    if world.tip_speed_mm_s >= vein.puncture_velocity_mm_s {
        let phase = if tip.z <= vein.bottom_z() { TissuePhase::DoublePunctured } else { TissuePhase::Punctured };
        TissueState { phase, deflection_mm: 0.0, depth_beyond_contact_mm: depth, puncture_site: Some(tip.xy()) }
    } else {
        TissueState {
            phase: TissuePhase::Deformed,
            deflection_mm: vein.max_deflection_mm,
            depth_beyond_contact_mm: penetration,
            puncture_site: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AirReason {
    Success,
    TipNotInLumen,
    NoPuncture,
    DoublePuncture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AirVerdict {
    pub success: bool,
    pub reason: AirReason,
}

/// End-of-trial oracle: the vein inflates only if exactly one wall is breached
/// and the tip sits in the lumen.
pub fn inject_air(world: &WorldState) -> Result<(WorldState, AirVerdict), WorldError> {
    if world.air_injected {
        return Err(WorldError::AlreadyInjected);
    }
    let reason = match world.tissue.phase {
        TissuePhase::DoublePunctured => AirReason::DoublePuncture,
        TissuePhase::Punctured if world.tip_in_lumen() => AirReason::Success,
        TissuePhase::Punctured => AirReason::TipNotInLumen,
        _ => AirReason::NoPuncture,
    };
    let mut next = world.clone();
    next.air_injected = true;
    Ok((next, AirVerdict { success: reason == AirReason::Success, reason }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{MotionCommand, NeedleModel, Physics, Pose3, VeinModel, VeinPreset};
    use approx::assert_abs_diff_eq;

    fn world(tip: Pose3, depth_z: f64) -> WorldState {
        let mut vein = VeinModel::preset(VeinPreset::Embryo);
        vein.depth_z = depth_z;
        let needle = NeedleModel { tip, ..NeedleModel::default() };
        WorldState::new(needle, vein, Physics::default(), 0).unwrap()
    }

    #[test]
    fn tip_above_wall_is_free() {
        let w = world(Pose3::new(0.0, 0.0, 1.0), 0.0);
        let s = evaluate_tissue_state(&w);
        assert_eq!(s.phase, TissuePhase::Free);
        assert_eq!(s.deflection_mm, 0.0);
    }

    #[test]
    fn tip_exactly_at_wall_is_contact() {
        let w = world(Pose3::new(0.0, 0.0, 0.0), 0.0);
        let s = evaluate_tissue_state(&w);
        assert_eq!(s.phase, TissuePhase::Contact);
        assert_eq!(s.deflection_mm, 0.0);
    }

    #[test]
    fn fast_drive_past_max_deflection_punctures() {
        // Wall at z = 2.0, tip driven from 2.1 to 1.80 in one 0.1 s step (3 mm/s).
        let w = world(Pose3::new(0.0, 0.0, 2.1), 2.0);
        let n = w.step(MotionCommand::ZStep { dz: -0.30 }, 0.1).unwrap();
        assert_eq!(n.tissue.phase, TissuePhase::Punctured);
        assert_abs_diff_eq!(n.tissue.depth_beyond_contact_mm, 0.20, epsilon = 1e-12);
        assert_eq!(n.tissue.puncture_site, Some([0.0, 0.0]));
    }

    #[test]
    fn slow_drive_past_max_deflection_stays_deformed() {
        let w = world(Pose3::new(0.0, 0.0, 2.1), 2.0);
        let n = w.step(MotionCommand::ZStep { dz: -0.30 }, 1.0).unwrap();
        assert_eq!(n.tissue.phase, TissuePhase::Deformed);
        assert_abs_diff_eq!(n.tissue.deflection_mm, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn rupture_is_absorbing_on_retraction() {
        let w = world(Pose3::new(0.0, 0.0, 0.05), 0.0);
        let n = w.step(MotionCommand::ZStep { dz: -0.30 }, 0.1).unwrap();
        assert_eq!(n.tissue.phase, TissuePhase::Punctured);
        let back = n.step(MotionCommand::ZStep { dz: 0.9 }, 1.0).unwrap();
        assert_eq!(back.tissue.phase, TissuePhase::Punctured);
        assert!(!back.tip_in_lumen());
    }

    #[test]
    fn air_injection_verdicts() {
        let w = world(Pose3::new(0.0, 0.0, 0.05), 0.0);
        let punctured = w.step(MotionCommand::ZStep { dz: -0.30 }, 0.1).unwrap();
        let (after, v) = inject_air(&punctured).unwrap();
        assert!(v.success);
        assert_eq!(v.reason, AirReason::Success);
        assert_eq!(inject_air(&after), Err(WorldError::AlreadyInjected));

        let deformed = w.step(MotionCommand::ZStep { dz: -0.10 }, 1.0).unwrap();
        assert_eq!(deformed.tissue.phase, TissuePhase::Deformed);
        let (_, v) = inject_air(&deformed).unwrap();
        assert_eq!((v.success, v.reason), (false, AirReason::NoPuncture));

        let through = punctured.step(MotionCommand::ZStep { dz: -1.0 }, 0.1).unwrap();
        let through = through.step(MotionCommand::ZStep { dz: -0.1 }, 0.1).unwrap();
        assert_eq!(through.tissue.phase, TissuePhase::DoublePunctured);
        let (_, v) = inject_air(&through).unwrap();
        assert_eq!((v.success, v.reason), (false, AirReason::DoublePuncture));

        let pulled_out = punctured.step(MotionCommand::ZStep { dz: 0.4 }, 1.0).unwrap();
        let (_, v) = inject_air(&pulled_out).unwrap();
        assert_eq!(v.reason, AirReason::TipNotInLumen);
    }

    #[test]
    fn beside_the_vein_is_always_free() {
        let w = world(Pose3::new(0.0, 2.0, -0.5), 0.0);
        assert_eq!(evaluate_tissue_state(&w).phase, TissuePhase::Free);
    }
}

//! Shared fixtures for the benchmarks.

use cannula_core::harness::{Mode, Scenario, Trial};

pub const SEED: u64 = 7;

/// Autonomous trial on the default scenario, advanced `ticks` steps or until it finishes.
pub fn trial_after(ticks: u64) -> Trial {
    let mut t = Trial::started(&Scenario::default(), Mode::Autonomous, 0, SEED).expect("default scenario is valid");
    while t.tick < ticks && !t.is_finished() {
        t.step().expect("step");
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_advances() {
        let t = trial_after(20);
        assert_eq!(t.tick, 20);
    }
}

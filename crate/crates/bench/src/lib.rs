//! Benchmark support: fixtures sized so per-iteration timings stay stable.

use sipservo_core::harness::Scenario;

/// Default scenario cut down to `steps` control steps, single repeat.
pub fn short_scenario(steps: usize) -> Scenario {
    let mut s = Scenario::default();
    s.duration_s = steps as f64 / s.control_rate_hz;
    s.repeats = 1;
    s
}

//! Fixtures shared by the criterion benches.

use dupire_aad_core::{Payoff, RngKey, SimConfig, SmileParams, VolSurface};

/// The 30x60 synthetic smile used by the demo config.
pub fn demo_surface() -> VolSurface {
    VolSurface::synthetic(&SmileParams::default()).expect("default smile is valid")
}

/// Batch of spot queries spread over the surface, including a few clamped ones.
pub fn spot_queries(n: usize) -> Vec<f64> {
    (0..n).map(|k| 40.0 + 180.0 * k as f64 / n as f64).collect()
}

/// A configuration small enough for criterion's repeated sampling.
pub fn small_config(n_paths: usize) -> SimConfig {
    SimConfig {
        n_steps: 52,
        n_paths,
        batch_size: 1024,
        key: RngKey::new(1, 0),
        ..SimConfig::default()
    }
}

pub fn demo_payoff() -> Payoff {
    Payoff::call(110.0)
}

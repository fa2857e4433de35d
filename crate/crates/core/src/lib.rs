//! Monte Carlo pricing under a Dupire local volatility surface with
//! adjoint (reverse-mode) sensitivities to every surface node.
//!
//! The pieces, bottom-up:
//!
//! * [`numerics`]: bfloat16 rounding emulation and mergeable accumulators;
//! * [`rng`]: counter-based normal draws addressed by `(seed, path, step)`;
//! * [`surface`]: the vol grid with gather and one-hot bilinear interpolation;
//! * [`engine`]: Euler / log-Euler simulation, pricing, Black-Scholes oracle;
//! * [`adjoint`]: the backward sweep producing delta and the vega surface;
//! * [`bump`]: central finite differences on common random numbers.

pub mod adjoint;
pub mod bump;
pub mod engine;
pub mod numerics;
pub mod rng;
pub mod surface;

pub use adjoint::{backward_batch, greeks, payoff_grad, SensitivityReport, VegaAccumulator};
pub use bump::{bump_all, bump_node, bump_spot, bump_uniform, BumpEstimate, BumpReport};
pub use engine::{
    black_scholes_call, estimate, norm_cdf, payoff_value, price, simulate_batch, step_euler, step_logeuler, Payoff,
    PayoffKind, PriceEstimate, Scheme, SimConfig, Tape,
};
pub use numerics::{round_bf16, welford_merge, PrecisionMode, Welford};
pub use rng::RngKey;
pub use surface::{scatter_node_grads, Backend, BilinearWeights, SmileParams, SurfaceError, VolSurface};

/// Errors from simulation, sensitivity and bumping entry points.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("tape does not match configuration: {0}")]
    TapeMismatch(String),
    #[error("node ({i}, {j}) outside surface of shape {shape:?}")]
    NodeOutOfRange { i: usize, j: usize, shape: (usize, usize) },
}

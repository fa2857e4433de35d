//! Central finite-difference ("bump and revalue") sensitivities.
//!
//! Each estimate re-prices with the parameter moved by `+eps/2` and `-eps/2`
//! under the same [`RngKey`](crate::rng::RngKey), so both runs see common
//! random numbers. The two runs are simulated batch by batch in lockstep and
//! the per-path payoff differences are averaged, which yields a standard
//! error alongside the estimate.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::engine::{merge_in_order, payoff_value, simulate_batch_with, KeyedNormals, Payoff, Prepared, SimConfig};
use crate::numerics::Welford;
use crate::surface::VolSurface;
use crate::Error;

/// Default absolute vol bump for node and uniform shifts.
pub const DEFAULT_VOL_EPS: f64 = 1e-4;
/// Default relative bump for the initial spot.
pub const DEFAULT_SPOT_REL_EPS: f64 = 1e-6;

/// A finite-difference estimate and what it cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Full Monte Carlo pricings performed.
    pub simulations: u64,
}

/// Result of bumping every (or every `stride`-th) node.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpReport {
    /// Node sensitivities; NaN for nodes skipped by the stride.
    pub grid: Array2<f64>,
    pub se_grid: Array2<f64>,
    pub simulations: u64,
    pub wall_ms: f64,
}

/// Prices `payoff` under `(up_cfg, up)` and `(dn_cfg, dn)` on common random
/// numbers and averages `(payoff_up - payoff_dn) / denom` per path.
fn paired_difference(
    up_cfg: &SimConfig,
    up: &VolSurface,
    dn_cfg: &SimConfig,
    dn: &VolSurface,
    payoff: &Payoff,
    denom: f64,
) -> Result<BumpEstimate, Error> {
    up_cfg.validate()?;
    dn_cfg.validate()?;
    payoff.validate()?;
    debug_assert_eq!(up_cfg.key, dn_cfg.key);
    debug_assert_eq!(up_cfg.n_batches(), dn_cfg.n_batches());
    let (pu, pd) = (Prepared::new(up_cfg, up), Prepared::new(dn_cfg, dn));
    let (iu, id) = (pu.interpolator(), pd.interpolator());
    let normals = KeyedNormals(up_cfg.key);
    let parts = (0..up_cfg.n_batches())
        .into_par_iter()
        .map(|b| {
            let (xu, _) = simulate_batch_with(up_cfg, &iu, &normals, b, false)?;
            let (xd, _) = simulate_batch_with(dn_cfg, &id, &normals, b, false)?;
            let mut acc = Welford::new();
            for (&a, &d) in xu.iter().zip(&xd) {
                acc.push((payoff_value(payoff, a) - payoff_value(payoff, d)) / denom);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let merged = merge_in_order(&parts);
    Ok(BumpEstimate {
        value: merged.mean,
        std_error: merged.std_error(),
        simulations: 2,
    })
}

fn check_eps(eps: f64) -> Result<(), Error> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "bump size must be positive and finite, got {eps}"
        )))
    }
}

/// Sensitivity to node `(i, j)` by central difference.
pub fn bump_node(
    config: &SimConfig,
    surface: &VolSurface,
    payoff: &Payoff,
    i: usize,
    j: usize,
    eps: f64,
) -> Result<BumpEstimate, Error> {
    check_eps(eps)?;
    let (ni, nj) = surface.dim();
    if i >= ni || j >= nj {
        return Err(Error::NodeOutOfRange { i, j, shape: (ni, nj) });
    }
    let up = surface.with_node_shift(i, j, 0.5 * eps);
    let dn = surface.with_node_shift(i, j, -0.5 * eps);
    paired_difference(config, &up, config, &dn, payoff, eps)
}

/// Bumps every node (`stride = 1`) or every `stride`-th node along both axes.
pub fn bump_all(
    config: &SimConfig,
    surface: &VolSurface,
    payoff: &Payoff,
    eps: f64,
    stride: usize,
) -> Result<BumpReport, Error> {
    check_eps(eps)?;
    let stride = stride.max(1);
    let start = Instant::now();
    let shape = surface.dim();
    let mut grid = Array2::from_elem(shape, f64::NAN);
    let mut se_grid = Array2::from_elem(shape, f64::NAN);
    let mut simulations = 0;
    for i in (0..shape.0).step_by(stride) {
        for j in (0..shape.1).step_by(stride) {
            let est = bump_node(config, surface, payoff, i, j, eps)?;
            grid[[i, j]] = est.value;
            se_grid[[i, j]] = est.std_error;
            simulations += est.simulations;
        }
    }
    Ok(BumpReport {
        grid,
        se_grid,
        simulations,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Delta by central difference in the initial spot, `s0 * (1 +- rel_eps/2)`.
pub fn bump_spot(
    config: &SimConfig,
    surface: &VolSurface,
    payoff: &Payoff,
    rel_eps: f64,
) -> Result<BumpEstimate, Error> {
    check_eps(rel_eps)?;
    let h = config.s0 * rel_eps;
    let up = SimConfig {
        s0: config.s0 + 0.5 * h,
        ..*config
    };
    let dn = SimConfig {
        s0: config.s0 - 0.5 * h,
        ..*config
    };
    paired_difference(&up, surface, &dn, surface, payoff, h)
}

/// Sensitivity to a parallel shift of the whole surface.
pub fn bump_uniform(
    config: &SimConfig,
    surface: &VolSurface,
    payoff: &Payoff,
    eps: f64,
) -> Result<BumpEstimate, Error> {
    check_eps(eps)?;
    let up = surface.with_uniform_shift(0.5 * eps);
    let dn = surface.with_uniform_shift(-0.5 * eps);
    paired_difference(config, &up, config, &dn, payoff, eps)
}

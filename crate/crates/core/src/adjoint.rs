//! Pathwise reverse-mode sensitivities: delta and the full vega surface
//! from one forward and one backward sweep per batch.
//!
//! For each path the backward sweep carries `a_n = dPayoff/dX_n` from
//! maturity down to `n = 0`. At every step it emits
//! `g_n = a_{n+1} * dX_{n+1}/dsigma_n` and spreads it over the four grid
//! nodes that produced `sigma_n`, using the recorded bilinear weights. The
//! spot dependence of `sigma_n` enters `dX_{n+1}/dX_n` through the slope of
//! the interpolant.

use ndarray::Array2;
use rayon::prelude::*;

use crate::engine::{
    merge_in_order, payoff_value, simulate_batch_with, KeyedNormals, Payoff, PayoffKind, Prepared, PriceEstimate,
    Scheme, SimConfig, Tape,
};
use crate::numerics::Welford;
use crate::surface::{Interpolator, VolSurface};
use crate::Error;

/// Price, delta and vega surface with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub price: PriceEstimate,
    pub delta: f64,
    pub delta_se: f64,
    /// `dPrice / dsigma_ij`, same shape as the surface grid.
    pub vega_grid: Array2<f64>,
    pub vega_se_grid: Array2<f64>,
    /// Standard error of the summed vega, from per-path totals.
    pub total_vega_se: f64,
}

impl SensitivityReport {
    /// Sum of all node vegas: the sensitivity to a parallel shift of the surface.
    pub fn total_vega(&self) -> f64 {
        self.vega_grid.sum()
    }
}

/// Pathwise derivative of the payoff with respect to the terminal spot.
/// The kink at the strike gets derivative 0.
#[inline]
pub fn payoff_grad(p: &Payoff, x_t: f64) -> f64 {
    let d = match p.kind {
        PayoffKind::EuropeanCall if x_t > p.strike => 1.0,
        PayoffKind::EuropeanPut if x_t < p.strike => -1.0,
        _ => 0.0,
    };
    p.quantity * d
}

/// Per-node first and second moment sums of pathwise vega contributions.
#[derive(Debug, Clone)]
pub struct VegaAccumulator {
    shape: (usize, usize),
    count: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    totals: Welford,
    // path-local scratch
    local: Vec<f64>,
    touched: Vec<usize>,
    is_touched: Vec<bool>,
}

impl VegaAccumulator {
    pub fn new(shape: (usize, usize)) -> Self {
        let n = shape.0 * shape.1;
        Self {
            shape,
            count: 0,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            totals: Welford::new(),
            local: vec![0.0; n],
            touched: Vec::with_capacity(64),
            is_touched: vec![false; n],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Mean contribution per node.
    pub fn mean_grid(&self) -> Array2<f64> {
        self.to_welford_grid().mapv(|w| w.mean)
    }

    /// Per-node accumulators for merging across batches.
    pub fn to_welford_grid(&self) -> Array2<Welford> {
        let cells: Vec<Welford> = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &q)| Welford::from_sums(self.count, s, q))
            .collect();
        Array2::from_shape_vec(self.shape, cells).expect("shape")
    }

    #[inline]
    fn add_local(&mut self, idx: usize, v: f64) {
        if !self.is_touched[idx] {
            self.is_touched[idx] = true;
            self.touched.push(idx);
        }
        self.local[idx] += v;
    }

    /// Accumulator of each path's vega summed over all nodes.
    pub fn totals(&self) -> &Welford {
        &self.totals
    }

    fn finish_path(&mut self) {
        let mut total = 0.0;
        for &k in &self.touched {
            let v = self.local[k];
            total += v;
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
            self.local[k] = 0.0;
            self.is_touched[k] = false;
        }
        self.touched.clear();
        self.count += 1;
        self.totals.push(total);
    }
}

/// Runs the adjoint sweep over one recorded batch.
///
/// Adds each path's vega contributions to `vega_accum` and returns the
/// per-path pathwise deltas in path order.
pub fn backward_batch(
    tape: &Tape,
    config: &SimConfig,
    surface: &VolSurface,
    payoff: &Payoff,
    vega_accum: &mut VegaAccumulator,
) -> Result<Vec<f64>, Error> {
    let prepared = Prepared::new(config, surface);
    backward_batch_with(tape, config, &prepared.interpolator(), payoff, vega_accum)
}

pub(crate) fn backward_batch_with(
    tape: &Tape,
    config: &SimConfig,
    interp: &Interpolator<'_>,
    payoff: &Payoff,
    acc: &mut VegaAccumulator,
) -> Result<Vec<f64>, Error> {
    let shape = interp.surface().dim();
    if tape.n_steps != config.n_steps || !tape.is_consistent() || acc.shape != shape {
        return Err(Error::TapeMismatch(format!(
            "tape has {} steps x {} paths (consistent: {}), config has {} steps; accumulator {:?} vs surface {:?}",
            tape.n_steps,
            tape.n_paths,
            tape.is_consistent(),
            config.n_steps,
            acc.shape,
            shape
        )));
    }
    let nj = shape.1;
    let b = tape.n_paths;
    let dt = config.dt();
    let sqrt_dt = dt.sqrt();
    let terminal = tape.terminal();
    let mut deltas = Vec::with_capacity(b);

    for (p, &s_t) in terminal.iter().enumerate().take(b) {
        let mut a = payoff_grad(payoff, s_t);
        if a != 0.0 {
            for n in (0..tape.n_steps).rev() {
                let k = tape.idx(n, p);
                if tape.floored[k] {
                    a = 0.0;
                    break;
                }
                let x = tape.states[k];
                let z = tape.normals[k];
                let sigma = tape.sigmas[k];
                let w = &tape.weights[k];
                let slope = interp.dvol_dx(w);
                let g = match config.scheme {
                    Scheme::Euler => {
                        let g = a * x * sqrt_dt * z;
                        a *= 1.0 + sigma * sqrt_dt * z + x * slope * sqrt_dt * z;
                        g
                    }
                    Scheme::LogEuler => {
                        let x_next = tape.states[tape.idx(n + 1, p)];
                        let dlog = sqrt_dt * z - sigma * dt;
                        let g = a * x_next * dlog;
                        a *= x_next / x + x_next * dlog * slope;
                        g
                    }
                };
                if g != 0.0 {
                    for (&(i, j), &wk) in w.nodes().iter().zip(&w.w) {
                        if wk != 0.0 {
                            acc.add_local(i * nj + j, g * wk);
                        }
                    }
                }
            }
        }
        acc.finish_path();
        deltas.push(a);
    }
    Ok(deltas)
}

struct BatchGreeks {
    price: Welford,
    delta: Welford,
    vega: Array2<Welford>,
    total_vega: Welford,
}

/// Price, pathwise delta and the full vega surface in one forward+backward run.
pub fn greeks(config: &SimConfig, surface: &VolSurface, payoff: &Payoff) -> Result<SensitivityReport, Error> {
    config.validate()?;
    payoff.validate()?;
    let prepared = Prepared::new(config, surface);
    let interp = prepared.interpolator();
    let normals = KeyedNormals(config.key);
    let shape = surface.dim();

    let partials = (0..config.n_batches())
        .into_par_iter()
        .map(|b| {
            let (_, tape) = simulate_batch_with(config, &interp, &normals, b, true)?;
            let tape = tape.expect("tape requested");
            let mut price = Welford::new();
            tape.terminal()
                .iter()
                .for_each(|&x| price.push(payoff_value(payoff, x)));
            let mut acc = VegaAccumulator::new(shape);
            let deltas = backward_batch_with(&tape, config, &interp, payoff, &mut acc)?;
            let mut delta = Welford::new();
            deltas.iter().for_each(|&d| delta.push(d));
            Ok(BatchGreeks {
                price,
                delta,
                vega: acc.to_welford_grid(),
                total_vega: *acc.totals(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let price = merge_in_order(&partials.iter().map(|p| p.price).collect::<Vec<_>>());
    let delta = merge_in_order(&partials.iter().map(|p| p.delta).collect::<Vec<_>>());
    let total_vega = merge_in_order(&partials.iter().map(|p| p.total_vega).collect::<Vec<_>>());
    let mut vega = Array2::from_elem(shape, Welford::new());
    for part in &partials {
        vega.zip_mut_with(&part.vega, |acc, w| acc.merge(w));
    }
    Ok(SensitivityReport {
        price: price.into(),
        delta: delta.mean,
        delta_se: delta.std_error(),
        vega_grid: vega.mapv(|w| w.mean),
        vega_se_grid: vega.mapv(|w| w.std_error()),
        total_vega_se: total_vega.std_error(),
    })
}

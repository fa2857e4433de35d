//! Forward Monte Carlo simulation of the driftless local volatility SDE
//! `dX/X = sigma(X, t) dW`.
//!
//! Paths are split into fixed batches of `batch_size`. Batches run in
//! parallel on the current rayon pool and their statistics are merged in
//! batch-index order, so results do not depend on the worker count.

use std::ops::Range;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::numerics::{PrecisionMode, Welford};
use crate::rng::{normal, RngKey};
use crate::surface::{Backend, BilinearWeights, Interpolator, VolSurface};
use crate::Error;

/// Floor applied by the level Euler scheme, relative to the initial spot.
pub const FLOOR_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Scheme {
    /// `X_{n+1} = X_n (1 + sigma sqrt(dt) Z)`, floored at `1e-12 * s0`.
    #[default]
    Euler,
    /// Euler on `ln X` with the Ito correction; exact for constant vol.
    LogEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub s0: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub batch_size: usize,
    pub scheme: Scheme,
    pub key: RngKey,
    pub precision: PrecisionMode,
    pub interp_backend: Backend,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            s0: 100.0,
            maturity: 1.5,
            n_steps: 156,
            n_paths: 500_000,
            batch_size: 1024,
            scheme: Scheme::Euler,
            key: RngKey::new(42, 0),
            precision: PrecisionMode::Full,
            interp_backend: Backend::Gather,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad(format!("s0 must be positive and finite, got {}", self.s0));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return bad(format!("maturity must be positive and finite, got {}", self.maturity));
        }
        if self.n_steps == 0 || self.n_steps > u32::MAX as usize {
            return bad(format!("n_steps must be in [1, 2^32), got {}", self.n_steps));
        }
        if self.n_paths == 0 || self.n_paths > u32::MAX as usize {
            return bad(format!("n_paths must be in [1, 2^32), got {}", self.n_paths));
        }
        if self.batch_size == 0 || self.batch_size > self.n_paths {
            return bad(format!(
                "batch_size must be in [1, n_paths={}], got {}",
                self.n_paths, self.batch_size
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }

    pub fn floor(&self) -> f64 {
        FLOOR_FRACTION * self.s0
    }

    pub fn n_batches(&self) -> usize {
        self.n_paths.div_ceil(self.batch_size)
    }

    /// Global path ids covered by batch `b`.
    pub fn batch_range(&self, b: usize) -> Range<usize> {
        let start = b * self.batch_size;
        start..(start + self.batch_size).min(self.n_paths)
    }

    /// Simulation time of step `n`.
    #[inline]
    pub fn step_time(&self, n: usize) -> f64 {
        n as f64 * self.maturity / self.n_steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayoffKind {
    EuropeanCall,
    EuropeanPut,
}

/// European payoff on the terminal spot, scaled by `quantity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoff {
    pub kind: PayoffKind,
    pub strike: f64,
    pub quantity: f64,
}

impl Payoff {
    pub fn call(strike: f64) -> Self {
        Self {
            kind: PayoffKind::EuropeanCall,
            strike,
            quantity: 1.0,
        }
    }

    pub fn put(strike: f64) -> Self {
        Self {
            kind: PayoffKind::EuropeanPut,
            strike,
            quantity: 1.0,
        }
    }

    pub fn scaled(self, quantity: f64) -> Self {
        Self { quantity, ..self }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "strike must be positive and finite, got {}",
                self.strike
            )));
        }
        if !self.quantity.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "quantity must be finite, got {}",
                self.quantity
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn payoff_value(p: &Payoff, x_t: f64) -> f64 {
    let intrinsic = match p.kind {
        PayoffKind::EuropeanCall => (x_t - p.strike).max(0.0),
        PayoffKind::EuropeanPut => (p.strike - x_t).max(0.0),
    };
    p.quantity * intrinsic
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
}

impl From<Welford> for PriceEstimate {
    fn from(w: Welford) -> Self {
        Self {
            mean: w.mean,
            std_error: w.std_error(),
            n_paths: w.count,
        }
    }
}

/// One level Euler step; returns the new spot and whether it was floored.
#[inline]
pub fn step_euler(x: f64, sigma: f64, z: f64, dt: f64, floor: f64) -> (f64, bool) {
    let next = x * (1.0 + sigma * dt.sqrt() * z);
    if next < floor {
        (floor, true)
    } else {
        (next, false)
    }
}

#[inline]
pub fn step_logeuler(x: f64, sigma: f64, z: f64, dt: f64) -> f64 {
    x * (sigma * dt.sqrt() * z - 0.5 * sigma * sigma * dt).exp()
}

/// Forward record of one batch, stored step-major: entry `(n, p)` lives at
/// `n * n_paths + p`.
#[derive(Debug, Clone)]
pub struct Tape {
    pub first_path: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    /// `(n_steps + 1) * n_paths` spots.
    pub states: Vec<f64>,
    pub normals: Vec<f64>,
    pub weights: Vec<BilinearWeights>,
    pub sigmas: Vec<f64>,
    pub floored: Vec<bool>,
}

impl Tape {
    #[inline]
    pub fn idx(&self, n: usize, p: usize) -> usize {
        n * self.n_paths + p
    }

    #[inline]
    pub fn state(&self, n: usize, p: usize) -> f64 {
        self.states[self.idx(n, p)]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.states[self.n_steps * self.n_paths..]
    }

    /// Checks that every buffer matches `(n_paths, n_steps)`.
    pub fn is_consistent(&self) -> bool {
        let cells = self.n_paths * self.n_steps;
        self.states.len() == cells + self.n_paths
            && self.normals.len() == cells
            && self.weights.len() == cells
            && self.sigmas.len() == cells
            && self.floored.len() == cells
    }
}

/// Where normals come from. Tests inject fixed draws; production uses the
/// counter-based generator.
pub(crate) trait NormalSource: Sync {
    fn draw(&self, path: usize, step: usize) -> f64;
}

pub(crate) struct KeyedNormals(pub RngKey);

impl NormalSource for KeyedNormals {
    #[inline]
    fn draw(&self, path: usize, step: usize) -> f64 {
        normal(self.0, path as u64, step as u64)
    }
}

/// Surface prepared for a run: rounded once when emulating bfloat16.
pub(crate) struct Prepared {
    surface: VolSurface,
    backend: Backend,
    precision: PrecisionMode,
}

impl Prepared {
    pub(crate) fn new(config: &SimConfig, surface: &VolSurface) -> Self {
        Self {
            surface: surface.rounded(config.precision),
            backend: config.interp_backend,
            precision: config.precision,
        }
    }

    pub(crate) fn interpolator(&self) -> Interpolator<'_> {
        Interpolator::new(&self.surface, self.backend, self.precision)
    }
}

pub(crate) fn simulate_batch_with(
    config: &SimConfig,
    interp: &Interpolator<'_>,
    normals: &dyn NormalSource,
    batch_index: usize,
    record_tape: bool,
) -> Result<(Vec<f64>, Option<Tape>), Error> {
    let range = config.batch_range(batch_index);
    let (first, b) = (range.start, range.len());
    let n_steps = config.n_steps;
    let dt = config.dt();
    let floor = config.floor();

    let mut xs = vec![config.s0; b];
    let mut sig = vec![0.0; b];
    let mut w = vec![BilinearWeights::default(); b];
    let mut tape = record_tape.then(|| Tape {
        first_path: first,
        n_paths: b,
        n_steps,
        states: Vec::with_capacity((n_steps + 1) * b),
        normals: Vec::with_capacity(n_steps * b),
        weights: Vec::with_capacity(n_steps * b),
        sigmas: Vec::with_capacity(n_steps * b),
        floored: Vec::with_capacity(n_steps * b),
    });

    for n in 0..n_steps {
        interp.eval_batch(&xs, config.step_time(n), &mut w, &mut sig)?;
        if let Some(t) = tape.as_mut() {
            t.states.extend_from_slice(&xs);
            t.weights.extend_from_slice(&w);
            t.sigmas.extend_from_slice(&sig);
        }
        for p in 0..b {
            let z = normals.draw(first + p, n);
            let (next, floored) = match config.scheme {
                Scheme::Euler => step_euler(xs[p], sig[p], z, dt, floor),
                Scheme::LogEuler => (step_logeuler(xs[p], sig[p], z, dt), false),
            };
            xs[p] = next;
            if let Some(t) = tape.as_mut() {
                t.normals.push(z);
                t.floored.push(floored);
            }
        }
    }
    if let Some(t) = tape.as_mut() {
        t.states.extend_from_slice(&xs);
    }
    Ok((xs, tape))
}

/// Simulates batch `batch_index` and returns its terminal spots, plus the
/// tape when `record_tape` is set.
pub fn simulate_batch(
    config: &SimConfig,
    surface: &VolSurface,
    batch_index: usize,
    record_tape: bool,
) -> Result<(Vec<f64>, Option<Tape>), Error> {
    config.validate()?;
    if batch_index >= config.n_batches() {
        return Err(Error::InvalidConfig(format!(
            "batch index {batch_index} out of range (n_batches = {})",
            config.n_batches()
        )));
    }
    let prepared = Prepared::new(config, surface);
    simulate_batch_with(
        config,
        &prepared.interpolator(),
        &KeyedNormals(config.key),
        batch_index,
        record_tape,
    )
}

/// Mean and standard error of `f(X_T)` over all paths.
pub fn estimate<F>(config: &SimConfig, surface: &VolSurface, f: F) -> Result<PriceEstimate, Error>
where
    F: Fn(f64) -> f64 + Sync,
{
    config.validate()?;
    let prepared = Prepared::new(config, surface);
    let interp = prepared.interpolator();
    let normals = KeyedNormals(config.key);
    let partials = (0..config.n_batches())
        .into_par_iter()
        .map(|b| {
            let (terminal, _) = simulate_batch_with(config, &interp, &normals, b, false)?;
            let mut acc = Welford::new();
            terminal.iter().for_each(|&x| acc.push(f(x)));
            Ok(acc)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(merge_in_order(&partials).into())
}

pub(crate) fn merge_in_order(parts: &[Welford]) -> Welford {
    parts.iter().fold(Welford::new(), |mut acc, w| {
        acc.merge(w);
        acc
    })
}

/// Monte Carlo price of `payoff` (zero rates, no discounting).
pub fn price(config: &SimConfig, surface: &VolSurface, payoff: &Payoff) -> Result<PriceEstimate, Error> {
    payoff.validate()?;
    estimate(config, surface, |x| payoff_value(payoff, x))
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Zero-rate, zero-dividend Black-Scholes call price.
pub fn black_scholes_call(s0: f64, k: f64, sigma: f64, t: f64) -> Result<f64, Error> {
    for (name, v) in [("s0", s0), ("k", k), ("sigma", sigma), ("t", t)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let vol_sqrt_t = sigma * t.sqrt();
    let d1 = ((s0 / k).ln() + 0.5 * sigma * sigma * t) / vol_sqrt_t;
    let d2 = d1 - vol_sqrt_t;
    Ok((s0 * norm_cdf(d1) - k * norm_cdf(d2)).max(0.0))
}

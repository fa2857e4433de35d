//! Local volatility grid and its differentiable bilinear interpolation.
//!
//! Two evaluation backends share one weight kernel:
//!
//! * **gather**: look up the four corner vols of each query's cell by index;
//! * **one-hot**: encode each query as a one-hot-scaled row and evaluate the
//!   batch as a matrix product against the vol grid.
//!
//! Because a simulation step queries every path at the same time `t`, the
//! one-hot product factors as `W_x · (V · w_t)`: the time encoding `w_t`
//! (two nonzeros) first contracts the grid to a column of `I` vols, then the
//! `B × I` spot one-hot block multiplies that column. Row `k` of the full
//! `B × (I·J)` matrix is the Kronecker product of its spot and time
//! encodings, so both forms give the same sums.

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::numerics::PrecisionMode;

/// Rows of the one-hot block materialised at once.
pub const ONEHOT_ROW_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error("{axis} axis is not strictly increasing at index {index}")]
    NonMonotonicAxis { axis: &'static str, index: usize },
    #[error("volatility at node ({i}, {j}) is negative or not finite: {value}")]
    NegativeVol { i: usize, j: usize, value: f64 },
    #[error("vol grid is {rows}x{cols}, axes require {expected_rows}x{expected_cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("surface needs at least 2 nodes per axis, got {spots}x{times}")]
    TooFewNodes { spots: usize, times: usize },
    #[error("non-finite interpolation query at index {index}: x={x}, t={t}")]
    NonFiniteQuery { index: usize, x: f64, t: f64 },
}

/// Discretised local volatility `sigma(x_i, t_j)` on a rectilinear grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolSurface {
    spots: Vec<f64>,
    times: Vec<f64>,
    vols: Array2<f64>,
    /// `1 / spacing` when the spot axis is uniform; speeds up cell lookup.
    spot_inv_step: Option<f64>,
}

/// Lower-left cell index plus the four tensor-product hat weights of a query.
///
/// Weight order is `(i, j)`, `(i+1, j)`, `(i, j+1)`, `(i+1, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BilinearWeights {
    pub cell: (u32, u32),
    pub w: [f64; 4],
    /// Derivative of each weight with respect to the query spot.
    pub dwdx: [f64; 4],
}

impl BilinearWeights {
    /// Grid coordinates of the four weighted nodes, in weight order.
    #[inline]
    pub fn nodes(&self) -> [(usize, usize); 4] {
        let (i, j) = (self.cell.0 as usize, self.cell.1 as usize);
        [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
    }
}

/// Position of a coordinate inside its axis cell.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AxisPos {
    cell: usize,
    frac: f64,
    /// `1 / (x_{i+1} - x_i)`, or 0 when the query was clamped.
    inv_width: f64,
}

/// Cell of `v` and its position inside it. Cells are half-open
/// `[a_k, a_{k+1})` except the last, which is closed; outside values clamp.
fn locate(axis: &[f64], v: f64) -> AxisPos {
    locate_hinted(axis, v, None)
}

/// As [`locate`], with an optional `1 / spacing` for uniform axes. The
/// guess is corrected against the nodes, so the result is identical.
#[inline]
fn locate_hinted(axis: &[f64], v: f64, inv_step: Option<f64>) -> AxisPos {
    let last = axis.len() - 1;
    if v <= axis[0] {
        let inv_width = if v == axis[0] { 1.0 / (axis[1] - axis[0]) } else { 0.0 };
        return AxisPos {
            cell: 0,
            frac: 0.0,
            inv_width,
        };
    }
    if v >= axis[last] {
        let inv_width = if v == axis[last] {
            1.0 / (axis[last] - axis[last - 1])
        } else {
            0.0
        };
        return AxisPos {
            cell: last - 1,
            frac: 1.0,
            inv_width,
        };
    }
    let cell = match inv_step {
        Some(inv) => {
            let mut k = (((v - axis[0]) * inv) as usize).min(last - 1);
            while k > 0 && axis[k] > v {
                k -= 1;
            }
            while k + 1 < last && axis[k + 1] <= v {
                k += 1;
            }
            k
        }
        // first index with axis[k] > v, so v lies in [axis[cell], axis[cell+1])
        None => axis.partition_point(|&a| a <= v) - 1,
    };
    let width = axis[cell + 1] - axis[cell];
    AxisPos {
        cell,
        frac: ((v - axis[cell]) / width).clamp(0.0, 1.0),
        inv_width: 1.0 / width,
    }
}

fn uniform_inv_step(axis: &[f64]) -> Option<f64> {
    let n = axis.len() - 1;
    let step = (axis[n] - axis[0]) / n as f64;
    let uniform = axis.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step);
    uniform.then(|| 1.0 / step)
}

fn check_axis(axis: &[f64], name: &'static str) -> Result<(), SurfaceError> {
    for (k, v) in axis.iter().enumerate() {
        if !v.is_finite() {
            return Err(SurfaceError::NonMonotonicAxis { axis: name, index: k });
        }
        if k > 0 && *v <= axis[k - 1] {
            return Err(SurfaceError::NonMonotonicAxis { axis: name, index: k });
        }
    }
    Ok(())
}

impl VolSurface {
    /// Validates and builds a surface. `vols[[i, j]]` is the vol at
    /// `(spots[i], times[j])`.
    pub fn new(spots: Vec<f64>, times: Vec<f64>, vols: Array2<f64>) -> Result<Self, SurfaceError> {
        if spots.len() < 2 || times.len() < 2 {
            return Err(SurfaceError::TooFewNodes {
                spots: spots.len(),
                times: times.len(),
            });
        }
        check_axis(&spots, "spot")?;
        check_axis(&times, "time")?;
        let (rows, cols) = vols.dim();
        if rows != spots.len() || cols != times.len() {
            return Err(SurfaceError::DimensionMismatch {
                rows,
                cols,
                expected_rows: spots.len(),
                expected_cols: times.len(),
            });
        }
        if let Some(((i, j), &value)) = vols.indexed_iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(SurfaceError::NegativeVol { i, j, value });
        }
        let vols = vols.as_standard_layout().into_owned();
        let spot_inv_step = uniform_inv_step(&spots);
        Ok(Self {
            spots,
            times,
            vols,
            spot_inv_step,
        })
    }

    /// Builds a surface from row vectors, one per spot level.
    pub fn from_rows(spots: Vec<f64>, times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self, SurfaceError> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
            return Err(SurfaceError::DimensionMismatch {
                rows: rows.len(),
                cols: bad.len(),
                expected_rows: spots.len(),
                expected_cols: times.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let vols = Array2::from_shape_vec((rows.len(), ncols), flat).expect("rectangular rows");
        Self::new(spots, times, vols)
    }

    /// Constant-vol surface on the given axes.
    pub fn flat(spots: Vec<f64>, times: Vec<f64>, vol: f64) -> Result<Self, SurfaceError> {
        let vols = Array2::from_elem((spots.len(), times.len()), vol);
        Self::new(spots, times, vols)
    }

    pub fn spots(&self) -> &[f64] {
        &self.spots
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn vols(&self) -> &Array2<f64> {
        &self.vols
    }

    /// `(I, J)`: number of spot and time nodes.
    pub fn dim(&self) -> (usize, usize) {
        self.vols.dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.vols.len()
    }

    #[inline]
    pub fn vol(&self, i: usize, j: usize) -> f64 {
        self.vols[[i, j]]
    }

    /// Copy with node `(i, j)` shifted by `shift`. The result skips the
    /// non-negativity check so central bumps around zero vols stay defined.
    pub fn with_node_shift(&self, i: usize, j: usize, shift: f64) -> Self {
        let mut out = self.clone();
        out.vols[[i, j]] += shift;
        out
    }

    /// Copy with every node shifted by `shift` (unchecked, as above).
    pub fn with_uniform_shift(&self, shift: f64) -> Self {
        let mut out = self.clone();
        out.vols.mapv_inplace(|v| v + shift);
        out
    }

    /// Copy with the vol grid rounded according to `precision`.
    pub fn rounded(&self, precision: PrecisionMode) -> Self {
        let mut out = self.clone();
        if precision != PrecisionMode::Full {
            out.vols.mapv_inplace(|v| precision.round(v));
        }
        out
    }

    /// Bilinear weights of the query `(x, t)`, clamped to the grid.
    pub fn weights(&self, x: f64, t: f64) -> Result<BilinearWeights, SurfaceError> {
        if !x.is_finite() || !t.is_finite() {
            return Err(SurfaceError::NonFiniteQuery { index: 0, x, t });
        }
        let tp = self.time_encoding(t, PrecisionMode::Full);
        Ok(self.weights_at(x, &tp, PrecisionMode::Full))
    }

    fn time_encoding(&self, t: f64, precision: PrecisionMode) -> TimeEncoding {
        let pos = locate(&self.times, t);
        TimeEncoding {
            cell: pos.cell,
            w: [precision.round(1.0 - pos.frac), precision.round(pos.frac)],
        }
    }

    #[inline]
    fn weights_at(&self, x: f64, te: &TimeEncoding, precision: PrecisionMode) -> BilinearWeights {
        let pos = locate_hinted(&self.spots, x, self.spot_inv_step);
        let inv_width = pos.inv_width;
        let wx = [precision.round(1.0 - pos.frac), precision.round(pos.frac)];
        let [wt0, wt1] = te.w;
        BilinearWeights {
            cell: (pos.cell as u32, te.cell as u32),
            w: [wx[0] * wt0, wx[1] * wt0, wx[0] * wt1, wx[1] * wt1],
            dwdx: [-inv_width * wt0, inv_width * wt0, -inv_width * wt1, inv_width * wt1],
        }
    }

    /// Weighted sum of the four node vols selected by `w`.
    #[inline]
    pub fn eval_weights(&self, w: &BilinearWeights) -> f64 {
        let [v00, v10, v01, v11] = self.corner_vols(w);
        w.w[0] * v00 + w.w[1] * v10 + w.w[2] * v01 + w.w[3] * v11
    }

    #[inline]
    fn corner_vols(&self, w: &BilinearWeights) -> [f64; 4] {
        let nj = self.times.len();
        let v = self.vols.as_slice().expect("standard layout");
        let base = w.cell.0 as usize * nj + w.cell.1 as usize;
        [v[base], v[base + nj], v[base + 1], v[base + nj + 1]]
    }

    /// Slope of the interpolant in `x` for the cell recorded in `w`.
    #[inline]
    pub fn eval_dwdx(&self, w: &BilinearWeights) -> f64 {
        let [v00, v10, v01, v11] = self.corner_vols(w);
        w.dwdx[0] * v00 + w.dwdx[1] * v10 + w.dwdx[2] * v01 + w.dwdx[3] * v11
    }

    /// Interpolated vols for a batch of spots at a common time, by index gather.
    pub fn interp_gather(&self, xs: &[f64], t: f64) -> Result<Vec<f64>, SurfaceError> {
        let interp = Interpolator::new(self, Backend::Gather, PrecisionMode::Full);
        let mut out = vec![0.0; xs.len()];
        let mut w = vec![BilinearWeights::default(); xs.len()];
        interp.eval_batch(xs, t, &mut w, &mut out)?;
        Ok(out)
    }

    /// Interpolated vols for a batch at a common time, as a one-hot matrix product.
    pub fn interp_onehot(&self, xs: &[f64], t: f64, precision: PrecisionMode) -> Result<Vec<f64>, SurfaceError> {
        let rounded;
        let surface = if precision == PrecisionMode::Full {
            self
        } else {
            rounded = self.rounded(precision);
            &rounded
        };
        let interp = Interpolator::new(surface, Backend::OneHot, precision);
        let mut out = vec![0.0; xs.len()];
        let mut w = vec![BilinearWeights::default(); xs.len()];
        interp.eval_batch(xs, t, &mut w, &mut out)?;
        Ok(out)
    }

    /// Derivative of the interpolated vol with respect to spot.
    pub fn dvol_dx(&self, x: f64, t: f64) -> Result<f64, SurfaceError> {
        let w = self.weights(x, t)?;
        Ok(self.eval_dwdx(&w))
    }
}

/// Parameters of the synthetic smile-with-term-structure surface
/// `sigma(x, t) = base + skew * ln(x / s0)^2 / (1 + t)`, clipped to
/// `[SMILE_MIN_VOL, SMILE_MAX_VOL]`, on a uniform grid over
/// `[s0 * lo, s0 * hi] x [0, maturity]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmileParams {
    pub n_spots: usize,
    pub n_times: usize,
    pub s0: f64,
    pub maturity: f64,
    pub lo: f64,
    pub hi: f64,
    pub base: f64,
    pub skew: f64,
}

pub const SMILE_MIN_VOL: f64 = 0.05;
pub const SMILE_MAX_VOL: f64 = 1.0;

impl Default for SmileParams {
    fn default() -> Self {
        Self {
            n_spots: 30,
            n_times: 60,
            s0: 100.0,
            maturity: 1.5,
            lo: 0.5,
            hi: 2.0,
            base: 0.2,
            skew: 0.5,
        }
    }
}

fn uniform_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + step * k as f64 })
        .collect()
}

impl VolSurface {
    /// Samples the synthetic smile described by `params`.
    pub fn synthetic(params: &SmileParams) -> Result<Self, SurfaceError> {
        let p = params;
        if p.n_spots < 2 || p.n_times < 2 {
            return Err(SurfaceError::TooFewNodes {
                spots: p.n_spots,
                times: p.n_times,
            });
        }
        let spots = uniform_axis(p.s0 * p.lo, p.s0 * p.hi, p.n_spots);
        let times = uniform_axis(0.0, p.maturity, p.n_times);
        let vols = Array2::from_shape_fn((p.n_spots, p.n_times), |(i, j)| {
            let m = (spots[i] / p.s0).ln();
            (p.base + p.skew * m * m / (1.0 + times[j])).clamp(SMILE_MIN_VOL, SMILE_MAX_VOL)
        });
        Self::new(spots, times, vols)
    }
}

/// Accumulates `upstream * w_k` onto the four nodes of `w`.
#[inline]
pub fn scatter_node_grads(w: &BilinearWeights, upstream: f64, grad: &mut Array2<f64>) {
    for (&(i, j), &wk) in w.nodes().iter().zip(w.w.iter()) {
        grad[[i, j]] += upstream * wk;
    }
}

/// Interpolation evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Gather,
    OneHot,
}

#[derive(Debug, Clone, Copy)]
struct TimeEncoding {
    cell: usize,
    w: [f64; 2],
}

/// Batch evaluator bound to a surface, backend and precision.
///
/// Under `Emulatedbf16` the caller passes a surface whose grid is already
/// rounded (see [`VolSurface::rounded`]); the evaluator rounds the weight
/// factors. The recorded weights are the ones actually used, so the adjoint
/// differentiates exactly what the forward pass computed.
#[derive(Debug, Clone, Copy)]
pub struct Interpolator<'a> {
    surface: &'a VolSurface,
    backend: Backend,
    precision: PrecisionMode,
}

impl<'a> Interpolator<'a> {
    pub fn new(surface: &'a VolSurface, backend: Backend, precision: PrecisionMode) -> Self {
        Self {
            surface,
            backend,
            precision,
        }
    }

    pub fn surface(&self) -> &'a VolSurface {
        self.surface
    }

    /// Fills `weights` and `out` for the spots `xs` at time `t`.
    pub fn eval_batch(
        &self,
        xs: &[f64],
        t: f64,
        weights: &mut [BilinearWeights],
        out: &mut [f64],
    ) -> Result<(), SurfaceError> {
        debug_assert_eq!(xs.len(), weights.len());
        debug_assert_eq!(xs.len(), out.len());
        if !t.is_finite() {
            return Err(SurfaceError::NonFiniteQuery {
                index: 0,
                x: xs.first().copied().unwrap_or(f64::NAN),
                t,
            });
        }
        if let Some(index) = xs.iter().position(|x| !x.is_finite()) {
            return Err(SurfaceError::NonFiniteQuery { index, x: xs[index], t });
        }
        let te = self.surface.time_encoding(t, self.precision);
        for (w, &x) in weights.iter_mut().zip(xs) {
            *w = self.surface.weights_at(x, &te, self.precision);
        }
        match self.backend {
            Backend::Gather => {
                for (o, w) in out.iter_mut().zip(weights.iter()) {
                    *o = self.surface.eval_weights(w);
                }
            }
            Backend::OneHot => self.onehot_product(xs, &te, out),
        }
        Ok(())
    }

    fn onehot_product(&self, xs: &[f64], te: &TimeEncoding, out: &mut [f64]) {
        let (n_spots, _) = self.surface.dim();
        let vols = &self.surface.vols;
        // time one-hot contracted against the grid: an I-vector of vols at t
        let column: Array1<f64> = &vols.column(te.cell) * te.w[0] + &vols.column(te.cell + 1) * te.w[1];
        let mut block = Array2::<f64>::zeros((ONEHOT_ROW_CHUNK, n_spots));
        for (xs_chunk, out_chunk) in xs.chunks(ONEHOT_ROW_CHUNK).zip(out.chunks_mut(ONEHOT_ROW_CHUNK)) {
            block.fill(0.0);
            for (r, &x) in xs_chunk.iter().enumerate() {
                let pos = locate_hinted(&self.surface.spots, x, self.surface.spot_inv_step);
                block[[r, pos.cell]] = self.precision.round(1.0 - pos.frac);
                block[[r, pos.cell + 1]] = self.precision.round(pos.frac);
            }
            let rows = block.slice(ndarray::s![..xs_chunk.len(), ..]);
            let prod = rows.dot(&column);
            out_chunk.copy_from_slice(prod.as_slice().expect("contiguous"));
        }
    }

    /// Slope in `x` of the interpolant, for a recorded weight set.
    #[inline]
    pub fn dvol_dx(&self, w: &BilinearWeights) -> f64 {
        self.surface.eval_dwdx(w)
    }
}

/// Flattened grid in row-major `(i, j)` order, as used by the dense one-hot product.
pub fn flatten_vols(surface: &VolSurface) -> ArrayView1<'_, f64> {
    surface
        .vols
        .view()
        .into_shape_with_order(surface.n_nodes())
        .expect("standard layout")
}

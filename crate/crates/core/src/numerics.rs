//! Precision emulation and mergeable statistical accumulators.

/// Arithmetic precision used for the interpolation matrix products.
///
/// `Emulatedbf16` rounds the matrix operands (interpolation weights and the
/// volatility grid) to bfloat16 and accumulates at `f64`. Element-wise work,
/// random numbers and payoffs always stay at full precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PrecisionMode {
    #[default]
    Full,
    Emulatedbf16,
}

impl PrecisionMode {
    /// Applies the operand rounding of this mode to `x`.
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            PrecisionMode::Full => x,
            PrecisionMode::Emulatedbf16 => round_bf16(x),
        }
    }
}

/// Smallest normal bfloat16 exponent (shared with `f32`).
const BF16_MIN_EXP: i32 = -126;
/// Explicit mantissa bits of bfloat16.
const BF16_MANTISSA_BITS: i32 = 7;
/// Largest finite bfloat16 value, `0x7F7F`.
const BF16_MAX: f64 = 3.389_531_389_251_535e38;

/// Rounds `x` to the nearest bfloat16 value (ties to even) and returns it
/// as an `f64`.
///
/// Rounding happens in a single step from `f64`, so there is no double
/// rounding through `f32`. Values beyond the bfloat16 range round to
/// infinity; tiny values land on the bfloat16 subnormal lattice.
/// Non-finite inputs are returned unchanged.
pub fn round_bf16(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let exp = floor_log2(x.abs()).max(BF16_MIN_EXP);
    let quantum = exp2i(exp - BF16_MANTISSA_BITS);
    // division and multiplication by a power of two are exact here
    let r = (x / quantum).round_ties_even() * quantum;
    if r.abs() > BF16_MAX {
        f64::INFINITY.copysign(x)
    } else {
        r
    }
}

/// Exact `floor(log2(|x|))` for finite nonzero `x`.
fn floor_log2(x: f64) -> i32 {
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // f64 subnormal
        let mant = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mant.leading_zeros() as i32)
    } else {
        biased - 1023
    }
}

fn exp2i(e: i32) -> f64 {
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// Running count / mean / sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Builds an accumulator from raw first and second moment sums.
    pub fn from_sums(count: u64, sum: f64, sum_sq: f64) -> Self {
        if count == 0 {
            return Self::default();
        }
        let mean = sum / count as f64;
        let m2 = (sum_sq - sum * mean).max(0.0);
        Self { count, mean, m2 }
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn merge(&mut self, other: &Welford) {
        *self = welford_merge(self, other);
    }
}

/// Combines two accumulators (Chan et al. pairwise update).
///
/// The result does not depend on argument order: the weighted mean is
/// formed symmetrically.
pub fn welford_merge(a: &Welford, b: &Welford) -> Welford {
    if a.count == 0 {
        return *b;
    }
    if b.count == 0 {
        return *a;
    }
    let count = a.count + b.count;
    let na = a.count as f64;
    let nb = b.count as f64;
    let n = count as f64;
    let delta = b.mean - a.mean;
    let mean = (na * a.mean + nb * b.mean) / n;
    let m2 = a.m2 + b.m2 + delta * delta * (na * nb / n);
    Welford { count, mean, m2 }
}

/// Neumaier-compensated summation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bf16_exact_values() {
        assert_eq!(round_bf16(1.0), 1.0);
        assert_eq!(round_bf16(-2.5), -2.5);
        assert_eq!(round_bf16(0.0), 0.0);
    }

    #[test]
    fn bf16_tie_goes_to_even() {
        // 1 + 2^-8 is halfway between 1.0 and 1.0078125
        assert_eq!(round_bf16(1.003_906_25), 1.0);
        // 1 + 3*2^-8 is halfway between 1.0078125 and 1.015625: even is the latter
        assert_eq!(round_bf16(1.011_718_75), 1.015_625);
    }

    #[test]
    fn bf16_of_point_two() {
        assert_eq!(round_bf16(0.2), 0.200_195_312_5);
    }

    #[test]
    fn bf16_matches_bit_truncation_oracle_on_f32_inputs() {
        // for values exactly representable in f32, bf16 RNE is the classic
        // "add 0x7FFF + lsb, then drop the low 16 bits" on the f32 pattern
        fn oracle(x: f32) -> f32 {
            let b = x.to_bits();
            let lsb = (b >> 16) & 1;
            f32::from_bits((b.wrapping_add(0x7fff + lsb)) & 0xffff_0000)
        }
        let mut s = 0x1234_5678u32;
        for _ in 0..100_000 {
            s ^= s << 13;
            s ^= s >> 17;
            s ^= s << 5;
            let x = f32::from_bits(s & 0x7f7f_ffff | (s & 0x8000_0000));
            if !x.is_finite() || x.abs() > 1e38 {
                continue;
            }
            assert_eq!(round_bf16(x as f64), oracle(x) as f64, "x = {x:e}");
        }
    }

    #[test]
    fn bf16_passes_non_finite() {
        assert!(round_bf16(f64::NAN).is_nan());
        assert_eq!(round_bf16(f64::INFINITY), f64::INFINITY);
        assert_eq!(round_bf16(1e300), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn bf16_idempotent_and_bounded(x in -1e30f64..1e30) {
            let r = round_bf16(x);
            prop_assert_eq!(round_bf16(r), r);
            if x.abs() > 1e-30 {
                prop_assert!((r - x).abs() <= x.abs() * 2f64.powi(-8));
            }
        }

        #[test]
        fn bf16_monotone(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(round_bf16(lo) <= round_bf16(hi));
        }

        #[test]
        fn welford_merge_matches_single_pass(
            xs in proptest::collection::vec(-1e3f64..1e3, 0..200),
            split in 0usize..200,
        ) {
            let split = split.min(xs.len());
            let mut all = Welford::new();
            xs.iter().for_each(|&x| all.push(x));
            let mut a = Welford::new();
            let mut b = Welford::new();
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            let m = welford_merge(&a, &b);
            prop_assert_eq!(m.count, all.count);
            let tol = |v: f64| 1e-12 * v.abs().max(1.0);
            prop_assert!((m.mean - all.mean).abs() <= tol(all.mean));
            prop_assert!((m.m2 - all.m2).abs() <= tol(all.m2) * 10.0);
        }
    }

    #[test]
    fn welford_merge_with_empty_is_identity() {
        let mut a = Welford::new();
        [1.0, 2.0, 4.0].iter().for_each(|&x| a.push(x));
        assert_eq!(welford_merge(&a, &Welford::new()), a);
        assert_eq!(welford_merge(&Welford::new(), &a), a);
    }

    #[test]
    fn welford_two_singletons() {
        let mut a = Welford::new();
        a.push(3.0);
        let mut b = Welford::new();
        b.push(5.0);
        let m = welford_merge(&a, &b);
        assert_eq!(m.mean, 4.0);
        assert_eq!(m.variance(), 2.0);
    }

    #[test]
    fn welford_merge_symmetric() {
        let mut a = Welford::new();
        let mut b = Welford::new();
        [0.1, 0.7, 1.3, 2.9].iter().for_each(|&x| a.push(x));
        [10.0, -4.2, 3.3].iter().for_each(|&x| b.push(x));
        let ab = welford_merge(&a, &b);
        let ba = welford_merge(&b, &a);
        assert!((ab.mean - ba.mean).abs() <= 1e-15 * ab.mean.abs());
        assert!((ab.m2 - ba.m2).abs() <= 1e-15 * ab.m2.abs());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}

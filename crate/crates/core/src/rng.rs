//! Counter-based normal draws indexed by `(seed, path, step)`.
//!
//! Every draw is a pure function of its coordinates: a Philox4x32-10 block
//! (Salmon et al., "Parallel Random Numbers: As Easy as 1, 2, 3", SC'11)
//! keyed by the seed, with counter words `[path, step, salt_lo, salt_hi]`.
//! The first two output words form a 64-bit integer `w`, mapped to the open
//! unit interval as `((w >> 12) + 0.5) * 2^-52`: every value is exact in
//! `f64` and lies in `[2^-53, 1 - 2^-53]`. Normals come from the
//! inverse normal CDF (Wichura's AS241), so one counter yields exactly one
//! normal and bump runs see the same draw at the same `(path, step)`.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Key of a random stream family.
///
/// `stream_salt` separates independent uses of the same seed. Bump runs
/// reuse the pricing key unchanged so that they see common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngKey {
    pub seed: u64,
    pub stream_salt: u64,
}

impl RngKey {
    pub fn new(seed: u64, stream_salt: u64) -> Self {
        Self { seed, stream_salt }
    }

    #[inline]
    fn block(&self, path: u32, step: u32) -> [u32; 4] {
        philox4x32_10(
            [path, step, self.stream_salt as u32, (self.stream_salt >> 32) as u32],
            [self.seed as u32, (self.seed >> 32) as u32],
        )
    }
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

#[inline(always)]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// The Philox4x32 block function with 10 rounds.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// Maps a 64-bit word into (0, 1); never returns 0 or 1.
#[inline]
pub fn word_to_open_unit(w: u64) -> f64 {
    // (w >> 11) + 0.5 would need 54 bits at the top and round to 1.0
    ((w >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Uniform draw in (0, 1) at `(path, step)`.
///
/// # Panics
///
/// If `path` or `step` does not fit in 32 bits.
#[inline]
pub fn uniform(key: RngKey, path: u64, step: u64) -> f64 {
    let path = u32::try_from(path).expect("path index exceeds 2^32");
    let step = u32::try_from(step).expect("step index exceeds 2^32");
    let b = key.block(path, step);
    word_to_open_unit(((b[0] as u64) << 32) | b[1] as u64)
}

/// Standard normal draw at `(path, step)`.
#[inline]
pub fn normal(key: RngKey, path: u64, step: u64) -> f64 {
    inverse_normal_cdf(uniform(key, path, step))
}

/// Inverse of the standard normal CDF (Wichura 1988, AS241 / PPND16).
///
/// Relative accuracy is about 1e-16 over the open unit interval. Returns
/// `-inf`/`+inf` at 0 and 1 and NaN outside `[0, 1]`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&AS241_A, r) / poly(&AS241_B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&AS241_C, r) / poly(&AS241_D, r)
    } else {
        r -= 5.0;
        poly(&AS241_E, r) / poly(&AS241_F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_5,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const AS241_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_545e3,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const AS241_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const AS241_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

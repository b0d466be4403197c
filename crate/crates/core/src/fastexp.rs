//! Exponent-field approximation of `e^x` (Schraudolph 1999).
//!
//! `e^x = 2^(x / ln 2)`; writing `x / ln 2` scaled by `2^23` straight into the
//! bits of an IEEE-754 single puts the integer part in the exponent field and
//! a linear interpolant of `2^f` in the mantissa. The additive shift balances
//! the interpolation error around zero, giving a maximum relative error of
//! about 3% over the supported range.

/// Below this the approximation returns exactly 0.
pub const UNDERFLOW_CUTOFF: f64 = -30.0;

const SCALE: f64 = 8_388_608.0 / std::f64::consts::LN_2;
const BIAS: f64 = 1_065_353_216.0 - 366_393.0;

/// Fast approximation of `e^x` for `x <= 0`.
#[inline]
pub fn fast_exp(x: f64) -> f64 {
    if x < UNDERFLOW_CUTOFF {
        return 0.0;
    }
    if x > 0.0 {
        return x.exp();
    }
    let bits = (SCALE * x + BIAS) as u32;
    f32::from_bits(bits) as f64
}

/// Which exponential the probability code evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpMode {
    #[default]
    Fast,
    Exact,
}

impl ExpMode {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ExpMode::Fast => fast_exp(x),
            ExpMode::Exact => x.exp(),
        }
    }
}

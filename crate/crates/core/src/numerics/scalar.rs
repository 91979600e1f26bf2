use crate::error::{Error, Result};
use crate::numerics::Real;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Checked sigmoid: rejects non-finite input.
pub fn try_sigmoid<T: Real>(x: T) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::NumericDomain(format!("sigmoid of non-finite {x}")));
    }
    Ok(sigmoid(x))
}

/// `S'(x) = S(x)(1 - S(x))`.
#[inline]
pub fn sigmoid_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() - s)
}

/// `ln(1 + e^x)`; its derivative is `sigmoid(x)`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse<T: Real>(y: T) -> T {
    // y + ln(1 - e^{-y})
    y + (-(-y).exp_m1()).ln()
}

/// `ln(p / (1 - p))`.
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

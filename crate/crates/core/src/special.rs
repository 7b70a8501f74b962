//! Exponential integral and the small-β variance constant.

use std::sync::OnceLock;

use crate::quadrature::{integrate, integrate_to_infinity, QuadratureConfig};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Switch point between the power series and the continued fraction.
pub const E1_SWITCH: f64 = 1.5;

/// `E₁(x) = -γ - ln x + Σ_{k≥1} (-1)^{k+1} x^k / (k k!)`.
pub fn e1_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -x / kf;
        let add = -term / kf;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    -EULER_GAMMA - x.ln() + sum
}

/// `E₁(x) = e^{-x} / (x + 1 - 1/(x + 3 - 4/(x + 5 - …)))`, modified Lentz.
pub fn e1_continued_fraction(x: f64) -> f64 {
    lentz_scaled(x) * (-x).exp()
}

fn lentz_scaled(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Exponential integral `E₁(x) = ∫_x^∞ e^{-u}/u du` for `x > 0`.
pub fn e1(x: f64) -> f64 {
    if !(x > 0.0) {
        return if x == 0.0 { f64::INFINITY } else { f64::NAN };
    }
    if x <= E1_SWITCH {
        e1_series(x)
    } else {
        e1_continued_fraction(x)
    }
}

/// `e^x E₁(x)`, accurate for large `x` where `E₁` underflows.
pub fn scaled_e1(x: f64) -> f64 {
    if x <= E1_SWITCH {
        x.exp() * e1_series(x)
    } else {
        lentz_scaled(x)
    }
}

/// `∫_0^∞ E₁(x)² e^x dx` (equal to π²/6).
pub fn e1_square_moment() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| {
        let cfg = QuadratureConfig::with_tolerances(1e-14, 1e-14);
        // E₁(x)² e^x = (e^x E₁(x))² e^{-x}
        let integrand = |x: f64| {
            let s = scaled_e1(x);
            s * s * (-x).exp()
        };
        let head = integrate(integrand, 0.0, 1.0, &cfg).expect("valid config").value;
        let tail = integrate_to_infinity(integrand, 1.0, 1.0, &cfg).expect("valid config").value;
        head + tail
    })
}

/// Constant `A` of the small-β law `Σ_β² ~ A / log(1/β)` for the DH diffusion
/// in one dimension.
///
/// Equal to twice [`e1_square_moment`]: `K_β → 2 ∫E₁²eˣ` while
/// `J_β ~ log(1/β)` (not `2 log(1/β)`).
pub fn constant_a() -> f64 {
    2.0 * e1_square_moment()
}

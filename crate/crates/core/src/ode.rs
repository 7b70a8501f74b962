//! Explicit Dormand–Prince 5(4) integrator with step-size control.
//!
//! Used for continuing the homogeneous solutions past the range of their
//! fixed-point construction and for tabulating the `I_β` integral backward.
//! Integration runs node to node so the caller receives values exactly on its
//! grid; the internal step adapts between nodes.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeTolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for OdeTolerance {
    fn default() -> Self {
        Self { rel: 1e-12, abs: 1e-14 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrate `y' = rhs(t, y)` from `t0` through every point of `targets`
/// (monotone in either direction) and return the state at each target.
pub fn integrate_through<const N: usize, F>(
    rhs: F,
    t0: f64,
    y0: [f64; N],
    targets: &[f64],
    tol: OdeTolerance,
) -> Result<Vec<[f64; N]>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut out = Vec::with_capacity(targets.len());
    let mut t = t0;
    let mut y = y0;
    let mut h_prev: Option<f64> = None;
    for &target in targets {
        let span = target - t;
        if span == 0.0 {
            out.push(y);
            continue;
        }
        let dir = span.signum();
        let mut h = h_prev.unwrap_or(span.abs()).min(span.abs()) * dir;
        let mut k1 = rhs(t, &y);
        let mut steps = 0usize;
        while (target - t) * dir > 0.0 {
            // Stretch a step that would leave a sliver before the target.
            let hits = (t + 1.01 * h - target) * dir >= 0.0;
            let h_try = if hits { target - t } else { h };
            let k2 = rhs(t + C2 * h_try, &axpy(&y, &[(A21, &k1)], h_try));
            let k3 = rhs(t + C3 * h_try, &axpy(&y, &[(A31, &k1), (A32, &k2)], h_try));
            let k4 = rhs(t + C4 * h_try, &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h_try));
            let k5 = rhs(t + C5 * h_try, &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h_try));
            let k6 = rhs(t + h_try, &axpy(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h_try));
            let y_new = axpy(&y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h_try);
            let k7 = rhs(t + h_try, &y_new);
            let mut err = 0.0f64;
            for i in 0..N {
                let e = h_try * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                return Err(Error::NonConvergent(format!("ODE state became non-finite near t = {t}")));
            }
            if err <= 1.0 {
                t = if hits { target } else { t + h_try };
                y = y_new;
                k1 = k7;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = h_try.abs().max(h.abs()) * factor * dir;
                h_prev = Some(h.abs());
            } else {
                h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h.abs() < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::NonConvergent(format!("ODE step size collapsed near t = {t}")));
                }
            }
            steps += 1;
            if steps > 1_000_000 {
                return Err(Error::NonConvergent(format!("ODE needed too many steps near t = {t}")));
            }
        }
        t = target;
        out.push(y);
    }
    Ok(out)
}

//! The limiting variance Σ_β² of `x_t / √t` per coordinate.
//!
//! Two general routes work from a tabulated ψ_β:
//!
//! ```text
//! prop2:   Σ² = ∫ ψ e^{−βG} μ^{d−1} h  /  ( d ∫ e^{−βG} μ^{d−1} σ^{−2} )
//! lemma2:  Σ² = ∫ (ψ'² + (d−1) c ψ² / r²) e^{−βG} μ^{d−1}  /  ( βd ∫ e^{−βG} μ^{d−1} σ^{−2} )
//! ```
//!
//! For the one-dimensional DH diffusion `Σ² = K / J` with
//! `J = ∫ e^{−βG}/√(1+z²)`, `K = 2β ∫ I² e^{βG}`, `I(x) = ∫_x^∞ y e^{−βG(y)}/(1+y²) dy`.

use serde::Serialize;

use crate::coefficients::{lorentz_excess, DerivedCoefficients};
use crate::error::{invalid, Error, Result};
use crate::interp::hermite;
use crate::ode::{integrate_through, OdeTolerance};
use crate::psi::PsiSolution;
use crate::quadrature::{integrate, integrate_to_infinity, QuadratureConfig};
use crate::special::constant_a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Prop2,
    Lemma2,
    DhD1,
    AsymptoticLargeBeta,
    AsymptoticSmallBeta,
}

impl VarianceMethod {
    pub fn label(self) -> &'static str {
        match self {
            Self::Prop2 => "prop2",
            Self::Lemma2 => "lemma2",
            Self::DhD1 => "dh_d1",
            Self::AsymptoticLargeBeta => "asymptotic_large_beta",
            Self::AsymptoticSmallBeta => "asymptotic_small_beta",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceResult {
    pub sigma2: f64,
    pub method: VarianceMethod,
    /// Absolute error estimate; zero for the asymptotic formulas, which carry
    /// no estimate.
    pub error_estimate: f64,
    pub beta: f64,
    pub d: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Large,
    Small,
}

fn panel_cfg() -> QuadratureConfig {
    QuadratureConfig::with_tolerances(1e-300, 1e-12)
}

/// `∫_0^∞ f` split on the ψ grid: one adaptive rule per panel, then the tail.
fn grid_integral(nodes: &[f64], f: impl Fn(f64) -> f64, tail_rate: f64) -> Result<(f64, f64, f64)> {
    let cfg = panel_cfg();
    let mut value = 0.0;
    let mut err = 0.0;
    let mut a = 0.0;
    for &b in nodes {
        let v = integrate(&f, a, b, &cfg)?;
        value += v.value;
        err += v.error_estimate;
        a = b;
    }
    let tail = integrate_to_infinity(&f, a, tail_rate, &cfg)?;
    if !tail.value.is_finite() {
        return Err(Error::NonConvergent(format!("tail beyond r = {a} is not finite")));
    }
    Ok((value + tail.value, err + tail.error_estimate, tail.value))
}

fn check_pair(dc: &DerivedCoefficients, psi: &PsiSolution) -> Result<()> {
    if psi.beta != dc.beta() || psi.d != dc.d() {
        return Err(Error::Incompatible(format!(
            "psi was computed for beta = {}, d = {} but the model has beta = {}, d = {}",
            psi.beta,
            psi.d,
            dc.beta(),
            dc.d()
        )));
    }
    Ok(())
}

/// `∫ e^{−βG} μ^{d−1} σ^{−2}` on the same panels as the numerator.
fn denominator(dc: &DerivedCoefficients, psi: &PsiSolution) -> Result<(f64, f64)> {
    let (v, e, _) = grid_integral(psi.nodes(), |r| dc.nu(r), dc.envelope_rate())?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::NonNormalizable(format!("normalizing integral is {v}")));
    }
    Ok((v, e))
}

/// Relative size of the ψ error implied by its residual: `δ ≈ res · r / (βε)`
/// integrated against the same weights, used as a heuristic.
fn residual_share(dc: &DerivedCoefficients, psi: &PsiSolution) -> f64 {
    let s = dc.spec();
    psi.residual_sup / (s.beta * s.epsilon).max(1e-300) / psi.nodes().len().max(1) as f64
}

/// Σ² from the integral against `h`.
pub fn sigma2_prop2(dc: &DerivedCoefficients, psi: &PsiSolution) -> Result<VarianceResult> {
    check_pair(dc, psi)?;
    let d = dc.d();
    let (den, den_err) = denominator(dc, psi)?;
    let (num, num_err, tail) =
        grid_integral(psi.nodes(), |r| psi.eval(r) * dc.weight(r) * dc.h(r), dc.envelope_rate())?;
    let sigma2 = num / (d as f64 * den);
    let rel = num_err / num.abs().max(1e-300) + den_err / den + 0.1 * (tail / num).abs() + residual_share(dc, psi);
    Ok(VarianceResult {
        sigma2: sigma2.max(0.0),
        method: VarianceMethod::Prop2,
        error_estimate: if num == 0.0 { num_err / den } else { sigma2.abs() * rel },
        beta: dc.beta(),
        d,
    })
}

/// Σ² from the bracket formula, `(βd)^{−1} π(σ²|ψ'|² + (d−1) σ² c ψ²/r²)`.
pub fn sigma2_lemma2(dc: &DerivedCoefficients, psi: &PsiSolution) -> Result<VarianceResult> {
    check_pair(dc, psi)?;
    let d = dc.d();
    let dm1 = d as f64 - 1.0;
    let (den, den_err) = denominator(dc, psi)?;
    let integrand = |r: f64| {
        let p = psi.eval(r);
        let dp = psi.eval_prime(r);
        let radial = if d == 1 { 0.0 } else { dm1 * dc.eta_factor(r) * (p / r) * (p / r) };
        (dp * dp + radial) * dc.weight(r)
    };
    let (num, num_err, tail) = grid_integral(psi.nodes(), integrand, dc.envelope_rate())?;
    let beta = dc.beta();
    let sigma2 = num / (beta * d as f64 * den);
    let rel =
        num_err / num.abs().max(1e-300) + den_err / den + 0.1 * (tail / num).abs() + 2.0 * residual_share(dc, psi);
    Ok(VarianceResult {
        sigma2,
        method: VarianceMethod::Lemma2,
        error_estimate: if num == 0.0 { num_err / (beta * den) } else { sigma2 * rel },
        beta,
        d,
    })
}

/// Radii for the `I_β` table: fine near the origin, geometric in the bulk and
/// never coarser than a quarter of the local decay length of `e^{−βG}`.
fn dh_nodes(beta: f64) -> Vec<f64> {
    // βG(X) = 46, so e^{−βG} < 1e-20 beyond X
    let gx = 46.0 / beta;
    let x_end = ((1.0 + gx) * (1.0 + gx) - 1.0).sqrt();
    let floor = 1e-3 * beta.sqrt().recip().min(1.0);
    let mut nodes = vec![0.0];
    let mut x = 0.0f64;
    while x < x_end {
        let g = x / (1.0 + x * x).sqrt();
        let step = (0.05 * x).max(floor).min(0.25 / (beta * g).max(1e-300));
        x = (x + step).min(x_end);
        nodes.push(x);
    }
    nodes
}

/// Σ² for the one-dimensional DH diffusion from the `I, J, K` integrals.
pub fn sigma2_dh_d1(beta: f64) -> Result<VarianceResult> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    let big_g = lorentz_excess;
    let g = |x: f64| x / (1.0 + x * x).sqrt();
    let src = |x: f64| x / (1.0 + x * x);
    let nodes = dh_nodes(beta);
    let n = nodes.len();
    let x_end = nodes[n - 1];
    let cfg = panel_cfg();

    // Ĩ = I e^{βG} satisfies Ĩ' = βgĨ − x/(1+x²); integrate backward from X.
    let g_end = big_g(x_end);
    let tail_i =
        integrate_to_infinity(|y| src(y) * (-beta * (big_g(y) - g_end)).exp(), x_end, 0.5 * beta * g(x_end), &cfg)?;
    let mids: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut targets = Vec::with_capacity(2 * n);
    for i in (0..n - 1).rev() {
        targets.push(mids[i]);
        targets.push(nodes[i]);
    }
    let rhs = |x: f64, y: &[f64; 1]| [beta * g(x) * y[0] - src(x)];
    let states = integrate_through(rhs, x_end, [tail_i.value], &targets, OdeTolerance::default())?;
    let mut it = vec![0.0; n];
    let mut mid_vals = vec![0.0; n - 1];
    it[n - 1] = tail_i.value;
    for (k, i) in (0..n - 1).rev().enumerate() {
        mid_vals[i] = states[2 * k][0];
        it[i] = states[2 * k + 1][0];
    }
    let slope: Vec<f64> = (0..n).map(|i| beta * g(nodes[i]) * it[i] - src(nodes[i])).collect();
    let interp = |i: usize, x: f64| hermite(nodes[i], nodes[i + 1], it[i], it[i + 1], slope[i], slope[i + 1], x);

    // Interpolation error seen at panel midpoints.
    let interp_rel = (0..n - 1).map(|i| ((interp(i, mids[i]) - mid_vals[i]) / mid_vals[i]).abs()).fold(0.0, f64::max);

    let mut k_val = 0.0;
    let mut k_err = 0.0;
    let mut j_val = 0.0;
    let mut j_err = 0.0;
    for i in 0..n - 1 {
        let (a, b) = (nodes[i], nodes[i + 1]);
        let kv = integrate(
            |x| {
                let v = interp(i, x);
                v * v * (-beta * big_g(x)).exp()
            },
            a,
            b,
            &cfg,
        )?;
        k_val += kv.value;
        k_err += kv.error_estimate;
        let jv = integrate(|z| (-beta * big_g(z)).exp() / (1.0 + z * z).sqrt(), a, b, &cfg)?;
        j_val += jv.value;
        j_err += jv.error_estimate;
    }
    let j_tail =
        integrate_to_infinity(|z| (-beta * big_g(z)).exp() / (1.0 + z * z).sqrt(), x_end, 0.5 * beta * g(x_end), &cfg)?;
    j_val += j_tail.value;
    j_err += j_tail.error_estimate;
    // Ĩ is nonincreasing beyond X, so the K tail is at most Ĩ(X)² ∫_X^∞ e^{−βG}.
    let k_tail_bound = it[n - 1] * it[n - 1] * (-beta * g_end).exp() / (beta * g(x_end));
    k_val *= 2.0 * beta;
    k_err = 2.0 * beta * (k_err + k_tail_bound)
        + 2.0 * interp_rel * k_val
        + 2.0 * tail_i.error_estimate.abs() / it[n - 1].max(1e-300) * 2.0 * beta * k_tail_bound;
    let sigma2 = k_val / j_val;
    Ok(VarianceResult {
        sigma2,
        method: VarianceMethod::DhD1,
        error_estimate: sigma2 * (k_err / k_val + j_err / j_val),
        beta,
        d: 1,
    })
}

/// Leading-order forms: `2/β` for large β and `A / log(1/β)` for small β.
pub fn sigma2_asymptotic(beta: f64, regime: Regime) -> Result<VarianceResult> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    let (sigma2, method) = match regime {
        Regime::Large => (2.0 / beta, VarianceMethod::AsymptoticLargeBeta),
        Regime::Small => {
            if beta >= 1.0 {
                return Err(invalid(format!("small-beta asymptote needs beta < 1, got {beta}")));
            }
            (constant_a() / (1.0 / beta).ln(), VarianceMethod::AsymptoticSmallBeta)
        }
    };
    Ok(VarianceResult { sigma2, method, error_estimate: 0.0, beta, d: 1 })
}

/// The `2/(2+β)` guess that the small-β behaviour refutes.
pub fn conjecture_2_over_2_plus_beta(beta: f64) -> f64 {
    2.0 / (2.0 + beta)
}

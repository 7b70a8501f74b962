//! The auxiliary function ψ_β: the solution vanishing at the origin of
//!
//! ```text
//! ψ'' − (β g − (d−1) c / r) ψ' − (d−1) c ψ / r² + β h = 0,    c = 1 / (1 + η²)
//! ```
//!
//! For `d = 1` the solution has the closed form
//! `ψ'(r) = β e^{βG(r)} ∫_r^∞ e^{−βG} h`. In general it is built by variation of
//! constants from two homogeneous solutions: `ζ₁`, bounded at infinity, and
//! `ζ₂ = r φ̃`, regular at the origin.
//!
//! `ζ₂` grows like `e^{βG}`, so it is stored scaled by `e^{−βG}`; every
//! integral against `e^{−βG}` is evaluated as a discounted recursion between
//! grid nodes so nothing overflows even for large `β`.

use serde::Serialize;

use crate::coefficients::DerivedCoefficients;
use crate::error::{invalid, Error, Result};
use crate::interp::hermite;
use crate::ode::{integrate_through, OdeTolerance};
use crate::quadrature::{integrate, integrate_to_infinity, QuadratureConfig, GL8_W, GL8_X};

pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-4;
pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 50;
pub const MAX_CONTRACTION_ATTEMPTS: usize = 10;
pub const WRONSKIAN_SPREAD_LIMIT: f64 = 1e-2;

const FIRST_NODE: f64 = 1e-3;
const GEOMETRIC_RATIO: f64 = 0.0353;
const MAX_NODES: usize = 200_000;

/// Strictly increasing positive radii, geometric near the origin and
/// uniform beyond `r = 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialGrid {
    nodes: Vec<f64>,
}

impl RadialGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 200 {
            return Err(invalid(format!("radial grid needs at least 200 nodes, got {}", nodes.len())));
        }
        if !(nodes[0] > 0.0 && nodes[0] <= FIRST_NODE) {
            return Err(invalid(format!("first grid node must lie in (0, 1e-3], got {}", nodes[0])));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(invalid("grid nodes must be finite and strictly increasing"));
        }
        Ok(Self { nodes })
    }

    /// `max(40/β, 40/(βε))` clamped to `[20, 200]`.
    pub fn default_r_max(beta: f64, epsilon: f64) -> f64 {
        (40.0 / beta).max(40.0 / (beta * epsilon)).clamp(20.0, 200.0)
    }

    pub fn for_model(dc: &DerivedCoefficients) -> Result<Self> {
        let s = dc.spec();
        Self::with_r_max(s.beta, Self::default_r_max(s.beta, s.epsilon))
    }

    /// Default layout up to `r_max`: step `min(0.02, 0.2/β)` away from the origin.
    pub fn with_r_max(beta: f64, r_max: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        if !(r_max > 2.0) || !r_max.is_finite() {
            return Err(invalid(format!("r_max must exceed 2, got {r_max}")));
        }
        let mut h = 0.02f64.min(0.2 / beta);
        if (r_max / h) as usize > MAX_NODES {
            h = r_max / MAX_NODES as f64;
        }
        let mut nodes = vec![FIRST_NODE];
        let mut x = FIRST_NODE;
        loop {
            let next = x + (GEOMETRIC_RATIO * x).min(h);
            if next >= 1.0 - 1e-12 {
                break;
            }
            nodes.push(next);
            x = next;
        }
        let n = ((r_max - 1.0) / h).ceil() as usize;
        let step = (r_max - 1.0) / n as f64;
        for i in 0..=n {
            nodes.push(1.0 + step * i as f64);
        }
        *nodes.last_mut().unwrap() = r_max;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn r_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
    pub fn first(&self) -> f64 {
        self.nodes[0]
    }
    pub fn index_at_or_below(&self, r: f64) -> usize {
        self.nodes.partition_point(|&x| x <= r).saturating_sub(1)
    }
    pub fn index_at_or_above(&self, r: f64) -> usize {
        self.nodes.partition_point(|&x| x < r).min(self.nodes.len() - 1)
    }
}

/// Coefficients sampled at the grid nodes and at eight Gauss–Legendre points
/// per panel. Panel 0 is `[0, x_0]`, panel `j + 1` is `[x_j, x_{j+1}]`.
struct Layout {
    beta: f64,
    d: usize,
    x: Vec<f64>,
    big_g: Vec<f64>,
    log_m: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    ps: Vec<f64>,
    pw: Vec<f64>,
    p_big_g: Vec<f64>,
    p_log_m: Vec<f64>,
    p_g: Vec<f64>,
    p_c: Vec<f64>,
    p_h: Vec<f64>,
}

impl Layout {
    fn new(dc: &DerivedCoefficients, grid: &RadialGrid) -> Self {
        let d = dc.d();
        let lm = |r: f64| if d == 1 { 0.0 } else { (d as f64 - 1.0) * dc.log_mu(r) };
        let x = grid.nodes().to_vec();
        let n = x.len();
        let mut ps = Vec::with_capacity(8 * n);
        let mut pw = Vec::with_capacity(8 * n);
        for p in 0..n {
            let (a, b) = if p == 0 { (0.0, x[0]) } else { (x[p - 1], x[p]) };
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for k in 0..8 {
                ps.push(mid + half * GL8_X[k]);
                pw.push(half * GL8_W[k]);
            }
        }
        Self {
            beta: dc.beta(),
            d,
            big_g: x.iter().map(|&r| dc.big_g(r)).collect(),
            log_m: x.iter().map(|&r| lm(r)).collect(),
            g: x.iter().map(|&r| dc.g(r)).collect(),
            c: x.iter().map(|&r| dc.eta_factor(r)).collect(),
            h: x.iter().map(|&r| dc.h(r)).collect(),
            p_big_g: ps.iter().map(|&r| dc.big_g(r)).collect(),
            p_log_m: ps.iter().map(|&r| lm(r)).collect(),
            p_g: ps.iter().map(|&r| dc.g(r)).collect(),
            p_c: ps.iter().map(|&r| dc.eta_factor(r)).collect(),
            p_h: ps.iter().map(|&r| dc.h(r)).collect(),
            x,
            ps,
            pw,
        }
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn dm1(&self) -> f64 {
        self.d as f64 - 1.0
    }

    /// Hermite interpolation of a node table at point `k` of panel `j + 1`.
    #[inline]
    fn interp(&self, j: usize, k: usize, v: &[f64], dv: &[f64]) -> f64 {
        hermite(self.x[j], self.x[j + 1], v[j], v[j + 1], dv[j], dv[j + 1], self.ps[8 * (j + 1) + k])
    }
}

/// `∫_a^b` of the Hermite cubic through `(a, y0, d0)` and `(b, y1, d1)`.
#[inline]
fn hermite_integral(a: f64, b: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let h = b - a;
    h * (y0 + y1) / 2.0 + h * h * (d0 - d1) / 12.0
}

/// Second-order first derivative on a nonuniform stencil.
fn fd_derivative(x: &[f64], y: &[f64], i: usize) -> f64 {
    let h1 = x[i] - x[i - 1];
    let h2 = x[i + 1] - x[i];
    -h2 / (h1 * (h1 + h2)) * y[i - 1] + (h2 - h1) / (h1 * h2) * y[i] + h1 / (h2 * (h1 + h2)) * y[i + 1]
}

/// Homogeneous solution bounded at infinity, `ζ₁ → 1`.
#[derive(Clone, Debug, Serialize)]
pub struct Zeta1 {
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
    /// Left end of the fixed-point domain.
    pub r0: f64,
    pub r0_index: usize,
    /// `(d−1) λ(r₀)`.
    pub contraction_bound: f64,
    pub fixed_point_iterations: usize,
    pub fixed_point_residual: f64,
    /// Sup-norm differences of successive iterates.
    pub history: Vec<f64>,
    /// Fixed-point table on nodes `r0_index..`; the reported `values` come
    /// from continuing it as an initial-value problem.
    pub fixed_point_values: Vec<f64>,
}

/// Homogeneous solution regular at the origin, `ζ₂ = r φ̃`, stored as
/// `ζ₂ e^{−βG}` and `ζ₂' e^{−βG}`.
#[derive(Clone, Debug, Serialize)]
pub struct Zeta2 {
    pub scaled: Vec<f64>,
    pub scaled_prime: Vec<f64>,
    /// Right end of the fixed-point domain.
    pub r1: f64,
    pub r1_index: usize,
    /// `Λ(r₁)`.
    pub contraction_bound: f64,
    pub fixed_point_iterations: usize,
    pub fixed_point_residual: f64,
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HomogeneousPair {
    pub grid: RadialGrid,
    pub beta: f64,
    pub d: usize,
    pub zeta1: Zeta1,
    pub zeta2: Zeta2,
    pub a_beta: f64,
    pub wronskian_spread: f64,
    pub fixed_point_iterations: usize,
    pub fixed_point_residual: f64,
    big_g: Vec<f64>,
    log_m: Vec<f64>,
}

impl HomogeneousPair {
    /// `ζ₂` at node `j` (overflows to infinity for large `βG`).
    pub fn zeta2(&self, j: usize) -> f64 {
        self.zeta2.scaled[j] * (self.beta * self.big_g[j]).exp()
    }
    pub fn zeta2_prime(&self, j: usize) -> f64 {
        self.zeta2.scaled_prime[j] * (self.beta * self.big_g[j]).exp()
    }
    /// `φ̃ = ζ₂ / r` at node `j`.
    pub fn phi_tilde(&self, j: usize) -> f64 {
        self.zeta2(j) / self.grid.nodes()[j]
    }
    /// `(ζ₁ζ₂' − ζ₁'ζ₂) μ^{d−1} e^{−βG}` at each node.
    pub fn wronskian_profile(&self) -> Vec<f64> {
        wronskian_profile(&self.zeta1, &self.zeta2, &self.log_m)
    }
}

fn wronskian_profile(z1: &Zeta1, z2: &Zeta2, log_m: &[f64]) -> Vec<f64> {
    (0..z1.values.len())
        .map(|j| (z1.values[j] * z2.scaled_prime[j] - z1.derivatives[j] * z2.scaled[j]) * log_m[j].exp())
        .collect()
}

/// Discounted integral `Q(x_j) = ∫_{x_j}^∞ e^{−β(G(s)−G(x_j))} (m(s)/m(x_j)) c s^{−2} φ(s) ds`
/// and its outer integral, for the ζ₁ fixed point on nodes `j0..n`.
struct Zeta1Sweep {
    q: Vec<f64>,
    outer: Vec<f64>,
}

fn zeta1_sweep(
    lay: &Layout,
    dc: &DerivedCoefficients,
    j0: usize,
    phi: &[f64],
    dphi: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Zeta1Sweep> {
    let n = lay.n();
    let beta = lay.beta;
    let dm1 = lay.dm1();
    let last = n - 1;
    let rr = lay.x[last];
    let phi_r = phi[last - j0];
    let phi_tail = move |s: f64| 1.0 + (phi_r - 1.0) * rr / s;
    let lm_r = lay.log_m[last];
    let g_r = lay.big_g[last];
    let rate = dc.envelope_rate();
    let lm = |s: f64| dm1 * dc.log_mu(s);
    let tail_q = integrate_to_infinity(
        |s| (-beta * (dc.big_g(s) - g_r) + lm(s) - lm_r).exp() * dc.eta_factor(s) / (s * s) * phi_tail(s),
        rr,
        rate,
        cfg,
    )?;
    if !tail_q.value.is_finite() {
        return Err(Error::NonConvergent("tail of the zeta1 kernel".into()));
    }
    // Laplace approximation of Q beyond R, integrated over ρ = R/t.
    let tail_outer = integrate(
        |t: f64| {
            let rho = rr / t;
            let denom = (beta * dc.g(rho) - dm1 * dc.eta_factor(rho) / rho).max(0.5 * rate);
            dc.eta_factor(rho) * phi_tail(rho) / (rho * rho * denom) * rr / (t * t)
        },
        0.0,
        1.0,
        cfg,
    )?;

    let m = n - j0;
    let mut q = vec![0.0; m];
    let mut dq = vec![0.0; m];
    q[m - 1] = tail_q.value;
    for j in (j0..last).rev() {
        let i = j - j0;
        let decay = (-beta * (lay.big_g[j + 1] - lay.big_g[j]) + lay.log_m[j + 1] - lay.log_m[j]).exp();
        let mut panel = 0.0;
        for k in 0..8 {
            let pi = 8 * (j + 1) + k;
            let s = lay.ps[pi];
            let phik = hermite(lay.x[j], lay.x[j + 1], phi[i], phi[i + 1], dphi[i], dphi[i + 1], s);
            panel += lay.pw[pi]
                * (-beta * (lay.p_big_g[pi] - lay.big_g[j]) + lay.p_log_m[pi] - lay.log_m[j]).exp()
                * lay.p_c[pi]
                / (s * s)
                * phik;
        }
        q[i] = decay * q[i + 1] + panel;
    }
    for j in j0..n {
        let i = j - j0;
        let x = lay.x[j];
        dq[i] = (beta * lay.g[j] - dm1 * lay.c[j] / x) * q[i] - lay.c[j] * phi[i] / (x * x);
    }
    let mut outer = vec![0.0; m];
    outer[m - 1] = tail_outer.value;
    for j in (j0..last).rev() {
        let i = j - j0;
        outer[i] = outer[i + 1] + hermite_integral(lay.x[j], lay.x[j + 1], q[i], q[i + 1], dq[i], dq[i + 1]);
    }
    Ok(Zeta1Sweep { q, outer })
}

fn build_zeta1_on(lay: &Layout, dc: &DerivedCoefficients, cfg: &QuadratureConfig) -> Result<Zeta1> {
    let n = lay.n();
    if lay.d == 1 {
        return Ok(Zeta1 {
            values: vec![1.0; n],
            derivatives: vec![0.0; n],
            r0: lay.x[0],
            r0_index: 0,
            contraction_bound: 0.0,
            fixed_point_iterations: 0,
            fixed_point_residual: 0.0,
            history: Vec::new(),
            fixed_point_values: vec![1.0; n],
        });
    }
    let dm1 = lay.dm1();
    let spec = dc.spec();
    let r_max = lay.x[n - 1];

    // λ does not depend on r₀, so one sweep with φ ≡ 1 from the smallest
    // admissible start serves every attempt.
    let start = lay.x.partition_point(|&x| x < spec.r_hyp.max(1.0)).min(n - 1);
    let ones = vec![1.0; n - start];
    let zeros = vec![0.0; n - start];
    let lambda = zeta1_sweep(lay, dc, start, &ones, &zeros, cfg)?.outer;
    let mut candidate = spec.r_hyp.max(1.0);
    let mut chosen = None;
    for _ in 0..MAX_CONTRACTION_ATTEMPTS {
        let j = lay.x.partition_point(|&x| x < candidate);
        if j >= n || lay.x[j] > 0.5 * r_max {
            break;
        }
        let bound = dm1 * lambda[j - start];
        if bound <= 0.5 {
            chosen = Some((j, bound));
            break;
        }
        candidate *= 2.0;
    }
    let Some((j0, contraction_bound)) = chosen else {
        return Err(Error::Contraction {
            attempts: MAX_CONTRACTION_ATTEMPTS,
            detail: format!("(d-1) lambda(r0) stays above 1/2 for r0 up to {candidate} (R_max = {r_max})"),
        });
    };

    let m = n - j0;
    let mut phi = vec![1.0; m];
    let mut dphi = vec![0.0; m];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < FIXED_POINT_MAX_ITER {
        let sweep = zeta1_sweep(lay, dc, j0, &phi, &dphi, cfg)?;
        let new_phi: Vec<f64> = sweep.outer.iter().map(|o| 1.0 + dm1 * o).collect();
        let new_dphi: Vec<f64> = sweep.q.iter().map(|q| -dm1 * q).collect();
        residual = new_phi.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        phi = new_phi;
        dphi = new_dphi;
        iterations += 1;
        history.push(residual);
        if residual < FIXED_POINT_TOL {
            break;
        }
    }
    if !(residual < FIXED_POINT_TOL) {
        return Err(Error::NonConvergent(format!(
            "zeta1 fixed point stalled at sup-difference {residual:.3e} after {iterations} iterations"
        )));
    }

    // Continue as an initial-value problem from R_max. Backward in r the
    // unbounded solution decays relative to ζ₁, so this is stable.
    let beta = lay.beta;
    let rhs = |r: f64, y: &[f64; 2]| {
        let c = dc.eta_factor(r);
        [y[1], -(dm1 * c / r - beta * dc.g(r)) * y[1] + dm1 * c * y[0] / (r * r)]
    };
    let targets: Vec<f64> = lay.x[..n - 1].iter().rev().copied().collect();
    let states = integrate_through(rhs, r_max, [phi[m - 1], dphi[m - 1]], &targets, OdeTolerance::default())?;
    let mut values = vec![0.0; n];
    let mut derivatives = vec![0.0; n];
    values[n - 1] = phi[m - 1];
    derivatives[n - 1] = dphi[m - 1];
    for (t, y) in states.iter().enumerate() {
        let j = n - 2 - t;
        values[j] = y[0];
        derivatives[j] = y[1];
    }
    Ok(Zeta1 {
        values,
        derivatives,
        r0: lay.x[j0],
        r0_index: j0,
        contraction_bound,
        fixed_point_iterations: iterations,
        fixed_point_residual: residual,
        history,
        fixed_point_values: phi,
    })
}

/// `S(x_j) = ∫_0^{x_j} e^{−β(G(s)−G(x_j))} (m(s)/m(x_j)) g(s) φ(s) s ds` on
/// nodes `0..=j1` and the resulting `φ_{n+1}`, `φ_{n+1}'`.
fn zeta2_sweep(lay: &Layout, j1: usize, phi: &[f64], dphi: &[f64], abs_g: bool) -> (Vec<f64>, Vec<f64>) {
    let beta = lay.beta;
    let dm1 = lay.dm1();
    let gabs = |v: f64| if abs_g { v.abs() } else { v };
    let mut s_hat = vec![0.0; j1 + 1];
    let mut acc = 0.0;
    for k in 0..8 {
        let s = lay.ps[k];
        let phik = hermite(0.0, lay.x[0], 1.0, phi[0], 0.0, dphi[0], s);
        acc += lay.pw[k]
            * (-beta * (lay.p_big_g[k] - lay.big_g[0]) + lay.p_log_m[k] - lay.log_m[0]).exp()
            * gabs(lay.p_g[k])
            * phik
            * s;
    }
    s_hat[0] = acc;
    for j in 0..j1 {
        let carry = (beta * (lay.big_g[j + 1] - lay.big_g[j]) + lay.log_m[j] - lay.log_m[j + 1]).exp();
        let mut panel = 0.0;
        for k in 0..8 {
            let pi = 8 * (j + 1) + k;
            let s = lay.ps[pi];
            panel += lay.pw[pi]
                * (-beta * (lay.p_big_g[pi] - lay.big_g[j + 1]) + lay.p_log_m[pi] - lay.log_m[j + 1]).exp()
                * gabs(lay.p_g[pi])
                * lay.interp(j, k, phi, dphi)
                * s;
        }
        s_hat[j + 1] = carry * s_hat[j] + panel;
    }
    let mut p = vec![0.0; j1 + 1];
    let mut dp = vec![0.0; j1 + 1];
    for j in 0..=j1 {
        let x = lay.x[j];
        let ds = gabs(lay.g[j]) * phi[j] * x + (beta * lay.g[j] - dm1 * lay.c[j] / x) * s_hat[j];
        p[j] = s_hat[j] / (x * x);
        dp[j] = ds / (x * x) - 2.0 * s_hat[j] / (x * x * x);
    }
    let mut new_phi = vec![0.0; j1 + 1];
    let x0 = lay.x[0];
    new_phi[0] = 1.0 + beta * hermite_integral(0.0, x0, 0.0, p[0], p[0] / x0, dp[0]);
    for j in 0..j1 {
        new_phi[j + 1] = new_phi[j] + beta * hermite_integral(lay.x[j], lay.x[j + 1], p[j], p[j + 1], dp[j], dp[j + 1]);
    }
    let new_dphi = p.iter().map(|v| beta * v).collect();
    (new_phi, new_dphi)
}

fn build_zeta2_on(lay: &Layout, dc: &DerivedCoefficients) -> Result<Zeta2> {
    let n = lay.n();
    let beta = lay.beta;
    let dm1 = lay.dm1();
    let j_one = lay.x.partition_point(|&x| x <= 1.0).saturating_sub(1);
    let ones = vec![1.0; j_one + 1];
    let zeros = vec![0.0; j_one + 1];
    let (lam, _) = zeta2_sweep(lay, j_one, &ones, &zeros, true);
    let mut candidate = 1.0f64;
    let mut chosen = None;
    for _ in 0..MAX_CONTRACTION_ATTEMPTS {
        let j = lay.x.partition_point(|&x| x <= candidate).saturating_sub(1);
        if j < 1 {
            break;
        }
        let bound = lam[j] - 1.0;
        if bound <= 0.5 {
            chosen = Some((j, bound));
            break;
        }
        candidate *= 0.5;
    }
    let Some((j1, contraction_bound)) = chosen else {
        return Err(Error::Contraction {
            attempts: MAX_CONTRACTION_ATTEMPTS,
            detail: format!("Lambda(r1) stays above 1/2 down to r1 = {candidate}"),
        });
    };

    let mut phi = vec![1.0; j1 + 1];
    let mut dphi = vec![0.0; j1 + 1];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < FIXED_POINT_MAX_ITER {
        let (np, ndp) = zeta2_sweep(lay, j1, &phi, &dphi, false);
        residual = np.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        phi = np;
        dphi = ndp;
        iterations += 1;
        history.push(residual);
        if residual < FIXED_POINT_TOL {
            break;
        }
    }
    if !(residual < FIXED_POINT_TOL) {
        return Err(Error::NonConvergent(format!(
            "zeta2 fixed point stalled at sup-difference {residual:.3e} after {iterations} iterations"
        )));
    }

    let mut scaled = vec![0.0; n];
    let mut scaled_prime = vec![0.0; n];
    for j in 0..=j1 {
        let e = (-beta * lay.big_g[j]).exp();
        scaled[j] = lay.x[j] * phi[j] * e;
        scaled_prime[j] = (phi[j] + lay.x[j] * dphi[j]) * e;
    }
    if j1 + 1 < n {
        // u = φ̃ e^{−βG}, v = φ̃' e^{−βG}
        let rhs = |r: f64, y: &[f64; 2]| {
            let g = dc.g(r);
            [y[1] - beta * g * y[0], -(2.0 + dm1 * dc.eta_factor(r)) / r * y[1] + beta * g * y[0] / r]
        };
        let e = (-beta * lay.big_g[j1]).exp();
        let y0 = [phi[j1] * e, dphi[j1] * e];
        let states = integrate_through(rhs, lay.x[j1], y0, &lay.x[j1 + 1..], OdeTolerance::default())?;
        for (t, y) in states.iter().enumerate() {
            let j = j1 + 1 + t;
            scaled[j] = lay.x[j] * y[0];
            scaled_prime[j] = y[0] + lay.x[j] * y[1];
        }
    }
    Ok(Zeta2 {
        scaled,
        scaled_prime,
        r1: lay.x[j1],
        r1_index: j1,
        contraction_bound,
        fixed_point_iterations: iterations,
        fixed_point_residual: residual,
        history,
    })
}

/// Median of the Wronskian profile over interior nodes and its maximal
/// relative deviation.
fn fit_wronskian(profile: &[f64]) -> (f64, f64) {
    let interior = &profile[1..profile.len() - 1];
    let mut sorted = interior.to_vec();
    sorted.sort_by(f64::total_cmp);
    let a = sorted[sorted.len() / 2];
    let spread = interior.iter().map(|w| ((w - a) / a).abs()).fold(0.0, f64::max);
    (a, spread)
}

/// `ζ₁` on the grid.
pub fn build_zeta1(dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<Zeta1> {
    build_zeta1_on(&Layout::new(dc, grid), dc, &QuadratureConfig::default())
}

/// `ζ₂` on the grid, scaled by `e^{−βG}`.
pub fn build_zeta2(dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<Zeta2> {
    build_zeta2_on(&Layout::new(dc, grid), dc)
}

/// Fits `a_β` in `ζ₁ζ₂' − ζ₁'ζ₂ = a_β μ^{1−d} e^{βG}`; returns `(a_β, spread)`.
pub fn wronskian(z1: &Zeta1, z2: &Zeta2, dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<(f64, f64)> {
    let d = dc.d();
    let log_m: Vec<f64> =
        grid.nodes().iter().map(|&r| if d == 1 { 0.0 } else { (d as f64 - 1.0) * dc.log_mu(r) }).collect();
    check_wronskian(fit_wronskian(&wronskian_profile(z1, z2, &log_m)))
}

fn check_wronskian((a, spread): (f64, f64)) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(spread <= WRONSKIAN_SPREAD_LIMIT) {
        return Err(Error::WronskianSpread { spread });
    }
    Ok((a, spread))
}

/// Both homogeneous solutions and their Wronskian constant.
pub fn build_pair(dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<HomogeneousPair> {
    let lay = Layout::new(dc, grid);
    build_pair_on(&lay, dc, grid)
}

fn build_pair_on(lay: &Layout, dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<HomogeneousPair> {
    let zeta1 = build_zeta1_on(lay, dc, &QuadratureConfig::default())?;
    let zeta2 = build_zeta2_on(lay, dc)?;
    let (a_beta, wronskian_spread) = check_wronskian(fit_wronskian(&wronskian_profile(&zeta1, &zeta2, &lay.log_m)))?;
    Ok(HomogeneousPair {
        grid: grid.clone(),
        beta: lay.beta,
        d: lay.d,
        fixed_point_iterations: zeta1.fixed_point_iterations + zeta2.fixed_point_iterations,
        fixed_point_residual: zeta1.fixed_point_residual.max(zeta2.fixed_point_residual),
        zeta1,
        zeta2,
        a_beta,
        wronskian_spread,
        big_g: lay.big_g.clone(),
        log_m: lay.log_m.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMethod {
    D1ClosedForm,
    GeneralPsi,
}

/// A tabulated solution of the radial equation with source `k`
/// (`k = βh` for ψ_β).
#[derive(Clone, Debug, Serialize)]
pub struct PsiSolution {
    pub grid: RadialGrid,
    pub beta: f64,
    pub d: usize,
    pub method: PsiMethod,
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
    /// `ψ''` from the equation itself, used for Hermite interpolation of `ψ'`.
    pub psi_second: Vec<f64>,
    /// Finite-difference residual at each node (`NaN` at the two ends).
    pub residual: Vec<f64>,
    /// Sup of `|residual|` over `[2 r_first, R_max / 2]`.
    pub residual_sup: f64,
}

impl PsiSolution {
    pub fn within_tolerance(&self, tol: f64) -> bool {
        self.residual_sup <= tol
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    fn segment(&self, r: f64) -> Option<usize> {
        let x = self.grid.nodes();
        if r < x[0] || r > x[x.len() - 1] {
            return None;
        }
        Some(x.partition_point(|&v| v <= r).clamp(1, x.len() - 1) - 1)
    }

    /// ψ at `r`, cubic Hermite between nodes, linear through the origin below
    /// the first node.
    pub fn eval(&self, r: f64) -> f64 {
        let x = self.grid.nodes();
        match self.segment(r) {
            Some(i) => {
                hermite(x[i], x[i + 1], self.psi[i], self.psi[i + 1], self.psi_prime[i], self.psi_prime[i + 1], r)
            }
            None if r < x[0] => self.psi[0] * r / x[0],
            None => {
                let n = x.len() - 1;
                self.psi[n] + self.psi_prime[n] * (r - x[n])
            }
        }
    }

    pub fn eval_prime(&self, r: f64) -> f64 {
        let x = self.grid.nodes();
        match self.segment(r) {
            Some(i) => hermite(
                x[i],
                x[i + 1],
                self.psi_prime[i],
                self.psi_prime[i + 1],
                self.psi_second[i],
                self.psi_second[i + 1],
                r,
            ),
            None if r < x[0] => self.psi_prime[0],
            None => self.psi_prime[x.len() - 1],
        }
    }
}

fn finish_solution(
    lay: &Layout,
    grid: &RadialGrid,
    method: PsiMethod,
    psi: Vec<f64>,
    psi_prime: Vec<f64>,
    source: &[f64],
) -> PsiSolution {
    let n = lay.n();
    let dm1 = lay.dm1();
    let beta = lay.beta;
    let psi_second: Vec<f64> = (0..n)
        .map(|j| {
            let x = lay.x[j];
            let c = lay.c[j];
            (beta * lay.g[j] - dm1 * c / x) * psi_prime[j] + dm1 * c * psi[j] / (x * x) - source[j]
        })
        .collect();
    let mut residual = vec![f64::NAN; n];
    for j in 1..n - 1 {
        let fd = fd_derivative(&lay.x, &psi_prime, j);
        residual[j] = fd - psi_second[j];
    }
    let lo = 2.0 * lay.x[0];
    let hi = 0.5 * lay.x[n - 1];
    let residual_sup =
        (1..n - 1).filter(|&j| lay.x[j] >= lo && lay.x[j] <= hi).map(|j| residual[j].abs()).fold(0.0, f64::max);
    PsiSolution { grid: grid.clone(), beta, d: lay.d, method, psi, psi_prime, psi_second, residual, residual_sup }
}

/// Closed-form construction for `d = 1`.
pub fn solve_psi_d1(dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<PsiSolution> {
    if dc.d() != 1 {
        return Err(Error::Incompatible(format!("closed-form psi requires d = 1, model has d = {}", dc.d())));
    }
    let lay = Layout::new(dc, grid);
    let n = lay.n();
    let beta = lay.beta;
    let last = n - 1;
    let rr = lay.x[last];
    let g_r = lay.big_g[last];
    let tail = integrate_to_infinity(
        |s| (-beta * (dc.big_g(s) - g_r)).exp() * dc.h(s),
        rr,
        dc.envelope_rate(),
        &QuadratureConfig::default(),
    )?;
    if !tail.value.is_finite() || !tail.converged {
        return Err(Error::NonConvergent(format!(
            "inner integral of e^(-beta G) h beyond r = {rr} did not converge (value {}, error {:.3e})",
            tail.value, tail.error_estimate
        )));
    }
    // S(x_j) = ∫_{x_j}^∞ e^{−β(G(s)−G(x_j))} h(s) ds
    let mut s_tab = vec![0.0; n];
    s_tab[last] = tail.value;
    for j in (0..last).rev() {
        let mut panel = 0.0;
        for k in 0..8 {
            let pi = 8 * (j + 1) + k;
            panel += lay.pw[pi] * (-beta * (lay.p_big_g[pi] - lay.big_g[j])).exp() * lay.p_h[pi];
        }
        s_tab[j] = (-beta * (lay.big_g[j + 1] - lay.big_g[j])).exp() * s_tab[j + 1] + panel;
    }
    let mut s_origin = (-beta * lay.big_g[0]).exp() * s_tab[0];
    for k in 0..8 {
        s_origin += lay.pw[k] * (-beta * lay.p_big_g[k]).exp() * lay.p_h[k];
    }
    let psi_prime: Vec<f64> = s_tab.iter().map(|s| beta * s).collect();
    let dpp = |j: usize| beta * lay.g[j] * psi_prime[j] - beta * lay.h[j];
    let pp0 = beta * s_origin;
    let pp0_slope = beta * dc.g(0.0) * pp0 - beta * dc.h(0.0);
    let mut psi = vec![0.0; n];
    psi[0] = hermite_integral(0.0, lay.x[0], pp0, psi_prime[0], pp0_slope, dpp(0));
    for j in 0..last {
        psi[j + 1] =
            psi[j] + hermite_integral(lay.x[j], lay.x[j + 1], psi_prime[j], psi_prime[j + 1], dpp(j), dpp(j + 1));
    }
    let source: Vec<f64> = lay.h.iter().map(|h| beta * h).collect();
    Ok(finish_solution(&lay, grid, PsiMethod::D1ClosedForm, psi, psi_prime, &source))
}

fn apply_psi_on(
    lay: &Layout,
    dc: &DerivedCoefficients,
    grid: &RadialGrid,
    pair: &HomogeneousPair,
    k: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<PsiSolution> {
    let n = lay.n();
    let beta = lay.beta;
    let last = n - 1;
    let z1 = &pair.zeta1.values;
    let dz1 = &pair.zeta1.derivatives;
    let z2 = &pair.zeta2.scaled;
    let z2p = &pair.zeta2.scaled_prime;
    // slope of ζ₂ e^{−βG}
    let dz2: Vec<f64> = (0..n).map(|j| z2p[j] - beta * lay.g[j] * z2[j]).collect();
    let k_nodes: Vec<f64> = lay.x.iter().map(|&r| k(r)).collect();
    let k_pts: Vec<f64> = lay.ps.iter().map(|&r| k(r)).collect();

    // L(x_j) = ∫_0^{x_j} ζ₂ e^{−βG} m k
    let mut l_tab = vec![0.0; n];
    let mut acc = 0.0;
    for (q, kq) in k_pts.iter().enumerate().take(8) {
        let s = lay.ps[q];
        let z = hermite(0.0, lay.x[0], 0.0, z2[0], 1.0, dz2[0], s);
        acc += lay.pw[q] * z * lay.p_log_m[q].exp() * kq;
    }
    l_tab[0] = acc;
    for j in 0..last {
        let mut panel = 0.0;
        for q in 0..8 {
            let pi = 8 * (j + 1) + q;
            panel += lay.pw[pi] * lay.interp(j, q, z2, &dz2) * lay.p_log_m[pi].exp() * k_pts[pi];
        }
        l_tab[j + 1] = l_tab[j] + panel;
    }

    // T(x_j) = ∫_{x_j}^∞ ζ₁ m k e^{−β(G(s)−G(x_j))}
    let rr = lay.x[last];
    let (z1r, dz1r) = (z1[last], dz1[last]);
    let g_r = lay.big_g[last];
    let dm1 = lay.dm1();
    let tail = integrate_to_infinity(
        |s| {
            let z = z1r + dz1r * rr * (1.0 - rr / s);
            let lm = if lay.d == 1 { 0.0 } else { dm1 * dc.log_mu(s) };
            z * (lm - beta * (dc.big_g(s) - g_r)).exp() * k(s)
        },
        rr,
        dc.envelope_rate(),
        &QuadratureConfig::default(),
    )?;
    if !tail.value.is_finite() || !tail.converged {
        return Err(Error::NonConvergent(format!(
            "tail integral of the variation-of-constants operator beyond r = {rr} did not converge"
        )));
    }
    let mut t_tab = vec![0.0; n];
    t_tab[last] = tail.value;
    for j in (0..last).rev() {
        let mut panel = 0.0;
        for q in 0..8 {
            let pi = 8 * (j + 1) + q;
            panel += lay.pw[pi]
                * lay.interp(j, q, z1, dz1)
                * (lay.p_log_m[pi] - beta * (lay.p_big_g[pi] - lay.big_g[j])).exp()
                * k_pts[pi];
        }
        t_tab[j] = (-beta * (lay.big_g[j + 1] - lay.big_g[j])).exp() * t_tab[j + 1] + panel;
    }

    let a = pair.a_beta;
    let psi: Vec<f64> = (0..n).map(|j| (z1[j] * l_tab[j] + z2[j] * t_tab[j]) / a).collect();
    let psi_prime: Vec<f64> = (0..n).map(|j| (dz1[j] * l_tab[j] + z2p[j] * t_tab[j]) / a).collect();
    Ok(finish_solution(lay, grid, PsiMethod::GeneralPsi, psi, psi_prime, &k_nodes))
}

/// Variation-of-constants operator
/// `Ψ(k) = ζ₁ ∫_0^r ζ₂ w⁻¹ k + ζ₂ ∫_r^∞ ζ₁ w⁻¹ k` and its derivative.
pub fn apply_psi(
    pair: &HomogeneousPair,
    dc: &DerivedCoefficients,
    k: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<PsiSolution> {
    if pair.beta != dc.beta() || pair.d != dc.d() {
        return Err(Error::Incompatible("homogeneous pair was built for a different model".into()));
    }
    let lay = Layout::new(dc, &pair.grid);
    apply_psi_on(&lay, dc, &pair.grid, pair, k)
}

/// ψ_β = β Ψ(h) by the general construction (any `d`).
pub fn solve_psi_general(dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<PsiSolution> {
    let lay = Layout::new(dc, grid);
    let pair = build_pair_on(&lay, dc, grid)?;
    let beta = dc.beta();
    let sol = apply_psi_on(&lay, dc, grid, &pair, &|r| beta * dc.h(r))?;
    let spec = dc.spec();
    let dominated = grid.nodes().iter().all(|&r| {
        let f = spec.f(r);
        f >= 0.0 && f <= spec.b(r)
    });
    if dominated {
        for (j, &r) in grid.nodes().iter().enumerate() {
            let p = sol.psi[j];
            if p < -1e-9 * r || p > r * (1.0 + 1e-6) + 1e-12 {
                return Err(Error::NonConvergent(format!("psi({r}) = {p} leaves [0, r] although 0 <= f <= b")));
            }
        }
    }
    Ok(sol)
}

/// `d = 1` uses the closed form, otherwise the general construction.
pub fn solve_psi(dc: &DerivedCoefficients, grid: &RadialGrid) -> Result<PsiSolution> {
    if dc.d() == 1 {
        solve_psi_d1(dc, grid)
    } else {
        solve_psi_general(dc, grid)
    }
}

//! Euler–Maruyama ensembles for
//!
//! ```text
//! dx = f(r) p dt
//! dp = −b(r) p dt + σ(r) (β(1+η²))^{−1/2} (dW + η θ dw),    r = |p|, θ = p / r
//! ```
//!
//! Trajectory `i` draws from its own ChaCha8 stream `(seed, i)`, and every
//! reduction runs in trajectory order, so results do not depend on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{builtin_dh, derive, DerivedCoefficients, ModelKind, ModelSpec};
use crate::error::{invalid, Error, Result};
use crate::psi::{solve_psi, RadialGrid};
use crate::quadrature::{integrate, QuadratureConfig};
use crate::stats::{self, NormalityReport};
use crate::variance::{conjecture_2_over_2_plus_beta, sigma2_dh_d1, sigma2_prop2};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_BINS: usize = 100;
/// Histogram range ends where `βG` reaches this value.
const HISTOGRAM_BETA_G: f64 = 15.0;
/// Largest tolerated fraction of diverged trajectories.
const MAX_DIVERGED_FRACTION: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial momentum; empty means the origin.
    pub initial_p: Vec<f64>,
    pub initial_x: Vec<f64>,
    pub bins: usize,
}

impl SimConfig {
    pub fn new(model: ModelSpec, t_end: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            model,
            dt: DEFAULT_DT,
            t_end,
            n_paths,
            seed,
            initial_p: Vec::new(),
            initial_x: Vec::new(),
            bins: DEFAULT_BINS,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.d;
        if !(self.dt > 0.0 && self.dt < 0.1) {
            return Err(invalid(format!("dt must lie in (0, 0.1), got {}", self.dt)));
        }
        if !(self.t_end >= 1.0) || !self.t_end.is_finite() {
            return Err(invalid(format!("T must be at least 1, got {}", self.t_end)));
        }
        if self.n_paths < 1 {
            return Err(invalid("N must be at least 1"));
        }
        if self.bins < 1 {
            return Err(invalid("histogram needs at least one bin"));
        }
        for (name, v) in [("initial_p", &self.initial_p), ("initial_x", &self.initial_x)] {
            if !v.is_empty() && v.len() != d {
                return Err(invalid(format!("{name} has length {} but d = {d}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    fn start(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.model.d;
        let or_zero = |v: &Vec<f64>| if v.is_empty() { vec![0.0; d] } else { v.clone() };
        (or_zero(&self.initial_x), or_zero(&self.initial_p))
    }

    /// Step indices at which `r` is recorded: integer times in `[T/2, T]`.
    fn sample_steps(&self) -> Vec<u64> {
        let first = (self.t_end / 2.0).ceil() as u64;
        let last = self.t_end.floor() as u64;
        (first..=last).map(|t| (t as f64 / self.dt).round() as u64).collect()
    }
}

/// One Euler–Maruyama step. `gaussians` holds `d` draws for `W` followed by
/// one draw for `w`.
pub fn step(x: &mut [f64], p: &mut [f64], model: &ModelSpec, dt: f64, gaussians: &[f64]) {
    let d = p.len();
    let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f = model.f(r);
    let b = model.b(r);
    let eta = model.eta(r);
    let amp = model.sigma(r) / (model.beta * (1.0 + eta * eta)).sqrt() * dt.sqrt();
    let w = gaussians[d];
    for i in 0..d {
        // θ is undefined at the origin; use the first basis vector there.
        let theta = if r > 0.0 {
            p[i] / r
        } else if i == 0 {
            1.0
        } else {
            0.0
        };
        let pi = p[i];
        x[i] += f * pi * dt;
        p[i] = pi - b * pi * dt + amp * (gaussians[i] + eta * theta * w);
    }
}

/// The `d = 1` step with the two noises merged into one draw of variance
/// `σ² dt / β`.
pub fn step_reduced_1d(x: &mut f64, p: &mut f64, model: &ModelSpec, dt: f64, gaussian: f64) {
    let r = p.abs();
    let pi = *p;
    *x += model.f(r) * pi * dt;
    *p = pi - model.b(r) * pi * dt + model.sigma(r) * (dt / model.beta).sqrt() * gaussian;
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub index: u64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// `|p|` at integer times in `[T/2, T]`.
    pub r_samples: Vec<f64>,
}

/// Runs trajectory `index` of the ensemble.
pub fn simulate_trajectory(cfg: &SimConfig, index: u64) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (mut x, mut p) = cfg.start();
    let d = cfg.model.d;
    let samples = cfg.sample_steps();
    let mut next_sample = 0;
    let mut r_samples = Vec::with_capacity(samples.len());
    let n = cfg.n_steps();
    let mut draws = vec![0.0; d + 1];
    for s in 0..=n {
        if next_sample < samples.len() && samples[next_sample] == s {
            r_samples.push(p.iter().map(|v| v * v).sum::<f64>().sqrt());
            next_sample += 1;
        }
        if s == n {
            break;
        }
        if d == 1 {
            step_reduced_1d(&mut x[0], &mut p[0], &cfg.model, cfg.dt, StandardNormal.sample(&mut rng));
        } else {
            for v in draws.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            step(&mut x, &mut p, &cfg.model, cfg.dt, &draws);
        }
        if !(x.iter().chain(&p).all(|v| v.is_finite())) {
            return Err(Error::Diverged { index, step: s + 1 });
        }
    }
    Ok(Trajectory { index, x, p, r_samples })
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples beyond the last edge.
    pub overflow: u64,
}

impl RadialHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Empirical CDF at each edge.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let total = self.total() as f64;
        let mut acc = 0u64;
        let mut out = vec![0.0];
        for c in &self.counts {
            acc += c;
            out.push(acc as f64 / total);
        }
        out
    }

    fn add(&mut self, r: f64) {
        let width = self.edges[1] - self.edges[0];
        let k = (r / width) as usize;
        if k < self.counts.len() {
            self.counts[k] += 1;
        } else {
            self.overflow += 1;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub model: String,
    pub beta: f64,
    pub d: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub diverged: usize,
    /// Mean of `|x_T − x_0|² / T` over the surviving trajectories.
    pub msd_over_t: f64,
    pub stderr: f64,
    pub radial_histogram: RadialHistogram,
    /// Per coordinate, of `(x_T − x_0) / √T`.
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    pub warnings: Vec<String>,
    /// `(x_T − x_0) / √T` by coordinate, in trajectory order.
    #[serde(skip)]
    pub scaled_displacements: Vec<Vec<f64>>,
}

/// Upper edge of the radial histogram: where `βG` reaches 15.
fn histogram_range(dc: &DerivedCoefficients) -> f64 {
    let beta = dc.beta();
    let target = HISTOGRAM_BETA_G / beta;
    let mut hi = 1.0;
    while dc.big_g(hi) < target {
        hi *= 2.0;
        if hi > 1e9 {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if dc.big_g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Runs the whole ensemble and reduces it in trajectory order.
pub fn estimate_msd(cfg: &SimConfig) -> Result<EnsembleStats> {
    cfg.validate()?;
    if cfg.n_paths < 2 {
        return Err(invalid("N must be at least 2 for a standard error"));
    }
    let d = cfg.model.d;
    let dc = DerivedCoefficients::unnormalized(&cfg.model)?;
    let r_h = histogram_range(&dc);
    let width = r_h / cfg.bins as f64;
    let mut hist = RadialHistogram {
        edges: (0..=cfg.bins).map(|k| k as f64 * width).collect(),
        counts: vec![0; cfg.bins],
        overflow: 0,
    };

    let runs: Vec<Result<Trajectory>> =
        (0..cfg.n_paths as u64).into_par_iter().map(|i| simulate_trajectory(cfg, i)).collect();
    let mut diverged = 0usize;
    let mut trajectories = Vec::with_capacity(runs.len());
    for run in runs {
        match run {
            Ok(t) => trajectories.push(t),
            Err(Error::Diverged { .. }) => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    if diverged as f64 > MAX_DIVERGED_FRACTION * cfg.n_paths as f64 || trajectories.len() < 2 {
        return Err(Error::EnsembleDiverged { diverged, total: cfg.n_paths, dt: cfg.dt });
    }

    let (x0, _) = cfg.start();
    let sqrt_t = cfg.t_end.sqrt();
    let mut sq = Vec::with_capacity(trajectories.len());
    let mut scaled = vec![Vec::with_capacity(trajectories.len()); d];
    for t in &trajectories {
        let mut s = 0.0;
        for i in 0..d {
            let dx = t.x[i] - x0[i];
            s += dx * dx;
            scaled[i].push(dx / sqrt_t);
        }
        sq.push(s / cfg.t_end);
        for &r in &t.r_samples {
            hist.add(r);
        }
    }
    let n = sq.len() as f64;
    let mut warnings = Vec::new();
    if cfg.model.eta(0.0) != 0.0 {
        warnings.push("eta(0) != 0: the direction at p = 0 is taken as the first basis vector".into());
    }
    if diverged > 0 {
        warnings.push(format!("{diverged} trajectories diverged and were excluded"));
    }
    Ok(EnsembleStats {
        model: cfg.model.name.clone(),
        beta: cfg.model.beta,
        d,
        dt: cfg.dt,
        t_end: cfg.t_end,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        diverged,
        msd_over_t: stats::mean(&sq),
        stderr: (stats::variance(&sq) / n).sqrt(),
        radial_histogram: hist,
        skewness: scaled.iter().map(|c| stats::skewness(c)).collect(),
        excess_kurtosis: scaled.iter().map(|c| stats::excess_kurtosis(c)).collect(),
        warnings,
        scaled_displacements: scaled,
    })
}

/// Normality of `(x_T − x_0) / (Σ √T)` per coordinate for a finished ensemble.
pub fn clt_report(stats: &EnsembleStats, sigma2: f64) -> Result<NormalityReport> {
    if !(sigma2 > 0.0) {
        return Err(invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    let s = sigma2.sqrt();
    let coords: Vec<Vec<f64>> = stats.scaled_displacements.iter().map(|c| c.iter().map(|v| v / s).collect()).collect();
    Ok(stats::normality_report(&coords))
}

/// Runs the ensemble and checks the rescaled positions against N(0, 1).
pub fn clt_check(cfg: &SimConfig, sigma2: f64) -> Result<NormalityReport> {
    if !(sigma2 > 0.0) {
        return Err(invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    clt_report(&estimate_msd(cfg)?, sigma2)
}

/// Probability of each histogram bin under the normalized equilibrium law.
pub fn equilibrium_bin_probabilities(hist: &RadialHistogram, dc: &DerivedCoefficients) -> Result<Vec<f64>> {
    let z = dc.z_nu()?;
    let cfg = QuadratureConfig::default();
    hist.edges.windows(2).map(|w| Ok(integrate(|r| dc.nu(r), w[0], w[1], &cfg)?.value / z)).collect()
}

/// Largest gap between the empirical CDF of the sampled radii and the CDF of
/// the normalized equilibrium law, over the histogram edges.
pub fn equilibrium_distance(stats: &EnsembleStats, dc: &DerivedCoefficients) -> Result<f64> {
    let emp = stats.radial_histogram.cdf_at_edges();
    let probs = equilibrium_bin_probabilities(&stats.radial_histogram, dc)?;
    let mut acc = 0.0;
    let mut worst = 0.0f64;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        worst = worst.max((emp[k + 1] - acc).abs());
    }
    Ok(worst)
}

/// SplitMix64 output for the `k`-th state after `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub log10_inv_beta: f64,
    pub seed: u64,
    pub msd_over_t: f64,
    pub stderr: f64,
    pub sigma2_quadrature: f64,
    pub conjecture_2_over_2_plus_beta: f64,
    pub error: Option<String>,
}

/// Σ² by quadrature for the template's model at `beta`.
pub fn sigma2_quadrature(model: &ModelSpec) -> Result<f64> {
    if model.kind == ModelKind::Dh && model.d == 1 {
        return Ok(sigma2_dh_d1(model.beta)?.sigma2);
    }
    let dc = derive(model)?;
    let grid = RadialGrid::for_model(&dc)?;
    let psi = solve_psi(&dc, &grid)?;
    Ok(sigma2_prop2(&dc, &psi)?.sigma2)
}

/// One ensemble per β with seeds derived from the template's seed. Failures
/// are recorded in the row and the sweep continues.
pub fn sweep_beta(template: &SimConfig, betas: &[f64]) -> Result<Vec<SweepRow>> {
    Ok(sweep_beta_detailed(template, betas)?.into_iter().map(|(row, _)| row).collect())
}

/// As [`sweep_beta`], keeping each ensemble's statistics.
pub fn sweep_beta_detailed(template: &SimConfig, betas: &[f64]) -> Result<Vec<(SweepRow, Option<EnsembleStats>)>> {
    if betas.is_empty() {
        return Err(invalid("beta list is empty"));
    }
    Ok(betas
        .iter()
        .enumerate()
        .map(|(k, &beta)| run_at(template, beta, derive_seed(template.seed, k as u64)))
        .collect())
}

/// A single ensemble of `template` at `beta` with `seed`, paired with Σ² by quadrature.
pub fn run_at(template: &SimConfig, beta: f64, seed: u64) -> (SweepRow, Option<EnsembleStats>) {
    let mut row = SweepRow {
        beta,
        log10_inv_beta: -beta.log10(),
        seed,
        msd_over_t: f64::NAN,
        stderr: f64::NAN,
        sigma2_quadrature: f64::NAN,
        conjecture_2_over_2_plus_beta: conjecture_2_over_2_plus_beta(beta),
        error: None,
    };
    let run = template.model.with_beta(beta).and_then(|model| {
        let cfg = SimConfig { model: model.clone(), seed, ..template.clone() };
        Ok((estimate_msd(&cfg)?, model))
    });
    match run {
        Ok((st, model)) => {
            row.msd_over_t = st.msd_over_t;
            row.stderr = st.stderr;
            match sigma2_quadrature(&model) {
                Ok(s) => row.sigma2_quadrature = s,
                Err(e) => row.error = Some(e.to_string()),
            }
            (row, Some(st))
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

/// DH in one dimension at `beta`, the paper's simulation setting.
pub fn dh_template(beta: f64, t_end: f64, n_paths: usize, seed: u64) -> Result<SimConfig> {
    Ok(SimConfig::new(builtin_dh(beta, 1)?, t_end, n_paths, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_roup;

    #[test]
    fn deterministic_drift_step() {
        let m = builtin_dh(1.0, 1).unwrap();
        let h = 0.01;
        let (mut x, mut p) = (vec![0.0], vec![1.0]);
        step(&mut x, &mut p, &m, h, &[0.0, 0.0]);
        assert!((p[0] - (1.0 - h)).abs() < 1e-15);
        assert!((x[0] - h / 2f64.sqrt()).abs() < 1e-15);
        let (mut x, mut p) = (0.0, 1.0);
        step_reduced_1d(&mut x, &mut p, &m, h, 0.0);
        assert!((p - (1.0 - h)).abs() < 1e-15 && (x - h / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rest_state_is_fixed_without_noise() {
        let m = builtin_dh(1.0, 3).unwrap();
        let (mut x, mut p) = (vec![0.5, -1.0, 2.0], vec![0.0; 3]);
        step(&mut x, &mut p, &m, 0.01, &[0.0; 4]);
        assert_eq!(x, vec![0.5, -1.0, 2.0]);
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn reduced_step_matches_two_noise_form() {
        let m = builtin_dh(0.7, 1).unwrap();
        let dt = 0.01;
        for (p0, xi, w) in [(0.3, 0.4, -1.2), (-2.0, 1.1, 0.5), (5.0, -0.3, 0.0)] {
            let (mut x2, mut p2) = (vec![0.0], vec![p0]);
            step(&mut x2, &mut p2, &m, dt, &[xi, w]);
            // the same increment expressed through one combined unit normal
            let eta = m.eta(f64::abs(p0));
            let theta = f64::signum(p0);
            let combined = (xi + eta * theta * w) / (1.0 + eta * eta).sqrt();
            let (mut x1, mut p1) = (0.0, p0);
            step_reduced_1d(&mut x1, &mut p1, &m, dt, combined);
            assert!((p1 - p2[0]).abs() < 1e-14 && (x1 - x2[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn one_step_variance_at_rest() {
        let m = builtin_dh(1.0, 1).unwrap();
        let dt = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let incs: Vec<f64> = (0..n)
            .map(|_| {
                let (mut x, mut p) = (vec![0.0], vec![0.0]);
                step(&mut x, &mut p, &m, dt, &[StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]);
                p[0]
            })
            .collect();
        let v = stats::variance(&incs);
        assert!((v / (2.0 * dt) - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn trajectories_are_reproducible() {
        let cfg = SimConfig::new(builtin_roup(1.0, 2).unwrap(), 20.0, 4, 99);
        let a = simulate_trajectory(&cfg, 3).unwrap();
        let b = simulate_trajectory(&cfg, 3).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.r_samples, b.r_samples);
        assert_eq!(a.r_samples.len(), 11);
        let c = simulate_trajectory(&cfg, 2).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn time_average_of_radius() {
        let model = builtin_roup(1.0, 1).unwrap();
        let dc = derive(&model).unwrap();
        let cfg = SimConfig::new(model, 100.0, 50, 5);
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..50 {
            for r in simulate_trajectory(&cfg, i).unwrap().r_samples {
                total += r;
                count += 1.0;
            }
        }
        let q = QuadratureConfig::default();
        let num =
            crate::quadrature::integrate_to_infinity(|r| r * dc.nu(r), 0.0, dc.envelope_rate(), &q).unwrap().value;
        let expected = num / dc.z_nu().unwrap();
        assert!((total / count / expected - 1.0).abs() < 0.1, "{} vs {expected}", total / count);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = SimConfig::new(builtin_dh(1.0, 1).unwrap(), 20.0, 64, 2024);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_msd(&cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.msd_over_t.to_bits(), b.msd_over_t.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        assert_eq!(a.radial_histogram.counts, b.radial_histogram.counts);
        assert_eq!(a.radial_histogram.total(), 64 * 11);
    }

    #[test]
    fn config_validation() {
        let m = builtin_roup(1.0, 1).unwrap();
        assert!(SimConfig::new(m.clone(), 10.0, 1, 0).with_dt(0.2).validate().is_err());
        assert!(SimConfig::new(m.clone(), 0.5, 1, 0).validate().is_err());
        assert!(SimConfig::new(m.clone(), 10.0, 0, 0).validate().is_err());
        assert!(estimate_msd(&SimConfig::new(m.clone(), 10.0, 1, 0)).is_err());
        assert!(sweep_beta(&SimConfig::new(m, 10.0, 10, 0), &[]).is_err());
    }

    #[test]
    fn seeds_differ_per_index() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}

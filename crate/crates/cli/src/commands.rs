use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::Serialize;
use serde_json::{json, Value};

use reldiff::simulator::{derive_seed, run_at, SweepRow};
use reldiff::{
    check_hypotheses, clt_report, derive, equilibrium_bin_probabilities, equilibrium_distance, resolve_model,
    sigma2_asymptotic, sigma2_dh_d1, sigma2_lemma2, sigma2_prop2, solve_psi, solve_psi_general, EnsembleStats,
    ModelFile, ModelKind, ModelSpec, NormalityReport, RadialGrid, Regime, SimConfig,
};

use crate::output::{check_writable, emit, write_file, ManifestBuilder, Table};
use crate::{Cli, Command, Failure, ModelCmd, ModelFlags, PsiCmd, Sigma2Cmd, SimulateCmd};

pub fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Model(c) => cmd_model(c),
        Command::Psi(c) => cmd_psi(c),
        Command::Sigma2(c) => cmd_sigma2(c),
        Command::Simulate(c) => cmd_simulate(c),
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow!(msg.into()))
}

fn resolve(flags: &ModelFlags) -> Result<ModelSpec, Failure> {
    match &flags.model_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read model file `{}`: {e}", path.display())))?;
            Ok(ModelFile::from_json(&text)?.to_spec()?)
        }
        None => Ok(resolve_model(&flags.model, flags.beta, flags.d)?),
    }
}

fn model_config(spec: &ModelSpec, flags: &ModelFlags) -> Value {
    json!({
        "model": spec.name,
        "model_file": flags.model_file.as_ref().map(|p| p.display().to_string()),
        "beta": spec.beta,
        "d": spec.d,
        "epsilon": spec.epsilon,
        "r_hyp": spec.r_hyp,
    })
}

fn check_targets(paths: &[Option<&PathBuf>]) -> Result<(), Failure> {
    paths.iter().flatten().try_for_each(|p| check_writable(p))
}

fn cmd_model(c: &ModelCmd) -> Result<u8, Failure> {
    check_targets(&[c.out.as_ref(), c.manifest.manifest.as_ref()])?;
    let spec = resolve(&c.model)?;
    let manifest = ManifestBuilder::start(
        json!({
            "command": "model",
            "model": model_config(&spec, &c.model),
            "scan_r_max": c.scan_r_max,
            "n_scan": c.n_scan,
        }),
        None,
    );
    let report = check_hypotheses(&spec, c.scan_r_max, c.n_scan)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Config(e.into()))? + "\n";
    print!("{text}");
    let mut outputs = vec!["<stdout>".to_string()];
    if let Some(p) = &c.out {
        write_file(p, &text)?;
        outputs.push(p.display().to_string());
    }
    manifest.finish(c.manifest.manifest.as_deref(), c.out.as_deref(), outputs)?;
    Ok(if report.all_ok() { 0 } else { 2 })
}

fn cmd_psi(c: &PsiCmd) -> Result<u8, Failure> {
    check_targets(&[c.out.as_ref(), c.manifest.manifest.as_ref()])?;
    if !(c.residual_tol > 0.0) {
        return Err(config_err("--residual-tol must be positive"));
    }
    let spec = resolve(&c.model)?;
    let manifest = ManifestBuilder::start(
        json!({
            "command": "psi",
            "model": model_config(&spec, &c.model),
            "r_max": c.r_max,
            "general": c.general,
            "residual_tol": c.residual_tol,
        }),
        None,
    );
    let dc = derive(&spec)?;
    let grid = match c.r_max {
        Some(r) => RadialGrid::with_r_max(spec.beta, r)?,
        None => RadialGrid::for_model(&dc)?,
    };
    let sol = if c.general { solve_psi_general(&dc, &grid)? } else { solve_psi(&dc, &grid)? };
    let mut table = Table::new(&["r", "psi", "psi_prime", "residual"]);
    for (j, &r) in grid.nodes().iter().enumerate() {
        table.row(&[r, sol.psi[j], sol.psi_prime[j], sol.residual[j]]);
    }
    let mut outputs = Vec::new();
    emit(c.out.as_deref(), &table.render(), &mut outputs)?;
    let line = format!("residual_sup = {:.6e} (tolerance {:.1e})", sol.residual_sup, c.residual_tol);
    if c.out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    manifest.finish(c.manifest.manifest.as_deref(), c.out.as_deref(), outputs)?;
    Ok(if sol.within_tolerance(c.residual_tol) { 0 } else { 2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Prop2,
    Lemma2,
    DhD1,
    Asymptotic,
}

fn parse_methods(list: &[String]) -> Result<Vec<Method>, Failure> {
    let mut out = Vec::new();
    for m in list {
        let method = match m.trim() {
            "prop2" => Method::Prop2,
            "lemma2" => Method::Lemma2,
            "dh_d1" => Method::DhD1,
            "asymptotic" => Method::Asymptotic,
            other => {
                return Err(config_err(format!(
                    "unknown method `{other}` (expected prop2, lemma2, dh_d1 or asymptotic)"
                )))
            }
        };
        if !out.contains(&method) {
            out.push(method);
        }
    }
    if out.is_empty() {
        return Err(config_err("--methods is empty"));
    }
    Ok(out)
}

fn cmd_sigma2(c: &Sigma2Cmd) -> Result<u8, Failure> {
    check_targets(&[c.out.as_ref(), c.manifest.manifest.as_ref()])?;
    let methods = parse_methods(&c.methods)?;
    let spec = resolve(&c.model)?;
    let betas = if c.beta_list.is_empty() { vec![spec.beta] } else { c.beta_list.clone() };
    if methods.contains(&Method::DhD1) && !(spec.kind == ModelKind::Dh && spec.d == 1) {
        return Err(config_err(format!(
            "method dh_d1 needs the dh model with d = 1, got `{}` with d = {}",
            spec.name, spec.d
        )));
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return Err(config_err(format!("beta must be positive, got {b}")));
    }
    let manifest = ManifestBuilder::start(
        json!({
            "command": "sigma2",
            "model": model_config(&spec, &c.model),
            "betas": betas,
            "methods": c.methods,
        }),
        None,
    );
    let mut table =
        Table::new(&["beta", "sigma2_prop2", "sigma2_lemma2", "sigma2_dh_d1", "asymptote", "error_estimate"]);
    for &beta in &betas {
        let model = spec.with_beta(beta)?;
        let (mut prop2, mut lemma2, mut dh, mut asym) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        let mut err = f64::NAN;
        let mut note_err = |e: f64| err = if err.is_nan() { e } else { err.max(e) };
        if methods.contains(&Method::Prop2) || methods.contains(&Method::Lemma2) {
            let dc = derive(&model)?;
            let grid = RadialGrid::for_model(&dc)?;
            let psi = solve_psi(&dc, &grid)?;
            if methods.contains(&Method::Prop2) {
                let v = sigma2_prop2(&dc, &psi)?;
                prop2 = v.sigma2;
                note_err(v.error_estimate);
            }
            if methods.contains(&Method::Lemma2) {
                let v = sigma2_lemma2(&dc, &psi)?;
                lemma2 = v.sigma2;
                note_err(v.error_estimate);
            }
        }
        if methods.contains(&Method::DhD1) {
            let v = sigma2_dh_d1(beta)?;
            dh = v.sigma2;
            note_err(v.error_estimate);
        }
        if methods.contains(&Method::Asymptotic) {
            let regime = if beta >= 1.0 { Regime::Large } else { Regime::Small };
            asym = sigma2_asymptotic(beta, regime)?.sigma2;
        }
        table.row(&[beta, prop2, lemma2, dh, asym, err]);
    }
    let mut outputs = Vec::new();
    emit(c.out.as_deref(), &table.render(), &mut outputs)?;
    manifest.finish(c.manifest.manifest.as_deref(), c.out.as_deref(), outputs)?;
    Ok(0)
}

#[derive(Serialize)]
struct RunSummary {
    config: Value,
    rows: Vec<RunEntry>,
}

#[derive(Serialize)]
struct RunEntry {
    row: SweepRow,
    stats: Option<EnsembleStats>,
    equilibrium_sup_distance: Option<f64>,
    normality: Option<NormalityReport>,
}

fn sidecar(out: Option<&Path>, suffix: &str) -> Option<PathBuf> {
    out.map(|o| {
        let mut s = o.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    })
}

fn cmd_simulate(c: &SimulateCmd) -> Result<u8, Failure> {
    check_targets(&[c.out.as_ref(), c.histogram.as_ref(), c.summary.as_ref(), c.manifest.manifest.as_ref()])?;
    let spec = resolve(&c.model)?;
    let mut template = SimConfig::new(spec.clone(), c.t_end, c.n_paths, c.seed).with_dt(c.dt);
    template.bins = c.bins;
    template.validate()?;
    if c.n_paths < 2 {
        return Err(config_err("--N must be at least 2"));
    }
    if let Some(b) = c.sweep.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return Err(config_err(format!("sweep beta must be positive, got {b}")));
    }
    let config = json!({
        "command": "simulate",
        "model": model_config(&spec, &c.model),
        "T": c.t_end,
        "N": c.n_paths,
        "dt": c.dt,
        "seed": c.seed,
        "sweep": c.sweep,
        "check_clt": c.check_clt,
        "bins": c.bins,
    });
    let manifest = ManifestBuilder::start(config.clone(), Some(c.seed));

    let runs: Vec<(SweepRow, Option<EnsembleStats>)> = if c.sweep.is_empty() {
        vec![run_at(&template, spec.beta, c.seed)]
    } else {
        c.sweep.iter().enumerate().map(|(k, &b)| run_at(&template, b, derive_seed(c.seed, k as u64))).collect()
    };

    let mut table = Table::new(&[
        "beta",
        "log10_inv_beta",
        "msd_over_t",
        "stderr",
        "sigma2_quadrature",
        "conjecture_2_over_2_plus_beta",
    ]);
    let mut hist = Table::new(&["beta", "r_lo", "r_hi", "count", "empirical_density", "equilibrium_density"]);
    let mut entries = Vec::with_capacity(runs.len());
    let mut diverged = false;
    for (row, stats) in runs {
        table.row(&[
            row.beta,
            row.log10_inv_beta,
            row.msd_over_t,
            row.stderr,
            row.sigma2_quadrature,
            row.conjecture_2_over_2_plus_beta,
        ]);
        if let Some(e) = &row.error {
            eprintln!("beta = {}: {e}", row.beta);
            diverged |= stats.is_none();
        }
        let (mut eq, mut normality) = (None, None);
        if let Some(st) = &stats {
            let model = spec.with_beta(row.beta)?;
            if let Ok(dc) = derive(&model) {
                let h = &st.radial_histogram;
                if let Ok(probs) = equilibrium_bin_probabilities(h, &dc) {
                    let total = h.total() as f64;
                    for (k, p) in probs.iter().enumerate() {
                        let w = h.edges[k + 1] - h.edges[k];
                        let count = h.counts[k] as f64;
                        hist.row(&[row.beta, h.edges[k], h.edges[k + 1], count, count / (total * w), p / w]);
                    }
                }
                eq = equilibrium_distance(st, &dc).ok();
            }
            if c.check_clt && row.sigma2_quadrature > 0.0 {
                normality = clt_report(st, row.sigma2_quadrature).ok();
            }
        }
        entries.push(RunEntry { row, stats, equilibrium_sup_distance: eq, normality });
    }

    let mut outputs = Vec::new();
    emit(c.out.as_deref(), &table.render(), &mut outputs)?;
    if let Some(p) = &c.histogram {
        write_file(p, &hist.render())?;
        outputs.push(p.display().to_string());
    }
    let summary = RunSummary { config, rows: entries };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Config(e.into()))? + "\n";
    match c.summary.clone().or_else(|| sidecar(c.out.as_deref(), ".summary.json")) {
        Some(p) => {
            write_file(&p, &text)?;
            outputs.push(p.display().to_string());
        }
        None => eprint!("{text}"),
    }
    manifest.finish(c.manifest.manifest.as_deref(), c.out.as_deref(), outputs)?;
    if diverged {
        eprintln!("hint: a smaller --dt usually avoids divergence");
        return Ok(2);
    }
    Ok(0)
}

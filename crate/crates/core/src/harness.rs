//! Seeded experiments: instance generation, the regime loops, and report persistence.
//!
//! A run writes `report.csv` (`step,metric,value`), `verdicts.json` and, when asked,
//! one log-scale SVG per metric under `plots/`. Each diagnostic row lands in the CSV as
//! a `residual:<check>` row followed by a `tol:<check>` row, so the verdicts can be
//! recomputed from the CSV alone with [`verdicts_from_rows`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contraction::{default_grid, lyapunov_search, weighted_decay_varying, LyapunovInput};
use crate::diagnostics::{DiagnosticRow, DiagnosticsReport, Series};
use crate::discrete::{self, build_model, DiscreteModel, ModelFile, StoppingRule};
use crate::divergences::{relative_entropy, DiscreteMeasure, Gaussian};
use crate::error::{domain, Error, Result};
use crate::fit::{fit_rate, RateFit};
use crate::gaussian::{self, GaussianInstance, GaussianModel, LinearGaussianKernel};
use crate::matcore::{random_orthogonal, random_spd};

pub const MAX_DISCRETE_SIZE: usize = 64;
pub const MAX_GAUSSIAN_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Discrete,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// `W` uniform on `[0, osc_cap]`, with both endpoints attained
    Bounded,
    /// `W(x, y) = (x − y)² / (2t)` on uniform grids of `[0, 1]`
    QuadraticGrid,
    GaussianRandomSpd,
}

impl Profile {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "bounded" => Ok(Profile::Bounded),
            "quadratic-grid" => Ok(Profile::QuadraticGrid),
            "gaussian-random-spd" => Ok(Profile::GaussianRandomSpd),
            other => domain(format!("unknown profile {other:?} (expected bounded, quadratic-grid or gaussian-random-spd)")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Bounded => "bounded",
            Profile::QuadraticGrid => "quadratic-grid",
            Profile::GaussianRandomSpd => "gaussian-random-spd",
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            Profile::GaussianRandomSpd => Regime::Gaussian,
            _ => Regime::Discrete,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub profile: String,
    /// `[nx, ny]` for discrete profiles, `[d]` for Gaussian ones
    pub size: Vec<usize>,
    /// `osc_cap` for "bounded" (default log 2), temperature for "quadratic-grid" (default 0.1)
    #[serde(default)]
    pub param: Option<f64>,
    /// replace the target by the push-forward of the source through the reference kernel
    #[serde(default)]
    pub self_bridged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    File(PathBuf),
    Inline(serde_json::Value),
    Generate(GenerateSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub instance: InstanceSource,
    /// number of even/odd step pairs
    pub iterations: usize,
    pub seed: u64,
    /// empty means every check of the regime
    #[serde(default)]
    pub checks: Vec<String>,
    pub output: PathBuf,
    #[serde(default)]
    pub plot: bool,
}

pub const DISCRETE_CHECKS: [&str; 5] = ["ladder", "identities", "geometric", "bridge_series", "lyapunov"];
pub const GAUSSIAN_CHECKS: [&str; 6] = ["riccati", "rate", "bridge", "entropy_formula", "envelope", "hessian"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        // instance paths are relative to the config file
        if let InstanceSource::File(p) = &mut c.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn known_checks(&self) -> &'static [&'static str] {
        match self.regime {
            Regime::Discrete => &DISCRETE_CHECKS,
            Regime::Gaussian => &GAUSSIAN_CHECKS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        let known = self.known_checks();
        for c in &self.checks {
            if !known.contains(&c.as_str()) {
                return Err(Error::Config(format!("unknown check {c:?} for this regime (known: {})", known.join(", "))));
            }
        }
        if let InstanceSource::Generate(g) = &self.instance {
            if Profile::parse(&g.profile).map_err(|e| Error::Config(e.to_string()))?.regime() != self.regime {
                return Err(Error::Config(format!("profile {} does not belong to this regime", g.profile)));
            }
        }
        Ok(())
    }

    pub fn active_checks(&self) -> Vec<String> {
        if self.checks.is_empty() {
            self.known_checks().iter().map(|s| s.to_string()).collect()
        } else {
            self.checks.clone()
        }
    }

    /// Sets a dotted key (`iterations`, `instance.generate.size`, ...) that must already exist.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => map.get_mut(part),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("override key {key:?} does not exist in the config")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let next: ExperimentConfig = serde_json::from_value(doc).map_err(|e| Error::Config(format!("override {key}={raw}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// SHA-256 of the config without its output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug)]
pub enum Instance {
    Discrete(DiscreteModel),
    Gaussian(GaussianModel),
}

impl Instance {
    pub fn regime(&self) -> Regime {
        match self {
            Instance::Discrete(_) => Regime::Discrete,
            Instance::Gaussian(_) => Regime::Gaussian,
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            Instance::Discrete(m) => serde_json::to_string_pretty(&m.to_file()),
            Instance::Gaussian(m) => serde_json::to_string_pretty(&m.to_instance()),
        }
        .expect("instances serialize")
    }

    pub fn from_json(regime: Regime, value: serde_json::Value) -> Result<Self> {
        match regime {
            Regime::Discrete => Ok(Instance::Discrete(DiscreteModel::from_file(&serde_json::from_value::<ModelFile>(value)?)?)),
            Regime::Gaussian => Ok(Instance::Gaussian(GaussianModel::from_instance(&serde_json::from_value::<GaussianInstance>(value)?)?)),
        }
    }
}

// stream ids keep each random quantity independent of the order they are drawn in
const STREAM_COST: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;
const STREAM_POTENTIALS: u64 = 3;
const STREAM_COVARIANCES: u64 = 4;
const STREAM_GAIN: u64 = 5;
const STREAM_MEANS: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_size(profile: Profile, size: &[usize]) -> Result<()> {
    match profile.regime() {
        Regime::Discrete => {
            if size.len() != 2 || size.iter().any(|&s| s == 0 || s > MAX_DISCRETE_SIZE) {
                return domain(format!("discrete size must be [nx, ny] with 1 ≤ nx, ny ≤ {MAX_DISCRETE_SIZE}, got {size:?}"));
            }
        }
        Regime::Gaussian => {
            if size.len() != 1 || size[0] == 0 || size[0] > MAX_GAUSSIAN_DIM {
                return domain(format!("gaussian size must be [d] with 1 ≤ d ≤ {MAX_GAUSSIAN_DIM}, got {size:?}"));
            }
        }
    }
    Ok(())
}

/// Deterministic instance for `(profile, size, seed, param)`.
pub fn generate_instance(profile: &str, size: &[usize], seed: u64, param: Option<f64>) -> Result<Instance> {
    let profile = Profile::parse(profile)?;
    check_size(profile, size)?;
    match profile {
        Profile::Bounded | Profile::QuadraticGrid => {
            let (nx, ny) = (size[0], size[1]);
            let w = match profile {
                Profile::Bounded => {
                    let cap = param.unwrap_or(std::f64::consts::LN_2);
                    if !(cap >= 0.0) || !cap.is_finite() {
                        return domain(format!("osc_cap must be finite and nonnegative, got {cap}"));
                    }
                    let mut rng = stream(seed, STREAM_COST);
                    let mut w = DMatrix::from_fn(nx, ny, |_, _| cap * rng.random::<f64>());
                    w[(0, 0)] = 0.0;
                    if nx * ny > 1 {
                        w[(nx - 1, ny - 1)] = cap;
                    }
                    w
                }
                _ => {
                    let t = param.unwrap_or(0.1);
                    if !(t > 0.0) || !t.is_finite() {
                        return domain(format!("temperature must be positive, got {t}"));
                    }
                    let grid = |n: usize, i: usize| if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                    DMatrix::from_fn(nx, ny, |i, j| (grid(nx, i) - grid(ny, j)).powi(2) / (2.0 * t))
                }
            };
            let mut rw = stream(seed, STREAM_WEIGHTS);
            let lambda: Vec<f64> = (0..nx).map(|_| 0.5 + rw.random::<f64>()).collect();
            let nu: Vec<f64> = (0..ny).map(|_| 0.5 + rw.random::<f64>()).collect();
            let mut rp = stream(seed, STREAM_POTENTIALS);
            let u: Vec<f64> = (0..nx).map(|_| 2.0 * rp.random::<f64>()).collect();
            let v: Vec<f64> = (0..ny).map(|_| 2.0 * rp.random::<f64>()).collect();
            Ok(Instance::Discrete(build_model(&w, &lambda, &nu, &u, &v)?))
        }
        Profile::GaussianRandomSpd => {
            let d = size[0];
            let mut rc = stream(seed, STREAM_COVARIANCES);
            let sigma = random_spd(&mut rc, d, 0.5, 2.0);
            let sigma_bar = random_spd(&mut rc, d, 0.5, 2.0);
            let tau = random_spd(&mut rc, d, 0.3, 1.0);
            let mut rg = stream(seed, STREAM_GAIN);
            let q = random_orthogonal(&mut rg, d);
            let diag = DVector::from_fn(d, |_, _| 0.8 + 0.7 * rg.random::<f64>());
            let beta = q * DMatrix::from_diagonal(&diag);
            let mut rm = stream(seed, STREAM_MEANS);
            let mut vec = || DVector::from_fn(d, |_, _| 2.0 * rm.random::<f64>() - 1.0);
            let (m, m_bar, alpha) = (vec(), vec(), vec());
            let model = GaussianModel::new(Gaussian::new(m, sigma)?, Gaussian::new(m_bar, sigma_bar)?, LinearGaussianKernel::new(alpha, beta, tau)?)?;
            Ok(Instance::Gaussian(model))
        }
    }
}

/// The same reference, with the target replaced by the source pushed through it.
pub fn self_bridged(instance: &Instance) -> Result<Instance> {
    match instance {
        Instance::Discrete(m) => {
            let eta0 = m.mu().push(&m.reference_kernel())?;
            let v: Vec<f64> = eta0.weights().iter().zip(m.nu()).map(|(e, n)| -(e / n).ln()).collect();
            Ok(Instance::Discrete(m.with_target(&v)?))
        }
        Instance::Gaussian(m) => Ok(Instance::Gaussian(GaussianModel::self_bridged(m.mu.clone(), m.kernel.clone())?)),
    }
}

pub fn load_instance(config: &ExperimentConfig) -> Result<Instance> {
    let inst = match &config.instance {
        InstanceSource::File(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Instance::from_json(config.regime, serde_json::from_str(&text)?)?
        }
        InstanceSource::Inline(v) => Instance::from_json(config.regime, v.clone())?,
        InstanceSource::Generate(g) => {
            let i = generate_instance(&g.profile, &g.size, config.seed, g.param)?;
            if g.self_bridged {
                self_bridged(&i)?
            } else {
                i
            }
        }
    };
    if inst.regime() != config.regime {
        return Err(Error::Config("instance regime does not match the config".into()));
    }
    Ok(inst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// config-level check id the rows came from
    pub group: String,
    pub check: String,
    pub pass: bool,
    /// largest `residual − tol` over the rows (≤ 0 when passing)
    pub worst_slack: f64,
    pub worst_residual: f64,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub instance_sha256: String,
    pub seed: u64,
    pub regime: Regime,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(skip)]
    pub rows: Vec<ReportRow>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
    pub all_pass: bool,
}

impl ExperimentReport {
    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }

    pub fn metric(&self, name: &str) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.metric == name).map(|r| (r.step, r.value)).collect()
    }
}

#[derive(Default)]
struct Collector {
    rows: Vec<ReportRow>,
    /// check name → group, in first-seen order
    groups: Vec<(String, String)>,
}

impl Collector {
    fn value(&mut self, step: usize, metric: &str, value: f64) {
        self.rows.push(ReportRow { step, metric: metric.to_string(), value });
    }

    fn series(&mut self, s: &Series) {
        for &(n, v) in &s.points {
            self.value(n, &s.name, v);
        }
    }

    fn fit(&mut self, name: &str, fit: Option<RateFit>, bound: Option<f64>) {
        if let Some(f) = fit {
            self.value(f.points, &format!("fit_slope:{name}"), f.slope);
            self.value(f.points, &format!("fit_r2:{name}"), f.r2);
        }
        if let Some(b) = bound {
            self.value(0, &format!("fit_bound:{name}"), b);
        }
    }

    fn diagnostics(&mut self, group: &str, rep: &DiagnosticsReport) {
        for r in &rep.rows {
            if !self.groups.iter().any(|(c, _)| c == &r.check) {
                self.groups.push((r.check.clone(), group.to_string()));
            }
            // a NaN residual can only fail; keep it visible as +inf
            let residual = if r.residual.is_nan() { f64::INFINITY } else { r.residual };
            self.value(r.n, &format!("residual:{}", r.check), residual);
            self.value(r.n, &format!("tol:{}", r.check), r.tol);
        }
    }
}

/// Rebuilds the verdicts from `residual:`/`tol:` row pairs.
pub fn verdicts_from_rows(rows: &[ReportRow]) -> Vec<(String, bool, f64)> {
    let mut out: Vec<(String, bool, f64)> = Vec::new();
    let mut pending: Option<(&str, f64)> = None;
    for r in rows {
        if let Some(c) = r.metric.strip_prefix("residual:") {
            pending = Some((c, r.value));
        } else if let Some(c) = r.metric.strip_prefix("tol:") {
            let (name, res) = pending.take().filter(|p| p.0 == c).expect("tol row follows its residual row");
            let pass = res <= r.value;
            match out.iter_mut().find(|v| v.0 == name) {
                Some(v) => {
                    v.1 &= pass;
                    v.2 = v.2.max(res);
                }
                None => out.push((name.to_string(), pass, res)),
            }
        }
    }
    out
}

fn build_verdicts(c: &Collector) -> Vec<Verdict> {
    let mut acc: BTreeMap<&str, (bool, f64, f64, usize)> = BTreeMap::new();
    let mut pending: Option<f64> = None;
    for r in &c.rows {
        if r.metric.starts_with("residual:") {
            pending = Some(r.value);
        } else if let Some(name) = r.metric.strip_prefix("tol:") {
            let res = pending.take().unwrap_or(f64::INFINITY);
            let e = acc.entry(name).or_insert((true, f64::NEG_INFINITY, f64::NEG_INFINITY, 0));
            e.0 &= res <= r.value;
            e.1 = e.1.max(res - r.value);
            e.2 = e.2.max(res);
            e.3 += 1;
        }
    }
    c.groups
        .iter()
        .map(|(check, group)| {
            let (pass, slack, res, n) = acc[check.as_str()];
            Verdict { group: group.clone(), check: check.clone(), pass, worst_slack: slack, worst_residual: res, rows: n }
        })
        .collect()
}

/// A check that could not be evaluated fails visibly instead of disappearing.
fn unavailable(group: &str) -> DiagnosticsReport {
    let mut rep = DiagnosticsReport::default();
    rep.push(DiagnosticRow::residual(&format!("{group}_unavailable"), 0, f64::INFINITY, 0.0));
    rep
}

fn run_discrete(config: &ExperimentConfig, model: &DiscreteModel, out: &mut Collector) -> Result<()> {
    let checks = config.active_checks();
    let n = config.iterations + 1;
    let iterates = discrete::run_iterates(model, n)?;
    out.value(0, "epsilon_w", model.epsilon_w());
    for it in &iterates {
        out.value(it.step, "kl_eta_pi_even", relative_entropy(model.eta().weights(), it.pi_even.weights()));
        out.value(it.step, "kl_mu_pi_odd", relative_entropy(model.mu().weights(), it.pi_odd.weights()));
    }
    let needs_bridge = checks.iter().any(|c| c == "ladder" || c == "bridge_series");
    let bridge = if needs_bridge { Some(discrete::solve_bridge(model, StoppingRule::default())?) } else { None };
    if let Some(b) = &bridge {
        out.value(b.iterations_used, "bridge_residual", b.residual);
    }
    for check in &checks {
        match check.as_str() {
            "ladder" => {
                let b = bridge.as_ref().unwrap();
                let ladder = discrete::entropy_ladder(model, &iterates, &b.bridge)?;
                let mut rep = DiagnosticsReport::default();
                rep.push(DiagnosticRow::residual("bridge_solved", b.iterations_used, b.residual, StoppingRule::default().tol));
                for r in &ladder.rows {
                    out.value(r.n, "h_bridge_even", r.h_q_even);
                    let res = if r.infinite { f64::INFINITY } else { r.residual.max(r.half_residual) };
                    rep.push(DiagnosticRow::residual("ladder", r.n, res, 1e-9));
                }
                out.diagnostics(check, &rep);
            }
            "identities" => {
                let rep = discrete::identity_suite(model, &iterates)?;
                out.diagnostics(check, &rep);
            }
            "geometric" => {
                let rr = discrete::geometric_rate_report(model, &iterates)?;
                out.value(0, "geometric_bound", rr.bound);
                for s in &rr.series {
                    out.series(s);
                    if s.name.starts_with("phi_") {
                        out.fit(&s.name, fit_rate(&s.points, None), Some(rr.bound.ln()));
                    }
                }
                out.fit("sup_density_gap", rr.sup_norm_fit, Some(rr.bound.ln()));
                out.diagnostics(check, &rr.diagnostics);
            }
            "bridge_series" => {
                let b = bridge.as_ref().unwrap();
                let (rep, series, fit) = discrete::bridge_series_report(model, &iterates, b)?;
                for s in &series {
                    out.series(s);
                }
                out.fit("potential_gap_v", fit, Some((1.0 - model.epsilon_w()).powi(2).ln()));
                out.value(0, "series_constant", discrete::fitted_series_constant(model, &series[0]));
                out.diagnostics(check, &rep);
            }
            "lyapunov" => {
                let rep = lyapunov_check(model, &iterates, out)?;
                out.diagnostics(check, &rep);
            }
            _ => unreachable!("validated"),
        }
    }
    Ok(())
}

/// Uniform Lyapunov certificate over the Sinkhorn kernel pairs and the weighted decay it implies.
pub fn lyapunov_certificate_input(model: &DiscreteModel, iterates: &[discrete::SinkhornIterate], delta: f64) -> LyapunovInput {
    let (u, v) = model.potentials_uv();
    LyapunovInput {
        pairs: iterates.iter().map(|it| (it.kernel_even.clone(), it.kernel_odd.clone())).collect(),
        g: u.iter().map(|x| (delta * x).exp()).collect(),
        h: v.iter().map(|y| (delta * y).exp()).collect(),
        ref_x: model.mu().clone(),
        ref_y: model.eta().clone(),
        epsilon: 0.5,
    }
}

fn lyapunov_check(model: &DiscreteModel, iterates: &[discrete::SinkhornIterate], out: &mut Collector) -> Result<DiagnosticsReport> {
    let input = lyapunov_certificate_input(model, iterates, 0.25);
    let mut rep = DiagnosticsReport::default();
    match lyapunov_search(&input, &default_grid())? {
        Ok(cert) => {
            out.value(0, "lyapunov_a", cert.a);
            out.value(0, "lyapunov_rho", cert.rho);
            rep.push(DiagnosticRow::le("lyapunov_rho_below_one", 0, cert.rho, 1.0, 0.0));
            rep.push(DiagnosticRow::residual("lyapunov_certificate_verified", 0, if cert.verify(&input)? { 0.0 } else { 1.0 }, 0.0));
            let g_a: Vec<f64> = input.g.iter().map(|g| 0.5 + cert.a * g).collect();
            let start = input.g.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
            let m1 = DiscreteMeasure::dirac(model.nx, start);
            let kernels: Vec<(DMatrix<f64>, DMatrix<f64>)> = input.pairs.clone();
            let decay = weighted_decay_varying(&kernels, &m1, model.mu(), &g_a)?;
            for (n, d) in decay.iter().enumerate() {
                out.value(n, "lyapunov_weighted_gap", *d);
                rep.push(DiagnosticRow::le("lyapunov_decay", n, *d, cert.rho.powi(2 * n as i32) * decay[0], 1e-10));
            }
        }
        Err(fail) => {
            out.value(0, "lyapunov_rho", fail.best_rho);
            rep.push(DiagnosticRow::le("lyapunov_rho_below_one", 0, fail.best_rho, 1.0, 0.0));
        }
    }
    Ok(rep)
}

fn run_gaussian(config: &ExperimentConfig, model: &GaussianModel, out: &mut Collector) -> Result<()> {
    let checks = config.active_checks();
    let half_steps = 2 * config.iterations + 1;
    let traj = gaussian::gaussian_trajectory(model, half_steps)?;
    let bridge = gaussian::schrodinger_bridge_gaussian(model)?;
    let (r_eig, _) = bridge.r.as_sym().eigen();
    for (i, v) in r_eig.iter().enumerate() {
        out.value(i, "riccati_fixed_point", *v);
    }
    for check in &checks {
        let mut rep = DiagnosticsReport::default();
        match check.as_str() {
            "riccati" => {
                let p = &bridge.problem;
                let (mut ve, mut vo) = (traj[0].upsilon.clone(), traj[1].upsilon.clone());
                for s in &traj[2..] {
                    let v = if s.is_even() {
                        ve = p.apply(ve.as_sym())?;
                        &ve
                    } else {
                        vo = p.apply_bar(vo.as_sym())?;
                        &vo
                    };
                    rep.push(DiagnosticRow::residual("riccati_flow", s.step, (s.upsilon.matrix() - v.matrix()).amax(), 1e-10));
                }
                let scale = p.varpi.spectral_norm().max(1.0);
                for (i, res) in gaussian::fixed_point_residuals(&p.varpi, &bridge.r)?.iter().enumerate() {
                    rep.push(DiagnosticRow::residual("fixed_point_equation", i, *res, 1e-12 * scale));
                }
            }
            "rate" => match gaussian::rate_report(&traj, &bridge, model) {
                Ok(rr) => {
                    for r in &rr.rows {
                        out.value(r.n, "tau_err", r.tau_err);
                        out.value(r.n, "sqrt_err", r.sqrt_err);
                        out.value(r.n, "mean_err", r.mean_err);
                        out.value(r.n, "directed_norm", r.directed_norm);
                        out.value(r.n, "marginal_cov_err", r.marginal_cov_err);
                    }
                    out.series(&rr.odd_series);
                    out.fit("tau_err", rr.fit, Some(rr.theoretical_slope));
                    out.fit("odd.tau_err", rr.odd_fit, None);
                    rep = rr.diagnostics;
                    if rr.fit.is_none() {
                        // saturated before five points: the slope check is vacuous, not failed
                        out.value(0, "riccati_slope_unavailable", 1.0);
                    }
                }
                Err(Error::Domain(_)) => rep = unavailable("rate"),
                Err(e) => return Err(e),
            },
            "bridge" => {
                let p = gaussian::push_forward(&model.mu, &bridge.kernel)?;
                rep.push(DiagnosticRow::residual("bridge_mean", 0, (&p.mean - &model.eta.mean).amax(), 1e-10));
                rep.push(DiagnosticRow::residual("bridge_covariance", 0, (p.cov.matrix() - model.eta.cov.matrix()).norm(), 1e-10));
                let t = &bridge.drift * model.mu.cov.matrix() * bridge.drift.transpose() + bridge.varsigma.matrix();
                rep.push(DiagnosticRow::residual("bridge_transport_identity", 0, (t - model.eta.cov.matrix()).amax(), 1e-10));
            }
            "entropy_formula" => {
                for s in traj.iter().filter(|s| s.is_even()) {
                    let f = gaussian::bridge_entropy(s, &bridge, model)?;
                    let o = gaussian::joint_entropy_oracle(s, &bridge, model)?;
                    out.value(s.step / 2, "entropy_forward", f);
                    rep.push(DiagnosticRow::eq("entropy_formula", s.step / 2, f, o, 1e-9));
                }
            }
            "envelope" => {
                let env = gaussian::envelope_report(model, &traj, &bridge)?;
                out.value(0, "epsilon", env.epsilon);
                out.value(0, "epsilon_bar", env.epsilon_bar);
                for (k, v) in env.entropies.iter().enumerate() {
                    out.value(k, "entropy_reverse", *v);
                }
                out.series(&Series::from_values("w2_even", &env.w2_even));
                out.series(&Series::from_values("odd.w2", &env.w2_odd));
                if env.vacuous {
                    out.value(0, "envelope_vacuous", 1.0);
                }
                rep = env.diagnostics;
            }
            "hessian" => {
                for s in traj.iter().filter(|s| s.is_even() && s.step + 1 < traj.len()) {
                    let h = gaussian::potential_hessian(s, model)?;
                    rep.push(DiagnosticRow::residual("hessian_decomposition", s.step / 2, h.decomposition_residual, 1e-10));
                    rep.push(DiagnosticRow::residual("hessian_curvature", s.step / 2, if h.curvature_ok { 0.0 } else { 1.0 }, 0.0));
                }
            }
            _ => unreachable!("validated"),
        }
        out.diagnostics(check, &rep);
    }
    Ok(())
}

/// Runs one experiment in memory.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let inst = load_instance(config)?;
    let mut out = Collector::default();
    match &inst {
        Instance::Discrete(m) => run_discrete(config, m, &mut out)?,
        Instance::Gaussian(m) => run_gaussian(config, m, &mut out)?,
    }
    let verdicts = build_verdicts(&out);
    let all_pass = verdicts.iter().all(|v| v.pass);
    Ok(ExperimentReport {
        rows: out.rows,
        verdicts,
        provenance: Provenance {
            config_sha256: config.digest(),
            instance_sha256: sha256_hex(inst.to_json().as_bytes()),
            seed: config.seed,
            regime: config.regime,
            iterations: config.iterations,
        },
        all_pass,
    })
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("step,metric,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e}", r.step, r.metric, r.value);
    }
    s
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("step,metric,value") {
        return domain("report.csv: missing header");
    }
    lines
        .map(|l| {
            let mut it = l.splitn(3, ',');
            let (a, b, c) = (it.next(), it.next(), it.next());
            match (a.and_then(|a| a.parse().ok()), b, c.and_then(|c| c.parse().ok())) {
                (Some(step), Some(metric), Some(value)) => Ok(ReportRow { step, metric: metric.to_string(), value }),
                _ => domain(format!("report.csv: bad line {l:?}")),
            }
        })
        .collect()
}

/// Runs one experiment and writes its artifacts under `config.output`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let report = execute(config)?;
    let dir = &config.output;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_csv(&report.rows))?;
    std::fs::write(dir.join("verdicts.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if config.plot {
        write_plots(&dir.join("plots"), &report.rows)?;
    }
    Ok(report)
}

/// Runs experiments on up to `jobs` threads; results keep the input order.
pub fn run_many(configs: &[ExperimentConfig], jobs: usize) -> Vec<Result<ExperimentReport>> {
    let jobs = jobs.max(1).min(configs.len().max(1));
    let mut results: Vec<Option<Result<ExperimentReport>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(configs.len().div_ceil(jobs).max(1)).zip(configs.chunks(configs.len().div_ceil(jobs).max(1))).collect();
        for (slots, cfgs) in chunks {
            scope.spawn(move || {
                for (slot, cfg) in slots.iter_mut().zip(cfgs) {
                    *slot = Some(run_experiment(cfg));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot is filled")).collect()
}

fn plot_name(metric: &str) -> String {
    metric.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// One log-scale line plot per plain metric with at least two positive points.
pub fn write_plots(dir: &Path, rows: &[ReportRow]) -> Result<Vec<PathBuf>> {
    let mut by_metric: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        if r.metric.contains(':') {
            continue;
        }
        by_metric.entry(&r.metric).or_default().push((r.step, r.value));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (metric, pts) in by_metric {
        let pts: Vec<(usize, f64)> = pts.into_iter().filter(|p| p.1 > 0.0 && p.1.is_finite()).collect();
        if pts.len() < 2 {
            continue;
        }
        let path = dir.join(format!("{}.svg", plot_name(metric)));
        std::fs::write(&path, svg_log_plot(metric, &pts))?;
        written.push(path);
    }
    Ok(written)
}

pub fn svg_log_plot(title: &str, pts: &[(usize, f64)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let xmax = pts.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let xmin = pts.iter().map(|p| p.0).min().unwrap_or(0) as f64;
    let ly: Vec<f64> = pts.iter().map(|p| p.1.log10()).collect();
    let (mut lo, mut hi) = (ly.iter().cloned().fold(f64::INFINITY, f64::min).floor(), ly.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil());
    if hi <= lo {
        hi = lo + 1.0;
        lo -= 1.0;
    }
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(1.0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - lo) / (hi - lo) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let mut e = lo as i32;
    while e as f64 <= hi {
        let y = sy(e as f64);
        let _ = writeln!(s, r##"<line x1="{pad}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, w - pad);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">1e{e}</text>"#, pad - 4.0, y + 3.0);
        e += 1;
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">step</text>"#, w / 2.0, h - 12.0);
    let path: Vec<String> = pts.iter().zip(&ly).map(|(p, y)| format!("{:.2},{:.2}", sx(p.0 as f64), sy(*y))).collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##, path.join(" "));
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

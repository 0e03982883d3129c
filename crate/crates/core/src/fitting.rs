//! Least-squares estimation of `(σ, f, p̃)` from measured `R(Δp)` curves.
//!
//! The objective is `Σ wᵢ (R(Δpᵢ) − rᵢ)²` with `wᵢ = 1/σ_Rᵢ²` when the
//! dataset carries uncertainties and `1` otherwise. It is minimized by a
//! bounded Levenberg-Marquardt iteration with forward-difference Jacobians,
//! restarted from Latin-hypercube points; the best converged start wins,
//! ties going to the lower start index.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlation::correlation_r;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub delta_p: f64,
    pub r: f64,
    /// Measurement uncertainty of `r`.
    pub sigma_r: Option<f64>,
}

impl DataPoint {
    pub fn new(delta_p: f64, r: f64) -> Self {
        Self { delta_p, r, sigma_r: None }
    }

    pub fn weight(&self) -> f64 {
        self.sigma_r.map_or(1.0, |s| 1.0 / (s * s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<DataPoint>,
    pub label: String,
}

impl Dataset {
    /// Sorts by `delta_p` and validates. `r < −1` is only warned about.
    pub fn new(mut points: Vec<DataPoint>, label: impl Into<String>) -> Result<Self> {
        for p in &points {
            if !(p.delta_p.is_finite() && p.delta_p > 0.0) {
                return Err(Error::Domain(format!("delta_p must be finite and > 0, got {}", p.delta_p)));
            }
            if !p.r.is_finite() {
                return Err(Error::Domain(format!("R must be finite, got {}", p.r)));
            }
            if let Some(s) = p.sigma_r {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Domain(format!("sigma_R must be finite and > 0, got {s}")));
                }
            }
        }
        points.sort_by(|a, b| a.delta_p.total_cmp(&b.delta_p));
        if let Some(w) = points.windows(2).find(|w| w[0].delta_p == w[1].delta_p) {
            return Err(Error::Domain(format!("duplicate delta_p {}", w[0].delta_p)));
        }
        let below = points.iter().filter(|p| p.r < -1.0).count();
        if below > 0 {
            log::warn!("{below} point(s) with R < -1, outside the physical range");
        }
        Ok(Self {
            points,
            label: label.into(),
        })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_uncertainties(&self) -> bool {
        self.points.iter().any(|p| p.sigma_r.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Free { lo: f64, hi: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PTilde {
    Free { lo: f64, hi: f64 },
    Fixed(f64),
    /// `p̃ = ratio · σ`.
    RelativeToSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub sigma: Param,
    pub f: Param,
    pub p_tilde: PTilde,
    pub multistart_count: usize,
    pub max_iterations: usize,
    /// Relative step size below which a start is converged.
    pub step_tol: f64,
    /// Relative objective decrease below which a start is converged.
    pub residual_tol: f64,
    pub rng_seed: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sigma: Param::Free { lo: 1e-3, hi: 10.0 },
            f: Param::Free { lo: 0.0, hi: 1.0 },
            p_tilde: PTilde::RelativeToSigma(0.1),
            multistart_count: 16,
            max_iterations: 200,
            step_tol: 1e-10,
            residual_tol: 1e-14,
            rng_seed: 0,
            exec: Execution::default(),
        }
    }
}

/// Multistart σ range, intersected with the σ bounds.
const SIGMA_START: (f64, f64) = (0.05, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Sigma,
    F,
    PTilde,
}

impl Slot {
    fn name(self) -> &'static str {
        match self {
            Slot::Sigma => "sigma",
            Slot::F => "f",
            Slot::PTilde => "p_tilde",
        }
    }
}

/// Free coordinates with their bounds.
#[derive(Debug, Clone)]
struct Space {
    slots: Vec<(Slot, f64, f64)>,
    config: FitConfig,
}

impl Space {
    fn new(config: &FitConfig) -> Result<Self> {
        let bad = |m: String| Err(Error::Domain(m));
        let mut slots = Vec::new();
        match config.sigma {
            Param::Free { lo, hi } => {
                if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                    return bad(format!("sigma bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"));
                }
                slots.push((Slot::Sigma, lo, hi));
            }
            Param::Fixed(v) if !(v > 0.0 && v.is_finite()) => return bad(format!("fixed sigma must be > 0, got {v}")),
            Param::Fixed(_) => {}
        }
        match config.f {
            Param::Free { lo, hi } => {
                if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                    return bad(format!("f bounds must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"));
                }
                slots.push((Slot::F, lo, hi));
            }
            Param::Fixed(v) if !(0.0..=1.0).contains(&v) => return bad(format!("fixed f must lie in [0, 1], got {v}")),
            Param::Fixed(_) => {}
        }
        match config.p_tilde {
            PTilde::Free { lo, hi } => {
                if !(0.0 <= lo && lo < hi && hi.is_finite()) {
                    return bad(format!("p_tilde bounds must satisfy 0 <= lo < hi, got [{lo}, {hi}]"));
                }
                slots.push((Slot::PTilde, lo, hi));
            }
            PTilde::Fixed(v) | PTilde::RelativeToSigma(v) if !(v >= 0.0 && v.is_finite()) => {
                return bad(format!("fixed p_tilde must be >= 0, got {v}"))
            }
            _ => {}
        }
        if slots.is_empty() {
            return bad("at least one parameter must be free".into());
        }
        if config.multistart_count == 0 || config.max_iterations == 0 {
            return bad("multistart_count and max_iterations must be > 0".into());
        }
        Ok(Self {
            slots,
            config: *config,
        })
    }

    fn dim(&self) -> usize {
        self.slots.len()
    }

    fn params(&self, theta: &[f64]) -> ModelParams {
        let get = |slot: Slot| {
            self.slots
                .iter()
                .position(|s| s.0 == slot)
                .map(|i| theta[i])
        };
        let sigma = get(Slot::Sigma).unwrap_or_else(|| match self.config.sigma {
            Param::Fixed(v) => v,
            Param::Free { .. } => unreachable!(),
        });
        let f = get(Slot::F).unwrap_or_else(|| match self.config.f {
            Param::Fixed(v) => v,
            Param::Free { .. } => unreachable!(),
        });
        let p_tilde = get(Slot::PTilde).unwrap_or_else(|| match self.config.p_tilde {
            PTilde::Fixed(v) => v,
            PTilde::RelativeToSigma(k) => k * sigma,
            PTilde::Free { .. } => unreachable!(),
        });
        ModelParams::new(sigma, f, p_tilde)
    }

    fn clamp(&self, theta: &mut [f64]) {
        for (t, &(_, lo, hi)) in theta.iter_mut().zip(&self.slots) {
            *t = t.clamp(lo, hi);
        }
    }

    /// Latin-hypercube starts; σ is stratified in log space.
    fn starts(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = vec![vec![0.0; self.dim()]; n];
        for (d, &(slot, lo, hi)) in self.slots.iter().enumerate() {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            for (i, &k) in perm.iter().enumerate() {
                let u = (k as f64 + rng.random::<f64>()) / n as f64;
                pts[i][d] = if slot == Slot::Sigma {
                    let a = SIGMA_START.0.max(lo);
                    let b = SIGMA_START.1.min(hi).max(a);
                    (a.ln() + u * (b.ln() - a.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
            }
        }
        pts
    }
}

/// Outcome of a fit. `sigma`, `f` and `p_tilde` are the full parameter
/// set, fixed ones included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub sigma: f64,
    pub f: f64,
    pub p_tilde: f64,
    pub free_params: Vec<String>,
    /// `None` when the data are identically zero.
    pub approx_error_pct: Option<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    /// `r − R_model` per point, in dataset order.
    pub residuals: Vec<f64>,
    pub start_index: usize,
    pub label: String,
}

impl FitResult {
    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.sigma, self.f, self.p_tilde)
    }
}

fn model_values(data: &Dataset, params: &ModelParams) -> Result<Vec<f64>> {
    data.points.iter().map(|p| correlation_r(p.delta_p, params)).collect()
}

/// Weighted relative RMS deviation, in percent:
/// `100 · sqrt(Σ w (R − r)² / Σ w r²)`.
pub fn approximation_error(data: &Dataset, params: &ModelParams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("dataset is empty".into()));
    }
    let model = model_values(data, params)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, m) in data.points.iter().zip(&model) {
        let w = p.weight();
        num += w * (m - p.r).powi(2);
        den += w * p.r * p.r;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("all data R values are zero".into()));
    }
    Ok(100.0 * (num / den).sqrt())
}

/// `rᵢ = R(Δpᵢ)(1 + noise_rel·ξᵢ)` with standard normal `ξᵢ`.
pub fn synthesize(params: &ModelParams, grid: &[f64], noise_rel: f64, rng_seed: u64) -> Result<Dataset> {
    if !(noise_rel >= 0.0 && noise_rel.is_finite()) {
        return Err(Error::Domain(format!("noise_rel must be >= 0, got {noise_rel}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut points = Vec::with_capacity(grid.len());
    for &dp in grid {
        let xi: f64 = rng.sample(StandardNormal);
        let r = correlation_r(dp, params)?;
        points.push(DataPoint::new(dp, r * (1.0 + noise_rel * xi)));
    }
    Dataset::new(
        points,
        format!("synthetic sigma={} f={} p_tilde={} noise={}", params.sigma, params.f, params.p_tilde, noise_rel),
    )
}

struct Problem<'a> {
    data: &'a Dataset,
    space: &'a Space,
    sqrt_w: Vec<f64>,
}

impl Problem<'_> {
    /// Weighted residual vector `√w (R − r)`; `None` off the model domain.
    fn residuals(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let params = self.space.params(theta);
        let mut out = DVector::zeros(self.data.len());
        for (i, p) in self.data.points.iter().enumerate() {
            let m = correlation_r(p.delta_p, &params).ok()?;
            out[i] = self.sqrt_w[i] * (m - p.r);
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    fn jacobian(&self, theta: &[f64], r0: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(r0.len(), theta.len());
        for (j, &(_, lo, hi)) in self.space.slots.iter().enumerate() {
            let mut h = 1e-6 * theta[j].abs().max(1e-3);
            if theta[j] + h > hi {
                h = -h;
            }
            let mut probe = theta.to_vec();
            probe[j] = (theta[j] + h).clamp(lo, hi);
            let step = probe[j] - theta[j];
            let r1 = self.residuals(&probe)?;
            jac.set_column(j, &((r1 - r0) / step));
        }
        Some(jac)
    }
}

struct LocalFit {
    theta: Vec<f64>,
    objective: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

fn levenberg_marquardt(problem: &Problem, start: &[f64], config: &FitConfig) -> Option<LocalFit> {
    let mut theta = start.to_vec();
    let mut r = problem.residuals(&theta)?;
    let mut obj = r.norm_squared();
    let mut trace = vec![obj];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations && !converged {
        iterations += 1;
        if obj == 0.0 {
            converged = true;
            break;
        }
        let jac = problem.jacobian(&theta, &r)?;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let diag_floor = 1e-12 * jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(diag_floor);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            problem.space.clamp(&mut trial);
            let step: f64 = trial
                .iter()
                .zip(&theta)
                .map(|(a, b)| ((a - b) / b.abs().max(1e-3)).powi(2))
                .sum::<f64>()
                .sqrt();
            match problem.residuals(&trial) {
                Some(rt) if rt.norm_squared() < obj => {
                    let new_obj = rt.norm_squared();
                    let decrease = (obj - new_obj) / obj;
                    theta = trial;
                    r = rt;
                    obj = new_obj;
                    trace.push(obj);
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    converged = decrease < config.residual_tol || step < config.step_tol;
                    break;
                }
                _ if step < config.step_tol => {
                    converged = true;
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted && !converged {
            // No descent direction left at any damping: a (bounded) minimum.
            converged = true;
        }
    }
    Some(LocalFit {
        theta,
        objective: obj,
        converged,
        iterations,
        trace,
    })
}

/// Bounded multistart least-squares fit of `R(Δp)` to `data`.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    let space = Space::new(config)?;
    let needed = 2 * space.dim();
    if data.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} point(s) for {} free parameter(s); need at least {needed}",
            data.len(),
            space.dim()
        )));
    }
    let problem = Problem {
        data,
        space: &space,
        sqrt_w: data.points.iter().map(|p| p.weight().sqrt()).collect(),
    };
    let starts = space.starts(config.multistart_count, config.rng_seed);
    check_sensitivity(&problem, &starts)?;

    let runs = config
        .exec
        .map_slice(&starts, |s| levenberg_marquardt(&problem, s, config));
    let pick = |want_converged: bool| {
        runs.iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
            .filter(|(_, r)| r.converged || !want_converged)
            .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
    };
    let (converged, (index, best)) = match pick(true) {
        Some(b) => (true, b),
        None => (
            false,
            pick(false).ok_or_else(|| Error::Domain("model undefined at every start".into()))?,
        ),
    };

    let params = space.params(&best.theta);
    let model = model_values(data, &params)?;
    let approx = match approximation_error(data, &params) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let result = FitResult {
        sigma: params.sigma,
        f: params.f,
        p_tilde: params.p_tilde,
        free_params: space.slots.iter().map(|s| s.0.name().to_string()).collect(),
        approx_error_pct: approx,
        objective: best.objective,
        converged,
        iterations: best.iterations,
        objective_trace: best.trace.clone(),
        residuals: data.points.iter().zip(&model).map(|(p, m)| p.r - m).collect(),
        start_index: index,
        label: data.label.clone(),
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::NonConvergence(Box::new(result)))
    }
}

/// A free parameter whose Jacobian column vanishes at every start cannot
/// be estimated from these data.
fn check_sensitivity(problem: &Problem, starts: &[Vec<f64>]) -> Result<()> {
    let mut sensitive = vec![false; problem.space.dim()];
    for s in starts {
        let Some(r0) = problem.residuals(s) else { continue };
        let Some(jac) = problem.jacobian(s, &r0) else { continue };
        for (j, flag) in sensitive.iter_mut().enumerate() {
            *flag |= jac.column(j).amax() > 1e-12;
        }
    }
    match sensitive.iter().position(|&s| !s) {
        Some(j) => Err(Error::InsufficientSensitivity(format!(
            "R does not depend on {} for this configuration",
            problem.space.slots[j].0.name()
        ))),
        None => Ok(()),
    }
}

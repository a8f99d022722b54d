//! Stress-based training: the masked Frobenius loss with its exact parameter
//! gradient, a bound-constrained L-BFGS optimizer and the restart harness.

use std::collections::VecDeque;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{solve_pressure, Dataset, Partition, Sample};
use crate::icnn::{Architecture, IcnnParams, Tape};
use crate::kinematics::{self, Tensor3};
use crate::variants::{InputMap, VariantKind, VariantModel};
use crate::{Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "POLYFLEX_THREADS";

fn check_kind(kind: VariantKind, dataset: &Dataset) -> Result<()> {
    if kind.compressible == dataset.incompressible {
        let model = if kind.compressible { "compressible" } else { "incompressible" };
        return Err(Error::KindMismatch { model, data: dataset.kind_name() });
    }
    Ok(())
}

/// Stress the model predicts for a sample, including the eliminated pressure
/// for incompressible data.
pub fn predicted_stress(model: &VariantModel, sample: &Sample) -> Result<Tensor3> {
    let g = model.stress(&sample.f)?;
    if model.kind.compressible {
        Ok(g)
    } else {
        let p = solve_pressure(&g, &sample.f)?;
        Ok(g - kinematics::cofactor(&sample.f) * p)
    }
}

/// Mean over samples of the squared Frobenius norm of the masked stress error.
pub fn mse_loss(model: &VariantModel, dataset: &Dataset, part: Partition) -> Result<f64> {
    check_kind(model.kind, dataset)?;
    let samples = dataset.subset(part);
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in &samples {
        let diff = (predicted_stress(model, s)? - s.p).component_mul(&s.mask_tensor());
        total += diff.norm_squared();
    }
    Ok(total / samples.len() as f64)
}

struct PreparedSample {
    inputs: Vec<Vec<f64>>,
    jacobians: Vec<Vec<[f64; 3]>>,
    /// Masked `∂P/∂s_k`: the outer products, minus their pressure share.
    basis: [Tensor3; 3],
    target: Tensor3,
}

/// The training loss over one partition with everything that does not depend
/// on the weights precomputed.
///
/// The predicted stress is linear in `s = ∂Ψ/∂ν`, `P = Σ_k s_k M_k`, with
/// `M_k = u_k⊗v_k` for compressible data and `M_k = u_k⊗v_k − F33 (u_k⊗v_k)33 cof F`
/// once the pressure is eliminated.
pub struct LossProblem {
    kind: VariantKind,
    samples: Vec<PreparedSample>,
}

impl LossProblem {
    pub fn new(kind: VariantKind, dataset: &Dataset, part: Partition) -> Result<Self> {
        check_kind(kind, dataset)?;
        let map = InputMap::new(kind);
        let mut samples = Vec::new();
        for s in dataset.subset(part) {
            let det = kinematics::det(&s.f);
            if det <= 0.0 {
                return Err(Error::NonPositiveDet { det });
            }
            let svd = kinematics::svd3(&s.f)?;
            let mask = s.mask_tensor();
            let mut basis = svd.outer_products();
            if !kind.compressible {
                let cof = kinematics::cofactor(&s.f);
                for d in basis.iter_mut() {
                    let p = solve_pressure(d, &s.f)?;
                    *d -= cof * p;
                }
            }
            for d in basis.iter_mut() {
                *d = d.component_mul(&mask);
            }
            let lifted = map.lift(&svd.nu);
            samples.push(PreparedSample {
                inputs: lifted.inputs,
                jacobians: lifted.jacobians,
                basis,
                target: s.p.component_mul(&mask),
            });
        }
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { kind, samples })
    }

    pub fn kind(&self) -> VariantKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn loss(&self, params: &IcnnParams) -> f64 {
        self.evaluate(params, None)
    }

    /// Loss value; writes `∂loss/∂θ` (flat trainable order) into `grad`.
    pub fn loss_and_gradient(&self, params: &IcnnParams, grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        self.evaluate(params, Some(grad))
    }

    fn evaluate(&self, params: &IcnnParams, mut grad: Option<&mut [f64]>) -> f64 {
        let n_tuples = self.samples[0].inputs.len();
        let a = params.input_size();
        let mut tapes: Vec<Tape> = (0..n_tuples).map(|_| Tape::new(params)).collect();
        let mut g = vec![0.0; a];
        let mut v = vec![0.0; a];
        let inv_n = 1.0 / n_tuples as f64;
        let inv_samples = 1.0 / self.samples.len() as f64;
        let mut total = 0.0;
        for sample in &self.samples {
            let mut s = [0.0; 3];
            for ((tape, x), jac) in tapes.iter_mut().zip(&sample.inputs).zip(&sample.jacobians) {
                tape.record(params, x);
                g.fill(0.0);
                tape.input_gradient(params, &mut g);
                for (gr, row) in g.iter().zip(jac) {
                    for k in 0..3 {
                        s[k] += gr * row[k];
                    }
                }
            }
            let s = s.map(|v| v * inv_n);
            let b = &sample.basis;
            let residual = b[0] * s[0] + b[1] * s[1] + b[2] * s[2] - sample.target;
            total += residual.norm_squared();
            if let Some(grad) = grad.as_deref_mut() {
                let w = [0, 1, 2].map(|k| 2.0 * inv_samples * kinematics::ddot(&residual, &b[k]));
                for (tape, jac) in tapes.iter_mut().zip(&sample.jacobians) {
                    for (vr, row) in v.iter_mut().zip(jac) {
                        *vr = inv_n * (row[0] * w[0] + row[1] * w[1] + row[2] * w[2]);
                    }
                    tape.accumulate_directional_param_gradient(params, &v, 1.0, grad);
                }
            }
        }
        total * inv_samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ProjectedGradient,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailure,
    NonFiniteObjective,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::ProjectedGradient => "projected gradient below tolerance",
            StopReason::RelativeDecrease => "relative decrease below tolerance",
            StopReason::MaxIterations => "iteration limit",
            StopReason::LineSearchFailure => "line search failure",
            StopReason::NonFiniteObjective => "non-finite objective",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub memory: usize,
    pub max_line_search: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-9,
            f_tol: 2.2e-9,
            memory: 10,
            max_line_search: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

impl OptimizeResult {
    pub fn converged(&self) -> bool {
        matches!(self.stop, StopReason::ProjectedGradient | StopReason::RelativeDecrease)
    }

    pub fn line_search_failed(&self) -> bool {
        self.stop == StopReason::LineSearchFailure
    }
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

/// Minimizes `fg` (value, gradient written into the slice) subject to
/// `lower ≤ x ≤ upper` with a projected two-loop L-BFGS.
///
/// Variables sitting on a bound with the gradient pointing outwards are held
/// fixed for the quasi-Newton step; the step is projected back onto the box
/// and accepted by a backtracking Armijo test along the projected path.
pub fn optimize<F>(
    mut fg: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &OptimizeOptions,
) -> OptimizeResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bounds must match x0");
    let clamp = |v: f64, i: usize| v.max(lower[i]).min(upper[i]);
    let mut x: Vec<f64> = x0.iter().enumerate().map(|(i, &v)| clamp(v, i)).collect();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut free = vec![true; n];
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alphas = vec![0.0; opts.memory];

    let stop = loop {
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break StopReason::NonFiniteObjective;
        }
        let pg = (0..n).fold(0.0f64, |m, i| m.max((clamp(x[i] - g[i], i) - x[i]).abs()));
        if pg <= opts.grad_tol {
            break StopReason::ProjectedGradient;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIterations;
        }
        for i in 0..n {
            free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));
        }

        let mut accepted = None;
        let mut used_memory = false;
        // first with the quasi-Newton direction, then with steepest descent
        for use_memory in [true, false] {
            if !use_memory && !used_memory {
                break;
            }
            for i in 0..n {
                d[i] = if free[i] { g[i] } else { 0.0 };
            }
            let mut scaled = false;
            if use_memory && !memory.is_empty() {
                let mut used = Vec::with_capacity(memory.len());
                for (k, (s, y)) in memory.iter().enumerate().rev() {
                    let sy = dot_masked(s, y, &free);
                    if sy <= f64::EPSILON * dot_masked(y, y, &free) || sy <= 0.0 {
                        continue;
                    }
                    let a = dot_masked(s, &d, &free) / sy;
                    for i in 0..n {
                        if free[i] {
                            d[i] -= a * y[i];
                        }
                    }
                    alphas[k] = a;
                    used.push((k, sy));
                }
                if let Some(&(newest, sy)) = used.first() {
                    let (_, y) = &memory[newest];
                    let gamma = sy / dot_masked(y, y, &free);
                    d.iter_mut().for_each(|v| *v *= gamma);
                    scaled = true;
                    used_memory = true;
                }
                for &(k, sy) in used.iter().rev() {
                    let (s, y) = &memory[k];
                    let beta = dot_masked(y, &d, &free) / sy;
                    for i in 0..n {
                        if free[i] {
                            d[i] += s[i] * (alphas[k] - beta);
                        }
                    }
                }
            }
            d.iter_mut().for_each(|v| *v = -*v);
            let slope = dot_masked(&g, &d, &free);
            if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
                if use_memory {
                    continue;
                }
                break;
            }
            let mut alpha = if scaled {
                1.0
            } else {
                let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                (1.0 / dn).min(1.0)
            };
            for _ in 0..opts.max_line_search {
                for i in 0..n {
                    x_new[i] = clamp(x[i] + alpha * d[i], i);
                }
                let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
                if !(decrease < 0.0) {
                    alpha *= 0.5;
                    continue;
                }
                let f_new = fg(&x_new, &mut g_new);
                evaluations += 1;
                if f_new.is_finite() && f_new <= f + C1 * decrease {
                    accepted = Some(f_new);
                    break;
                }
                // safeguarded minimizer of the quadratic through f, slope and f_new
                let theta = if f_new.is_finite() {
                    -decrease / (2.0 * (f_new - f - decrease))
                } else {
                    0.1
                };
                alpha *= theta.clamp(0.1, 0.5);
            }
            if accepted.is_some() {
                break;
            }
            memory.clear();
        }

        let Some(f_new) = accepted else {
            break StopReason::LineSearchFailure;
        };
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > f64::EPSILON * yy {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            if opts.memory > 0 {
                memory.push_back((s, y));
            }
        }
        let f_prev = f;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        iterations += 1;
        if (f_prev - f) / f_prev.abs().max(f.abs()).max(1.0) <= opts.f_tol {
            break StopReason::RelativeDecrease;
        }
    };
    OptimizeResult { x, f, iterations, evaluations, stop }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub architectures: Vec<Architecture>,
    pub restarts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub fine_tune: bool,
    pub base_seed: u64,
}

impl TrainConfig {
    /// The eight-architecture sweep with 30 restarts and 1000 iterations.
    pub fn standard(kind: VariantKind) -> Self {
        let opts = OptimizeOptions::default();
        Self {
            architectures: Architecture::standard_sweep(kind.input_size()),
            restarts: 30,
            max_iter: opts.max_iter,
            grad_tol: opts.grad_tol,
            f_tol: opts.f_tol,
            fine_tune: false,
            base_seed: 0,
        }
    }

    pub fn validate(&self, kind: VariantKind) -> Result<()> {
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::InvalidArchitecture(
                "restarts and max_iter must be at least 1".into(),
            ));
        }
        if self.architectures.is_empty() {
            return Err(Error::InvalidArchitecture("no architectures given".into()));
        }
        for arch in &self.architectures {
            if arch.input_size != kind.input_size() {
                return Err(Error::InvalidArchitecture(format!(
                    "{arch} does not take {} inputs as {kind} needs",
                    kind.input_size()
                )));
            }
        }
        Ok(())
    }

    fn options(&self) -> OptimizeOptions {
        OptimizeOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            f_tol: self.f_tol,
            ..OptimizeOptions::default()
        }
    }

    fn fine_tune_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            grad_tol: self.grad_tol / 100.0,
            f_tol: self.f_tol / 100.0,
            ..self.options()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub arch: String,
    pub seed: u64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub stop: StopReason,
}

impl InstanceRecord {
    /// Selection score: validation error when available.
    fn score(&self) -> f64 {
        let v = self.val_mse.unwrap_or(self.train_mse);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub kind: VariantKind,
    pub config: TrainConfig,
    pub best_model: VariantModel,
    pub best_index: usize,
    pub records: Vec<InstanceRecord>,
}

impl TrainResult {
    pub fn best(&self) -> &InstanceRecord {
        &self.records[self.best_index]
    }

    /// Lowest training error over all instances.
    pub fn best_train_mse(&self) -> f64 {
        self.records.iter().map(|r| r.train_mse).fold(f64::INFINITY, f64::min)
    }

    pub fn report_json(&self) -> serde_json::Value {
        let c = &self.config;
        serde_json::json!({
            "variant": self.kind.to_string(),
            "config": {
                "architectures": c.architectures.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
                "restarts": c.restarts,
                "max_iter": c.max_iter,
                "grad_tol": c.grad_tol,
                "f_tol": c.f_tol,
                "fine_tune": c.fine_tune,
                "base_seed": c.base_seed,
            },
            "instances": self.records,
            "best": self.best(),
        })
    }
}

/// Thread pool honoring the thread-cap environment variable.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn train_params(
    problem: &LossProblem,
    params: &IcnnParams,
    opts: &OptimizeOptions,
) -> (IcnnParams, OptimizeResult) {
    let pv = params.to_vector();
    let upper = vec![f64::INFINITY; pv.values.len()];
    let mut work = params.clone();
    let result = optimize(
        |x, g| {
            work.set_from_slice(x).expect("length fixed by the parameter layout");
            problem.loss_and_gradient(&work, g)
        },
        &pv.values,
        &pv.lower,
        &upper,
        opts,
    );
    let mut out = params.clone();
    out.set_from_slice(&result.x).expect("length fixed by the parameter layout");
    (out, result)
}

/// Trains every (architecture, restart) pair with seed `base_seed + index`
/// and keeps the instance with the lowest validation (else training) error.
pub fn multi_restart(kind: VariantKind, dataset: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    config.validate(kind)?;
    let train = LossProblem::new(kind, dataset, Partition::Train)?;
    let val = if dataset.count(Partition::Val) > 0 {
        Some(LossProblem::new(kind, dataset, Partition::Val)?)
    } else {
        None
    };
    let jobs: Vec<(usize, &Architecture)> = config
        .architectures
        .iter()
        .flat_map(|a| std::iter::repeat_n(a, config.restarts))
        .enumerate()
        .collect();
    let constraints = kind.constraints();
    let run = |&(index, arch): &(usize, &Architecture)| -> (InstanceRecord, IcnnParams) {
        let seed = config.base_seed.wrapping_add(index as u64);
        let init = IcnnParams::init(arch, &constraints, seed);
        let (mut params, mut result) = train_params(&train, &init, &config.options());
        let mut iterations = result.iterations;
        if config.fine_tune && result.f.is_finite() {
            let (tuned, tuned_result) = train_params(&train, &params, &config.fine_tune_options());
            iterations += tuned_result.iterations;
            if tuned_result.f <= result.f {
                params = tuned;
                result.f = tuned_result.f;
            }
        }
        let record = InstanceRecord {
            index,
            arch: arch.to_string(),
            seed,
            train_mse: result.f,
            val_mse: val.as_ref().map(|v| v.loss(&params)),
            iterations,
            converged: result.converged(),
            line_search_failed: result.line_search_failed(),
            stop: result.stop,
        };
        log::debug!("{kind} {} seed {seed}: train {:.3e}", record.arch, record.train_mse);
        (record, params)
    };
    let outcomes: Vec<(InstanceRecord, IcnnParams)> =
        thread_pool().install(|| jobs.par_iter().map(run).collect());

    let best_index = outcomes
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.0.score().total_cmp(&b.0.score()))
        .map(|(i, _)| i)
        .expect("at least one instance");
    let mut records = Vec::with_capacity(outcomes.len());
    let mut best_params = None;
    for (i, (record, params)) in outcomes.into_iter().enumerate() {
        if i == best_index {
            best_params = Some(params);
        }
        records.push(record);
    }
    let best_model = VariantModel::new(kind, best_params.expect("selected"), 0.0)?.normalized();
    Ok(TrainResult { kind, config: config.clone(), best_model, best_index, records })
}

/// Second optimization pass from a trained model with tolerances tightened
/// 100×; never returns a worse training error.
pub fn fine_tune(model: &VariantModel, dataset: &Dataset, config: &TrainConfig) -> Result<VariantModel> {
    let problem = LossProblem::new(model.kind, dataset, Partition::Train)?;
    let start = problem.loss(&model.params);
    let (params, result) = train_params(&problem, &model.params, &config.fine_tune_options());
    if !(result.f < start) {
        return Ok(model.clone());
    }
    Ok(VariantModel::new(model.kind, params, 0.0)?.normalized())
}

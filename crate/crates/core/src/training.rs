//! Regularized maximum-likelihood training of the instance scorer.
//!
//! The objective is `L(theta) = sum_b ln P(Y_b | X_b; theta) - lambda r(theta)`
//! with `r = ||theta||_2^2` (L2) or `||theta||_1` (L1). Its gradient is
//! `sum_b sum_i x_i (P(y_i = 1 | Y_b, X_b) - P(y_i = 1 | X_b)) - lambda dr`.
//! Bag contributions are evaluated in parallel and reduced in bag order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::BagInference;
use crate::model::{Bag, BagLabel, CardinalitySpec, InstanceModel};

const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub norm: Norm,
    pub max_iters: usize,
    /// Stop once the gradient sup-norm drops below this.
    pub grad_tol: f64,
    /// Radius of the uniform ball the initial parameters are drawn from.
    pub init_scale: f64,
    pub seed: u64,
    /// Independent starts with seeds `seed, seed + 1, ...`; the best objective wins.
    pub restarts: usize,
    pub include_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-2,
            norm: Norm::L2,
            max_iters: 300,
            grad_tol: 1e-5,
            init_scale: 0.1,
            seed: 0,
            restarts: 1,
            include_bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid(format!("grad_tol must be > 0, got {}", self.grad_tol)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be a finite value >= 0"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_objective: f64,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

fn regularizer(theta: &[f64], cfg: &TrainConfig) -> f64 {
    match cfg.norm {
        Norm::L2 => theta.iter().map(|t| t * t).sum(),
        Norm::L1 => theta.iter().map(|t| t.abs()).sum(),
    }
}

fn regularizer_grad(theta: &[f64], cfg: &TrainConfig) -> Vec<f64> {
    match cfg.norm {
        Norm::L2 => theta.iter().map(|t| 2.0 * t).collect(),
        Norm::L1 => theta
            .iter()
            .map(|&t| if t > 0.0 { 1.0 } else if t < 0.0 { -1.0 } else { 0.0 })
            .collect(),
    }
}

fn bag_label(bag: &Bag) -> Result<BagLabel> {
    bag.label
        .ok_or_else(|| Error::invalid(format!("training bag `{}` has no label", bag.id)))
}

fn check_dataset(bags: &[Bag], model: &InstanceModel) -> Result<()> {
    if bags.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for bag in bags {
        bag_label(bag)?;
        if bag.dim() != model.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.feature_dim(),
                found: bag.dim(),
            });
        }
    }
    Ok(())
}

/// Log-likelihood of one bag's label.
fn bag_log_likelihood(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec) -> Result<f64> {
    BagInference::new(bag, model)?.log_likelihood(spec, bag_label(bag)?)
}

/// Objective value and its gradient contributions of one bag.
fn bag_value_and_grad(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec) -> Result<(f64, Vec<f64>)> {
    let label = bag_label(bag)?;
    let inf = BagInference::new(bag, model)?;
    let value = inf.log_likelihood(spec, label)?;
    let clamped = inf.conditional_marginals(spec, label)?;
    let free = inf.instance_marginals(spec)?;
    let mut grad = vec![0.0; model.theta.len()];
    for ((x, pc), pu) in bag.instances().iter().zip(&clamped.per_instance).zip(&free.per_instance) {
        model.accumulate_features(x, pc - pu, &mut grad);
    }
    Ok((value, grad))
}

/// `sum_b ln P(Y_b | X_b) - lambda r(theta)`.
pub fn objective(bags: &[Bag], model: &InstanceModel, spec: &CardinalitySpec, cfg: &TrainConfig) -> Result<f64> {
    check_dataset(bags, model)?;
    let parts = bags
        .par_iter()
        .map(|b| bag_log_likelihood(b, model, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().sum::<f64>() - cfg.lambda * regularizer(&model.theta, cfg))
}

/// Objective and gradient in one pass over the bags.
pub fn objective_and_gradient(
    bags: &[Bag],
    model: &InstanceModel,
    spec: &CardinalitySpec,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    check_dataset(bags, model)?;
    let parts = bags
        .par_iter()
        .map(|b| bag_value_and_grad(b, model, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; model.theta.len()];
    for (v, g) in &parts {
        value += v;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    value -= cfg.lambda * regularizer(&model.theta, cfg);
    for (acc, r) in grad.iter_mut().zip(regularizer_grad(&model.theta, cfg)) {
        *acc -= cfg.lambda * r;
    }
    Ok((value, grad))
}

pub fn gradient(bags: &[Bag], model: &InstanceModel, spec: &CardinalitySpec, cfg: &TrainConfig) -> Result<Vec<f64>> {
    Ok(objective_and_gradient(bags, model, spec, cfg)?.1)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Uniform draw from the `dim`-ball of radius `radius`.
fn init_theta(dim: usize, radius: f64, seed: u64) -> Vec<f64> {
    if radius == 0.0 || dim == 0 {
        return vec![0.0; dim];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let u: f64 = Uniform::new(0.0, 1.0).expect("valid range").sample(&mut rng);
    let r = radius * u.powf(1.0 / dim as f64);
    dir.iter().map(|v| v / norm * r).collect()
}

/// Gradient ascent on the regularized log-likelihood from one starting point.
fn ascend(bags: &[Bag], spec: &CardinalitySpec, cfg: &TrainConfig, start: Vec<f64>) -> Result<(InstanceModel, TrainReport)> {
    let mut model = InstanceModel::new(start, cfg.include_bias)?;
    let (mut value, mut grad) = objective_and_gradient(bags, &model, spec, cfg)?;
    if !value.is_finite() {
        return Err(Error::Numerical("objective is not finite at the initial point".into()));
    }
    let mut report = TrainReport {
        final_objective: value,
        iterations: 0,
        objective_history: vec![value],
        grad_norm_history: vec![sup_norm(&grad)],
        converged: false,
        diagnostic: None,
    };
    let mut step = 1.0 / (bags.len() as f64).max(1.0);

    for _ in 0..cfg.max_iters {
        let gnorm = sup_norm(&grad);
        if gnorm <= cfg.grad_tol {
            report.converged = true;
            break;
        }
        let slope: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = None;
        let mut t = step;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = model.theta.iter().zip(&grad).map(|(th, g)| th + t * g).collect();
            if trial.iter().all(|v| v.is_finite()) {
                let candidate = InstanceModel {
                    theta: trial,
                    include_bias: cfg.include_bias,
                };
                // non-finite or degenerate evaluations reject the step
                if let Ok((v, g)) = objective_and_gradient(bags, &candidate, spec, cfg) {
                    if v.is_finite() && v >= value + ARMIJO_SLOPE * t * slope {
                        accepted = Some((candidate, v, g));
                        break;
                    }
                }
            }
            t *= BACKTRACK_SHRINK;
        }
        let Some((candidate, v, g)) = accepted else {
            report.diagnostic = Some(format!(
                "line search failed after {MAX_BACKTRACKS} backtracks at iteration {} (grad sup-norm {gnorm:.3e})",
                report.iterations
            ));
            break;
        };
        model = candidate;
        value = v;
        grad = g;
        report.iterations += 1;
        report.objective_history.push(value);
        report.grad_norm_history.push(sup_norm(&grad));
        step = (t * 2.0).min(1e6);
    }
    if !report.converged && sup_norm(&grad) <= cfg.grad_tol {
        report.converged = true;
    }
    if !report.converged && report.diagnostic.is_none() {
        report.diagnostic = Some(format!("reached max_iters = {}", cfg.max_iters));
    }
    report.final_objective = value;
    Ok((model, report))
}

/// Fits the instance scorer. The problem is non-convex; restarts are the only
/// mitigation and the best final objective is returned.
pub fn fit(bags: &[Bag], spec: &CardinalitySpec, cfg: &TrainConfig) -> Result<(InstanceModel, TrainReport)> {
    cfg.validate()?;
    spec.validate()?;
    let first = bags.first().ok_or_else(|| Error::invalid("training set is empty"))?;
    let labels: Vec<BagLabel> = bags.iter().map(bag_label).collect::<Result<_>>()?;
    if !labels.contains(&BagLabel::Positive) || !labels.contains(&BagLabel::Negative) {
        return Err(Error::invalid("training set needs both positive and negative bags"));
    }
    let dim = first.dim() + usize::from(cfg.include_bias);
    let mut best: Option<(InstanceModel, TrainReport)> = None;
    for r in 0..cfg.restarts {
        let start = init_theta(dim, cfg.init_scale, cfg.seed.wrapping_add(r as u64));
        let (model, report) = ascend(bags, spec, cfg, start)?;
        if best.as_ref().is_none_or(|(_, b)| report.final_objective > b.final_objective) {
            best = Some((model, report));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fraction of bags whose posterior `P(Y = +1 | X) >= 0.5` matches the label.
pub fn posterior_accuracy(bags: &[Bag], model: &InstanceModel, spec: &CardinalitySpec) -> Result<f64> {
    let hits = bags
        .par_iter()
        .map(|b| {
            let p = BagInference::new(b, model)?.posterior(spec)?;
            Ok(BagLabel::from_score(p - 0.5) == bag_label(b)?)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / bags.len().max(1) as f64)
}

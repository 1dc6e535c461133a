//! Self-verification suites: tree inference against exhaustive enumeration,
//! and the analytic training gradient against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{brute_force_weights, BagInference, BRUTE_FORCE_LIMIT};
use crate::model::{Bag, BagLabel, CardinalitySpec, Instance, InstanceModel};
use crate::training::{self, Norm, TrainConfig};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1)`; equal infinities count as exact.
pub fn log_rel_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if !(a.is_finite() && b.is_finite()) {
        return f64::INFINITY;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// `|a - b| / max(|a|, |b|)`; two zeros count as exact.
pub fn prob_rel_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if !(a.is_finite() && b.is_finite()) {
        return f64::INFINITY;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

fn worst_of(a: &[f64], b: &[f64], err: fn(f64, f64) -> f64) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| err(*x, *y)).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub trials: usize,
    pub max_m: usize,
    pub max_d: usize,
    pub seed: u64,
    /// Corrupts the largest count coefficient of every bag before comparing.
    pub inject_fault: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            trials: 1000,
            max_m: 12,
            max_d: 8,
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OracleReport {
    pub trials: usize,
    pub log_partition: f64,
    pub posterior: f64,
    pub conditional_marginals: f64,
    pub marginals: f64,
    pub map_score: f64,
}

impl OracleReport {
    pub fn worst(&self) -> f64 {
        [
            self.log_partition,
            self.posterior,
            self.conditional_marginals,
            self.marginals,
            self.map_score,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= ORACLE_TOLERANCE
    }
}

/// Cycles Normal, ratio-constrained and uniform potentials with random parameters.
pub fn random_spec(rng: &mut ChaCha8Rng, trial: usize) -> CardinalitySpec {
    match trial % 3 {
        0 => CardinalitySpec::Normal {
            mu: rng.random_range(0.0..=1.0),
            sigma: rng.random_range(0.05..1.0),
        },
        1 => CardinalitySpec::RatioConstrained {
            rho: rng.random_range(0.05..0.95),
        },
        _ => CardinalitySpec::Uniform,
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random bag with `m` instances in `d` dimensions.
pub fn random_bag(rng: &mut ChaCha8Rng, id: String, m: usize, d: usize, label: Option<BagLabel>) -> Result<Bag> {
    let instances = (0..m).map(|_| Instance::new(normal_vec(rng, d, 1.0))).collect::<Result<_>>()?;
    Bag::new(id, instances, label)
}

pub fn oracle_suite(cfg: &OracleConfig) -> Result<OracleReport> {
    if cfg.max_m > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleRefused {
            m: cfg.max_m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if cfg.max_m == 0 || cfg.max_d == 0 || cfg.trials == 0 {
        return Err(Error::invalid("oracle suite needs trials, max_m and max_d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = OracleReport {
        trials: cfg.trials,
        ..OracleReport::default()
    };
    for t in 0..cfg.trials {
        let m = rng.random_range(1..=cfg.max_m);
        let d = rng.random_range(1..=cfg.max_d);
        let spec = random_spec(&mut rng, t);
        let bag = random_bag(&mut rng, format!("t{t}"), m, d, None)?;
        let model = InstanceModel::new(normal_vec(&mut rng, d, 1.0 / (d as f64).sqrt()), false)?;
        let weights = model.bag_weights(&bag)?;
        let truth = brute_force_weights(&weights, &spec)?;
        let mut inf = BagInference::from_weights(bag.id.clone(), weights)?;
        if cfg.inject_fault {
            let root = inf.count_distribution();
            let (c, _) = root
                .mantissas
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best });
            inf.perturb_coefficient(c, 1.0 + 1e-6);
        }

        let (zp, zn) = inf.log_partitions(&spec)?;
        report.log_partition = report
            .log_partition
            .max(log_rel_error(zp, truth.log_z_pos))
            .max(log_rel_error(zn, truth.log_z_neg));
        report.posterior = report.posterior.max(prob_rel_error(inf.posterior(&spec)?, truth.posterior));
        for label in BagLabel::BOTH {
            if truth.log_partition(label) > f64::NEG_INFINITY {
                let got = inf.conditional_marginals(&spec, label)?;
                report.conditional_marginals = report.conditional_marginals.max(worst_of(
                    &got.per_instance,
                    truth.conditional(label),
                    prob_rel_error,
                ));
            }
            if let Some((_, want)) = truth.map(label) {
                let (_, score) = inf.map_labeling(&spec, label)?;
                report.map_score = report.map_score.max(log_rel_error(score, *want));
            }
        }
        let got = inf.instance_marginals(&spec)?;
        report.marginals = report.marginals.max(worst_of(&got.per_instance, &truth.marginals, prob_rel_error));
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradientConfig {
    pub trials: usize,
    pub max_bags: usize,
    pub max_m: usize,
    pub max_d: usize,
    pub seed: u64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            trials: 100,
            max_bags: 10,
            max_m: 8,
            max_d: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradientReport {
    pub trials: usize,
    pub l2: f64,
    pub l1: f64,
    /// L1 coordinates skipped because they sit within a few steps of zero.
    pub l1_skipped: usize,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.l2.max(self.l1)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= GRADIENT_TOLERANCE
    }
}

/// One random labeled dataset together with a model and a spec.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    trial: usize,
    max_bags: usize,
    max_m: usize,
    max_d: usize,
) -> Result<(Vec<Bag>, InstanceModel, CardinalitySpec)> {
    let n = rng.random_range(1..=max_bags);
    let d = rng.random_range(1..=max_d);
    let spec = random_spec(rng, trial);
    let bags = (0..n)
        .map(|b| {
            let m = rng.random_range(1..=max_m);
            let label = if rng.random::<bool>() { BagLabel::Positive } else { BagLabel::Negative };
            random_bag(rng, format!("b{b}"), m, d, Some(label))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = InstanceModel::new(normal_vec(rng, d, 1.0 / (d as f64).sqrt()), false)?;
    Ok((bags, model, spec))
}

/// Central difference of the objective along coordinate `j`.
pub fn finite_difference(
    bags: &[Bag],
    model: &InstanceModel,
    spec: &CardinalitySpec,
    cfg: &TrainConfig,
    j: usize,
    h: f64,
) -> Result<f64> {
    let mut plus = model.clone();
    plus.theta[j] += h;
    let mut minus = model.clone();
    minus.theta[j] -= h;
    Ok((training::objective(bags, &plus, spec, cfg)? - training::objective(bags, &minus, spec, cfg)?) / (2.0 * h))
}

pub fn gradient_suite(cfg: &GradientConfig) -> Result<GradientReport> {
    if cfg.trials == 0 || cfg.max_bags == 0 || cfg.max_m == 0 || cfg.max_d == 0 {
        return Err(Error::invalid("gradient suite needs every size >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradientReport {
        trials: cfg.trials,
        ..GradientReport::default()
    };
    for t in 0..cfg.trials {
        let (bags, model, spec) = random_problem(&mut rng, t, cfg.max_bags, cfg.max_m, cfg.max_d)?;
        let lambda = rng.random_range(0.0..1.0);
        for norm in [Norm::L2, Norm::L1] {
            let tc = TrainConfig {
                lambda,
                norm,
                ..TrainConfig::default()
            };
            let grad = training::gradient(&bags, &model, &spec, &tc)?;
            for (j, g) in grad.iter().enumerate() {
                if norm == Norm::L1 && model.theta[j].abs() <= 10.0 * FD_STEP {
                    report.l1_skipped += 1;
                    continue;
                }
                let fd = finite_difference(&bags, &model, &spec, &tc, j, FD_STEP)?;
                let e = log_rel_error(*g, fd);
                match norm {
                    Norm::L2 => report.l2 = report.l2.max(e),
                    Norm::L1 => report.l1 = report.l1.max(e),
                }
            }
        }
    }
    Ok(report)
}

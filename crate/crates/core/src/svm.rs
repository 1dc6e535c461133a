//! C-SVM dual solver over precomputed kernels.
//!
//! Solves `max_a sum a_i - 1/2 sum a_i a_j y_i y_j K_ij` subject to
//! `0 <= a_i <= C` and `sum a_i y_i = 0` by SMO with the maximal violating
//! pair working set (ties go to the lowest index).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{min_eigenvalue, prepare_bags, prepared_kernel, GramMatrix, KernelBag, KernelConfig};
use crate::metrics::accuracy;
use crate::model::{Bag, BagLabel, CardinalitySpec, InstanceModel};

pub const SVM_FORMAT: &str = "cardkernel-svm/1";
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

const TAU: f64 = 1e-12;
const PSD_TOLERANCE: f64 = 1e-8;
const JITTER: f64 = 1e-8;

/// Raw dual solution over training indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
    /// `max_{I_up} -y G - min_{I_low} -y G` at exit.
    pub kkt_violation: f64,
    pub converged: bool,
    pub dual_objective: f64,
    /// Dual objective after every SMO step.
    pub dual_trace: Vec<f64>,
    pub jittered: bool,
}

impl SmoSolution {
    /// `sum_i a_i y_i K(i, x) + b` given the kernel row between `x` and the training bags.
    pub fn decision(&self, labels: &[BagLabel], kernel_row: &[f64]) -> f64 {
        self.alphas
            .iter()
            .zip(labels)
            .zip(kernel_row)
            .filter(|((a, _), _)| **a > 0.0)
            .map(|((a, y), k)| a * y.sign() * k)
            .sum::<f64>()
            + self.bias
    }
}

fn check_labels(labels: &[BagLabel]) -> Result<()> {
    if !labels.contains(&BagLabel::Positive) || !labels.contains(&BagLabel::Negative) {
        return Err(Error::invalid("svm training needs both positive and negative examples"));
    }
    Ok(())
}

/// Applies the PSD rule: small negative eigenvalues get a diagonal jitter,
/// larger ones are an error. Returns whether jitter was added.
fn psd_guard(kernel: &mut [Vec<f64>]) -> Result<bool> {
    let min = min_eigenvalue(kernel);
    if min < -PSD_TOLERANCE {
        return Err(Error::invalid(format!(
            "kernel matrix is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    if min < 0.0 {
        for (i, row) in kernel.iter_mut().enumerate() {
            row[i] += JITTER;
        }
        return Ok(true);
    }
    Ok(false)
}

/// SMO on a square kernel matrix.
pub fn solve_kernel(kernel: &[Vec<f64>], labels: &[BagLabel], c: f64, tol: f64) -> Result<SmoSolution> {
    let n = labels.len();
    if kernel.len() != n || kernel.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("kernel matrix and labels disagree in size"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C must be > 0, got {c}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    check_labels(labels)?;
    let mut k = kernel.to_vec();
    let jittered = psd_guard(&mut k)?;

    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let mut alpha = vec![0.0; n];
    // gradient of 1/2 a'Qa - e'a
    let mut grad = vec![-1.0; n];
    let dual = |alpha: &[f64], grad: &[f64]| -> f64 {
        -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
    };
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let max_iter = 10_000 + 1_000 * n;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut violation;
    loop {
        let mut i_best = (f64::NEG_INFINITY, usize::MAX);
        let mut j_best = (f64::INFINITY, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > i_best.0 {
                i_best = (v, t);
            }
            if in_low(alpha[t], y[t]) && v < j_best.0 {
                j_best = (v, t);
            }
        }
        violation = i_best.0 - j_best.0;
        if i_best.1 == usize::MAX || j_best.1 == usize::MAX || violation < tol || iterations >= max_iter {
            break;
        }
        let (i, j) = (i_best.1, j_best.1);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = q(i, i);
        let qjj = q(j, j);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
        iterations += 1;
        trace.push(dual(&alpha, &grad));
    }

    let bias = -rho(&alpha, &grad, &y, c);
    Ok(SmoSolution {
        dual_objective: dual(&alpha, &grad),
        alphas: alpha,
        bias,
        c,
        iterations,
        kkt_violation: violation.max(0.0),
        converged: violation < tol,
        dual_trace: trace,
        jittered,
    })
}

/// Offset from free support vectors, or the midpoint of the feasible interval.
fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// One support vector: a training bag with `alpha > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub id: String,
    pub label: BagLabel,
    pub alpha: f64,
}

/// Trained binary SVM over bags, serialized as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format: String,
    pub c: f64,
    pub bias: f64,
    pub support: Vec<SupportVector>,
    pub n_train: usize,
    pub kernel: KernelConfig,
    /// Fingerprint of the Gram matrix the model was trained on.
    pub gram_fingerprint: String,
    pub iterations: usize,
    pub kkt_violation: f64,
    pub converged: bool,
}

impl SvmModel {
    pub fn support_ids(&self) -> Vec<&str> {
        self.support.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn equality_residual(&self) -> f64 {
        self.support.iter().map(|s| s.alpha * s.label.sign()).sum::<f64>().abs()
    }
}

/// Trains a binary SVM on a Gram matrix whose row order matches `labels`.
pub fn solve_dual(gram: &GramMatrix, labels: &[BagLabel], c: f64, tol: f64) -> Result<SvmModel> {
    let sol = solve_kernel(&gram.to_rows(), labels, c, tol)?;
    let ids: Vec<String> = if gram.bag_ids.is_empty() {
        (0..gram.size()).map(|i| i.to_string()).collect()
    } else {
        gram.bag_ids.clone()
    };
    let support = sol
        .alphas
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .map(|(i, &a)| SupportVector {
            id: ids[i].clone(),
            label: labels[i],
            alpha: a,
        })
        .collect();
    Ok(SvmModel {
        format: SVM_FORMAT.to_string(),
        c,
        bias: sol.bias,
        support,
        n_train: labels.len(),
        kernel: gram.config,
        gram_fingerprint: gram.fingerprint.clone(),
        iterations: sol.iterations,
        kkt_violation: sol.kkt_violation,
        converged: sol.converged,
    })
}

/// An SVM bound to its support bags and cardinality model, ready to score new bags.
pub struct BagClassifier<'a> {
    svm: &'a SvmModel,
    model: &'a InstanceModel,
    spec: &'a CardinalitySpec,
    support: Vec<KernelBag<'static>>,
}

impl<'a> BagClassifier<'a> {
    /// `train` must contain every support bag id.
    pub fn new(svm: &'a SvmModel, train: &[Bag], model: &'a InstanceModel, spec: &'a CardinalitySpec) -> Result<Self> {
        let mut bags = Vec::with_capacity(svm.support.len());
        for sv in &svm.support {
            let bag = train
                .iter()
                .find(|b| b.id == sv.id)
                .ok_or_else(|| Error::Mismatch(format!("support bag `{}` is not in the training set", sv.id)))?;
            bags.push(bag.clone());
        }
        let support = prepare_bags(&bags, model, spec, &svm.kernel)?
            .into_iter()
            .map(KernelBag::into_owned)
            .collect();
        Ok(BagClassifier {
            svm,
            model,
            spec,
            support,
        })
    }

    pub fn decision(&self, bag: &Bag) -> Result<f64> {
        let prepared = prepare_bags(std::slice::from_ref(bag), self.model, self.spec, &self.svm.kernel)?;
        let test = &prepared[0];
        let mut score = self.svm.bias;
        for (sv, kb) in self.svm.support.iter().zip(&self.support) {
            score += sv.alpha * sv.label.sign() * prepared_kernel(kb, test, &self.svm.kernel)?;
        }
        Ok(score)
    }
}

/// `sum_i a_i y_i k(X_i, X_test) + b` against the support bags.
pub fn decision(
    test: &Bag,
    train: &[Bag],
    svm: &SvmModel,
    model: &InstanceModel,
    spec: &CardinalitySpec,
) -> Result<f64> {
    BagClassifier::new(svm, train, model, spec)?.decision(test)
}

/// Seeded train/validation split of `0..n`; each part keeps at least one index.
pub fn validation_split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction must lie in (0, 1), got {val_fraction}")));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two examples to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    Ok((train, val))
}

/// Seeded k-fold partition of `0..n` into (train, validation) pairs.
pub fn k_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("folds must lie in [2, {n}], got {folds}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..folds)
        .map(|f| {
            let val: Vec<usize> = idx.iter().enumerate().filter(|(p, _)| p % folds == f).map(|(_, &i)| i).collect();
            let train: Vec<usize> = idx.iter().enumerate().filter(|(p, _)| p % folds != f).map(|(_, &i)| i).collect();
            (train, val)
        })
        .collect())
}

/// Validation accuracy of each `C` in `grid` over the given splits.
pub fn evaluate_c_grid(
    kernel: &[Vec<f64>],
    labels: &[BagLabel],
    grid: &[f64],
    splits: &[(Vec<usize>, Vec<usize>)],
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut scores = Vec::with_capacity(grid.len());
    for &c in grid {
        let (mut hits, mut total) = (0.0, 0usize);
        for (train, val) in splits {
            let sub_labels: Vec<BagLabel> = train.iter().map(|&i| labels[i]).collect();
            if check_labels(&sub_labels).is_err() {
                continue;
            }
            let sub: Vec<Vec<f64>> = train.iter().map(|&i| train.iter().map(|&j| kernel[i][j]).collect()).collect();
            let sol = solve_kernel(&sub, &sub_labels, c, tol)?;
            let preds: Vec<BagLabel> = val
                .iter()
                .map(|&v| {
                    let row: Vec<f64> = train.iter().map(|&t| kernel[v][t]).collect();
                    BagLabel::from_score(sol.decision(&sub_labels, &row))
                })
                .collect();
            let truth: Vec<BagLabel> = val.iter().map(|&v| labels[v]).collect();
            hits += accuracy(&preds, &truth) * val.len() as f64;
            total += val.len();
        }
        if total == 0 {
            return Err(Error::invalid("no validation split has both classes in its training part"));
        }
        scores.push((c, hits / total as f64));
    }
    Ok(scores)
}

/// Best `C` by validation accuracy; ties go to the earlier grid entry.
pub fn select_c(
    kernel: &[Vec<f64>],
    labels: &[BagLabel],
    grid: &[f64],
    splits: &[(Vec<usize>, Vec<usize>)],
    tol: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::invalid("C grid is empty"));
    }
    let scores = evaluate_c_grid(kernel, labels, grid, splits, tol)?;
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok((best.0, scores))
}

/// One binary SVM per class, each trained with that class as `+1`.
#[derive(Debug, Clone)]
pub struct OneVsAll {
    pub n_classes: usize,
    pub models: Vec<SmoSolution>,
    pub labels: Vec<Vec<BagLabel>>,
}

/// Trains `n_classes` one-vs-all machines. `kernels` holds either one training
/// kernel shared by all classes or one per class.
pub fn one_vs_all(kernels: &[Vec<Vec<f64>>], classes: &[usize], n_classes: usize, c: f64, tol: f64) -> Result<OneVsAll> {
    if n_classes < 2 {
        return Err(Error::invalid("one-vs-all needs at least two classes"));
    }
    if kernels.len() != 1 && kernels.len() != n_classes {
        return Err(Error::invalid("provide one shared kernel or one kernel per class"));
    }
    for k in 0..n_classes {
        if !classes.contains(&k) {
            return Err(Error::invalid(format!("class {k} has no training examples")));
        }
    }
    if let Some(&bad) = classes.iter().find(|&&k| k >= n_classes) {
        return Err(Error::invalid(format!("class index {bad} out of range")));
    }
    let mut models = Vec::with_capacity(n_classes);
    let mut labels = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let y: Vec<BagLabel> = classes
            .iter()
            .map(|&c| if c == k { BagLabel::Positive } else { BagLabel::Negative })
            .collect();
        let kernel = if kernels.len() == 1 { &kernels[0] } else { &kernels[k] };
        models.push(solve_kernel(kernel, &y, c, tol)?);
        labels.push(y);
    }
    Ok(OneVsAll {
        n_classes,
        models,
        labels,
    })
}

impl OneVsAll {
    /// Per-class decision scores; `cross[k][t]` is the kernel row of test bag `t`
    /// against the training bags under class `k`'s kernel (or a single shared block).
    pub fn scores(&self, cross: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
        if cross.len() != 1 && cross.len() != self.n_classes {
            return Err(Error::invalid("provide one shared cross kernel or one per class"));
        }
        let n_test = cross[0].len();
        Ok((0..n_test)
            .map(|t| {
                (0..self.n_classes)
                    .map(|k| {
                        let block = if cross.len() == 1 { &cross[0] } else { &cross[k] };
                        self.models[k].decision(&self.labels[k], &block[t])
                    })
                    .collect()
            })
            .collect())
    }

    /// Argmax class per test bag; ties go to the lowest class index.
    pub fn predict(&self, cross: &[Vec<Vec<f64>>]) -> Result<Vec<usize>> {
        Ok(self.scores(cross)?.iter().map(|s| argmax(s)).collect())
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use BagLabel::{Negative as N, Positive as P};

    #[test]
    fn identity_gram_closed_form() {
        let k = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sol = solve_kernel(&k, &[P, N], 10.0, DEFAULT_TOL).unwrap();
        assert!((sol.alphas[0] - 1.0).abs() < 1e-12 && (sol.alphas[1] - 1.0).abs() < 1e-12);
        assert!(sol.bias.abs() < 1e-12);
        assert!((sol.decision(&[P, N], &k[0]) - 1.0).abs() < 1e-12);
        assert!((sol.decision(&[P, N], &k[1]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn conflicting_duplicates_hit_the_bound() {
        let k = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let sol = solve_kernel(&k, &[P, N], 1.0, DEFAULT_TOL).unwrap();
        assert_eq!(sol.alphas, vec![1.0, 1.0]);
    }

    #[test]
    fn single_class_rejected() {
        let k = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(solve_kernel(&k, &[P, P], 1.0, DEFAULT_TOL).is_err());
    }

    #[test]
    fn non_psd_rejected_and_tiny_violation_jittered() {
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(solve_kernel(&bad, &[P, N], 1.0, DEFAULT_TOL).is_err());
        let eps = 5e-9;
        let nearly = vec![vec![1.0, 1.0 + eps], vec![1.0 + eps, 1.0]];
        let sol = solve_kernel(&nearly, &[P, N], 1.0, DEFAULT_TOL).unwrap();
        assert!(sol.jittered);
    }

    #[test]
    fn zero_alphas_gives_bias_only() {
        let sol = SmoSolution {
            alphas: vec![0.0, 0.0],
            bias: 0.25,
            c: 1.0,
            iterations: 0,
            kkt_violation: 0.0,
            converged: true,
            dual_objective: 0.0,
            dual_trace: vec![],
            jittered: false,
        };
        assert_eq!(sol.decision(&[P, N], &[0.3, 0.9]), 0.25);
    }

    #[test]
    fn splits_are_seeded_partitions() {
        let (tr, va) = validation_split(20, 0.25, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (15, 5));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(validation_split(20, 0.25, 3).unwrap(), (tr, va));
        let folds = k_folds(10, 3, 1).unwrap();
        assert_eq!(folds.iter().map(|(_, v)| v.len()).sum::<usize>(), 10);
        assert!(validation_split(10, 1.5, 0).is_err());
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn one_vs_all_rejects_empty_class() {
        let k = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        assert!(one_vs_all(&k, &[0, 0], 2, 1.0, DEFAULT_TOL).is_err());
        assert!(one_vs_all(&k, &[0, 1], 1, 1.0, DEFAULT_TOL).is_err());
    }
}

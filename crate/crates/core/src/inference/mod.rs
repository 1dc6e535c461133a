//! Exact sum-product and MAP inference in the cardinality bag model.
//!
//! A bag with unary weights `w_i` and count potential `C(Y)` has
//! `Z(Y) = sum_c C(Y)(c) a_c`, where `a_c` sums `exp(sum_i w_i y_i)` over the
//! labelings with exactly `c` positives. The `a_c` are the coefficients of
//! `prod_i (1 + e^{w_i} t)`, computed by a balanced convolution tree in
//! `O(m^2)`.

mod brute;
mod tree;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force, brute_force_weights, BruteForce, BRUTE_FORCE_LIMIT};
pub use tree::CountDistribution;

use crate::error::{Error, Result};
use crate::math::{log_add_exp, softmax2};
use crate::model::{Bag, BagLabel, CardinalitySpec, InstanceLabeling, InstanceModel};
use tree::ConvolutionTree;

/// What a set of instance marginals is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    Label(BagLabel),
    Unconditional,
}

/// `P(y_i = 1 | ...)` for every instance of a bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSet {
    pub per_instance: Vec<f64>,
    pub conditioning: Conditioning,
}

impl MarginalSet {
    /// All-ones marginals; reduces the cardinality kernel to the MI-Kernel.
    pub fn ones(m: usize) -> Self {
        MarginalSet {
            per_instance: vec![1.0; m],
            conditioning: Conditioning::Unconditional,
        }
    }

    pub fn len(&self) -> usize {
        self.per_instance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_instance.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.per_instance.iter().sum()
    }
}

/// Inference state for one bag under fixed unary weights.
///
/// The convolution tree is built once; partition functions, posteriors and
/// marginals for any cardinality spec reuse it.
#[derive(Debug, Clone)]
pub struct BagInference {
    id: String,
    weights: Vec<f64>,
    tree: ConvolutionTree,
}

impl BagInference {
    pub fn new(bag: &Bag, model: &InstanceModel) -> Result<Self> {
        BagInference::from_weights(bag.id.clone(), model.bag_weights(bag)?)
    }

    pub fn from_weights(id: impl Into<String>, weights: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if weights.is_empty() {
            return Err(Error::invalid(format!("bag `{id}` is empty")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical(format!("bag `{id}` has a non-finite unary weight")));
        }
        let tree = ConvolutionTree::build(&weights);
        Ok(BagInference { id, weights, tree })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn count_distribution(&self) -> &CountDistribution {
        self.tree.root()
    }

    /// Multiplies one root coefficient by `factor`. Exists only so verification
    /// harnesses can prove they detect a corrupted computation.
    #[doc(hidden)]
    pub fn perturb_coefficient(&mut self, c: usize, factor: f64) {
        self.tree.root_mut().mantissas[c] *= factor;
    }

    /// Linear-space potential mantissas for `label` plus their log scale.
    /// `None` when every count is forbidden.
    fn potential(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<Option<(Vec<f64>, f64)>> {
        let logs = spec.log_potentials(label, self.len())?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Ok(None);
        }
        Ok(Some((logs.iter().map(|&l| (l - max).exp()).collect(), max)))
    }

    /// `ln Z(label)`, possibly `-inf`, without the both-labels degeneracy check.
    pub fn log_partition_raw(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<f64> {
        let Some((pot, pot_scale)) = self.potential(spec, label)? else {
            return Ok(f64::NEG_INFINITY);
        };
        let root = self.tree.root();
        let z: f64 = root.mantissas.iter().zip(&pot).map(|(a, c)| a * c).sum();
        Ok(z.ln() + root.log_scale + pot_scale)
    }

    /// `(ln Z(+1), ln Z(-1))`; errors when both vanish.
    pub fn log_partitions(&self, spec: &CardinalitySpec) -> Result<(f64, f64)> {
        let pos = self.log_partition_raw(spec, BagLabel::Positive)?;
        let neg = self.log_partition_raw(spec, BagLabel::Negative)?;
        if pos == f64::NEG_INFINITY && neg == f64::NEG_INFINITY {
            return Err(Error::DegenerateModel { bag: self.id.clone() });
        }
        Ok((pos, neg))
    }

    pub fn log_partition(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<f64> {
        let (pos, neg) = self.log_partitions(spec)?;
        Ok(match label {
            BagLabel::Positive => pos,
            BagLabel::Negative => neg,
        })
    }

    /// `P(Y = +1 | X)`.
    pub fn posterior(&self, spec: &CardinalitySpec) -> Result<f64> {
        let (pos, neg) = self.log_partitions(spec)?;
        Ok(softmax2(pos, neg))
    }

    /// `ln P(label | X)`.
    pub fn log_likelihood(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<f64> {
        let (pos, neg) = self.log_partitions(spec)?;
        let own = if label == BagLabel::Positive { pos } else { neg };
        Ok(own - log_add_exp(pos, neg))
    }

    /// `E[c | Y, X]` from the count distribution reweighted by `C(Y)`.
    pub fn expected_count(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<f64> {
        let Some((pot, _)) = self.potential(spec, label)? else {
            return Err(self.zero_partition(label));
        };
        let root = self.tree.root();
        let (mut z, mut first) = (0.0, 0.0);
        for (c, (a, p)) in root.mantissas.iter().zip(&pot).enumerate() {
            z += a * p;
            first += c as f64 * a * p;
        }
        if z == 0.0 {
            return Err(self.zero_partition(label));
        }
        Ok(first / z)
    }

    /// `P(y_i = 1 | Y = label, X)` for every instance.
    pub fn conditional_marginals(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<MarginalSet> {
        let Some((pot, pot_scale)) = self.potential(spec, label)? else {
            return Err(self.zero_partition(label));
        };
        if self.log_partition_raw(spec, label)? == f64::NEG_INFINITY {
            return Err(self.zero_partition(label));
        }
        let messages = self.tree.leaf_messages(pot, pot_scale);
        let mut per_instance = Vec::with_capacity(self.len());
        for (msg, &w) in messages.iter().zip(&self.weights) {
            let p = softmax2(msg.log_g1 + w, msg.log_g0);
            if p.is_nan() {
                return Err(Error::Numerical(format!(
                    "marginal message underflowed in bag `{}`",
                    self.id
                )));
            }
            per_instance.push(p);
        }
        Ok(MarginalSet {
            per_instance,
            conditioning: Conditioning::Label(label),
        })
    }

    /// `P(y_i = 1 | X) = sum_Y P(y_i = 1 | Y, X) P(Y | X)`.
    pub fn instance_marginals(&self, spec: &CardinalitySpec) -> Result<MarginalSet> {
        let posterior = self.posterior(spec)?;
        let mut per_instance = vec![0.0; self.len()];
        for (label, weight) in [(BagLabel::Positive, posterior), (BagLabel::Negative, 1.0 - posterior)] {
            if weight == 0.0 {
                continue;
            }
            let cond = self.conditional_marginals(spec, label)?;
            for (acc, p) in per_instance.iter_mut().zip(&cond.per_instance) {
                *acc += weight * p;
            }
        }
        per_instance.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        Ok(MarginalSet {
            per_instance,
            conditioning: Conditioning::Unconditional,
        })
    }

    /// Highest-scoring labeling under `C(label)`: for each count, the best
    /// support is the top-weighted instances. Ties go to lower indices and,
    /// between equal-scoring counts, to the smaller count.
    pub fn map_labeling(&self, spec: &CardinalitySpec, label: BagLabel) -> Result<(InstanceLabeling, f64)> {
        let m = self.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        let mut best: Option<(usize, f64)> = None;
        let mut prefix = 0.0;
        for c in 0..=m {
            if c > 0 {
                prefix += self.weights[order[c - 1]];
            }
            let score = spec.log_potential(label, c, m)? + prefix;
            if score == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let Some((count, score)) = best else {
            return Err(Error::invalid(format!(
                "every count is forbidden for bag `{}` under label {label}",
                self.id
            )));
        };
        let mut labels = vec![false; m];
        for &i in &order[..count] {
            labels[i] = true;
        }
        Ok((InstanceLabeling(labels), score))
    }

    fn zero_partition(&self, label: BagLabel) -> Error {
        Error::invalid(format!(
            "cannot condition bag `{}` on label {label}: its partition function is zero",
            self.id
        ))
    }
}

pub fn count_distribution(bag: &Bag, model: &InstanceModel) -> Result<CountDistribution> {
    Ok(BagInference::new(bag, model)?.count_distribution().clone())
}

pub fn log_partition(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec, label: BagLabel) -> Result<f64> {
    BagInference::new(bag, model)?.log_partition(spec, label)
}

pub fn bag_label_posterior(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec) -> Result<f64> {
    BagInference::new(bag, model)?.posterior(spec)
}

pub fn conditional_marginals(
    bag: &Bag,
    model: &InstanceModel,
    spec: &CardinalitySpec,
    label: BagLabel,
) -> Result<MarginalSet> {
    BagInference::new(bag, model)?.conditional_marginals(spec, label)
}

pub fn instance_marginals(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec) -> Result<MarginalSet> {
    BagInference::new(bag, model)?.instance_marginals(spec)
}

pub fn map_labeling(
    bag: &Bag,
    model: &InstanceModel,
    spec: &CardinalitySpec,
    label: BagLabel,
) -> Result<(InstanceLabeling, f64)> {
    BagInference::new(bag, model)?.map_labeling(spec, label)
}

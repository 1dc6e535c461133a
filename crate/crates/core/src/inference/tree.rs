//! Balanced convolution tree over the instances of one bag.
//!
//! Every node holds the generating polynomial of its instance range,
//! `prod_i (1 + e^{w_i} t)`, as max-normalized mantissas plus one log scale.
//! The downward pass sends each node a message `g(k) = sum_j C(k + j) O(j)`,
//! where `O` is the polynomial of all instances outside the node, so leaf
//! marginals fall out without per-leaf recomputation.

use serde::{Deserialize, Serialize};

/// Polynomial coefficients `mantissas[c] * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub log_scale: f64,
    pub mantissas: Vec<f64>,
}

impl CountDistribution {
    /// Distribution of a single instance with unary log weight `w`: `(1, e^w)`.
    pub fn leaf(w: f64) -> Self {
        if w > 0.0 {
            CountDistribution {
                log_scale: w,
                mantissas: vec![(-w).exp(), 1.0],
            }
        } else {
            CountDistribution {
                log_scale: 0.0,
                mantissas: vec![1.0, w.exp()],
            }
        }
    }

    /// Number of instances covered (polynomial degree).
    pub fn size(&self) -> usize {
        self.mantissas.len() - 1
    }

    /// `ln` of the coefficient of `t^c`; `-inf` when it flushed to zero.
    pub fn log_coefficient(&self, c: usize) -> f64 {
        self.mantissas[c].ln() + self.log_scale
    }

    pub fn log_coefficients(&self) -> Vec<f64> {
        (0..self.mantissas.len()).map(|c| self.log_coefficient(c)).collect()
    }

    /// Plain product of two polynomials.
    pub fn convolve(&self, other: &CountDistribution) -> CountDistribution {
        let mut out = vec![0.0; self.mantissas.len() + other.mantissas.len() - 1];
        for (i, &a) in self.mantissas.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out[i..].iter_mut().zip(&other.mantissas) {
                *o += a * b;
            }
        }
        let mut dist = CountDistribution {
            log_scale: self.log_scale + other.log_scale,
            mantissas: out,
        };
        dist.normalize();
        dist
    }

    fn normalize(&mut self) {
        normalize(&mut self.mantissas, &mut self.log_scale);
    }
}

/// Rescales `values` so their maximum is 1, folding the factor into `log_scale`.
/// All-zero input leaves a `-inf` scale.
fn normalize(values: &mut [f64], log_scale: &mut f64) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        *log_scale = f64::NEG_INFINITY;
        return;
    }
    if max != 1.0 {
        let inv = 1.0 / max;
        if inv.is_finite() {
            values.iter_mut().for_each(|v| *v *= inv);
        } else {
            values.iter_mut().for_each(|v| *v /= max);
        }
        *log_scale += max.ln();
    }
}

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    children: Option<(usize, usize)>,
    dist: CountDistribution,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvolutionTree {
    nodes: Vec<Node>,
    root: usize,
}

/// Per-leaf downward message `(g(0), g(1))` in log space.
pub(crate) struct LeafMessage {
    pub log_g0: f64,
    pub log_g1: f64,
}

impl ConvolutionTree {
    pub fn build(weights: &[f64]) -> Self {
        assert!(!weights.is_empty(), "convolution tree needs at least one leaf");
        let mut nodes = Vec::with_capacity(2 * weights.len());
        let root = build_range(weights, 0, weights.len(), &mut nodes);
        ConvolutionTree { nodes, root }
    }

    pub fn root(&self) -> &CountDistribution {
        &self.nodes[self.root].dist
    }

    #[doc(hidden)]
    pub fn root_mut(&mut self) -> &mut CountDistribution {
        &mut self.nodes[self.root].dist
    }

    /// Sends `potential` (linear mantissas over counts `0..=m` with a log scale)
    /// down the tree and returns the two-entry message arriving at every leaf.
    pub fn leaf_messages(&self, potential: Vec<f64>, log_scale: f64) -> Vec<LeafMessage> {
        let m = self.nodes[self.root].hi;
        let mut out = Vec::with_capacity(m);
        out.resize_with(m, || LeafMessage {
            log_g0: f64::NEG_INFINITY,
            log_g1: f64::NEG_INFINITY,
        });
        let mut stack = vec![(self.root, potential, log_scale)];
        while let Some((idx, msg, scale)) = stack.pop() {
            let node = &self.nodes[idx];
            match node.children {
                None => {
                    out[node.lo] = LeafMessage {
                        log_g0: msg[0].ln() + scale,
                        log_g1: msg[1].ln() + scale,
                    };
                }
                Some((left, right)) => {
                    let l = &self.nodes[left];
                    let r = &self.nodes[right];
                    let (ml, sl) = pass_down(&msg, scale, &r.dist, l.hi - l.lo);
                    let (mr, sr) = pass_down(&msg, scale, &l.dist, r.hi - r.lo);
                    stack.push((right, mr, sr));
                    stack.push((left, ml, sl));
                }
            }
        }
        out
    }
}

/// `g_child(k) = sum_j g(k + j) sibling(j)` for `k in 0..=child_size`.
fn pass_down(msg: &[f64], scale: f64, sibling: &CountDistribution, child_size: usize) -> (Vec<f64>, f64) {
    let mut out = vec![0.0; child_size + 1];
    for (k, o) in out.iter_mut().enumerate() {
        *o = msg[k..]
            .iter()
            .zip(&sibling.mantissas)
            .map(|(g, s)| g * s)
            .sum();
    }
    let mut log_scale = scale + sibling.log_scale;
    if scale == f64::NEG_INFINITY {
        out.iter_mut().for_each(|v| *v = 0.0);
        return (out, f64::NEG_INFINITY);
    }
    normalize(&mut out, &mut log_scale);
    (out, log_scale)
}

fn build_range(weights: &[f64], lo: usize, hi: usize, nodes: &mut Vec<Node>) -> usize {
    if hi - lo == 1 {
        nodes.push(Node {
            lo,
            hi,
            children: None,
            dist: CountDistribution::leaf(weights[lo]),
        });
        return nodes.len() - 1;
    }
    let mid = lo + (hi - lo) / 2;
    let left = build_range(weights, lo, mid, nodes);
    let right = build_range(weights, mid, hi, nodes);
    let dist = nodes[left].dist.convolve(&nodes[right].dist);
    nodes.push(Node {
        lo,
        hi,
        children: Some((left, right)),
        dist,
    });
    nodes.len() - 1
}

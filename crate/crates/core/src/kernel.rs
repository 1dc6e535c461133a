//! The marginalized cardinality kernel between bags.
//!
//! With instance marginals `p_i = P(y_i = 1 | X)` and the positive-only label
//! kernel, the unnormalized bag kernel is
//! `k~(P, Q) = sum_i sum_j k_x(x_pi, x_qj) p_pi p_qj`, i.e. an inner product of
//! marginal-weighted instance sums in the feature space of `k_x`. The final
//! kernel is `k~(P, Q) / sqrt(k~(P, P) k~(Q, Q))`.

use std::borrow::Cow;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{BagInference, MarginalSet};
use crate::math::dot;
use crate::model::{Bag, CardinalitySpec, Instance, InstanceModel};

/// Base kernel between single instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceKernel {
    Linear,
    Rbf { gamma: f64 },
    HistogramIntersection,
}

impl InstanceKernel {
    pub fn validate(&self) -> Result<()> {
        if let InstanceKernel::Rbf { gamma } = self {
            if !(*gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::invalid(format!("rbf gamma must be > 0, got {gamma}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(match self {
            InstanceKernel::Linear => dot(x, y),
            InstanceKernel::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            InstanceKernel::HistogramIntersection => {
                if x.iter().chain(y).any(|&v| v < 0.0) {
                    return Err(Error::invalid(
                        "histogram intersection kernel requires nonnegative features",
                    ));
                }
                x.iter().zip(y).map(|(a, b)| a.min(*b)).sum()
            }
        })
    }

    /// Checks that every feature of `bag` is admissible for this kernel.
    pub fn check_bag(&self, bag: &Bag) -> Result<()> {
        if *self == InstanceKernel::HistogramIntersection
            && bag.instances().iter().any(|x| x.features().iter().any(|&v| v < 0.0))
        {
            return Err(Error::invalid(format!(
                "bag `{}` has negative features; histogram intersection needs nonnegative input",
                bag.id
            )));
        }
        Ok(())
    }
}

impl fmt::Display for InstanceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceKernel::Linear => write!(f, "linear"),
            InstanceKernel::Rbf { gamma } => write!(f, "rbf:{gamma}"),
            InstanceKernel::HistogramIntersection => write!(f, "hik"),
        }
    }
}

impl FromStr for InstanceKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(InstanceKernel::Linear),
            "hik" => Ok(InstanceKernel::HistogramIntersection),
            _ => {
                let gamma = s
                    .strip_prefix("rbf:")
                    .and_then(|g| g.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown instance kernel `{s}`")))?;
                let k = InstanceKernel::Rbf { gamma };
                k.validate()?;
                Ok(k)
            }
        }
    }
}

/// Kernel on the latent instance labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelKernel {
    /// `1(y = 1) 1(y' = 1)`: only likely-positive instances contribute.
    #[default]
    PositiveOnly,
    /// `1(y = y')`: positive and negative blocks side by side.
    Identity,
}

/// Full description of a bag kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub instance: InstanceKernel,
    pub label: LabelKernel,
    /// Force every marginal to 1, reducing the kernel to the normalized MI-Kernel.
    pub mi_mode: bool,
}

impl KernelConfig {
    pub fn new(instance: InstanceKernel, label: LabelKernel) -> Self {
        KernelConfig {
            instance,
            label,
            mi_mode: false,
        }
    }

    pub fn mi(instance: InstanceKernel) -> Self {
        KernelConfig {
            instance,
            label: LabelKernel::PositiveOnly,
            mi_mode: true,
        }
    }

    /// Token used in the Gram header: `positive`, `identity` or `mi`.
    pub fn label_token(&self) -> &'static str {
        match (self.mi_mode, self.label) {
            (true, _) => "mi",
            (false, LabelKernel::PositiveOnly) => "positive",
            (false, LabelKernel::Identity) => "identity",
        }
    }

    pub fn from_tokens(instance: &str, label: &str) -> Result<Self> {
        let instance = instance.parse()?;
        Ok(match label {
            "positive" => KernelConfig::new(instance, LabelKernel::PositiveOnly),
            "identity" => KernelConfig::new(instance, LabelKernel::Identity),
            "mi" => KernelConfig::mi(instance),
            other => return Err(Error::invalid(format!("unknown label kernel `{other}`"))),
        })
    }
}

pub fn instance_kernel(kind: &InstanceKernel, x: &Instance, y: &Instance) -> Result<f64> {
    kind.eval(x.features(), y.features())
}

fn check_sizes(bag: &Bag, marg: &MarginalSet) -> Result<()> {
    if bag.len() != marg.len() {
        return Err(Error::invalid(format!(
            "bag `{}` has {} instances but {} marginals",
            bag.id,
            bag.len(),
            marg.len()
        )));
    }
    Ok(())
}

/// `sum_i sum_j k_x(x_pi, x_qj) k_y-weight(p_pi, p_qj)`.
pub fn unnormalized_bag_kernel_with(
    bag_p: &Bag,
    bag_q: &Bag,
    marg_p: &MarginalSet,
    marg_q: &MarginalSet,
    kind: &InstanceKernel,
    label: LabelKernel,
) -> Result<f64> {
    check_sizes(bag_p, marg_p)?;
    check_sizes(bag_q, marg_q)?;
    let mut total = 0.0;
    for (x, &p) in bag_p.instances().iter().zip(&marg_p.per_instance) {
        for (y, &q) in bag_q.instances().iter().zip(&marg_q.per_instance) {
            let weight = match label {
                LabelKernel::PositiveOnly => p * q,
                LabelKernel::Identity => p * q + (1.0 - p) * (1.0 - q),
            };
            if weight != 0.0 {
                total += weight * kind.eval(x.features(), y.features())?;
            }
        }
    }
    Ok(total)
}

/// Positive-only unnormalized cardinality kernel.
pub fn unnormalized_bag_kernel(
    bag_p: &Bag,
    bag_q: &Bag,
    marg_p: &MarginalSet,
    marg_q: &MarginalSet,
    kind: &InstanceKernel,
) -> Result<f64> {
    unnormalized_bag_kernel_with(bag_p, bag_q, marg_p, marg_q, kind, LabelKernel::PositiveOnly)
}

/// Positive-only normalized cardinality kernel.
pub fn normalized_bag_kernel(
    bag_p: &Bag,
    bag_q: &Bag,
    marg_p: &MarginalSet,
    marg_q: &MarginalSet,
    kind: &InstanceKernel,
) -> Result<f64> {
    let pp = unnormalized_bag_kernel(bag_p, bag_p, marg_p, marg_p, kind)?;
    let qq = unnormalized_bag_kernel(bag_q, bag_q, marg_q, marg_q, kind)?;
    let degenerate: Vec<String> = [(bag_p, pp), (bag_q, qq)]
        .iter()
        .filter(|(_, s)| !(*s > 0.0))
        .map(|(b, _)| b.id.clone())
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateBags { bags: degenerate });
    }
    Ok(unnormalized_bag_kernel(bag_p, bag_q, marg_p, marg_q, kind)? / (pp * qq).sqrt())
}

/// A bag prepared for kernel evaluation: its marginals and self-kernel.
#[derive(Debug, Clone)]
pub struct KernelBag<'a> {
    pub bag: Cow<'a, Bag>,
    pub marginals: MarginalSet,
    pub self_kernel: f64,
}

impl KernelBag<'_> {
    pub fn into_owned(self) -> KernelBag<'static> {
        KernelBag {
            bag: Cow::Owned(self.bag.into_owned()),
            marginals: self.marginals,
            self_kernel: self.self_kernel,
        }
    }
}

/// Computes the marginals a kernel configuration needs for `bag`.
pub fn bag_marginals(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec, cfg: &KernelConfig) -> Result<MarginalSet> {
    if cfg.mi_mode {
        Ok(MarginalSet::ones(bag.len()))
    } else {
        BagInference::new(bag, model)?.instance_marginals(spec)
    }
}

/// Marginals and self-kernels for a set of bags; reports every degenerate bag at once.
pub fn prepare_bags<'a>(
    bags: &'a [Bag],
    model: &InstanceModel,
    spec: &CardinalitySpec,
    cfg: &KernelConfig,
) -> Result<Vec<KernelBag<'a>>> {
    cfg.instance.validate()?;
    for bag in bags {
        cfg.instance.check_bag(bag)?;
    }
    let prepared = bags
        .par_iter()
        .map(|bag| {
            let marginals = bag_marginals(bag, model, spec, cfg)?;
            let self_kernel = unnormalized_bag_kernel_with(bag, bag, &marginals, &marginals, &cfg.instance, cfg.label)?;
            Ok(KernelBag {
                bag: Cow::Borrowed(bag),
                marginals,
                self_kernel,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate: Vec<String> = prepared
        .iter()
        .filter(|kb| !(kb.self_kernel > 0.0))
        .map(|kb| kb.bag.id.clone())
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateBags { bags: degenerate });
    }
    Ok(prepared)
}

/// Normalized kernel between two prepared bags.
pub fn prepared_kernel(a: &KernelBag<'_>, b: &KernelBag<'_>, cfg: &KernelConfig) -> Result<f64> {
    let raw = unnormalized_bag_kernel_with(&a.bag, &b.bag, &a.marginals, &b.marginals, &cfg.instance, cfg.label)?;
    Ok(raw / (a.self_kernel * b.self_kernel).sqrt())
}

/// Rectangular kernel block `K[r][c] = k(rows[r], cols[c])`.
pub fn cross_kernel(rows: &[KernelBag<'_>], cols: &[KernelBag<'_>], cfg: &KernelConfig) -> Result<Vec<Vec<f64>>> {
    rows.par_iter()
        .map(|r| cols.iter().map(|c| prepared_kernel(r, c, cfg)).collect::<Result<Vec<_>>>())
        .collect()
}

/// Square normalized cardinality-kernel matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    pub bag_ids: Vec<String>,
    pub config: KernelConfig,
    pub fingerprint: String,
}

impl GramMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, bag_ids: Vec<String>, config: KernelConfig, fingerprint: String) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("gram rows must form a square matrix"));
        }
        if !bag_ids.is_empty() && bag_ids.len() != n {
            return Err(Error::invalid("gram bag ids do not match its size"));
        }
        Ok(GramMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
            bag_ids,
            config,
            fingerprint,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Principal submatrix on `idx` (in that order).
    pub fn submatrix(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| idx.iter().map(|&j| self.get(i, j)).collect()).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.to_rows())
    }

    /// Text form: header `N kernelKind labelKind fingerprint`, then `N` rows of
    /// `N` decimals with 17 significant digits.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{} {} {} {}",
            self.n,
            self.config.instance,
            self.config.label_token(),
            self.fingerprint
        )?;
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R, source: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty gram file".into()))?
            .map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [n, kernel, label, fingerprint] = fields[..] else {
            return Err(parse_err(1, "header must be `N kernelKind labelKind fingerprint`".into()));
        };
        let n: usize = n.parse().map_err(|_| parse_err(1, format!("bad size `{n}`")))?;
        let config = KernelConfig::from_tokens(kernel, label).map_err(|e| parse_err(1, e.to_string()))?;
        let mut rows = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(i + 2, e.to_string()))?;
            if row.len() != n {
                return Err(parse_err(i + 2, format!("expected {n} values, found {}", row.len())));
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(parse_err(n + 1, format!("expected {n} rows, found {}", rows.len())));
        }
        GramMatrix::from_rows(rows, Vec::new(), config, fingerprint.to_string())
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n == 0 {
        return 0.0;
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Builds the normalized Gram matrix of `bags`. Marginals are computed once per bag.
pub fn gram(
    bags: &[Bag],
    model: &InstanceModel,
    spec: &CardinalitySpec,
    cfg: &KernelConfig,
    fingerprint: impl Into<String>,
) -> Result<GramMatrix> {
    if bags.is_empty() {
        return Err(Error::invalid("cannot build a gram matrix of zero bags"));
    }
    let prepared = prepare_bags(bags, model, spec, cfg)?;
    gram_from_prepared(&prepared, cfg, fingerprint)
}

pub fn gram_from_prepared(prepared: &[KernelBag<'_>], cfg: &KernelConfig, fingerprint: impl Into<String>) -> Result<GramMatrix> {
    let n = prepared.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        Ok(1.0)
                    } else {
                        prepared_kernel(&prepared[i], &prepared[j], cfg)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut rows = vec![vec![0.0; n]; n];
    for (i, vals) in upper.iter().enumerate() {
        for (off, &v) in vals.iter().enumerate() {
            rows[i][i + off] = v;
            rows[i + off][i] = v;
        }
    }
    let ids = prepared.iter().map(|kb| kb.bag.id.clone()).collect();
    GramMatrix::from_rows(rows, ids, *cfg, fingerprint.into())
}

//! Domain types and the potentials shared by inference, training and the kernel.
//!
//! Everything here works in log space. A potential of zero is represented by
//! `f64::NEG_INFINITY`; callers must be prepared to see it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when turning a ratio threshold into an integer count threshold.
const RATIO_SLACK: f64 = 1e-12;

/// A single instance feature vector. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Instance(Vec<f64>);

impl Instance {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "instance feature {j} is not finite ({})",
                features[j]
            )));
        }
        Ok(Instance(features))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Instance {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Instance::new(v)
    }
}

impl From<Instance> for Vec<f64> {
    fn from(x: Instance) -> Self {
        x.0
    }
}

impl AsRef<[f64]> for Instance {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Binary bag label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum BagLabel {
    Negative,
    Positive,
}

impl BagLabel {
    pub const BOTH: [BagLabel; 2] = [BagLabel::Positive, BagLabel::Negative];

    pub fn sign(self) -> f64 {
        match self {
            BagLabel::Positive => 1.0,
            BagLabel::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BagLabel::Positive => BagLabel::Negative,
            BagLabel::Negative => BagLabel::Positive,
        }
    }

    pub fn from_score(score: f64) -> Self {
        if score >= 0.0 {
            BagLabel::Positive
        } else {
            BagLabel::Negative
        }
    }
}

impl TryFrom<i8> for BagLabel {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(BagLabel::Positive),
            -1 => Ok(BagLabel::Negative),
            other => Err(Error::invalid(format!("bag label must be 1 or -1, got {other}"))),
        }
    }
}

impl From<BagLabel> for i8 {
    fn from(y: BagLabel) -> i8 {
        match y {
            BagLabel::Positive => 1,
            BagLabel::Negative => -1,
        }
    }
}

impl std::fmt::Display for BagLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", i8::from(*self))
    }
}

/// A bag: a nonempty ordered collection of same-dimension instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: String,
    instances: Vec<Instance>,
    #[serde(default)]
    pub label: Option<BagLabel>,
}

impl Bag {
    pub fn new(id: impl Into<String>, instances: Vec<Instance>, label: Option<BagLabel>) -> Result<Self> {
        let id = id.into();
        let Some(first) = instances.first() else {
            return Err(Error::invalid(format!("bag `{id}` has no instances")));
        };
        let d = first.dim();
        if let Some(bad) = instances.iter().find(|x| x.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.dim(),
            });
        }
        Ok(Bag { id, instances, label })
    }

    /// Convenience constructor from raw rows.
    pub fn from_rows(id: impl Into<String>, rows: Vec<Vec<f64>>, label: Option<BagLabel>) -> Result<Self> {
        let instances = rows.into_iter().map(Instance::new).collect::<Result<Vec<_>>>()?;
        Bag::new(id, instances, label)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances[0].dim()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn with_instances(&self, instances: Vec<Instance>) -> Result<Self> {
        Bag::new(self.id.clone(), instances, self.label)
    }
}

/// A hard assignment of binary labels to the instances of one bag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabeling(pub Vec<bool>);

impl InstanceLabeling {
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&y| y).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The pair of count potentials `C(+1)` and `C(-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CardinalitySpec {
    /// Soft preference for a positive fraction near `mu` in positive bags and near 0 in negatives.
    Normal { mu: f64, sigma: f64 },
    /// Positive bags need at least a fraction `rho` of positive instances; negatives fewer.
    RatioConstrained { rho: f64 },
    Uniform,
    /// Explicit log potentials indexed by count, for bags of exactly `len - 1` instances.
    Tabular {
        #[serde(with = "neg_inf_as_null")]
        log_pos: Vec<f64>,
        #[serde(with = "neg_inf_as_null")]
        log_neg: Vec<f64>,
    },
}

impl CardinalitySpec {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        let spec = CardinalitySpec::Normal { mu, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ratio(rho: f64) -> Result<Self> {
        let spec = CardinalitySpec::RatioConstrained { rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tabular(log_pos: Vec<f64>, log_neg: Vec<f64>) -> Result<Self> {
        let spec = CardinalitySpec::Tabular { log_pos, log_neg };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CardinalitySpec::Normal { mu, sigma } => {
                if !(0.0..=1.0).contains(mu) {
                    return Err(Error::invalid(format!("normal mu must lie in [0, 1], got {mu}")));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!("normal sigma must be > 0, got {sigma}")));
                }
            }
            CardinalitySpec::RatioConstrained { rho } => {
                if !(*rho > 0.0 && *rho <= 1.0) {
                    return Err(Error::invalid(format!("ratio rho must lie in (0, 1], got {rho}")));
                }
            }
            CardinalitySpec::Uniform => {}
            CardinalitySpec::Tabular { log_pos, log_neg } => {
                if log_pos.len() != log_neg.len() || log_pos.len() < 2 {
                    return Err(Error::invalid(
                        "tabular potential tables must both have length m + 1 >= 2",
                    ));
                }
                for (side, table) in [("positive", log_pos), ("negative", log_neg)] {
                    if table.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                        return Err(Error::invalid(format!("{side} table holds NaN or +inf")));
                    }
                    if !table.iter().any(|v| v.is_finite()) {
                        return Err(Error::invalid(format!("{side} table has no finite entry")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Log of `C(label)(count)` for a bag of `m` instances; `-inf` means the count is forbidden.
    pub fn log_potential(&self, label: BagLabel, count: usize, m: usize) -> Result<f64> {
        if m == 0 {
            return Err(Error::invalid("bag size must be >= 1"));
        }
        if count > m {
            return Err(Error::invalid(format!("count {count} exceeds bag size {m}")));
        }
        let ratio = count as f64 / m as f64;
        let value = match (self, label) {
            (CardinalitySpec::Normal { mu, sigma }, BagLabel::Positive) => {
                -((ratio - mu).powi(2) / (2.0 * sigma * sigma))
            }
            (CardinalitySpec::Normal { sigma, .. }, BagLabel::Negative) => {
                -(ratio * ratio / (2.0 * sigma * sigma))
            }
            (CardinalitySpec::RatioConstrained { rho }, y) => {
                let positive = count >= ratio_threshold(*rho, m);
                if positive == (y == BagLabel::Positive) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            (CardinalitySpec::Uniform, _) => 0.0,
            (CardinalitySpec::Tabular { log_pos, log_neg }, y) => {
                if log_pos.len() != m + 1 {
                    return Err(Error::invalid(format!(
                        "tabular potential covers bags of size {}, got {m}",
                        log_pos.len() - 1
                    )));
                }
                match y {
                    BagLabel::Positive => log_pos[count],
                    BagLabel::Negative => log_neg[count],
                }
            }
        };
        Ok(value)
    }

    /// All `m + 1` log potentials for one label.
    pub fn log_potentials(&self, label: BagLabel, m: usize) -> Result<Vec<f64>> {
        (0..=m).map(|c| self.log_potential(label, c, m)).collect()
    }

    /// Tabulates this spec for bags of size `m`.
    pub fn tabulate(&self, m: usize) -> Result<CardinalitySpec> {
        CardinalitySpec::tabular(
            self.log_potentials(BagLabel::Positive, m)?,
            self.log_potentials(BagLabel::Negative, m)?,
        )
    }

    /// Exchanges the roles of `C(+1)` and `C(-1)`. Only tables can represent the result.
    pub fn swapped(&self, m: usize) -> Result<CardinalitySpec> {
        match self.tabulate(m)? {
            CardinalitySpec::Tabular { log_pos, log_neg } => Ok(CardinalitySpec::Tabular {
                log_pos: log_neg,
                log_neg: log_pos,
            }),
            _ => unreachable!(),
        }
    }
}

impl std::fmt::Display for CardinalitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CardinalitySpec::Normal { mu, sigma } => write!(f, "normal(mu={mu},sigma={sigma})"),
            CardinalitySpec::RatioConstrained { rho } => write!(f, "ratio(rho={rho})"),
            CardinalitySpec::Uniform => write!(f, "uniform"),
            CardinalitySpec::Tabular { log_pos, .. } => write!(f, "tabular(m={})", log_pos.len() - 1),
        }
    }
}

/// Smallest count classified as positive under ratio `rho` for a bag of `m` instances.
pub fn ratio_threshold(rho: f64, m: usize) -> usize {
    (rho * m as f64 - RATIO_SLACK).ceil().max(0.0) as usize
}

/// Linear instance scorer: `w = theta . x` (plus a trailing bias weight when enabled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceModel {
    pub theta: Vec<f64>,
    pub include_bias: bool,
}

impl InstanceModel {
    pub fn new(theta: Vec<f64>, include_bias: bool) -> Result<Self> {
        if include_bias && theta.is_empty() {
            return Err(Error::invalid("a biased model needs at least the bias weight"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(InstanceModel { theta, include_bias })
    }

    pub fn zeros(dim: usize, include_bias: bool) -> Self {
        let n = dim + usize::from(include_bias);
        InstanceModel {
            theta: vec![0.0; n],
            include_bias,
        }
    }

    /// Number of instance features this model expects.
    pub fn feature_dim(&self) -> usize {
        self.theta.len() - usize::from(self.include_bias)
    }

    /// Log potential of `y = 1` for this instance (the `y = 0` log potential is 0).
    pub fn unary_weight(&self, x: &Instance) -> Result<f64> {
        let d = self.feature_dim();
        if x.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.dim(),
            });
        }
        let dot: f64 = self.theta[..d].iter().zip(x.features()).map(|(t, v)| t * v).sum();
        Ok(if self.include_bias { dot + self.theta[d] } else { dot })
    }

    pub fn bag_weights(&self, bag: &Bag) -> Result<Vec<f64>> {
        bag.instances().iter().map(|x| self.unary_weight(x)).collect()
    }

    /// Writes the (possibly bias-augmented) feature vector of `x` scaled by `scale` into `acc`.
    pub(crate) fn accumulate_features(&self, x: &Instance, scale: f64, acc: &mut [f64]) {
        let d = self.feature_dim();
        for (a, v) in acc[..d].iter_mut().zip(x.features()) {
            *a += scale * v;
        }
        if self.include_bias {
            acc[d] += scale;
        }
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(v: &[f64]) -> Instance {
        Instance::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normal_potential_peaks_at_mu() {
        let spec = CardinalitySpec::normal(1.0, 0.1).unwrap();
        assert_eq!(spec.log_potential(BagLabel::Positive, 10, 10).unwrap(), 0.0);
        let v = spec.log_potential(BagLabel::Positive, 8, 10).unwrap();
        assert!((v - -2.0).abs() < 1e-12, "{v}");
        // negative side is centred at zero positives
        assert_eq!(spec.log_potential(BagLabel::Negative, 0, 10).unwrap(), 0.0);
    }

    #[test]
    fn ratio_boundary_counts_as_positive() {
        let spec = CardinalitySpec::ratio(0.5).unwrap();
        assert_eq!(spec.log_potential(BagLabel::Positive, 2, 4).unwrap(), 0.0);
        assert_eq!(spec.log_potential(BagLabel::Positive, 1, 4).unwrap(), f64::NEG_INFINITY);
        assert_eq!(spec.log_potential(BagLabel::Negative, 1, 4).unwrap(), 0.0);
        assert_eq!(spec.log_potential(BagLabel::Negative, 2, 4).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn ratio_indicators_partition_counts() {
        for &rho in &[0.05, 0.1, 0.3, 1.0 / 3.0, 0.5, 0.7, 0.9, 1.0] {
            let spec = CardinalitySpec::ratio(rho).unwrap();
            for m in 1..=30 {
                for c in 0..=m {
                    let p = spec.log_potential(BagLabel::Positive, c, m).unwrap();
                    let n = spec.log_potential(BagLabel::Negative, c, m).unwrap();
                    assert!((p == 0.0) ^ (n == 0.0), "rho={rho} m={m} c={c}");
                }
            }
        }
    }

    #[test]
    fn small_rho_excludes_only_zero() {
        let spec = CardinalitySpec::ratio(0.1).unwrap();
        assert_eq!(spec.log_potential(BagLabel::Positive, 0, 5).unwrap(), f64::NEG_INFINITY);
        for c in 1..=5 {
            assert_eq!(spec.log_potential(BagLabel::Positive, c, 5).unwrap(), 0.0);
        }
    }

    #[test]
    fn float_boundary_is_stable() {
        // 0.3 * 10 is 3.0000000000000004 in floating point
        let spec = CardinalitySpec::ratio(0.3).unwrap();
        assert_eq!(spec.log_potential(BagLabel::Positive, 3, 10).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_count_is_rejected() {
        let spec = CardinalitySpec::Uniform;
        assert!(spec.log_potential(BagLabel::Positive, 5, 4).is_err());
        assert!(spec.log_potential(BagLabel::Positive, 0, 0).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(CardinalitySpec::normal(0.5, 0.0).is_err());
        assert!(CardinalitySpec::normal(1.5, 0.1).is_err());
        assert!(CardinalitySpec::ratio(0.0).is_err());
        assert!(CardinalitySpec::tabular(vec![f64::NEG_INFINITY; 3], vec![0.0; 3]).is_err());
        assert!(CardinalitySpec::tabular(vec![0.0; 3], vec![0.0; 2]).is_err());
    }

    #[test]
    fn tabular_lookup_and_swap() {
        let spec = CardinalitySpec::normal(0.7, 0.2).unwrap();
        let table = spec.tabulate(6).unwrap();
        let swapped = spec.swapped(6).unwrap();
        for c in 0..=6 {
            let p = spec.log_potential(BagLabel::Positive, c, 6).unwrap();
            assert_eq!(table.log_potential(BagLabel::Positive, c, 6).unwrap(), p);
            assert_eq!(swapped.log_potential(BagLabel::Negative, c, 6).unwrap(), p);
        }
        assert!(table.log_potential(BagLabel::Positive, 0, 5).is_err());
    }

    #[test]
    fn tabular_serializes_neg_inf() {
        let spec = CardinalitySpec::ratio(0.5).unwrap().tabulate(3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: CardinalitySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unary_weights() {
        let x = inst(&[3.0, 1.0]);
        assert_eq!(InstanceModel::zeros(2, false).unary_weight(&x).unwrap(), 0.0);
        let m = InstanceModel::new(vec![1.0, -2.0], false).unwrap();
        assert_eq!(m.unary_weight(&x).unwrap(), 1.0);
        let b = InstanceModel::new(vec![1.0, -2.0, 0.5], true).unwrap();
        assert_eq!(b.unary_weight(&x).unwrap(), 1.5);
        assert!(matches!(
            m.unary_weight(&inst(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn bag_validation() {
        assert!(Bag::from_rows("a", vec![], None).is_err());
        assert!(Bag::from_rows("a", vec![vec![1.0], vec![1.0, 2.0]], None).is_err());
        assert!(Instance::new(vec![f64::NAN]).is_err());
        let b = Bag::from_rows("a", vec![vec![1.0, 2.0]], Some(BagLabel::Positive)).unwrap();
        assert_eq!((b.len(), b.dim()), (1, 2));
    }

    #[test]
    fn label_conversions() {
        assert_eq!(BagLabel::try_from(1i8).unwrap(), BagLabel::Positive);
        assert!(BagLabel::try_from(0i8).is_err());
        assert_eq!(BagLabel::Positive.flipped(), BagLabel::Negative);
    }
}

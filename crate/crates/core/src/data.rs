//! Bag datasets: line-oriented JSON files, feature standardization and a
//! synthetic multi-instance generator.
//!
//! One bag per line:
//! `{"id": "b1", "label": 1, "instances": [[0.5, 1.0], [2.0, -1.0]]}`.
//! `label` may be `1`, `-1`, `null` or absent. Reals are written in their
//! shortest round-trip form, so save/load is bit-exact.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::model::{Bag, BagLabel, Instance};

const SCALE_FLOOR: f64 = 1e-12;

/// Per-feature affine transform `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Fits on all instances of `bags` pooled together.
    pub fn fit(bags: &[Bag]) -> Result<Self> {
        let first = bags.first().ok_or_else(|| Error::invalid("cannot standardize an empty dataset"))?;
        let d = first.dim();
        let mut n = 0usize;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        // Welford accumulation
        for x in bags.iter().flat_map(|b| b.instances()) {
            n += 1;
            for (j, &v) in x.features().iter().enumerate() {
                let delta = v - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (v - mean[j]);
            }
        }
        let scale = m2.iter().map(|s| (s / n as f64).sqrt().max(SCALE_FLOOR)).collect();
        Ok(Standardization { mean, scale })
    }

    pub fn apply_instance(&self, x: &Instance) -> Result<Instance> {
        if x.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.dim(),
            });
        }
        Instance::new(
            x.features()
                .iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        )
    }

    pub fn apply_bag(&self, bag: &Bag) -> Result<Bag> {
        let instances = bag.instances().iter().map(|x| self.apply_instance(x)).collect::<Result<_>>()?;
        bag.with_instances(instances)
    }

    pub fn apply(&self, dataset: &BagDataset) -> Result<BagDataset> {
        let bags = dataset.bags.iter().map(|b| self.apply_bag(b)).collect::<Result<_>>()?;
        let mut out = BagDataset::new(bags)?;
        out.standardization = Some(self.clone());
        Ok(out)
    }
}

/// A validated collection of bags with a common dimension and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct BagDataset {
    pub bags: Vec<Bag>,
    pub dim: usize,
    /// Transform already applied to these bags, if any.
    pub standardization: Option<Standardization>,
}

#[derive(Serialize, Deserialize)]
struct BagLine {
    id: String,
    #[serde(default)]
    label: Option<i64>,
    instances: Vec<Vec<f64>>,
}

impl BagDataset {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let first = bags.first().ok_or_else(|| Error::invalid("dataset has no bags"))?;
        let dim = first.dim();
        let mut seen = HashSet::new();
        for bag in &bags {
            if bag.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: bag.dim(),
                });
            }
            if !seen.insert(bag.id.as_str()) {
                return Err(Error::invalid(format!("duplicate bag id `{}`", bag.id)));
            }
        }
        Ok(BagDataset {
            bags,
            dim,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn labels(&self) -> Option<Vec<BagLabel>> {
        self.bags.iter().map(|b| b.label).collect()
    }

    pub fn require_labels(&self) -> Result<Vec<BagLabel>> {
        self.bags
            .iter()
            .map(|b| b.label.ok_or_else(|| Error::invalid(format!("bag `{}` has no label", b.id))))
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<BagDataset> {
        let mut out = BagDataset::new(idx.iter().map(|&i| self.bags[i].clone()).collect())?;
        out.standardization = self.standardization.clone();
        Ok(out)
    }

    pub fn parse<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut bags: Vec<Bag> = Vec::new();
        let mut seen = HashSet::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: BagLine = serde_json::from_str(&line).map_err(|e| err(lineno, e.to_string()))?;
            let label = match raw.label {
                None => None,
                Some(1) => Some(BagLabel::Positive),
                Some(-1) => Some(BagLabel::Negative),
                Some(other) => return Err(err(lineno, format!("label must be 1, -1 or null, got {other}"))),
            };
            if raw.instances.is_empty() {
                return Err(err(lineno, format!("bag `{}` has no instances", raw.id)));
            }
            let d = *dim.get_or_insert(raw.instances[0].len());
            if let Some(bad) = raw.instances.iter().find(|x| x.len() != d) {
                return Err(err(lineno, format!("expected {d} features per instance, found {}", bad.len())));
            }
            if !seen.insert(raw.id.clone()) {
                return Err(err(lineno, format!("duplicate bag id `{}`", raw.id)));
            }
            let bag = Bag::from_rows(raw.id, raw.instances, label).map_err(|e| err(lineno, e.to_string()))?;
            bags.push(bag);
        }
        if bags.is_empty() {
            return Err(err(1, "dataset has no bags".into()));
        }
        BagDataset::new(bags)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for bag in &self.bags {
            let line = BagLine {
                id: bag.id.clone(),
                label: bag.label.map(|l| i8::from(l) as i64),
                instances: bag.instances().iter().map(|x| x.features().to_vec()).collect(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn fingerprint(&self) -> String {
        fingerprint([self.to_bytes().as_slice()])
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<BagDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BagDataset::parse(BufReader::new(file), &path.display().to_string())
}

pub fn save(dataset: &BagDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    dataset.write(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fits a transform on `train` only and applies it to `train` and every other set.
pub fn standardize(train: &BagDataset, others: &[&BagDataset]) -> Result<(BagDataset, Vec<BagDataset>, Standardization)> {
    let t = Standardization::fit(&train.bags)?;
    let train_out = t.apply(train)?;
    let others_out = others.iter().map(|d| t.apply(d)).collect::<Result<_>>()?;
    Ok((train_out, others_out, t))
}

/// Parameters of the synthetic multi-instance generator.
///
/// Background instances are `N(0, I)`. Witnesses are `N(separation e_1, I)`
/// and appear in positive bags with probability `witness_rate`. Negative bags
/// mix in confusers `N(separation / 2 e_1, I)` with probability `clutter_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub dim: usize,
    pub witness_rate: f64,
    pub separation: f64,
    pub clutter_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pos: 50,
            n_neg: 50,
            m_min: 5,
            m_max: 15,
            dim: 5,
            witness_rate: 0.5,
            separation: 3.0,
            clutter_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.witness_rate) {
            return Err(Error::invalid(format!("witness rate must lie in [0, 1], got {}", self.witness_rate)));
        }
        if !(0.0..=1.0).contains(&self.clutter_rate) {
            return Err(Error::invalid(format!("clutter rate must lie in [0, 1], got {}", self.clutter_rate)));
        }
        if self.m_min == 0 || self.m_min > self.m_max {
            return Err(Error::invalid(format!(
                "bag size range must satisfy 1 <= m_min <= m_max, got {}..{}",
                self.m_min, self.m_max
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if self.n_pos + self.n_neg == 0 {
            return Err(Error::invalid("generator needs at least one bag"));
        }
        if !self.separation.is_finite() {
            return Err(Error::invalid("separation must be finite"));
        }
        Ok(())
    }
}

/// Generated bags plus the hidden instance labels (witness = true).
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: BagDataset,
    /// Diagnostic only; never consumed by training.
    pub instance_truth: Vec<Vec<bool>>,
}

fn gaussian_instance(rng: &mut ChaCha8Rng, dim: usize, shift_axis: usize, shift: f64) -> Result<Instance> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    v[shift_axis] += shift;
    Instance::new(v)
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.n_pos + cfg.n_neg;
    let width = total.to_string().len().max(4);
    let mut bags = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for b in 0..total {
        let positive = b < cfg.n_pos;
        let m = rng.random_range(cfg.m_min..=cfg.m_max);
        let mut instances = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            let u: f64 = rng.random();
            let (shift, witness) = if positive {
                if u < cfg.witness_rate {
                    (cfg.separation, true)
                } else {
                    (0.0, false)
                }
            } else if u < cfg.clutter_rate {
                (cfg.separation / 2.0, false)
            } else {
                (0.0, false)
            };
            instances.push(gaussian_instance(&mut rng, cfg.dim, 0, shift)?);
            labels.push(witness);
        }
        let label = if positive { BagLabel::Positive } else { BagLabel::Negative };
        bags.push(Bag::new(format!("bag-{b:0width$}"), instances, Some(label))?);
        truth.push(labels);
    }
    Ok(SyntheticData {
        dataset: BagDataset::new(bags)?,
        instance_truth: truth,
    })
}

/// Multiclass variant: `n_pos` bags per class, class `k` witnesses centred at
/// `separation e_k`, everything else background. Bag labels are left unset and
/// the class of each bag is returned alongside.
pub fn generate_multiclass(cfg: &SynthConfig, n_classes: usize) -> Result<(BagDataset, Vec<usize>)> {
    cfg.validate()?;
    if n_classes < 2 || cfg.dim < n_classes {
        return Err(Error::invalid("multiclass generation needs 2 <= n_classes <= dim"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bags = Vec::new();
    let mut classes = Vec::new();
    for k in 0..n_classes {
        for b in 0..cfg.n_pos {
            let m = rng.random_range(cfg.m_min..=cfg.m_max);
            let mut instances = Vec::with_capacity(m);
            for _ in 0..m {
                let u: f64 = rng.random();
                let shift = if u < cfg.witness_rate { cfg.separation } else { 0.0 };
                instances.push(gaussian_instance(&mut rng, cfg.dim, k, shift)?);
            }
            bags.push(Bag::new(format!("c{k}-{b:04}"), instances, None)?);
            classes.push(k);
        }
    }
    Ok((BagDataset::new(bags)?, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_valid_lines() {
        let text = r#"{"id": "a", "label": 1, "instances": [[1.0, 2.0]]}
{"id": "b", "label": null, "instances": [[0.5, 0.25], [3, 4]]}
{"id": "c", "instances": [[0.0, 0.0]]}
"#;
        let ds = BagDataset::parse(text.as_bytes(), "mem").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim, 2);
        assert_eq!(ds.bags[0].label, Some(BagLabel::Positive));
        assert_eq!(ds.bags[1].label, None);
        assert_eq!(ds.bags[2].label, None);
    }

    #[test]
    fn parse_errors_report_lines() {
        let cases = [
            ("{\"id\": \"a\", \"label\": 1, \"instances\": []}\n", 1),
            ("{\"id\": \"a\", \"label\": 1, \"instances\": [[1]]}\n{\"id\": \"b\", \"label\": 1, \"instances\": [[1, 2]]}\n", 2),
            ("{\"id\": \"a\", \"label\": 1, \"instances\": [[1]]}\n\n{\"id\": \"a\", \"label\": -1, \"instances\": [[1]]}\n", 3),
            ("{\"id\": \"a\", \"label\": 2, \"instances\": [[1]]}\n", 1),
            ("{\"id\": \"a\", \"label\": 1, \"instances\": [[1, 2], [3]]}\n", 1),
            ("not json\n", 1),
        ];
        for (text, want) in cases {
            match BagDataset::parse(text.as_bytes(), "f") {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("expected parse error for {text}, got {other:?}"),
            }
        }
    }

    #[test]
    fn write_format_is_one_object_per_line() {
        let ds = BagDataset::new(vec![
            Bag::from_rows("x", vec![vec![0.1, -2.0]], Some(BagLabel::Negative)).unwrap(),
            Bag::from_rows("y", vec![vec![1.0, 1e-300]], None).unwrap(),
        ])
        .unwrap();
        let text = String::from_utf8(ds.to_bytes()).unwrap();
        assert_eq!(
            text,
            "{\"id\":\"x\",\"label\":-1,\"instances\":[[0.1,-2.0]]}\n{\"id\":\"y\",\"label\":null,\"instances\":[[1.0,1e-300]]}\n"
        );
    }

    #[test]
    fn standardization_constant_feature_goes_to_zero() {
        let ds = BagDataset::new(vec![
            Bag::from_rows("a", vec![vec![5.0, 1.0], vec![5.0, 3.0]], None).unwrap(),
            Bag::from_rows("b", vec![vec![5.0, 2.0]], None).unwrap(),
        ])
        .unwrap();
        let (train, _, t) = standardize(&ds, &[]).unwrap();
        assert_eq!(t.mean, vec![5.0, 2.0]);
        for x in train.bags.iter().flat_map(|b| b.instances()) {
            assert_eq!(x.features()[0], 0.0);
        }
    }

    #[test]
    fn standardization_ignores_other_sets() {
        let train = BagDataset::new(vec![Bag::from_rows("a", vec![vec![0.0], vec![2.0]], None).unwrap()]).unwrap();
        let test = BagDataset::new(vec![Bag::from_rows("t", vec![vec![1000.0]], None).unwrap()]).unwrap();
        let (_, others, t) = standardize(&train, &[&test]).unwrap();
        assert_eq!(t, Standardization::fit(&train.bags).unwrap());
        assert_eq!(others[0].bags[0].instances()[0].features(), &[999.0]);
    }

    #[test]
    fn generator_validates_config() {
        let bad = SynthConfig {
            witness_rate: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig {
            m_min: 4,
            m_max: 2,
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg).unwrap().dataset.to_bytes(), generate(&cfg).unwrap().dataset.to_bytes());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().dataset.to_bytes(), generate(&other).unwrap().dataset.to_bytes());
    }

    #[test]
    fn generator_counts_and_truth() {
        let cfg = SynthConfig {
            n_pos: 7,
            n_neg: 4,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let labels = data.dataset.require_labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == BagLabel::Positive).count(), 7);
        for (bag, truth) in data.dataset.bags.iter().zip(&data.instance_truth) {
            assert_eq!(bag.len(), truth.len());
            assert!((cfg.m_min..=cfg.m_max).contains(&bag.len()));
            if bag.label == Some(BagLabel::Negative) {
                assert!(truth.iter().all(|&w| !w));
            }
        }
    }

    #[test]
    fn multiclass_generator_shapes() {
        let cfg = SynthConfig {
            n_pos: 5,
            dim: 3,
            ..SynthConfig::default()
        };
        let (ds, classes) = generate_multiclass(&cfg, 3).unwrap();
        assert_eq!(ds.len(), 15);
        assert_eq!(classes.iter().filter(|&&k| k == 2).count(), 5);
        assert!(generate_multiclass(&cfg, 4).is_err());
    }
}

//! Exhaustive enumeration over all `2^m` labelings. Used as a test oracle.

use crate::error::{Error, Result};
use crate::math::{log_add_exp, log_sum_exp};
use crate::model::{Bag, BagLabel, CardinalitySpec, InstanceModel};

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Every inference quantity of one bag, by enumeration.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub log_z_pos: f64,
    pub log_z_neg: f64,
    pub posterior: f64,
    /// `P(y_i = 1 | Y = +1, X)`; empty when `Z(+1) = 0`.
    pub marginals_pos: Vec<f64>,
    pub marginals_neg: Vec<f64>,
    pub marginals: Vec<f64>,
    /// Best joint score and its labeling per label; `None` when all counts are forbidden.
    pub map_pos: Option<(Vec<bool>, f64)>,
    pub map_neg: Option<(Vec<bool>, f64)>,
}

impl BruteForce {
    pub fn log_partition(&self, label: BagLabel) -> f64 {
        match label {
            BagLabel::Positive => self.log_z_pos,
            BagLabel::Negative => self.log_z_neg,
        }
    }

    pub fn conditional(&self, label: BagLabel) -> &[f64] {
        match label {
            BagLabel::Positive => &self.marginals_pos,
            BagLabel::Negative => &self.marginals_neg,
        }
    }

    pub fn map(&self, label: BagLabel) -> Option<&(Vec<bool>, f64)> {
        match label {
            BagLabel::Positive => self.map_pos.as_ref(),
            BagLabel::Negative => self.map_neg.as_ref(),
        }
    }
}

/// Enumerates every labeling of `bag` under `model`.
pub fn brute_force(bag: &Bag, model: &InstanceModel, spec: &CardinalitySpec) -> Result<BruteForce> {
    if bag.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleRefused {
            m: bag.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    brute_force_weights(&model.bag_weights(bag)?, spec)
}

/// Enumerates every labeling of a bag with unary weights `weights`.
pub fn brute_force_weights(weights: &[f64], spec: &CardinalitySpec) -> Result<BruteForce> {
    let m = weights.len();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleRefused {
            m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if m == 0 {
        return Err(Error::invalid("brute force needs a nonempty bag"));
    }
    let pot_pos = spec.log_potentials(BagLabel::Positive, m)?;
    let pot_neg = spec.log_potentials(BagLabel::Negative, m)?;

    let mut z = [f64::NEG_INFINITY; 2];
    let mut with_one = vec![[f64::NEG_INFINITY; 2]; m];
    let mut best: [Option<(u32, f64)>; 2] = [None, None];

    for mask in 0u32..(1u32 << m) {
        let mut score = 0.0;
        for (i, w) in weights.iter().enumerate() {
            if mask >> i & 1 == 1 {
                score += w;
            }
        }
        let c = mask.count_ones() as usize;
        for (side, pot) in [&pot_pos, &pot_neg].into_iter().enumerate() {
            let joint = pot[c] + score;
            if joint == f64::NEG_INFINITY {
                continue;
            }
            z[side] = log_add_exp(z[side], joint);
            for (i, acc) in with_one.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    acc[side] = log_add_exp(acc[side], joint);
                }
            }
            if best[side].is_none_or(|(_, s)| joint > s) {
                best[side] = Some((mask, joint));
            }
        }
    }

    let total = log_sum_exp(&z);
    if total == f64::NEG_INFINITY {
        return Err(Error::DegenerateModel { bag: "<brute>".into() });
    }
    let posterior = (z[0] - total).exp();
    let conditional = |side: usize| -> Vec<f64> {
        if z[side] == f64::NEG_INFINITY {
            return Vec::new();
        }
        with_one.iter().map(|acc| (acc[side] - z[side]).exp()).collect()
    };
    let marginals_pos = conditional(0);
    let marginals_neg = conditional(1);
    // P(y_i | X) directly from the joint, independently of the conditional route
    let marginals = with_one
        .iter()
        .map(|acc| (log_add_exp(acc[0], acc[1]) - total).exp())
        .collect();
    let decode = |b: Option<(u32, f64)>| b.map(|(mask, s)| ((0..m).map(|i| mask >> i & 1 == 1).collect(), s));

    Ok(BruteForce {
        log_z_pos: z[0],
        log_z_neg: z[1],
        posterior,
        marginals_pos,
        marginals_neg,
        marginals,
        map_pos: decode(best[0]),
        map_neg: decode(best[1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let spec = CardinalitySpec::ratio(0.5).unwrap();
        let b = brute_force_weights(&[0.0, 0.0], &spec).unwrap();
        assert!((b.log_z_pos - 3f64.ln()).abs() < 1e-15);
        assert_eq!(b.log_z_neg, 0.0);
        assert!((b.posterior - 0.75).abs() < 1e-15);
        assert!((b.marginals_pos[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.marginals_neg, vec![0.0, 0.0]);
        assert!((b.marginals[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_bags() {
        let w = vec![0.0; 21];
        assert!(matches!(
            brute_force_weights(&w, &CardinalitySpec::Uniform),
            Err(Error::OracleRefused { m: 21, .. })
        ));
    }
}

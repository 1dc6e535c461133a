mod common;

use cardkernel::inference::{self, BagInference};
use cardkernel::{Bag, BagLabel, CardinalitySpec, InstanceModel};
use common::{enumerate, log_rel, rel, worst};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = CardinalitySpec> {
    prop_oneof![
        (0.0..=1.0f64, 0.05..1.0f64).prop_map(|(mu, sigma)| CardinalitySpec::Normal { mu, sigma }),
        (0.05..0.95f64).prop_map(|rho| CardinalitySpec::RatioConstrained { rho }),
        Just(CardinalitySpec::Uniform),
    ]
}

fn weights_strategy(max_m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, 1..=max_m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn tree_matches_enumeration(w in weights_strategy(12), spec in spec_strategy()) {
        let inf = BagInference::from_weights("b", w.clone()).unwrap();
        let truth = enumerate(&w, &spec);
        let (zp, zn) = inf.log_partitions(&spec).unwrap();
        prop_assert!(log_rel(zp, truth.z_pos.ln()) < 1e-9);
        prop_assert!(log_rel(zn, truth.z_neg.ln()) < 1e-9);
        prop_assert!(rel(inf.posterior(&spec).unwrap(), truth.posterior) < 1e-9);
        let marg = inf.instance_marginals(&spec).unwrap();
        prop_assert!(worst(&marg.per_instance, &truth.marginals, rel) < 1e-9);
        if truth.z_pos > 0.0 {
            let c = inf.conditional_marginals(&spec, BagLabel::Positive).unwrap();
            prop_assert!(worst(&c.per_instance, &truth.cond_pos, rel) < 1e-9);
            let (_, score) = inf.map_labeling(&spec, BagLabel::Positive).unwrap();
            prop_assert!(log_rel(score, truth.map_pos) < 1e-9);
        }
        if truth.z_neg > 0.0 {
            let c = inf.conditional_marginals(&spec, BagLabel::Negative).unwrap();
            prop_assert!(worst(&c.per_instance, &truth.cond_neg, rel) < 1e-9);
            let (_, score) = inf.map_labeling(&spec, BagLabel::Negative).unwrap();
            prop_assert!(log_rel(score, truth.map_neg) < 1e-9);
        }
    }

    #[test]
    fn count_distribution_matches_enumeration(w in weights_strategy(12)) {
        let inf = BagInference::from_weights("b", w.clone()).unwrap();
        let truth = enumerate(&w, &CardinalitySpec::Uniform);
        let logs = inf.count_distribution().log_coefficients();
        for (got, want) in logs.iter().zip(&truth.counts) {
            prop_assert!(log_rel(*got, want.ln()) < 1e-12);
        }
        let total: f64 = w.iter().map(|x| (1.0 + x.exp()).ln()).sum();
        let sum = cardkernel::math::log_sum_exp(&logs);
        prop_assert!(log_rel(sum, total) < 1e-12);
    }

    #[test]
    fn probabilities_are_bounded(w in weights_strategy(40), spec in spec_strategy()) {
        let inf = BagInference::from_weights("b", w).unwrap();
        let p = inf.posterior(&spec).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        for label in BagLabel::BOTH {
            if let Ok(c) = inf.conditional_marginals(&spec, label) {
                prop_assert!(c.per_instance.iter().all(|v| (0.0..=1.0).contains(v)));
                let expected = inf.expected_count(&spec, label).unwrap();
                prop_assert!((c.sum() - expected).abs() <= 1e-9 * expected.max(1.0));
            }
        }
        prop_assert!(inf.instance_marginals(&spec).unwrap().per_instance.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn permutation_invariance(w in weights_strategy(20), spec in spec_strategy(), shift in 0usize..20) {
        let mut rotated = w.clone();
        let k = shift % w.len();
        rotated.rotate_left(k);
        let a = BagInference::from_weights("a", w.clone()).unwrap();
        let b = BagInference::from_weights("b", rotated).unwrap();
        prop_assert!(log_rel(a.log_partitions(&spec).unwrap().0, b.log_partitions(&spec).unwrap().0) < 1e-12);
        let ma = a.instance_marginals(&spec).unwrap().per_instance;
        let mut mb = b.instance_marginals(&spec).unwrap().per_instance;
        mb.rotate_right(k);
        prop_assert!(worst(&ma, &mb, rel) < 1e-10);
    }

    #[test]
    fn swapped_potentials_flip_the_posterior(w in weights_strategy(15), spec in spec_strategy()) {
        let m = w.len();
        let inf = BagInference::from_weights("b", w).unwrap();
        let p = inf.posterior(&spec).unwrap();
        let q = inf.posterior(&spec.swapped(m).unwrap()).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn map_dominates_random_labelings(w in weights_strategy(30), spec in spec_strategy(), seed in any::<u64>()) {
        let inf = BagInference::from_weights("b", w.clone()).unwrap();
        let m = w.len();
        let mut r = common::rng(seed);
        for label in BagLabel::BOTH {
            let Ok((labeling, score)) = inf.map_labeling(&spec, label) else { continue };
            let lp = spec.log_potentials(label, m).unwrap();
            let own: f64 = lp[labeling.count()] + w.iter().zip(&labeling.0).filter(|(_, &on)| on).map(|(x, _)| x).sum::<f64>();
            prop_assert!((own - score).abs() <= 1e-12 * score.abs().max(1.0));
            for _ in 0..20 {
                let trial: Vec<bool> = (0..m).map(|_| rand::Rng::random::<bool>(&mut r)).collect();
                let c = trial.iter().filter(|&&b| b).count();
                let s = lp[c] + w.iter().zip(&trial).filter(|(_, &on)| on).map(|(x, _)| x).sum::<f64>();
                prop_assert!(s <= score + 1e-12 * score.abs().max(1.0));
            }
        }
    }
}

#[test]
fn uniform_potential_gives_even_posterior() {
    let inf = BagInference::from_weights("b", vec![3.0, -1.0, 0.25]).unwrap();
    assert!((inf.posterior(&CardinalitySpec::Uniform).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn large_bag_is_finite() {
    let mut r = common::rng(3);
    let w = common::gaussian(&mut r, 10_000, 3.0);
    let inf = BagInference::from_weights("big", w).unwrap();
    let spec = CardinalitySpec::ratio(0.5).unwrap();
    let (zp, zn) = inf.log_partitions(&spec).unwrap();
    assert!(zp.is_finite() && zn.is_finite());
    let marg = inf.instance_marginals(&spec).unwrap();
    assert!(marg.per_instance.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
}

#[test]
fn free_functions_agree_with_bag_inference() {
    let bag = Bag::from_rows("b", vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 2.0]], None).unwrap();
    let model = InstanceModel::new(vec![0.5, -0.25], false).unwrap();
    let spec = CardinalitySpec::normal(0.5, 0.2).unwrap();
    let inf = BagInference::new(&bag, &model).unwrap();
    assert_eq!(
        inference::log_partition(&bag, &model, &spec, BagLabel::Positive).unwrap(),
        inf.log_partition(&spec, BagLabel::Positive).unwrap()
    );
    assert_eq!(inference::bag_label_posterior(&bag, &model, &spec).unwrap(), inf.posterior(&spec).unwrap());
    assert_eq!(
        inference::instance_marginals(&bag, &model, &spec).unwrap(),
        inf.instance_marginals(&spec).unwrap()
    );
}

use cardkernel::data::{self, BagDataset, Standardization, SynthConfig};
use cardkernel::{Bag, BagLabel};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn dataset_strategy() -> impl Strategy<Value = BagDataset> {
    (1usize..5).prop_flat_map(|d| {
        prop::collection::vec(
            (
                prop::collection::vec(prop::collection::vec(finite(), d), 1..6),
                prop_oneof![Just(None), Just(Some(BagLabel::Positive)), Just(Some(BagLabel::Negative))],
            ),
            1..8,
        )
        .prop_map(|bags| {
            BagDataset::new(
                bags.into_iter()
                    .enumerate()
                    .map(|(i, (rows, label))| Bag::from_rows(format!("bag \"{i}\""), rows, label).unwrap())
                    .collect(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn save_load_round_trip_is_bit_exact(ds in dataset_strategy()) {
        let bytes = ds.to_bytes();
        let back = BagDataset::parse(&bytes[..], "mem").unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in back.bags.iter().zip(&ds.bags) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.label, b.label);
            for (x, y) in a.instances().iter().zip(b.instances()) {
                let xb: Vec<u64> = x.features().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.features().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn standardized_training_data_has_zero_mean_unit_scale(seed in any::<u64>()) {
        let ds = data::generate(&SynthConfig { n_pos: 5, n_neg: 5, seed, ..SynthConfig::default() }).unwrap().dataset;
        let (train, _, _) = data::standardize(&ds, &[]).unwrap();
        let t = Standardization::fit(&train.bags).unwrap();
        for (m, s) in t.mean.iter().zip(&t.scale) {
            prop_assert!(m.abs() < 1e-12);
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn file_round_trip_and_concatenation() {
    let dir = tempfile::tempdir().unwrap();
    let a = data::generate(&SynthConfig {
        n_pos: 3,
        n_neg: 2,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset;
    let path = dir.path().join("a.jsonl");
    data::save(&a, &path).unwrap();
    assert_eq!(data::load(&path).unwrap(), a);

    let b = BagDataset::new(vec![Bag::from_rows("extra", vec![vec![0.0; 5]], None).unwrap()]).unwrap();
    let mut joined = a.to_bytes();
    joined.extend(b.to_bytes());
    let both = BagDataset::parse(&joined[..], "cat").unwrap();
    assert_eq!(both.len(), 6);
    assert_eq!(both.bags[5].label, None);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(data::load("/nonexistent/bags.jsonl"), Err(cardkernel::Error::Io { .. })));
}

#[test]
fn witness_fraction_converges_to_rate() {
    for rate in [0.1, 0.3, 0.5, 0.9] {
        let cfg = SynthConfig {
            n_pos: 400,
            n_neg: 0,
            witness_rate: rate,
            seed: 77,
            ..SynthConfig::default()
        };
        let truth = data::generate(&cfg).unwrap().instance_truth;
        let n: usize = truth.iter().map(Vec::len).sum();
        let hits = truth.iter().flatten().filter(|&&w| w).count();
        let frac = hits as f64 / n as f64;
        let se = (rate * (1.0 - rate) / n as f64).sqrt();
        assert!((frac - rate).abs() < 3.0 * se, "rate {rate}: observed {frac}");
    }
}

#[test]
fn test_statistics_never_reach_the_transform() {
    let train = data::generate(&SynthConfig {
        n_pos: 4,
        n_neg: 4,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset;
    let wild = |seed| {
        data::generate(&SynthConfig {
            n_pos: 4,
            n_neg: 4,
            separation: 50.0,
            witness_rate: 1.0,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
        .dataset
    };
    let (_, _, t1) = data::standardize(&train, &[&wild(10)]).unwrap();
    let (_, _, t2) = data::standardize(&train, &[&wild(11)]).unwrap();
    assert_eq!(t1, t2);
}

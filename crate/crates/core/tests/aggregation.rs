mod common;

use common::rng;
use fedcc::federation::{aggregate_full, aggregate_generic, aggregation_weights, localize};
use fedcc::{Architecture, EncoderParams};
use proptest::prelude::*;
use rand::Rng;

fn arch() -> Architecture {
    Architecture {
        input_dim: 4,
        hidden_dim: 6,
        embed_dim: 3,
        parts: 2,
        ..Architecture::default()
    }
}

/// Random params with every entry perturbed, running variances kept positive.
fn random_params(seed: u64) -> EncoderParams {
    let mut r = rng(seed);
    let base = EncoderParams::init(arch(), &mut r).unwrap();
    let values = base
        .as_flat()
        .iter()
        .map(|v| (v + r.random_range(-1.0..1.0)).abs())
        .collect();
    EncoderParams::from_flat(arch(), values).unwrap()
}

fn oracle(entries: &[(&[f64], usize)]) -> Vec<f64> {
    let n: usize = entries.iter().map(|e| e.1).sum();
    (0..entries[0].0.len())
        .map(|k| entries.iter().map(|(v, s)| *s as f64 / n as f64 * v[k]).sum())
        .collect()
}

#[test]
fn full_aggregation_matches_weighted_sum_oracle() {
    let mut r = rng(0);
    for trial in 0..20 {
        let k = r.random_range(1..=5);
        let params: Vec<EncoderParams> = (0..k).map(|i| random_params(trial * 10 + i as u64)).collect();
        let sizes: Vec<usize> = (0..k).map(|_| r.random_range(1..500)).collect();
        let entries: Vec<_> = params.iter().zip(&sizes).map(|(p, &s)| (p, s)).collect();
        let got = aggregate_full(&entries).unwrap();
        let flat: Vec<_> = params.iter().zip(&sizes).map(|(p, &s)| (p.as_flat(), s)).collect();
        for (a, b) in got.as_flat().iter().zip(oracle(&flat)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn generic_aggregation_matches_oracle_and_ignores_bn() {
    let params: Vec<EncoderParams> = (0..4).map(random_params).collect();
    let sizes = [10, 20, 30, 40];
    let generic: Vec<Vec<f64>> = params.iter().map(|p| p.partition().generic).collect();
    let entries: Vec<_> = generic.iter().zip(sizes).map(|(g, s)| (&g[..], s)).collect();
    let got = aggregate_generic(&entries).unwrap();
    for (a, b) in got.iter().zip(oracle(&entries)) {
        assert!((a - b).abs() <= 1e-12);
    }

    // Shared generic weights survive aggregation regardless of BN state.
    let shared = params[0].partition().generic;
    let varied: Vec<EncoderParams> = params
        .iter()
        .map(|p| EncoderParams::merge(arch(), &shared, &p.partition().specialized).unwrap())
        .collect();
    let g: Vec<Vec<f64>> = varied.iter().map(|p| p.partition().generic).collect();
    let entries: Vec<_> = g.iter().zip(sizes).map(|(g, s)| (&g[..], s)).collect();
    let out = aggregate_generic(&entries).unwrap();
    for (a, b) in out.iter().zip(&shared) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
    assert_eq!(out.len(), arch().num_generic());
}

#[test]
fn two_client_weights() {
    assert_eq!(aggregation_weights(&[10, 30]).unwrap(), vec![0.25, 0.75]);
    let a = EncoderParams::from_flat(arch(), vec![1.0; arch().num_params()]).unwrap();
    let b = EncoderParams::from_flat(arch(), vec![5.0; arch().num_params()]).unwrap();
    let out = aggregate_full(&[(&a, 10), (&b, 30)]).unwrap();
    assert!(out.as_flat().iter().all(|&v| v == 4.0));
}

#[test]
fn single_client_aggregation_is_identity() {
    let p = random_params(7);
    let out = aggregate_full(&[(&p, 123)]).unwrap();
    assert_eq!(out.as_flat(), p.as_flat());
    let g = p.partition().generic;
    assert_eq!(aggregate_generic(&[(&g, 9)]).unwrap(), g);
}

#[test]
fn aggregation_rejects_bad_input() {
    assert!(aggregation_weights(&[]).is_err());
    assert!(aggregation_weights(&[0, 0]).is_err());
    let a = random_params(1);
    let other = EncoderParams::init(Architecture { parts: 1, ..arch() }, &mut rng(2)).unwrap();
    assert!(aggregate_full(&[(&a, 1), (&other, 1)]).is_err());
    assert!(aggregate_generic(&[(&[1.0, 2.0][..], 1), (&[1.0][..], 1)]).is_err());
}

#[test]
fn localize_round_trip_and_isolation() {
    let p = random_params(3);
    let back = localize(&p.partition().generic, &p).unwrap();
    assert_eq!(back.as_flat(), p.as_flat());

    let q = random_params(4);
    let mut global = q.partition().generic;
    let local = localize(&global, &p).unwrap();
    assert_eq!(local.partition().specialized, p.partition().specialized);
    assert_eq!(local.partition().generic, global);
    global.iter_mut().for_each(|v| *v += 1.0);
    let again = localize(&global, &p).unwrap();
    assert_eq!(again.partition().specialized, p.partition().specialized);
    assert!(localize(&global[1..], &p).is_err());
}

proptest! {
    #[test]
    fn weights_sum_to_one(sizes in prop::collection::vec(1usize..1_000_000, 1..64)) {
        let w = aggregation_weights(&sizes).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn aggregation_is_independent_of_enumeration_order(seed in any::<u64>(), k in 2usize..6, rot in 1usize..5) {
        let mut r = rng(seed);
        let params: Vec<EncoderParams> = (0..k).map(|i| random_params(seed.wrapping_add(i as u64))).collect();
        let sizes: Vec<usize> = (0..k).map(|_| r.random_range(1..100)).collect();
        let generic: Vec<Vec<f64>> = params.iter().map(|p| p.partition().generic).collect();
        let mut entries: Vec<(usize, &[f64], usize)> = (0..k).map(|i| (i, &generic[i][..], sizes[i])).collect();
        let ordered: Vec<_> = entries.iter().map(|e| (e.1, e.2)).collect();
        let reference = aggregate_generic(&ordered).unwrap();
        // The caller sorts by client id before aggregating, whatever order
        // clients finished in.
        entries.rotate_left(rot % k);
        entries.sort_by_key(|e| e.0);
        let resorted: Vec<_> = entries.iter().map(|e| (e.1, e.2)).collect();
        prop_assert_eq!(aggregate_generic(&resorted).unwrap(), reference);
    }
}

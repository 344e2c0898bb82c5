use std::time::Instant;

use candle_core::{Device, Tensor, Var};
use haoi_core::discrete_repr::{commitment_terms, quantize, Codebook, Stage};
use haoi_core::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn brute_nearest(entries: &[Vec<f64>], q: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, e) in entries.iter().enumerate() {
        let d: f64 = e.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

#[test]
fn quantize_matches_exhaustive_scan() {
    let mut rng = seeded(1);
    let (k, d) = (64, 32);
    let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    let mut book = Codebook::new(Stage::G, d, rows.concat()).unwrap();
    let start = Instant::now();
    for _ in 0..10_000 {
        let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        let (i, q_hat) = quantize(&q, &mut book).unwrap();
        assert_eq!(i, brute_nearest(&rows, &q));
        assert_eq!(q_hat, rows[i]);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_eq!(book.usage_counts.iter().sum::<u64>(), 10_000);
}

#[test]
fn quantize_examples_and_ties() {
    let mut book = Codebook::new(Stage::L, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(quantize(&[0.4, 0.4], &mut book).unwrap().0, 0);
    assert_eq!(quantize(&[0.5, 0.5], &mut book).unwrap().0, 0);
    assert_eq!(quantize(&[1.0, 1.0], &mut book).unwrap(), (1, vec![1.0, 1.0]));
    assert_eq!(book.usage_counts, vec![2, 1]);
    assert!(quantize(&[1.0], &mut book).is_err());

    let mut dup = Codebook::new(Stage::J, 1, vec![3.0, 1.0, 1.0, 5.0]).unwrap();
    assert_eq!(quantize(&[1.2], &mut dup).unwrap().0, 1);
}

#[test]
fn dead_code_reset_uses_batch_features() {
    let mut rng = seeded(2);
    let mut book = Codebook::random(Stage::R, 8, 3, 0.1, &mut rng).unwrap();
    book.usage_counts = vec![1, 1, 1, 0, 1, 1, 1, 1];
    let before = book.clone();
    let batch: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -1.0]).collect();
    book.reset_dead_codes(&batch, &mut rng).unwrap();
    assert!(batch.iter().any(|f| f.as_slice() == book.entry(3)));
    for i in (0..8).filter(|i| *i != 3) {
        assert_eq!(book.entry(i), before.entry(i));
    }
    let mut full = before.clone();
    full.usage_counts = vec![1; 8];
    full.reset_dead_codes(&batch, &mut rng).unwrap();
    assert_eq!(full.entries, before.entries);
}

#[test]
fn commitment_gradients_follow_stop_gradient_contract() {
    let dev = Device::Cpu;
    let q_data = [0.5f32, -0.25, 1.0, 0.0, 0.75, 0.5];
    let e_data = [0.25f32, 0.0, 0.5, 0.5, 0.25, -0.5];
    let q = Var::from_tensor(&Tensor::from_slice(&q_data, (2, 3), &dev).unwrap()).unwrap();
    let e = Var::from_tensor(&Tensor::from_slice(&e_data, (2, 3), &dev).unwrap()).unwrap();
    let beta = 0.25;
    let (codebook_term, encoder_term) = commitment_terms(q.as_tensor(), e.as_tensor(), beta).unwrap();

    let grads = codebook_term.backward().unwrap();
    let ge: Vec<f32> = grads.get(e.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert!(grads.get(q.as_tensor()).is_none_or(|g| g.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap() == 0.0));
    for i in 0..6 {
        let want = -2.0 * (q_data[i] - e_data[i]) / 2.0;
        assert!((ge[i] - want).abs() < 1e-6, "codebook grad {i}: {} vs {want}", ge[i]);
    }

    let grads = encoder_term.backward().unwrap();
    let gq: Vec<f32> = grads.get(q.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert!(grads.get(e.as_tensor()).is_none_or(|g| g.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap() == 0.0));
    for i in 0..6 {
        let want = 2.0 * beta as f32 * (q_data[i] - e_data[i]) / 2.0;
        assert!((gq[i] - want).abs() < 1e-6, "encoder grad {i}: {} vs {want}", gq[i]);
    }
}

proptest! {
    #[test]
    fn quantize_is_idempotent(seed in 0u64..1000, pick in 0usize..16) {
        let mut rng = seeded(seed);
        let mut book = Codebook::random(Stage::G, 16, 4, 1.0, &mut rng).unwrap();
        let q: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let (i, q_hat) = quantize(&q, &mut book).unwrap();
        prop_assert_eq!(quantize(&q_hat, &mut book).unwrap(), (i, q_hat.clone()));
        let exact = book.entry(pick).to_vec();
        let (j, _) = quantize(&exact, &mut book).unwrap();
        prop_assert!(j <= pick);
        prop_assert_eq!(book.entry(j), exact.as_slice());
        let c = book.coverage();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(c, book.usage_counts.iter().filter(|n| **n > 0).count() as f64 / 16.0);
    }
}

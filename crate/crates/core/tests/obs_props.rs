//! Saliency/update consistency on random correlated problems.

mod common;

use common::*;
use obsprune::fisher::{build_fisher_inverse, FisherBlockInverse, FisherConfig};
use obsprune::linalg::Matrix;
use obsprune::obs::{loss_increase, saliency_group, saliency_single, update_group, update_single};
use rand::seq::index::sample;

#[test]
fn single_and_group_predictions_match_applied_updates() {
    let mut r = rng(21);
    for case in 0..100 {
        let d = uniform_usize(&mut r, 2, 24);
        let n = uniform_usize(&mut r, 4, 64);
        let damp = [1e-3, 1e-1][case % 2];
        let grads = correlated_grads(&mut r, n, d, 0.9);
        let w = normals(&mut r, d);
        let inv = build_fisher_inverse(&grads, &FisherConfig::new(d, damp, 4096).unwrap()).unwrap();

        let i = uniform_usize(&mut r, 0, d - 1);
        let rho = saliency_single(&w, &inv, i).unwrap();
        let after = update_single(&w, &inv, i).unwrap().apply(&w);
        assert_eq!(after[i], 0.0);
        let true_inc = loss_increase(&w, &after, &grads, damp).unwrap();
        assert!(rel_err(rho, true_inc) < 1e-9, "case {case} single: {rho} vs {true_inc}");

        let size = uniform_usize(&mut r, 1, d.min(6));
        let mut q: Vec<usize> = sample(&mut r, d, size).into_vec();
        q.sort_unstable();
        let rho = saliency_group(&w, &inv, &q).unwrap();
        assert!(rho >= 0.0);
        let after = update_group(&w, &inv, &q).unwrap().apply(&w);
        assert!(q.iter().all(|&k| after[k] == 0.0));
        let true_inc = loss_increase(&w, &after, &grads, damp).unwrap();
        assert!(
            rel_err(rho, true_inc) < 1e-9,
            "case {case} group {q:?}: {rho} vs {true_inc}"
        );
    }
}

#[test]
fn huge_dampening_orders_by_magnitude() {
    let mut r = rng(22);
    for _ in 0..20 {
        let d = 32;
        let grads = correlated_grads(&mut r, 16, d, 0.5);
        let w = normals(&mut r, d);
        let built = build_fisher_inverse(&grads, &FisherConfig::new(8, 1e12, 4096).unwrap()).unwrap();
        // Keep only the diagonal of the inverse.
        let blocks: Vec<Matrix> = built
            .blocks()
            .iter()
            .map(|b| {
                let mut m = Matrix::zeros(b.dim());
                for k in 0..b.dim() {
                    m = with_entry(m, k, b.diag(k));
                }
                m
            })
            .collect();
        let inv = FisherBlockInverse::from_blocks(blocks, *built.config()).unwrap();
        let scores: Vec<f64> = (0..d).map(|i| saliency_single(&w, &inv, i).unwrap()).collect();
        let mut by_score: Vec<usize> = (0..d).collect();
        by_score.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut by_mag: Vec<usize> = (0..d).collect();
        by_mag.sort_by(|&a, &b| (w[a] * w[a]).total_cmp(&(w[b] * w[b])).then(a.cmp(&b)));
        assert_eq!(by_score, by_mag);
    }
}

fn with_entry(m: Matrix, k: usize, v: f64) -> Matrix {
    let n = m.dim();
    let mut data = m.as_slice().to_vec();
    data[k * n + k] = v;
    Matrix::from_row_major(n, data)
}

#[test]
fn block_diagonal_group_is_sum_of_blocks() {
    let mut r = rng(23);
    let grads = correlated_grads(&mut r, 30, 12, 0.8);
    let w = normals(&mut r, 12);
    let inv = build_fisher_inverse(&grads, &FisherConfig::new(4, 1e-2, 4096).unwrap()).unwrap();
    let q = [1usize, 2, 5, 9, 11];
    let total = obsprune::obs::saliency_groups(&w, &inv, &q).unwrap();
    let parts = saliency_group(&w, &inv, &[1, 2]).unwrap()
        + saliency_group(&w, &inv, &[5]).unwrap()
        + saliency_group(&w, &inv, &[9, 11]).unwrap();
    assert!(rel_err(total, parts) < 1e-12);
    assert!(saliency_group(&w, &inv, &q).is_err());
}

//! Sanity checks for the test-side oracles themselves.
mod common;

use styleswap::linalg;
use styleswap::rng;

#[test]
fn sturm_solver_matches_known_diagonal() {
    let m = vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
    let vals = common::eigenvalues_sturm(&m, 3);
    assert!((vals[0] - 3.0).abs() < 1e-9);
    assert!((vals[1] - 2.0).abs() < 1e-9);
    assert!((vals[2] - 1.0).abs() < 1e-9);
}

#[test]
fn sturm_solver_agrees_with_jacobi_on_random_symmetric() {
    for (seed, n) in [(1u64, 5usize), (2, 16), (3, 33)] {
        let raw = rng::normal_vec(seed, n * n);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
            }
        }
        let sturm = common::eigenvalues_sturm(&m, n);
        let (jacobi, _) = linalg::symmetric_eigen(&m, n);
        let scale = jacobi[0].abs().max(1.0);
        for (a, b) in sturm.iter().zip(&jacobi) {
            assert!((a - b).abs() < 1e-8 * scale, "{a} vs {b} (n={n})");
        }
    }
}

#[test]
fn classifier_separates_toy_domains() {
    use styleswap::dataset::toy::{self, ToyDomain};
    let train: Vec<_> = ToyDomain::all()
        .iter()
        .map(|d| (d.tag(), toy::generate(*d, 40, 100, 32)))
        .collect();
    let refs: Vec<(&str, &styleswap::dataset::ImageDataset)> =
        train.iter().map(|(t, d)| (*t, d)).collect();
    let clf = common::DomainClassifier::train(&refs, 7, 200);
    for domain in ToyDomain::all() {
        let held_out = toy::generate(domain, 30, 999, 32);
        let acc = clf.accuracy(&held_out);
        assert!(acc >= 0.95, "{} held-out accuracy {acc}", domain.tag());
    }
}

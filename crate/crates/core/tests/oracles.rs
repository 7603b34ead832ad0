//! Numerical routines checked against independent references.

use contractive_core::bounds::estimate_alpha;
use contractive_core::linalg;
use contractive_core::loss::{dtw_classic, soft_dtw};
use contractive_core::policy::{Policy, PolicyConfig};
use contractive_core::rollout::{pseudo_inverse_on, Method, SolverConfig};
use contractive_core::tensor::{Tape, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_rows(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<f64> {
    (0..r * c)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

#[test]
fn right_inverse_matches_svd_pseudo_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let ny = rng.random_range(1..=4);
        let nz = ny + rng.random_range(0..=5);
        let p = gaussian_rows(&mut rng, ny, nz);
        let tape = Tape::<f64>::no_grad();
        let pinv = pseudo_inverse_on(tape.constant(Tensor::new(vec![ny, nz], p.clone()).unwrap()))
            .unwrap();
        let oracle = DMatrix::from_row_slice(ny, nz, &p)
            .pseudo_inverse(1e-14)
            .unwrap();
        let got = DMatrix::from_row_slice(nz, ny, &pinv.to_vec());
        assert!((got - oracle).amax() < 1e-9);
    }
}

#[test]
fn symmetric_eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let n = rng.random_range(1..=12);
        let a = DMatrix::from_row_slice(n, n, &gaussian_rows(&mut rng, n, n));
        let s = (&a + a.transpose()) * 0.5;
        let mut ours = linalg::sym_eigenvalues(s.as_slice(), n);
        ours.sort_by(f64::total_cmp);
        let mut theirs: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn singular_values_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let a = gaussian_rows(&mut rng, m, n);
        let mut ours = linalg::singular_values(&a, m, n);
        ours.sort_by(|x, y| y.total_cmp(x));
        let mut theirs: Vec<f64> = DMatrix::from_row_slice(m, n, &a)
            .singular_values()
            .iter()
            .copied()
            .collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn lu_solve_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..30 {
        let n = rng.random_range(1..=10);
        let mut a = gaussian_rows(&mut rng, n, n);
        for i in 0..n {
            a[i * n + i] += n as f64;
        }
        let b = gaussian_rows(&mut rng, n, 1);
        let ours = linalg::solve(&a, &b, n).unwrap();
        let theirs = DMatrix::from_row_slice(n, n, &a)
            .lu()
            .solve(&DMatrix::from_column_slice(n, 1, &b))
            .unwrap();
        for (x, y) in ours.iter().zip(theirs.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

/// Minimum over every monotone alignment path, enumerated recursively.
fn all_paths_min(a: &Tensor<f64>, b: &Tensor<f64>, i: usize, j: usize) -> f64 {
    let c = linalg::sq_dist(a.row(i), b.row(j));
    if i == 0 && j == 0 {
        return c;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(all_paths_min(a, b, i - 1, j));
    }
    if j > 0 {
        best = best.min(all_paths_min(a, b, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(all_paths_min(a, b, i - 1, j - 1));
    }
    c + best
}

fn random_path(rng: &mut ChaCha8Rng, len: usize) -> Tensor<f64> {
    Tensor::new(vec![len, 2], gaussian_rows(rng, len, 2)).unwrap()
}

#[test]
fn dtw_equals_exhaustive_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..60 {
        let (la, lb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a = random_path(&mut rng, la);
        let b = random_path(&mut rng, lb);
        let brute = all_paths_min(&a, &b, a.rows() - 1, b.rows() - 1);
        assert!((dtw_classic(&a, &b).unwrap() - brute).abs() <= 1e-12 * brute.max(1.0));
    }
}

#[test]
fn soft_dtw_gap_shrinks_with_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let a = random_path(&mut rng, 10);
        let b = random_path(&mut rng, 10);
        let d = dtw_classic(&a, &b).unwrap();
        let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&beta| d - soft_dtw(&a, &b, beta).unwrap())
            .collect();
        assert!(gaps.iter().all(|&g| g >= -1e-12), "{gaps:?}");
        assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2], "{gaps:?}");
        assert!(gaps[2] <= 0.01 * d);
    }
}

#[test]
fn linear_contraction_has_unit_alpha() {
    let mut cfg = PolicyConfig::new(2, 4, 3);
    cfg.coupling_layers = 0;
    cfg.init_gain = 0.0;
    cfg.proj_noise = 0.0;
    let policy = Policy::<f64>::init(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inits: Vec<Vec<f64>> = (0..12).map(|_| gaussian_rows(&mut rng, 2, 1)).collect();
    let alpha = estimate_alpha(&policy, &inits, &SolverConfig::new(Method::Rk4, 40, 4)).unwrap();
    assert!((alpha - 1.0).abs() <= 0.02, "{alpha}");
}

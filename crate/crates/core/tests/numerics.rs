use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use psgm::analysis::random_spd;
use psgm::basis::{eval_design_at, BasisFamily};
use psgm::numerics::{
    condition_number, factorize_banded, factorize_spd, frobenius_norm, spectral_norm, BandedSym,
    Matrix,
};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn spd_round_trip(m in 1usize..=50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(m, &mut rng);
        let x = random_matrix(m, 1, seed ^ 0x55).column(0);
        let b = a.matvec(&x).unwrap();
        let got = factorize_spd(&a).unwrap().solve(&b).unwrap();
        let back = a.matvec(&got).unwrap();
        let err = back.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8 * scale, "relative residual {}", err / scale);
    }

    #[test]
    fn frobenius_spectral_product_bounds(r in 1usize..8, k in 1usize..8, c in 1usize..8, seed in any::<u64>()) {
        let p = random_matrix(r, k, seed);
        let q = random_matrix(k, c, seed.wrapping_add(1));
        let pq = frobenius_norm(&p.matmul(&q).unwrap());
        let slack = 1e-10;
        prop_assert!(pq <= spectral_norm(&p, 1e-12).unwrap() * frobenius_norm(&q) * (1.0 + slack) + slack);
        prop_assert!(pq <= frobenius_norm(&p) * spectral_norm(&q, 1e-12).unwrap() * (1.0 + slack) + slack);
    }

    #[test]
    fn condition_number_is_scale_invariant(m in 2usize..=20, c in 1e-3f64..1e3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(m, &mut rng);
        let k1 = condition_number(&a).unwrap();
        let k2 = condition_number(&a.scaled(c)).unwrap();
        prop_assert!((k1 - k2).abs() <= 1e-10 * k1, "{k1} vs {k2}");
    }
}

#[test]
fn spectral_norm_of_spd_two_by_two() {
    let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 5.0]]);
    // largest root of λ² − 6λ + 1
    let oracle = 3.0 + 8f64.sqrt();
    assert!((spectral_norm(&m, 1e-14).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn equally_filled_lut_gram_is_perfectly_conditioned() {
    let bins = 8;
    let basis = BasisFamily::lut(bins, 0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..bins * 5)
        .map(|i| ((i % bins) as f64 + 0.5) / bins as f64)
        .collect();
    let phi = eval_design_at(&basis, &xs, 0, xs.len()).unwrap();
    let gram = phi.gram(1.0 / xs.len() as f64);
    assert!((condition_number(&gram).unwrap() - 1.0).abs() < 1e-12);
}

fn tridiagonal(m: usize) -> BandedSym {
    let mut b = BandedSym::zeros(m, 1);
    for i in 0..m {
        b.set(i, i, 2.5);
        if i > 0 {
            b.set(i, i - 1, -1.0);
        }
    }
    b
}

fn best_time(m: usize, reps: usize) -> Duration {
    let band = tridiagonal(m);
    let rhs = vec![1.0; m];
    (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                let f = factorize_banded(&band).unwrap();
                std::hint::black_box(f.solve(&rhs).unwrap());
            }
            t.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn banded_factorization_is_linear_in_dimension() {
    let small = best_time(1_000, 200);
    let large = best_time(10_000, 200);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    assert!(ratio <= 15.0, "M=10000 / M=1000 time ratio {ratio}");
}

#[test]
fn banded_and_dense_solves_agree() {
    let m = 40;
    let band = tridiagonal(m);
    let mut dense = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            dense[(i, j)] = band.get(i, j);
        }
    }
    let rhs: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
    let a = factorize_banded(&band).unwrap().solve(&rhs).unwrap();
    let b = factorize_spd(&dense).unwrap().solve(&rhs).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

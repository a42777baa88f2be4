use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psgm::basis::{build_orthogonal_polys, derivative_rows, eval_design_at, BasisFamily, Lut};

fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn low_degrees_follow_legendre_shapes() {
    let xs = uniform(200_000, -1.0, 1.0, 1);
    let basis = build_orthogonal_polys(&xs, 2).unwrap();
    assert_eq!(basis.len(), 3);
    let rows: Vec<Vec<f64>> = (0..xs.len()).map(|i| basis.eval_row(&xs, i)).collect();
    let p: Vec<Vec<f64>> = (0..3)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect();
    assert!(p[0].iter().all(|v| (v - 1.0).abs() < 1e-12));
    let legendre1: Vec<f64> = xs.clone();
    let legendre2: Vec<f64> = xs.iter().map(|x| 3.0 * x * x - 1.0).collect();
    assert!(correlation(&p[1], &legendre1).abs() > 1.0 - 1e-9);
    assert!(correlation(&p[2], &legendre2).abs() > 0.9999);
}

#[test]
fn orthogonality_on_construction_set() {
    for (seed, degree) in [(2, 3), (3, 6), (4, 9)] {
        let xs = uniform(50_000, 0.0, 1.0, seed);
        let basis = build_orthogonal_polys(&xs, degree).unwrap();
        let phi = eval_design_at(&basis, &xs, 0, xs.len()).unwrap();
        let g = phi.gram(1.0 / xs.len() as f64);
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g[(i, j)] - target).abs() <= 1e-6,
                    "degree {degree}: G[{i},{j}] = {}",
                    g[(i, j)]
                );
            }
        }
    }
}

#[test]
fn derivative_rows_match_central_differences() {
    let xs = uniform(20_000, 0.0, 1.0, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let points: Vec<f64> = (0..20).map(|_| rng.random_range(0.05..0.95)).collect();
    let h = 1e-6;
    for degree in [1, 3, 9] {
        let basis = build_orthogonal_polys(&xs, degree).unwrap();
        let d = derivative_rows(&basis, &points).unwrap();
        for (i, &z) in points.iter().enumerate() {
            let up = basis.eval_row(&[z + h], 0);
            let down = basis.eval_row(&[z - h], 0);
            for j in 0..basis.len() {
                let fd = (up[j] - down[j]) / (2.0 * h);
                assert!(
                    (d[(i, j)] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "degree {degree} z {z} j {j}: {} vs {fd}",
                    d[(i, j)]
                );
            }
        }
    }
}

#[test]
fn tapped_lut_row_from_hand_enumeration() {
    let inner = BasisFamily::lut(2, 0.0, 1.0).unwrap();
    let basis = BasisFamily::tapped(vec![-1, 0, 1], inner, true).unwrap();
    let window = [0.2, 0.8, 0.2];
    let row = basis.eval_row(&window, 1);
    // tap -1 reads x_{n+1}=0.2 (bin 0), tap 0 reads 0.8 (bin 1), tap 1 reads x_{n-1}=0.2 (bin 0)
    assert_eq!(row, vec![0.2, 0.0, 0.0, 0.8, 0.2, 0.0]);
}

#[test]
fn lut_boundary_points_belong_to_the_left_cell() {
    let l = Lut {
        bins: 4,
        lo: 0.0,
        hi: 1.0,
    };
    assert_eq!(l.bin(0.0), 0);
    assert_eq!(l.bin(0.25), 0);
    assert_eq!(l.bin(0.2500001), 1);
    assert_eq!(l.bin(1.0), 3);
    assert_eq!(l.bin(7.0), 3);
    assert_eq!(l.bin(-3.0), 0);
}

proptest! {
    #[test]
    fn lut_rows_sum_to_one(bins in 1usize..64, xs in prop::collection::vec(-2.0f64..2.0, 1..50)) {
        let basis = BasisFamily::lut(bins, -1.0, 1.0).unwrap();
        let phi = eval_design_at(&basis, &xs, 0, xs.len()).unwrap();
        for i in 0..xs.len() {
            let (_, vals) = phi.row(i);
            prop_assert_eq!(vals.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn tapped_lut_collapses_on_constant_window(
        x in -1.0f64..1.0,
        u in prop::collection::vec(-5.0f64..5.0, 3 * 8),
    ) {
        let inner = BasisFamily::lut(8, -1.0, 1.0).unwrap();
        let basis = BasisFamily::tapped(vec![-1, 0, 1], inner, true).unwrap();
        let window = [x, x, x];
        let got = basis.eval_function(&u, &window, 1).unwrap();
        let bin = Lut { bins: 8, lo: -1.0, hi: 1.0 }.bin(x);
        let oracle = x * (0..3).map(|t| u[t * 8 + bin]).sum::<f64>();
        prop_assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn zero_coefficients_give_zero(x in -3.0f64..3.0, m in 1usize..8) {
        let basis = BasisFamily::monomial(m, -3.0, 3.0).unwrap();
        prop_assert_eq!(basis.eval_at(&vec![0.0; m], x).unwrap(), 0.0);
    }
}

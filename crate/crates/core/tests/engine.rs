#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psgm::analysis::{dense_inverse, random_spd};
use psgm::basis::{eval_design_at, BasisFamily};
use psgm::engine::{
    batch_statistics, psgm_step, run, sgm_step, GradientConvention, GramOperator, IterationState,
    RunConfig, StepSchedule,
};
use psgm::numerics::Matrix;
use psgm::regularization::{
    assemble_preconditioner, BChoice, ConstraintOperator, PreconditionerSpec,
};
use psgm::sampling::{ProcessKind, ProcessSpec, TargetFunction};
use psgm::scenario::{crf_small, identity_channel_equalizer};
use psgm::Error;

fn identity_precond(m: usize) -> psgm::regularization::PreconditionerFactor {
    let spec = PreconditionerSpec::new(BChoice::Identity, ConstraintOperator::none(m), 1).unwrap();
    assemble_preconditioner(&spec, 0.0, None).unwrap()
}

fn uniform_monomial(m: usize, seed: u64, schedule: StepSchedule, steps: u64) -> RunConfig {
    RunConfig {
        process: ProcessSpec::new(ProcessKind::Uniform { lo: 0.0, hi: 1.0 }, seed).unwrap(),
        target: TargetFunction::identity(),
        basis: BasisFamily::monomial(m, 0.0, 1.0).unwrap(),
        preconditioner: PreconditionerSpec::new(BChoice::Identity, ConstraintOperator::none(m), 1)
            .unwrap(),
        gamma: 0.0,
        schedule,
        batch_size: 10,
        steps,
        seed,
        u0: None,
        convention: GradientConvention::Normalized,
        reference: None,
        gram_ref: None,
        eval: None,
        allow_inadmissible: false,
    }
}

#[test]
fn batch_statistics_match_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..37).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
    let basis = BasisFamily::monomial(5, 0.0, 1.0).unwrap();
    let phi = eval_design_at(&basis, &xs, 0, xs.len()).unwrap();
    let u: Vec<f64> = (0..5).map(|i| 0.3 - 0.1 * i as f64).collect();
    let s = batch_statistics(&phi, &y, &u).unwrap();

    let n = xs.len();
    let p = |i: usize, j: usize| xs[i].powi(j as i32);
    let a = s.a.as_ref().unwrap();
    for j in 0..5 {
        for l in 0..5 {
            let want: f64 = (0..n).map(|i| p(i, j) * p(i, l)).sum::<f64>() / n as f64;
            assert!((a[(j, l)] - want).abs() <= 1e-12);
        }
        let bj: f64 = (0..n).map(|i| p(i, j) * y[i]).sum::<f64>() / n as f64;
        assert!((s.b[j] - bj).abs() <= 1e-12);
        let au: f64 = (0..5).map(|l| a[(j, l)] * u[l]).sum();
        assert!((s.gradient[j] - (bj - au)).abs() <= 1e-12);
    }
    for i in 0..n {
        let fit: f64 = (0..5).map(|j| p(i, j) * u[j]).sum();
        assert!((s.r[i] - (y[i] - fit)).abs() <= 1e-12);
    }
}

#[test]
fn identity_design_gives_scaled_identity_gram() {
    // a LUT whose bins each hold exactly one point behaves as Φ = I
    let basis = BasisFamily::lut(4, 0.0, 1.0).unwrap();
    let xs = [0.1, 0.3, 0.6, 0.9];
    let phi = eval_design_at(&basis, &xs, 0, 4).unwrap();
    let y = [1.0, 2.0, 3.0, 4.0];
    let s = batch_statistics(&phi, &y, &[0.0; 4]).unwrap();
    assert_eq!(s.a.unwrap(), Matrix::identity(4).scaled(0.25));
    assert_eq!(s.b, vec![0.25, 0.5, 0.75, 1.0]);
}

#[test]
fn single_bin_lut_averages_outputs() {
    let basis = BasisFamily::lut(1, 0.0, 1.0).unwrap();
    let xs = [0.2, 0.4, 0.7];
    let phi = eval_design_at(&basis, &xs, 0, 3).unwrap();
    let s = batch_statistics(&phi, &[3.0, 6.0, 9.0], &[0.0]).unwrap();
    assert_eq!(s.a.unwrap()[(0, 0)], 1.0);
    assert_eq!(s.b, vec![6.0]);
}

#[test]
fn psgm_step_worked_examples() {
    // B = I, γ = 0, μ = 1, u = 0 → u¹ = b
    let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]);
    let next = psgm_step(
        &IterationState::zeros(2),
        &[1.0, 1.0],
        GramOperator::Explicit(&a),
        &identity_precond(2),
        1.0,
    )
    .unwrap();
    assert_eq!(next.u, vec![1.0, 1.0]);
    // B = A: one unit step lands on A⁻¹b
    let spec = PreconditionerSpec::new(BChoice::FullA, ConstraintOperator::none(2), 1).unwrap();
    let p = assemble_preconditioner(&spec, 0.0, Some(&a)).unwrap();
    let next = psgm_step(
        &IterationState::zeros(2),
        &[1.0, 1.0],
        GramOperator::Explicit(&a),
        &p,
        1.0,
    )
    .unwrap();
    assert!((next.u[0] - 0.5).abs() < 1e-15 && (next.u[1] - 0.25).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn identity_preconditioner_reduces_to_plain_gradient(m in 1usize..12, seed in any::<u64>(), mu in 1e-3f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(m, &mut rng);
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = IterationState { k: 3, u };
        let p = psgm_step(&s, &b, GramOperator::Explicit(&a), &identity_precond(m), mu).unwrap();
        let q = sgm_step(&s, &b, GramOperator::Explicit(&a), mu).unwrap();
        prop_assert_eq!(
            p.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!(p.k, 4);
    }

    #[test]
    fn explicit_and_product_operators_agree(m in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(m, &mut rng);
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = IterationState { k: 0, u: (0..m).map(|i| i as f64 * 0.1).collect() };
        let prod = |u: &[f64]| a.matvec(u);
        let p = identity_precond(m);
        let x = psgm_step(&s, &b, GramOperator::Explicit(&a), &p, 0.3).unwrap();
        let y = psgm_step(&s, &b, GramOperator::Product(&prod), &p, 0.3).unwrap();
        prop_assert_eq!(x.u, y.u);
    }
}

/// At `u = A⁻¹ b` the gradient vanishes, so any preconditioned step stays put.
#[test]
fn exact_solution_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let m = 2 + trial % 9;
        let a = random_spd(m, &mut rng);
        let u_star: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&u_star).unwrap();
        let spec = PreconditionerSpec::new(
            BChoice::DiagOfA,
            ConstraintOperator::first_difference(m).unwrap(),
            1,
        )
        .unwrap();
        let p = assemble_preconditioner(&spec, 0.02, Some(&a)).unwrap();
        let next = psgm_step(
            &IterationState {
                k: 0,
                u: u_star.clone(),
            },
            &b,
            GramOperator::Explicit(&a),
            &p,
            0.7,
        )
        .unwrap();
        let au = a.matvec(&next.u).unwrap();
        for (x, y) in au.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8);
        }
    }
}

/// With `B = A`, `μ = 0.5` one step halves the error exactly.
#[test]
fn one_step_contraction_with_exact_preconditioner() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_spd(6, &mut rng);
    let u_star: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
    let b = a.matvec(&u_star).unwrap();
    let spec = PreconditionerSpec::new(BChoice::FullA, ConstraintOperator::none(6), 1).unwrap();
    let p = assemble_preconditioner(&spec, 0.0, Some(&a)).unwrap();
    let next = psgm_step(
        &IterationState::zeros(6),
        &b,
        GramOperator::Explicit(&a),
        &p,
        0.5,
    )
    .unwrap();
    for (u, s) in next.u.iter().zip(&u_star) {
        assert!((u - 0.5 * s).abs() < 1e-10);
    }
    // against an explicit dense solve of the same update
    let inv = dense_inverse(&a).unwrap();
    let dir = inv.matvec(&b).unwrap();
    for (u, d) in next.u.iter().zip(&dir) {
        assert!((u - 0.5 * d).abs() < 1e-10);
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = uniform_monomial(3, 5, StepSchedule::Constant { mu: 0.3 }, 200);
    let a = run(cfg.clone()).unwrap();
    let b = run(cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_steps_returns_the_start() {
    let mut cfg = uniform_monomial(3, 5, StepSchedule::Constant { mu: 0.3 }, 0);
    cfg.u0 = Some(vec![1.0, 2.0, 3.0]);
    let t = run(cfg).unwrap();
    assert!(t.records.is_empty());
    assert_eq!(
        t.final_state,
        IterationState {
            k: 0,
            u: vec![1.0, 2.0, 3.0]
        }
    );
}

#[test]
fn linear_target_is_recovered() {
    let mut cfg = uniform_monomial(2, 9, StepSchedule::Constant { mu: 0.5 }, 500);
    cfg.reference = Some(vec![0.0, 1.0]);
    let t = run(cfg).unwrap();
    let last = t.records.last().unwrap().relative_error.unwrap();
    assert!(last <= 0.05, "relative error {last}");
}

#[test]
fn crf_residual_trend_decreases() {
    let mut s = crf_small(3).unwrap();
    s.config.steps = 5000;
    s.config.eval = None;
    let t = run(s.config).unwrap();
    let median = |k0: usize| {
        let mut w: Vec<f64> = t.records[k0..k0 + 500]
            .iter()
            .map(|r| r.residual_norm)
            .collect();
        w.sort_by(f64::total_cmp);
        w[250]
    };
    assert!(
        median(4500) < median(0),
        "{} vs {}",
        median(4500),
        median(0)
    );
}

#[test]
fn divergent_step_aborts_with_partial_trace() {
    let cfg = uniform_monomial(3, 2, StepSchedule::Constant { mu: 1e150 }, 100);
    let err = run(cfg).unwrap_err();
    assert!(
        matches!(err.error, Error::NonFiniteUpdate { .. } | Error::NonFinite),
        "{}",
        err.error
    );
    assert!(!err.trace.records.is_empty());
    assert!(err.trace.records.len() < 100);
    assert!(err.trace.final_state.u.iter().all(|v| v.is_finite()));
}

#[test]
fn inadmissible_preconditioner_is_refused_unless_forced() {
    // sym(diag(A)⁻¹A) has off-diagonal 9.9·(1 + 1/100)/2 ≈ 5 > 1
    let a = Matrix::from_rows(&[[1.0, 9.9], [9.9, 100.0]]);
    let mut cfg = uniform_monomial(2, 1, StepSchedule::Constant { mu: 0.01 }, 5);
    cfg.gram_ref = Some(a);
    cfg.preconditioner =
        PreconditionerSpec::new(BChoice::FullA, ConstraintOperator::none(2), 1).unwrap();
    assert!(run(cfg.clone()).unwrap().warnings.is_empty());

    let mut bad = cfg;
    bad.preconditioner =
        PreconditionerSpec::new(BChoice::DiagOfA, ConstraintOperator::none(2), 1).unwrap();
    let err = run(bad.clone()).unwrap_err();
    assert!(
        matches!(err.error, Error::NotAdmissible { .. }),
        "{}",
        err.error
    );
    assert!(err.trace.records.is_empty());
    bad.allow_inadmissible = true;
    let t = run(bad).unwrap();
    assert_eq!(t.warnings.len(), 1);
    assert!(!t.admissibility.unwrap().admissible);
}

#[test]
fn identity_channel_is_equalized_almost_exactly() {
    let s = identity_channel_equalizer(4).unwrap();
    let t = run(s.config).unwrap();
    let db = t.records.iter().rev().find_map(|r| r.error_db).unwrap();
    assert!(db < -80.0, "final error {db} dB");
}

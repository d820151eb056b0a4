//! Closed forms on the ladder: `B_{n,n+1} = a_n / sqrt(s_n s_{n+1})`.

use kvclt_core::builtin::{self, LadderProfile};
use kvclt_core::markov_core::decompose;
use kvclt_core::sector_conditions::{
    build_graded, graded_dense_range_certificate, gsc_check, GradedBoundSpec, Grading,
};
use kvclt_core::{Error, GeneratorModel};
use nalgebra::DMatrix;

fn sequences(levels: usize, c: impl Fn(f64) -> f64) -> GradedBoundSpec {
    GradedBoundSpec::Sequences {
        d: vec![1.0; levels],
        c: (1..=levels).map(|n| c(n as f64)).collect(),
    }
}

#[test]
fn unit_ladder_passes_with_divergent_sequence() {
    let l = builtin::ladder(50, LadderProfile::Unit).unwrap();
    let g = build_graded(&decompose(&l.model), &l.model, l.grading.as_ref().unwrap()).unwrap();
    let r = gsc_check(&g, &sequences(50, |_| 1.0)).unwrap();
    assert!(r.pass);
    assert!(r.divergence.as_ref().unwrap().divergent);
    for b in r.blocks.iter().filter(|b| b.m != b.n) {
        assert!((b.norm - 1.0).abs() < 1e-10, "{b:?}");
    }
    let cert = graded_dense_range_certificate(&g, &sequences(50, |_| 1.0)).unwrap();
    assert!(cert.pass);
}

#[test]
fn linear_ladder_needs_quadratic_sequence() {
    let levels = 30;
    let l = builtin::ladder(levels, LadderProfile::Linear).unwrap();
    let g = build_graded(&decompose(&l.model), &l.model, l.grading.as_ref().unwrap()).unwrap();
    for (&(m, n), b) in &g.b_blocks {
        if m + 1 == n {
            assert!((b[(0, 0)].abs() - (m + 1) as f64).abs() < 1e-10);
        }
    }
    assert!(!gsc_check(&g, &sequences(levels, |n| n)).unwrap().pass);
    let r = gsc_check(&g, &sequences(levels, |n| n * n)).unwrap();
    assert!(r.pass);
    assert!(!r.divergence.as_ref().unwrap().divergent);
    assert!(
        !graded_dense_range_certificate(&g, &sequences(levels, |n| n * n))
            .unwrap()
            .pass
    );
}

#[test]
fn injected_off_diagonal_s_block_is_rejected() {
    let l = builtin::ladder(4, LadderProfile::Unit).unwrap();
    let q = l.model.q();
    let n = q.nrows();
    // Couple two levels through S: add a symmetric, row-sum-zero perturbation
    // built from two distinct Helmert directions.
    let grading = l.grading.as_ref().unwrap();
    let (e1, e2) = (grading.levels()[0].column(0), grading.levels()[2].column(0));
    let w = 1.0 / n as f64;
    let bump: DMatrix<f64> = (e1 * e2.transpose() + e2 * e1.transpose()) * (0.3 * w);
    let perturbed = GeneratorModel::operator_model(q - bump, l.model.pi().clone(), *l.model.tolerances()).unwrap();
    let grading = Grading::from_bases(grading.levels().to_vec(), 1, &perturbed).unwrap();
    let err = build_graded(&decompose(&perturbed), &perturbed, &grading).unwrap_err();
    assert!(matches!(err, Error::GradingNotRespected(_)), "{err}");
}

#[test]
fn power_mode_bounds() {
    let l = builtin::ladder(20, LadderProfile::Sqrt).unwrap();
    let g = build_graded(&decompose(&l.model), &l.model, l.grading.as_ref().unwrap()).unwrap();
    let pass = GradedBoundSpec::Power {
        c: 1.0,
        kappa: 0.0,
        beta: 0.5,
    };
    let r = gsc_check(&g, &pass).unwrap();
    assert!(r.pass, "{:?}", r.blocks.iter().find(|b| !b.pass));
    let fail = GradedBoundSpec::Power {
        c: 1.0,
        kappa: 0.0,
        beta: 0.4,
    };
    assert!(!gsc_check(&g, &fail).unwrap().pass);
}

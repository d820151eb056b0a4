//! Browser bindings: three small interactive computations, each returning a
//! JSON string for the demo page to plot.

use kvclt_core::builtin::{self, LadderProfile};
use kvclt_core::markov_core::{decompose, load_generator, project_mean_zero};
use kvclt_core::sector_conditions::{
    b_apply, b_lambda_apply, build_graded, divergence_verdict, random_test_vectors, ssc_norm,
};
use kvclt_core::spectral_ops::{condition_sweep, sigma_squared, sigma_squared_oracle, spectral_decompose_s};
use kvclt_core::{linalg, SweepConfig};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct SweepCurve {
    pub model: String,
    pub lambdas: Vec<f64>,
    pub two_uf: Vec<f64>,
    pub norm_a: Vec<f64>,
    pub sigma2: Option<f64>,
    pub oracle: f64,
}

/// `2 (u_lambda, f)` and `sqrt(lambda) |u_lambda|` across the sweep for a
/// builtin model.
pub fn sweep_curve_inner(model: &str, lambda_min: f64, ratio: f64) -> Result<SweepCurve, String> {
    let b = builtin::parse_builtin(model).map_err(|e| e.to_string())?;
    let cfg = SweepConfig {
        lambda_min,
        ratio,
        ..SweepConfig::default()
    };
    let split = decompose(&b.model);
    let spec = spectral_decompose_s(&split, &b.model).map_err(|e| e.to_string())?;
    let sweep = condition_sweep(&b.model, &split, &spec, &b.observable, &cfg).map_err(|e| e.to_string())?;
    let oracle = sigma_squared_oracle(&b.model, &split, &spec, &b.observable).map_err(|e| e.to_string())?;
    let sigma2 = sigma_squared(&sweep, &spec, &b.model, &b.observable)
        .ok()
        .map(|v| v.sigma2);
    Ok(SweepCurve {
        model: b.name,
        lambdas: sweep.records.iter().map(|r| r.lambda).collect(),
        two_uf: sweep.records.iter().map(|r| r.two_uf).collect(),
        norm_a: sweep.records.iter().map(|r| r.norm_a).collect(),
        sigma2,
        oracle,
    })
}

#[derive(Debug, Serialize)]
pub struct CycleRsc {
    pub states: usize,
    pub ssc_constant: f64,
    pub lambdas: Vec<f64>,
    /// `max_x |B_lambda x - B x|_pi` over a few random test vectors.
    pub errors: Vec<f64>,
    pub sigma2: f64,
}

/// Ring of `n` states with rate `cw` to `i + 1` and `ccw` to `i - 1`.
pub fn cycle_generator(n: usize, cw: f64, ccw: f64) -> Result<DMatrix<f64>, String> {
    if n < 3 {
        return Err("a cycle needs at least 3 states".into());
    }
    if !(cw >= 0.0 && ccw >= 0.0 && cw + ccw > 0.0) {
        return Err("rates must be non-negative and not both zero".into());
    }
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, (i + 1) % n)] += cw;
        q[(i, (i + n - 1) % n)] += ccw;
        q[(i, i)] = -(cw + ccw);
    }
    Ok(q)
}

/// SSC constant and `B_lambda -> B` convergence on a biased ring, with the
/// observable `cos(2 pi i / n)`.
pub fn cycle_rsc_inner(n: usize, cw: f64, ccw: f64) -> Result<CycleRsc, String> {
    let model = load_generator(cycle_generator(n, cw, ccw)?, None).map_err(|e| e.to_string())?;
    let split = decompose(&model);
    let spec = spectral_decompose_s(&split, &model).map_err(|e| e.to_string())?;
    let lambdas: Vec<f64> = (0..=16).map(|k| 10f64.powf(1.0 - 0.5 * k as f64)).collect();
    let vectors = random_test_vectors(&model, 5, 1);
    let mut errors = vec![0.0f64; lambdas.len()];
    for x in &vectors {
        let bx = b_apply(&split, &spec, x).map_err(|e| e.to_string())?;
        for (err, &lambda) in errors.iter_mut().zip(&lambdas) {
            let d = b_lambda_apply(&split, &spec, lambda, x).map_err(|e| e.to_string())? - &bx;
            *err = err.max(linalg::norm(model.pi(), &d));
        }
    }
    let raw = DVector::from_fn(n, |i, _| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
    let f = project_mean_zero(&raw, &model).map_err(|e| e.to_string())?;
    let sigma2 = sigma_squared_oracle(&model, &split, &spec, &f).map_err(|e| e.to_string())?;
    Ok(CycleRsc {
        states: n,
        ssc_constant: ssc_norm(&split, &spec, &model),
        lambdas,
        errors,
        sigma2,
    })
}

#[derive(Debug, Serialize)]
pub struct LadderGsc {
    pub profile: String,
    /// `|B_{n,n+1}|` for `n = 1 .. N-1`.
    pub block_norms: Vec<f64>,
    /// Smallest `c_n >= 1` with `|B_{m,n}| <= sqrt(c_n)` on every block.
    pub c: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub exponent: Option<f64>,
    pub divergent: bool,
}

/// Block norms of the ladder and the divergence verdict for the tightest
/// admissible `c_n`.
pub fn ladder_gsc_inner(levels: usize, profile: &str) -> Result<LadderGsc, String> {
    if !(2..=400).contains(&levels) {
        return Err("levels must be between 2 and 400".into());
    }
    let profile = LadderProfile::parse(profile).map_err(|e| e.to_string())?;
    let l = builtin::ladder(levels, profile).map_err(|e| e.to_string())?;
    let grading = l.grading.as_ref().expect("ladders are graded");
    let g = build_graded(&decompose(&l.model), &l.model, grading).map_err(|e| e.to_string())?;
    let norm = |m: usize, n: usize| g.b_blocks.get(&(m, n)).map_or(0.0, linalg::spectral_norm);
    let block_norms = (0..levels - 1).map(|n| norm(n, n + 1)).collect();
    // Column n carries the blocks (n-1, n), (n, n) and (n+1, n).
    let c: Vec<f64> = (0..levels)
        .map(|n| {
            let worst = [
                n.checked_sub(1).map(|m| norm(m, n)),
                Some(norm(n, n)),
                Some(norm(n + 1, n)),
            ]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max);
            (worst * worst).max(1.0)
        })
        .collect();
    let verdict = divergence_verdict(&c);
    Ok(LadderGsc {
        profile: profile.name().into(),
        block_norms,
        c,
        partial_sums: verdict.partial_sums,
        exponent: verdict.exponent,
        divergent: verdict.divergent,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sweep_curve(model: &str, lambda_min: f64, ratio: f64) -> Result<String, JsValue> {
    to_js(sweep_curve_inner(model, lambda_min, ratio))
}

#[wasm_bindgen]
pub fn cycle_rsc(n: usize, cw: f64, ccw: f64) -> Result<String, JsValue> {
    to_js(cycle_rsc_inner(n, cw, ccw))
}

#[wasm_bindgen]
pub fn ladder_gsc(levels: usize, profile: &str) -> Result<String, JsValue> {
    to_js(ladder_gsc_inner(levels, profile))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_on_two_state() {
        let c = sweep_curve_inner("2state(1,2)", 1e-8, 10.0).unwrap();
        assert_eq!(c.lambdas.len(), 9);
        assert!((c.sigma2.unwrap() - 4.0 / 3.0).abs() < 1e-9);
        assert!(c.two_uf.windows(2).all(|w| w[1] > w[0]));
        assert!(sweep_curve_inner("nope", 1e-8, 10.0).is_err());
    }

    #[test]
    fn three_state_cycle_matches_closed_form() {
        let r = cycle_rsc_inner(3, 1.0, 0.0).unwrap();
        assert!((r.ssc_constant - 3f64.powf(-0.5)).abs() < 1e-12);
        assert!(*r.errors.last().unwrap() < 1e-6);
        let sym = cycle_rsc_inner(6, 1.0, 1.0).unwrap();
        assert!(sym.ssc_constant < 1e-12);
        assert!(cycle_rsc_inner(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn ladder_profiles() {
        let unit = ladder_gsc_inner(30, "unit").unwrap();
        assert!(unit.divergent);
        assert!(unit.block_norms.iter().all(|b| (b - 1.0).abs() < 1e-10));
        let lin = ladder_gsc_inner(30, "linear").unwrap();
        assert!(!lin.divergent);
        assert!((lin.block_norms[4] - 5.0).abs() < 1e-10);
        assert!(ladder_gsc_inner(1, "unit").is_err());
    }

    #[test]
    fn json_wrappers() {
        let s = ladder_gsc(5, "sqrt").unwrap();
        assert!(s.contains("\"profile\":\"sqrt\""));
    }
}

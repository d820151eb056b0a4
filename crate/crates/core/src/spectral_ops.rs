//! Spectral calculus for `S`, resolvents of `G`, and the lambda-sweep
//! diagnostics behind the Kipnis-Varadhan conditions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::markov_core::{GeneratorModel, Observable, OperatorSplit};
use crate::par::ordered_map;
use crate::{Error, Result};

/// Eigensystem of `S` in the pi-metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    /// Columns are pi-orthonormal eigenvectors.
    pub basis: DMatrix<f64>,
    pub kernel_mask: Vec<bool>,
    pub kernel_tol: f64,
    kernel_rel: f64,
    pi: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exponent {
    Half,
    NegHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HMinusOne {
    /// `|S^{-1/2} f|^2`.
    Finite {
        value: f64,
    },
    Infinite {
        offending_component: f64,
    },
}

impl HMinusOne {
    pub fn value(&self) -> Option<f64> {
        match *self {
            HMinusOne::Finite { value } => Some(value),
            HMinusOne::Infinite { .. } => None,
        }
    }
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// `c_k = (x, e_k)_pi`.
    pub fn coefficients(&self, x: &DVector<f64>) -> DVector<f64> {
        let weighted = x.component_mul(&self.pi);
        self.basis.tr_mul(&weighted)
    }

    pub fn synthesize(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }

    /// Indices of eigenvalues above the kernel cutoff.
    pub fn range_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| !self.kernel_mask[k]).collect()
    }

    /// pi-orthonormal basis of `Ran(S)`, which is the mean-zero subspace for
    /// ergodic `S`.
    pub fn range_basis(&self) -> DMatrix<f64> {
        let idx = self.range_indices();
        self.basis.select_columns(idx.iter())
    }

    pub fn range_eigenvalues(&self) -> DVector<f64> {
        let idx = self.range_indices();
        DVector::from_iterator(idx.len(), idx.iter().map(|&k| self.eigenvalues[k]))
    }

    /// Norm of the component of `x` in `Ker(S)`, and the tolerance it is held to.
    pub fn kernel_component(&self, x: &DVector<f64>) -> (f64, f64) {
        let c = self.coefficients(x);
        let comp = c
            .iter()
            .zip(&self.kernel_mask)
            .filter(|(_, &k)| k)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt();
        (comp, self.kernel_rel * linalg::norm(&self.pi, x))
    }

    fn check_no_kernel(&self, x: &DVector<f64>) -> Result<()> {
        let (component, tol) = self.kernel_component(x);
        if component > tol {
            return Err(Error::KernelComponent { component, tol });
        }
        Ok(())
    }

    /// `sum_k phi(mu_k) c_k e_k`, with `phi` returning `None` to drop a mode.
    pub fn apply_fn(&self, x: &DVector<f64>, phi: impl Fn(f64, bool) -> Option<f64>) -> DVector<f64> {
        let mut c = self.coefficients(x);
        for k in 0..self.dim() {
            c[k] *= phi(self.eigenvalues[k], self.kernel_mask[k]).unwrap_or(0.0);
        }
        self.synthesize(&c)
    }
}

pub fn spectral_decompose_s(split: &OperatorSplit, model: &GeneratorModel) -> Result<SpectralData> {
    let pi = model.pi().clone();
    let n = pi.len();
    let sym = linalg::to_sym_frame(&split.s, &pi);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-15, 10_000).ok_or(Error::EigSolverFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let inv_sqrt_pi: Vec<f64> = pi.iter().map(|p| 1.0 / p.sqrt()).collect();
    let basis = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])] * inv_sqrt_pi[i]);

    let rel = model.tolerances().kernel;
    let top = eigenvalues.iter().cloned().fold(0.0, f64::max);
    let kernel_tol = rel * top;
    let kernel_mask = eigenvalues.iter().map(|ev| ev.abs() <= kernel_tol).collect();
    Ok(SpectralData {
        eigenvalues,
        basis,
        kernel_mask,
        kernel_tol,
        kernel_rel: rel,
        pi,
    })
}

/// `(lambda I + S)^{+-1/2} x`. With `lambda = 0` and exponent `-1/2` the
/// kernel modes are dropped after checking `x` has no mass on them.
pub fn fractional_power_apply(
    spec: &SpectralData,
    lambda: f64,
    exponent: Exponent,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let singular = lambda == 0.0 && exponent == Exponent::NegHalf;
    if singular {
        spec.check_no_kernel(x)?;
    }
    Ok(spec.apply_fn(x, |mu, kernel| {
        let mu = mu.max(0.0);
        match exponent {
            Exponent::Half => Some((lambda + mu).sqrt()),
            Exponent::NegHalf if singular && kernel => None,
            Exponent::NegHalf => Some(1.0 / (lambda + mu).sqrt()),
        }
    }))
}

pub fn h_minus_one_norm(f: &Observable, spec: &SpectralData) -> HMinusOne {
    let (component, tol) = spec.kernel_component(f.values());
    if component > tol {
        return HMinusOne::Infinite {
            offending_component: component,
        };
    }
    let c = spec.coefficients(f.values());
    let value = (0..spec.dim())
        .filter(|&k| !spec.kernel_mask[k])
        .map(|k| c[k] * c[k] / spec.eigenvalues[k])
        .sum();
    HMinusOne::Finite { value }
}

/// `u = (lambda I - Q)^{-1} f` for mean-zero `f`.
///
/// Solved as `(lambda I - Q + 1 pi^T) u = f`: the rank-one term moves the
/// constant mode to `lambda + 1` and leaves the mean-zero block untouched, so
/// the factorization stays well conditioned as `lambda -> 0`.
pub fn resolvent_apply(model: &GeneratorModel, lambda: f64, f: &Observable) -> Result<DVector<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    let n = model.n();
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: f.len(),
        });
    }
    let q = model.q();
    let pi = model.pi();
    let system = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { lambda } else { 0.0 };
        diag - q[(i, j)] + pi[j]
    });
    let rhs = f.values();
    let lu = system.lu();
    let mut u = lu
        .solve(rhs)
        .ok_or_else(|| Error::SolveFailure(format!("(lambda I - Q) singular at lambda = {lambda}")))?;

    let apply = |u: &DVector<f64>| u * lambda - q * u;
    let fnorm = rhs.amax();
    let residual = rhs - apply(&u);
    if residual.amax() > 1e-11 * fnorm {
        if let Some(du) = lu.solve(&residual) {
            u += du;
        }
    }
    let mean = linalg::mean(pi, &u);
    u.add_scalar_mut(-mean);
    let residual = (rhs - apply(&u)).amax();
    if !residual.is_finite() || residual > 1e-8 * fnorm.max(f64::MIN_POSITIVE) {
        return Err(Error::SolveFailure(format!(
            "resolvent residual {residual:e} at lambda = {lambda}"
        )));
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub ratio: f64,
    /// Absolute threshold on `|lambda^{1/2} u_lambda|`.
    pub tol_a: f64,
    /// Absolute threshold on the last Cauchy increment of `S^{1/2} u_lambda`.
    pub tol_b: f64,
    /// Agreement of `2 (u, f)` and `2 |v|^2`, relative to `max(1, sigma^2)`.
    pub tol_match: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda_max: 1.0,
            lambda_min: 1e-8,
            ratio: 10.0,
            tol_a: 1e-6,
            tol_b: 1e-6,
            tol_match: 1e-6,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_max.is_finite()
            && self.lambda_min > 0.0
            && self.lambda_max > self.lambda_min
            && self.ratio > 1.0
            && self.ratio.is_finite();
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "need lambda_max > lambda_min > 0 and ratio > 1, got {} / {} / {}",
                self.lambda_max, self.lambda_min, self.ratio
            )));
        }
        Ok(())
    }

    /// Geometric sequence from `lambda_max` down to the first value at or below `lambda_min`.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let lambda = self.lambda_max / self.ratio.powi(k);
            out.push(lambda);
            if lambda <= self.lambda_min * (1.0 + 1e-12) || k > 10_000 {
                break;
            }
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    #[serde(skip)]
    pub u: DVector<f64>,
    /// `|lambda^{1/2} u_lambda|_pi`.
    pub norm_a: f64,
    /// `|S^{1/2}(u_lambda - u_prev)|_pi`, against the previous (larger) lambda.
    pub cauchy_b: Option<f64>,
    /// `(lambda + lambda') (u_lambda, u_lambda')_pi` for the previous lambda.
    pub cond_c: Option<f64>,
    /// Relative gap in `(l + l')(u, u') = |S^{1/2}(u - u')|^2 + l|u|^2 + l'|u'|^2`.
    pub polarization_residual: Option<f64>,
    /// `2 (u_lambda, f)_pi`.
    pub two_uf: f64,
    /// `|S^{-1/2} G u_lambda|_pi`.
    pub cond_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSweep {
    pub config: SweepConfig,
    pub records: Vec<LambdaRecord>,
    pub converged_a: bool,
    pub converged_b: bool,
    /// Fitted exponent `p` in `norm_a ~ lambda^p` over the last three lambdas.
    pub decay_a: Option<f64>,
    pub decay_b: Option<f64>,
    pub sup_cond_d: f64,
}

impl LambdaSweep {
    pub fn passed(&self) -> bool {
        self.converged_a && self.converged_b
    }

    pub fn last(&self) -> &LambdaRecord {
        self.records.last().expect("sweep has at least one lambda")
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale > 0.0 {
        (a - b).abs() / scale
    } else {
        0.0
    }
}

/// Least-squares slope of `log y` against `log lambda` over the tail.
fn tail_decay(points: &[(f64, f64)]) -> Option<f64> {
    let tail: Vec<(f64, f64)> = points
        .iter()
        .rev()
        .take(3)
        .filter(|(_, y)| *y > 0.0)
        .map(|(l, y)| (l.ln(), y.ln()))
        .collect();
    if tail.len() < 2 {
        return None;
    }
    let m = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / m;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

// The condition-A quantity decays like lambda^{1/2} and the Cauchy increment
// like lambda in finite dimension; a clear power-law decay counts as converged.
const MIN_DECAY_A: f64 = 0.25;
const MIN_DECAY_B: f64 = 0.5;

pub fn condition_sweep(
    model: &GeneratorModel,
    split: &OperatorSplit,
    spec: &SpectralData,
    f: &Observable,
    cfg: &SweepConfig,
) -> Result<LambdaSweep> {
    cfg.validate()?;
    debug_assert_eq!(split.s.nrows(), model.n());
    let pi = model.pi();
    let lambdas = cfg.lambdas();
    let solutions = ordered_map(lambdas.len(), |k| resolvent_apply(model, lambdas[k], f));
    let solutions = solutions.into_iter().collect::<Result<Vec<_>>>()?;

    let mut records: Vec<LambdaRecord> = Vec::with_capacity(lambdas.len());
    for (k, (&lambda, u)) in lambdas.iter().zip(solutions).enumerate() {
        let norm_a = lambda.sqrt() * linalg::norm(pi, &u);
        let (cauchy_b, cond_c, polarization_residual) = match k.checked_sub(1).map(|p| &records[p]) {
            Some(prev) => {
                let diff = &u - &prev.u;
                let half = fractional_power_apply(spec, 0.0, Exponent::Half, &diff)?;
                let c = (lambda + prev.lambda) * linalg::inner(pi, &u, &prev.u);
                let rhs = linalg::inner(pi, &half, &half)
                    + lambda * linalg::inner(pi, &u, &u)
                    + prev.lambda * linalg::inner(pi, &prev.u, &prev.u);
                (Some(linalg::norm(pi, &half)), Some(c), Some(relative_gap(c, rhs)))
            }
            None => (None, None, None),
        };
        let two_uf = 2.0 * linalg::inner(pi, &u, f.values());
        let gu = &u * lambda - f.values();
        let cond_d = linalg::norm(pi, &fractional_power_apply(spec, 0.0, Exponent::NegHalf, &gu)?);
        records.push(LambdaRecord {
            lambda,
            u,
            norm_a,
            cauchy_b,
            cond_c,
            polarization_residual,
            two_uf,
            cond_d,
        });
    }

    let a_points: Vec<(f64, f64)> = records.iter().map(|r| (r.lambda, r.norm_a)).collect();
    let b_points: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.cauchy_b.map(|b| (r.lambda, b)))
        .collect();
    let decay_a = tail_decay(&a_points);
    let decay_b = tail_decay(&b_points);
    let last_a = a_points.last().map_or(0.0, |p| p.1);
    let last_b = b_points.last().map_or(0.0, |p| p.1);
    let converged_a = last_a < cfg.tol_a || decay_a.is_some_and(|p| p >= MIN_DECAY_A);
    let converged_b = last_b < cfg.tol_b || decay_b.is_some_and(|p| p >= MIN_DECAY_B);
    let sup_cond_d = records.iter().map(|r| r.cond_d).fold(0.0, f64::max);
    Ok(LambdaSweep {
        config: *cfg,
        records,
        converged_a,
        converged_b,
        decay_a,
        decay_b,
        sup_cond_d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceResult {
    pub sigma2: f64,
    #[serde(skip)]
    pub v: DVector<f64>,
    pub sigma2_from_v: f64,
    pub oracle_sigma2: f64,
    /// `(lambda, 2 (u_lambda, f))` at the two smallest lambdas.
    pub richardson_pair: [(f64, f64); 2],
    pub matches: bool,
}

/// Richardson extrapolation (order 1) of `2 (u_lambda, f)` to `lambda = 0`.
pub fn sigma_squared(
    sweep: &LambdaSweep,
    spec: &SpectralData,
    model: &GeneratorModel,
    f: &Observable,
) -> Result<VarianceResult> {
    if !sweep.passed() {
        return Err(Error::NotConverged(format!(
            "condition A converged: {}, condition B converged: {}",
            sweep.converged_a, sweep.converged_b
        )));
    }
    let recs = &sweep.records;
    let small = &recs[recs.len() - 1];
    let big = if recs.len() >= 2 { &recs[recs.len() - 2] } else { small };
    let sigma2 = if recs.len() >= 2 {
        (big.lambda * small.two_uf - small.lambda * big.two_uf) / (big.lambda - small.lambda)
    } else {
        small.two_uf
    };
    let pi = model.pi();
    let v = fractional_power_apply(spec, 0.0, Exponent::Half, &small.u)?;
    let sigma2_from_v = 2.0 * linalg::inner(pi, &v, &v);
    let oracle_sigma2 = poisson_variance(model, f)?;
    let matches = (sigma2 - sigma2_from_v).abs() <= sweep.config.tol_match * sigma2.max(1.0);
    Ok(VarianceResult {
        sigma2,
        v,
        sigma2_from_v,
        oracle_sigma2,
        richardson_pair: [(big.lambda, big.two_uf), (small.lambda, small.two_uf)],
        matches,
    })
}

/// Solves `-Q u = f` on the mean-zero subspace through the bordered system
/// `[-Q 1; pi^T 0] [u; c] = [f; 0]`.
pub fn poisson_solve(model: &GeneratorModel, f: &Observable) -> Result<DVector<f64>> {
    let n = model.n();
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: f.len(),
        });
    }
    let q = model.q();
    let pi = model.pi();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(-q));
    for i in 0..n {
        m[(i, n)] = 1.0;
        m[(n, i)] = pi[i];
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(f.values());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailure("Poisson system is singular".into()))?;
    Ok(sol.rows(0, n).into_owned())
}

fn poisson_variance(model: &GeneratorModel, f: &Observable) -> Result<f64> {
    let split = OperatorSplit::from_generator(model.q(), model.pi());
    let u = poisson_solve(model, f)?;
    Ok(2.0 * linalg::inner(model.pi(), &u, &(&split.s * &u)))
}

/// `2 (u, S u)_pi` with `-Q u = f`: the `lambda -> 0` limit taken exactly.
pub fn sigma_squared_oracle(
    model: &GeneratorModel,
    split: &OperatorSplit,
    _spec: &SpectralData,
    f: &Observable,
) -> Result<f64> {
    let u = poisson_solve(model, f)?;
    Ok(2.0 * linalg::inner(model.pi(), &u, &(&split.s * &u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_core::{decompose, load_generator};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn setup(q: DMatrix<f64>) -> (GeneratorModel, OperatorSplit, SpectralData) {
        let m = load_generator(q, None).unwrap();
        let s = decompose(&m);
        let spec = spectral_decompose_s(&s, &m).unwrap();
        (m, s, spec)
    }

    fn three_cycle() -> DMatrix<f64> {
        dmatrix![-1.0, 1.0, 0.0; 0.0, -1.0, 1.0; 1.0, 0.0, -1.0]
    }

    #[test]
    fn spectra() {
        let (_, _, spec) = setup(three_cycle());
        assert_relative_eq!(spec.eigenvalues, dvector![0.0, 1.5, 1.5], epsilon = 1e-12);
        assert_eq!(spec.kernel_mask, vec![true, false, false]);
        let (_, _, spec) = setup(dmatrix![-1.0, 1.0; 1.0, -1.0]);
        assert_relative_eq!(spec.eigenvalues, dvector![0.0, 2.0], epsilon = 1e-12);
        let (_, _, spec) = setup(dmatrix![0.0]);
        assert_eq!(spec.eigenvalues.as_slice(), &[0.0]);
        assert_eq!(spec.kernel_mask, vec![true]);
    }

    #[test]
    fn basis_is_pi_orthonormal() {
        let (m, split, spec) = setup(dmatrix![-3.0, 2.0, 1.0; 0.5, -1.0, 0.5; 2.0, 2.0, -4.0]);
        let gram = spec.basis.transpose() * DMatrix::from_diagonal(m.pi()) * &spec.basis;
        assert_relative_eq!(gram, DMatrix::identity(3, 3), epsilon = 1e-10);
        for k in 0..3 {
            let col = spec.basis.column(k).into_owned();
            let lhs = &split.s * &col;
            assert_relative_eq!(lhs, col * spec.eigenvalues[k], epsilon = 1e-8 * split.s.norm());
        }
    }

    #[test]
    fn fractional_powers() {
        let (_, _, spec) = setup(dmatrix![0.0]);
        let x = dvector![3.0];
        assert_eq!(fractional_power_apply(&spec, 1.0, Exponent::NegHalf, &x).unwrap(), x);

        let (_, _, spec) = setup(dmatrix![-1.0, 1.0; 1.0, -1.0]);
        let y = fractional_power_apply(&spec, 0.0, Exponent::NegHalf, &dvector![1.0, -1.0]).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert_relative_eq!(y, dvector![r, -r], epsilon = 1e-14);

        let err = fractional_power_apply(&spec, 0.0, Exponent::NegHalf, &dvector![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::KernelComponent { .. }));
    }

    #[test]
    fn h_minus_one_values() {
        let (m, _, spec) = setup(dmatrix![-1.0, 1.0; 1.0, -1.0]);
        let f = Observable::new(dvector![1.0, -1.0], &m).unwrap();
        assert_relative_eq!(h_minus_one_norm(&f, &spec).value().unwrap(), 0.5, epsilon = 1e-14);
        assert_eq!(h_minus_one_norm(&Observable::zero(&m), &spec).value(), Some(0.0));

        let (m, split, spec) = setup(three_cycle());
        let f = Observable::new(dvector![1.0, -1.0, 0.0], &m).unwrap();
        let h = h_minus_one_norm(&f, &spec).value().unwrap();
        assert_relative_eq!(h, 4.0 / 9.0, epsilon = 1e-13);
        // oracle: S u = f solved in the normal-equations sense, then (u, f)_pi
        let s_pinv = split.s.clone().pseudo_inverse(1e-12).unwrap();
        let u = s_pinv * f.values();
        assert_relative_eq!(linalg::inner(m.pi(), &u, f.values()), h, epsilon = 1e-12);
    }

    #[test]
    fn h_minus_one_infinite_on_kernel() {
        // S = 0 on two states: f lies entirely in the kernel
        let degenerate = GeneratorModel::from_raw_parts(dmatrix![0.0, 0.0; 0.0, 0.0], dvector![0.5, 0.5]);
        let spec0 = spectral_decompose_s(&decompose(&degenerate), &degenerate).unwrap();
        let f0 = Observable::new(dvector![1.0, -1.0], &degenerate).unwrap();
        assert!(matches!(h_minus_one_norm(&f0, &spec0), HMinusOne::Infinite { .. }));
    }

    #[test]
    fn resolvent_values() {
        let (m, _, _) = setup(dmatrix![-1.0, 1.0; 2.0, -2.0]);
        let zero = resolvent_apply(&m, 0.5, &Observable::zero(&m)).unwrap();
        assert_eq!(zero.amax(), 0.0);
        let f = Observable::new(dvector![1.0, -2.0], &m).unwrap();
        for lambda in [1e-8, 1e-3, 1.0, 7.0] {
            let u = resolvent_apply(&m, lambda, &f).unwrap();
            assert_relative_eq!(u, f.values() / (lambda + 3.0), epsilon = 1e-13);
        }

        let (m, _, _) = setup(three_cycle());
        let f = Observable::new(dvector![1.0, -1.0, 0.0], &m).unwrap();
        let u = resolvent_apply(&m, 1.0, &f).unwrap();
        let direct = (DMatrix::identity(3, 3) - m.q()).lu().solve(f.values()).unwrap();
        assert_relative_eq!(u, direct, epsilon = 1e-13);
        assert!(resolvent_apply(&m, 0.0, &f).is_err());
    }

    #[test]
    fn sweep_lambdas() {
        let cfg = SweepConfig::default();
        let l = cfg.lambdas();
        assert_eq!(l.len(), 9);
        assert_eq!(l[0], 1.0);
        assert_relative_eq!(l[8], 1e-8, max_relative = 1e-14);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
        let bad = SweepConfig { lambda_min: 2.0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sweep_zero_observable() {
        let (m, s, spec) = setup(three_cycle());
        let sw = condition_sweep(&m, &s, &spec, &Observable::zero(&m), &SweepConfig::default()).unwrap();
        assert!(sw.passed());
        for r in &sw.records {
            assert_eq!(r.norm_a, 0.0);
            assert_eq!(r.two_uf, 0.0);
            assert_eq!(r.cond_d, 0.0);
        }
    }

    #[test]
    fn sweep_two_state_closed_form() {
        let (m, s, spec) = setup(dmatrix![-1.0, 1.0; 2.0, -2.0]);
        let f = Observable::new(dvector![1.0, -2.0], &m).unwrap();
        let sw = condition_sweep(&m, &s, &spec, &f, &SweepConfig::default()).unwrap();
        let fnorm = 2f64.sqrt();
        for r in &sw.records {
            let expect = r.lambda.sqrt() * fnorm / (r.lambda + 3.0);
            assert_relative_eq!(r.norm_a, expect, max_relative = 1e-12);
        }
        assert!(sw.last().cond_c.unwrap().abs() < 1e-7);
        assert!(sw.passed());
        let v = sigma_squared(&sw, &spec, &m, &f).unwrap();
        assert_relative_eq!(v.sigma2, 4.0 / 3.0, max_relative = 1e-10);
        assert_relative_eq!(v.oracle_sigma2, 4.0 / 3.0, max_relative = 1e-12);
        assert!(v.matches);
    }

    #[test]
    fn sigma_scaling_and_zero() {
        let (m, s, spec) = setup(three_cycle());
        let f = Observable::new(dvector![1.0, -1.0, 0.0], &m).unwrap();
        let cfg = SweepConfig::default();
        let base = sigma_squared(&condition_sweep(&m, &s, &spec, &f, &cfg).unwrap(), &spec, &m, &f).unwrap();
        let g = f.scaled(3.0);
        let scaled = sigma_squared(&condition_sweep(&m, &s, &spec, &g, &cfg).unwrap(), &spec, &m, &g).unwrap();
        assert_relative_eq!(scaled.sigma2, 9.0 * base.sigma2, max_relative = 1e-10);
        let z = Observable::zero(&m);
        let zero = sigma_squared(&condition_sweep(&m, &s, &spec, &z, &cfg).unwrap(), &spec, &m, &z).unwrap();
        assert_eq!(zero.sigma2, 0.0);
    }

    #[test]
    fn oracle_values() {
        let (m, s, spec) = setup(dmatrix![-1.0, 1.0; 2.0, -2.0]);
        let f = Observable::new(dvector![1.0, -2.0], &m).unwrap();
        assert_relative_eq!(
            sigma_squared_oracle(&m, &s, &spec, &f).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-13
        );
        assert_eq!(sigma_squared_oracle(&m, &s, &spec, &Observable::zero(&m)).unwrap(), 0.0);

        // reversible birth-death chain: sigma^2 = 2 |S^{-1/2} f|^2
        let (m, s, spec) = setup(dmatrix![-1.0, 1.0, 0.0; 2.0, -3.0, 1.0; 0.0, 0.5, -0.5]);
        assert!(m.is_reversible(1e-12));
        let f = crate::markov_core::project_mean_zero(&dvector![1.0, 0.0, -2.0], &m).unwrap();
        let h = h_minus_one_norm(&f, &spec).value().unwrap();
        assert_relative_eq!(
            sigma_squared_oracle(&m, &s, &spec, &f).unwrap(),
            2.0 * h,
            max_relative = 1e-10
        );
    }

    #[test]
    fn not_converged_is_reported() {
        let (m, s, spec) = setup(dmatrix![-1.0, 1.0; 2.0, -2.0]);
        let f = Observable::new(dvector![1.0, -2.0], &m).unwrap();
        let cfg = SweepConfig {
            lambda_max: 1.0,
            lambda_min: 0.5,
            ratio: 2.0,
            ..SweepConfig::default()
        };
        let mut sw = condition_sweep(&m, &s, &spec, &f, &cfg).unwrap();
        sw.converged_a = false;
        assert!(matches!(sigma_squared(&sw, &spec, &m, &f), Err(Error::NotConverged(_))));
    }
}

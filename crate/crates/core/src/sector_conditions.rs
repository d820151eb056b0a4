//! Strong, graded and relaxed sector conditions.
//!
//! Everything here works on `Ran(S)`, the mean-zero subspace for an ergodic
//! `S`. [`SectorFrame`] writes operators in the pi-orthonormal eigenbasis of
//! `S` restricted to that subspace, where pi-norms become Euclidean norms and
//! `(lambda + S)^{-1/2}` is diagonal:
//!
//! * `B_lambda = (lambda + S)^{-1/2} A (lambda + S)^{-1/2}`, `lambda > 0`;
//! * `B = S^{-1/2} A S^{-1/2}` with the kernel cut off;
//! * `K_lambda = (I - B_lambda)^{-1}` and `K = (I - B)^{-1}`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::markov_core::{GeneratorModel, Observable, OperatorSplit};
use crate::spectral_ops::{fractional_power_apply, resolvent_apply, Exponent, SpectralData, SweepConfig};
use crate::{Error, Result};

/// Slack used for "exact" bound comparisons.
const BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SectorFrame {
    basis: DMatrix<f64>,
    mu: DVector<f64>,
    a: DMatrix<f64>,
    pi: DVector<f64>,
}

impl SectorFrame {
    pub fn new(split: &OperatorSplit, spec: &SpectralData) -> Self {
        let basis = spec.range_basis();
        let pi = spec.pi().clone();
        let weighted = DMatrix::from_diagonal(&pi) * &basis;
        let a = weighted.tr_mul(&(&split.a * &basis));
        // exact skew-symmetry in coordinates; the asymmetric part is rounding
        let a = (&a - a.transpose()) * 0.5;
        Self {
            basis,
            mu: spec.range_eigenvalues(),
            a,
            pi,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn skew_part(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn coords(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&x.component_mul(&self.pi))
    }

    pub fn synthesize(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }

    fn sandwich(&self, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| w[i] * self.a[(i, j)] * w[j])
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.sandwich(&self.mu.map(|m| 1.0 / m.sqrt()))
    }

    pub fn b_lambda(&self, lambda: f64) -> DMatrix<f64> {
        self.sandwich(&self.mu.map(|m| 1.0 / (lambda + m).sqrt()))
    }

    /// `(I - B_lambda)^{-1}`; `lambda = 0` gives `K`.
    pub fn k_lambda(&self, lambda: f64) -> Result<DMatrix<f64>> {
        let b = if lambda == 0.0 { self.b() } else { self.b_lambda(lambda) };
        let m = DMatrix::identity(self.dim(), self.dim()) - b;
        m.try_inverse()
            .ok_or_else(|| Error::SolveFailure(format!("I - B_lambda singular at lambda = {lambda}")))
    }
}

/// Best constant `C` in `|(psi, A phi)|^2 <= C^2 (psi, S psi)(phi, S phi)`:
/// the pi-operator norm of `S^{-1/2} A S^{-1/2}` on the mean-zero subspace.
pub fn ssc_norm(split: &OperatorSplit, spec: &SpectralData, _model: &GeneratorModel) -> f64 {
    linalg::spectral_norm(&SectorFrame::new(split, spec).b())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SscSampleReport {
    pub constant: f64,
    pub samples: usize,
    pub worst_ratio: f64,
    pub violations: usize,
    pub pass: bool,
}

fn random_mean_zero(rng: &mut ChaCha8Rng, pi: &DVector<f64>) -> DVector<f64> {
    let x = DVector::from_fn(pi.len(), |_, _| StandardNormal.sample(rng));
    let mean = pi.dot(&x);
    x.add_scalar(-mean)
}

/// `count` standard Gaussian vectors, pi-centered, deterministic in `seed`.
pub fn random_test_vectors(model: &GeneratorModel, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_mean_zero(&mut rng, model.pi())).collect()
}

/// Samples random mean-zero pairs and reports the largest observed
/// `|(psi, A phi)| / sqrt((psi, S psi)(phi, S phi))`.
pub fn ssc_pairwise_check(
    split: &OperatorSplit,
    model: &GeneratorModel,
    constant: f64,
    n_samples: usize,
    seed: u64,
) -> SscSampleReport {
    let pi = model.pi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..n_samples {
        let psi = random_mean_zero(&mut rng, pi);
        let phi = random_mean_zero(&mut rng, pi);
        let ratio = pair_ratio(split, pi, &psi, &phi);
        worst = worst.max(ratio);
        if ratio > constant * (1.0 + 1e-12) + 1e-15 {
            violations += 1;
        }
    }
    SscSampleReport {
        constant,
        samples: n_samples,
        worst_ratio: worst,
        violations,
        pass: violations == 0,
    }
}

pub fn pair_ratio(split: &OperatorSplit, pi: &DVector<f64>, psi: &DVector<f64>, phi: &DVector<f64>) -> f64 {
    let num = linalg::inner(pi, psi, &(&split.a * phi)).abs();
    let den = (linalg::inner(pi, psi, &(&split.s * psi)) * linalg::inner(pi, phi, &(&split.s * phi)))
        .max(0.0)
        .sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// An orthogonal decomposition of the mean-zero subspace into levels
/// `H_1, ..., H_N`, each given by a pi-orthonormal basis, with band width `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grading {
    levels: Vec<DMatrix<f64>>,
    band: usize,
}

impl Grading {
    pub fn from_bases(levels: Vec<DMatrix<f64>>, band: usize, model: &GeneratorModel) -> Result<Self> {
        let n = model.n();
        if band == 0 {
            return Err(Error::InvalidGrading("band width must be positive".into()));
        }
        if levels.is_empty() {
            return Err(Error::InvalidGrading("no levels".into()));
        }
        for (k, l) in levels.iter().enumerate() {
            if l.nrows() != n || l.ncols() == 0 {
                return Err(Error::InvalidGrading(format!(
                    "level {} basis is {}x{}, expected {n} rows and at least one column",
                    k + 1,
                    l.nrows(),
                    l.ncols()
                )));
            }
        }
        let all = DMatrix::from_columns(
            &levels
                .iter()
                .flat_map(|l| l.column_iter().map(|c| c.into_owned()))
                .collect::<Vec<_>>(),
        );
        if all.ncols() + 1 != n {
            return Err(Error::InvalidGrading(format!(
                "levels span {} dimensions, mean-zero subspace has {}",
                all.ncols(),
                n - 1
            )));
        }
        let pi = model.pi();
        let gram = all.tr_mul(&(DMatrix::from_diagonal(pi) * &all));
        let defect = (gram - DMatrix::identity(n - 1, n - 1)).amax();
        if defect > 1e-9 {
            return Err(Error::InvalidGrading(format!(
                "level bases are not pi-orthonormal (defect {defect:e})"
            )));
        }
        let means = all.tr_mul(pi).amax();
        if means > 1e-9 {
            return Err(Error::InvalidGrading(format!(
                "level bases are not mean-zero (max pi-mean {means:e})"
            )));
        }
        Ok(Self { levels, band })
    }

    /// Levels from a partition of the states into groups. Level `k` is the
    /// part of `span{1, functions supported on groups 1..=k}` orthogonal to
    /// the previous levels and the constants. The last group therefore needs
    /// at least two states.
    pub fn from_state_groups(groups: &[Vec<usize>], band: usize, model: &GeneratorModel) -> Result<Self> {
        let n = model.n();
        let mut seen = vec![false; n];
        for g in groups {
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::InvalidGrading(format!(
                        "state {i} is out of range or listed twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidGrading(format!("state {i} is in no group")));
        }
        let pi = model.pi();
        let mut accepted: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
        let mut levels = Vec::with_capacity(groups.len());
        for (k, g) in groups.iter().enumerate() {
            let mut cols = Vec::new();
            for &i in g {
                let mut v = DVector::zeros(n);
                v[i] = 1.0;
                for _ in 0..2 {
                    for w in &accepted {
                        let c = linalg::inner(pi, &v, w);
                        v.axpy(-c, w, 1.0);
                    }
                }
                let norm = linalg::norm(pi, &v);
                if norm > 1e-10 {
                    v /= norm;
                    accepted.push(v.clone());
                    cols.push(v);
                }
            }
            if cols.is_empty() {
                return Err(Error::InvalidGrading(format!("level {} is empty", k + 1)));
            }
            levels.push(DMatrix::from_columns(&cols));
        }
        Self::from_bases(levels, band, model)
    }

    /// A single level holding the whole mean-zero subspace.
    pub fn trivial(model: &GeneratorModel) -> Result<Self> {
        let all: Vec<usize> = (0..model.n()).collect();
        Self::from_state_groups(&[all], 1, model)
    }

    pub fn levels(&self) -> &[DMatrix<f64>] {
        &self.levels
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn level_dims(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.ncols()).collect()
    }
}

/// Blocks of `S`, `A` and `B` with respect to a grading. Keys are 0-based
/// `(m, n)` level indices; reports use 1-based levels.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedOperator {
    pub s_blocks: Vec<DMatrix<f64>>,
    pub a_blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub b_blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
    /// Largest leakage (off-diagonal `S` block or off-band `A` block), Frobenius.
    pub offband_residual: f64,
    pub band: usize,
    pub level_dims: Vec<usize>,
}

fn block(x: &DMatrix<f64>, pi: &DVector<f64>, em: &DMatrix<f64>, en: &DMatrix<f64>) -> DMatrix<f64> {
    let weighted = DMatrix::from_diagonal(pi) * em;
    weighted.tr_mul(&(x * en))
}

pub fn build_graded(split: &OperatorSplit, model: &GeneratorModel, grading: &Grading) -> Result<GradedOperator> {
    let pi = model.pi();
    let tol = model.tolerances();
    let levels = grading.levels();
    let count = levels.len();
    let r = grading.band();
    let scale = linalg::to_sym_frame(&split.s, pi)
        .norm()
        .max(linalg::to_sym_frame(&split.a, pi).norm())
        .max(1.0);
    let tau = tol.grade * scale;

    let mut offband: f64 = 0.0;
    let mut s_blocks = Vec::with_capacity(count);
    let mut a_blocks = BTreeMap::new();
    for m in 0..count {
        for n in 0..count {
            let sb = block(&split.s, pi, &levels[m], &levels[n]);
            if m == n {
                s_blocks.push((&sb + sb.transpose()) * 0.5);
            } else {
                let leak = sb.norm();
                if leak > tau {
                    return Err(Error::GradingNotRespected(format!(
                        "S block ({}, {}) has norm {leak:e} > {tau:e}",
                        m + 1,
                        n + 1
                    )));
                }
                offband = offband.max(leak);
            }
            let ab = block(&split.a, pi, &levels[m], &levels[n]);
            if m.abs_diff(n) <= r {
                a_blocks.insert((m, n), ab);
            } else {
                let leak = ab.norm();
                if leak > tau {
                    return Err(Error::GradingNotRespected(format!(
                        "A block ({}, {}) outside band {r} has norm {leak:e} > {tau:e}",
                        m + 1,
                        n + 1
                    )));
                }
                offband = offband.max(leak);
            }
        }
    }

    let mut inv_sqrt = Vec::with_capacity(count);
    let mut level_eigs = Vec::with_capacity(count);
    for (k, sb) in s_blocks.iter().enumerate() {
        let eig = SymmetricEigen::try_new(sb.clone(), 1e-15, 10_000).ok_or(Error::EigSolverFailure)?;
        level_eigs.push((k, eig));
    }
    let top = level_eigs
        .iter()
        .flat_map(|(_, e)| e.eigenvalues.iter().cloned())
        .fold(0.0, f64::max);
    let kernel_tol = tol.kernel * top;
    for (k, eig) in level_eigs {
        let low = eig.eigenvalues.min();
        if low <= kernel_tol {
            return Err(Error::SingularLevelS {
                level: k + 1,
                eigenvalue: low,
            });
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt()));
        inv_sqrt.push(&eig.eigenvectors * d * eig.eigenvectors.transpose());
    }
    let b_blocks = a_blocks
        .iter()
        .map(|(&(m, n), ab)| ((m, n), &inv_sqrt[m] * ab * &inv_sqrt[n]))
        .collect();

    Ok(GradedOperator {
        s_blocks,
        a_blocks,
        b_blocks,
        offband_residual: offband,
        band: r,
        level_dims: grading.level_dims(),
    })
}

impl GradedOperator {
    pub fn level_count(&self) -> usize {
        self.level_dims.len()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for d in &self.level_dims {
            off.push(off.last().unwrap() + d);
        }
        off
    }

    /// `B` over the first `levels` levels, in concatenated level coordinates.
    pub fn assemble_b(&self, levels: usize) -> DMatrix<f64> {
        let off = self.offsets();
        let dim = off[levels];
        let mut b = DMatrix::zeros(dim, dim);
        for (&(m, n), blk) in &self.b_blocks {
            if m < levels && n < levels {
                b.view_mut((off[m], off[n]), blk.shape()).copy_from(blk);
            }
        }
        b
    }

    /// Reassembles `(S, A)` as operators on the state space from the blocks.
    pub fn reassemble(&self, grading: &Grading, pi: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let levels = grading.levels();
        let n = pi.len();
        let p = DMatrix::from_diagonal(pi);
        let mut s = DMatrix::zeros(n, n);
        let mut a = DMatrix::zeros(n, n);
        for (k, sb) in self.s_blocks.iter().enumerate() {
            s += &levels[k] * sb * levels[k].transpose() * &p;
        }
        for (&(m, k), ab) in &self.a_blocks {
            a += &levels[m] * ab * levels[k].transpose() * &p;
        }
        (s, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GradedBoundSpec {
    /// `|B_mn| <= C (delta_mn n^kappa + (1 - delta_mn) n^beta)`.
    Power { c: f64, kappa: f64, beta: f64 },
    /// Bounds on `|(psi, A phi)|^2` with per-level `d_n` (diagonal) and `c_n`
    /// (off-diagonal).
    Sequences { d: Vec<f64>, c: Vec<f64> },
}

impl GradedBoundSpec {
    pub fn validate(&self, levels: usize) -> Result<()> {
        match self {
            GradedBoundSpec::Power { c, kappa, beta } => {
                if !(c.is_finite() && *c >= 0.0 && kappa.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidBounds("C must be >= 0, kappa and beta finite".into()));
                }
            }
            GradedBoundSpec::Sequences { d, c } => {
                for (name, seq) in [("d", d), ("c", c)] {
                    if seq.len() < levels {
                        return Err(Error::InvalidBounds(format!(
                            "sequence {name} has {} entries, grading has {levels} levels",
                            seq.len()
                        )));
                    }
                    if seq.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                        return Err(Error::InvalidBounds(format!("sequence {name} must be positive")));
                    }
                    if seq.windows(2).any(|w| w[1] < w[0]) {
                        return Err(Error::InvalidBounds(format!("sequence {name} must be non-decreasing")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    /// 1-based levels.
    pub m: usize,
    pub n: usize,
    pub norm: f64,
    /// Power mode: `C n^kappa` / `C n^beta`. Sequences mode: `sqrt(d_n)` / `sqrt(c_n)`.
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
    /// Sequences mode only: `d_n` / `c_n` taken as a bound on the norm itself.
    pub linear_bound: Option<f64>,
    pub linear_pass: Option<bool>,
}

/// Heuristic verdict on `sum c_n^{-1} = infinity` from a power-law fit of `c_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceVerdict {
    pub exponent: Option<f64>,
    pub divergent: bool,
    pub partial_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscReport {
    pub blocks: Vec<BlockCheck>,
    pub pass: bool,
    pub pass_linear: Option<bool>,
    pub divergence: Option<DivergenceVerdict>,
}

pub fn divergence_verdict(c: &[f64]) -> DivergenceVerdict {
    let mut acc = 0.0;
    let partial_sums = c
        .iter()
        .map(|x| {
            acc += 1.0 / x;
            acc
        })
        .collect();
    let exponent = if c.len() >= 2 {
        let pts: Vec<(f64, f64)> = c
            .iter()
            .enumerate()
            .map(|(k, x)| (((k + 1) as f64).ln(), x.ln()))
            .collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    DivergenceVerdict {
        exponent,
        divergent: exponent.is_some_and(|p| p <= 1.0 + 1e-9),
        partial_sums,
    }
}

pub fn gsc_check(g: &GradedOperator, bounds: &GradedBoundSpec) -> Result<GscReport> {
    bounds.validate(g.level_count())?;
    let within = |norm: f64, bound: f64| norm <= bound + BOUND_SLACK * bound.max(1.0);
    let mut blocks = Vec::new();
    for (&(m, n), b) in &g.b_blocks {
        let norm = linalg::spectral_norm(b);
        let level = (n + 1) as f64;
        let diag = m == n;
        let (bound, linear_bound) = match bounds {
            GradedBoundSpec::Power { c, kappa, beta } => (c * level.powf(if diag { *kappa } else { *beta }), None),
            GradedBoundSpec::Sequences { d, c } => {
                let x = if diag { d[n] } else { c[n] };
                (x.sqrt(), Some(x))
            }
        };
        blocks.push(BlockCheck {
            m: m + 1,
            n: n + 1,
            norm,
            bound,
            margin: bound - norm,
            pass: within(norm, bound),
            linear_bound,
            linear_pass: linear_bound.map(|lb| within(norm, lb)),
        });
    }
    let pass = blocks.iter().all(|b| b.pass);
    let (pass_linear, divergence) = match bounds {
        GradedBoundSpec::Sequences { c, .. } => (
            Some(blocks.iter().all(|b| b.linear_pass == Some(true))),
            Some(divergence_verdict(&c[..g.level_count()])),
        ),
        GradedBoundSpec::Power { .. } => (None, None),
    };
    Ok(GscReport {
        blocks,
        pass,
        pass_linear,
        divergence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub levels: usize,
    /// `1 / c_N`.
    pub lower_bound: f64,
    pub partial_sum: f64,
    /// Smallest singular values of `I - B` and `I + B` restricted to the first `N` levels.
    pub sigma_min_minus: f64,
    pub sigma_min_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRangeReport {
    pub rows: Vec<TruncationRow>,
    pub divergence: DivergenceVerdict,
    pub pass: bool,
}

/// Finite stand-in for the dense-range argument on a grading: partial sums
/// of `c_n^{-1}` across truncations plus invertibility of `I -+ B` on each
/// truncation.
pub fn graded_dense_range_certificate(g: &GradedOperator, bounds: &GradedBoundSpec) -> Result<DenseRangeReport> {
    let c = match bounds {
        GradedBoundSpec::Sequences { c, .. } => c,
        GradedBoundSpec::Power { .. } => {
            return Err(Error::InvalidBounds(
                "dense-range certificate needs sequences mode".into(),
            ))
        }
    };
    bounds.validate(g.level_count())?;
    let divergence = divergence_verdict(&c[..g.level_count()]);
    let mut rows = Vec::with_capacity(g.level_count());
    for levels in 1..=g.level_count() {
        let b = g.assemble_b(levels);
        let id = DMatrix::identity(b.nrows(), b.ncols());
        rows.push(TruncationRow {
            levels,
            lower_bound: 1.0 / c[levels - 1],
            partial_sum: divergence.partial_sums[levels - 1],
            sigma_min_minus: linalg::min_singular_value(&(&id - &b)),
            sigma_min_plus: linalg::min_singular_value(&(&id + &b)),
        });
    }
    let full_rank = rows
        .iter()
        .all(|r| r.sigma_min_minus >= 1.0 - BOUND_SLACK && r.sigma_min_plus >= 1.0 - BOUND_SLACK);
    Ok(DenseRangeReport {
        pass: divergence.divergent && full_rank,
        rows,
        divergence,
    })
}

/// `(lambda + S)^{-1/2} A (lambda + S)^{-1/2} x`.
pub fn b_lambda_apply(
    split: &OperatorSplit,
    spec: &SpectralData,
    lambda: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("B_lambda needs lambda > 0, got {lambda}")));
    }
    let w = fractional_power_apply(spec, lambda, Exponent::NegHalf, x)?;
    let aw = &split.a * w;
    // `A` kills `Ker(S)` and is skew, so `A w` has no kernel part; drop the rounding.
    Ok(spec.apply_fn(&aw, |mu, kernel| (!kernel).then(|| 1.0 / (lambda + mu.max(0.0)).sqrt())))
}

/// `S^{-1/2} A S^{-1/2} x` with the kernel cut off. Only `x` is checked for
/// kernel mass.
pub fn b_apply(split: &OperatorSplit, spec: &SpectralData, x: &DVector<f64>) -> Result<DVector<f64>> {
    let w = fractional_power_apply(spec, 0.0, Exponent::NegHalf, x)?;
    let aw = &split.a * w;
    Ok(spec.apply_fn(&aw, |mu, kernel| (!kernel).then(|| 1.0 / mu.sqrt())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewCertificate {
    pub dim: usize,
    pub sigma_min_minus: f64,
    pub sigma_min_plus: f64,
    /// Smallest singular value of `B`.
    pub s_min: f64,
    /// `sqrt(1 + s_min^2)`.
    pub expected: f64,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Checks that `I - B` and `I + B` have full range. `b` must be written in a
/// pi-orthonormal frame (e.g. [`SectorFrame::b`]).
pub fn skew_selfadjoint_certificate(b: &DMatrix<f64>) -> Result<SkewCertificate> {
    let asymmetry = linalg::skew_defect(b);
    if asymmetry > 1e-10 {
        return Err(Error::NotSkew { asymmetry });
    }
    let dim = b.nrows();
    if dim == 0 {
        return Ok(SkewCertificate {
            dim,
            sigma_min_minus: 1.0,
            sigma_min_plus: 1.0,
            s_min: 0.0,
            expected: 1.0,
            max_deviation: 0.0,
            pass: true,
        });
    }
    let id = DMatrix::identity(dim, dim);
    let sigma_min_minus = linalg::min_singular_value(&(&id - b));
    let sigma_min_plus = linalg::min_singular_value(&(&id + b));
    let s_min = linalg::min_singular_value(b);
    let expected = (1.0 + s_min * s_min).sqrt();
    let max_deviation = (sigma_min_minus - expected)
        .abs()
        .max((sigma_min_plus - expected).abs());
    Ok(SkewCertificate {
        dim,
        sigma_min_minus,
        sigma_min_plus,
        s_min,
        expected,
        max_deviation,
        pass: sigma_min_minus >= 1.0 - BOUND_SLACK && sigma_min_plus >= 1.0 - BOUND_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RscReport {
    pub lambdas: Vec<f64>,
    /// `errors[v][k] = |B_{lambda_k} x_v - B x_v|_pi`.
    pub errors: Vec<Vec<f64>>,
    pub final_max_error: f64,
    pub monotone: bool,
    pub tol: f64,
    pub k_lambda_norms: Vec<f64>,
    pub k_norm: f64,
    pub certificate: SkewCertificate,
    pub pass: bool,
}

/// Differences below this (relative to `|x|`) are rounding, not growth.
const MONOTONE_FLOOR: f64 = 1e-12;

pub fn rsc_convergence_check(
    split: &OperatorSplit,
    spec: &SpectralData,
    model: &GeneratorModel,
    test_vectors: &[DVector<f64>],
    cfg: &SweepConfig,
) -> Result<RscReport> {
    cfg.validate()?;
    let frame = SectorFrame::new(split, spec);
    let lambdas = cfg.lambdas();
    let mut errors = Vec::with_capacity(test_vectors.len());
    for x in test_vectors {
        if x.len() != model.n() {
            return Err(Error::DimensionMismatch {
                expected: model.n(),
                got: x.len(),
            });
        }
        let bx = b_apply(split, spec, x)?;
        let mut row = Vec::with_capacity(lambdas.len());
        for &lambda in &lambdas {
            let diff = b_lambda_apply(split, spec, lambda, x)? - &bx;
            row.push(linalg::norm(model.pi(), &diff));
        }
        errors.push(row);
    }
    let final_max_error = errors.iter().filter_map(|r| r.last().copied()).fold(0.0, f64::max);
    let monotone = errors.iter().zip(test_vectors).all(|(r, x)| {
        let floor = MONOTONE_FLOOR * linalg::norm(model.pi(), x).max(1.0);
        r.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + floor)
    });
    let k_lambda_norms = lambdas
        .iter()
        .map(|&l| frame.k_lambda(l).map(|k| linalg::spectral_norm(&k)))
        .collect::<Result<Vec<_>>>()?;
    let k_norm = linalg::spectral_norm(&frame.k_lambda(0.0)?);
    let certificate = skew_selfadjoint_certificate(&frame.b())?;
    Ok(RscReport {
        pass: final_max_error < cfg.tol_b && certificate.pass,
        lambdas,
        errors,
        final_max_error,
        monotone,
        tol: cfg.tol_b,
        k_lambda_norms,
        k_norm,
        certificate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub lambdas: Vec<f64>,
    pub k_lambda_norms: Vec<f64>,
    pub k_norm: f64,
    /// Relative residual of `R_lambda f = (lambda + S)^{-1/2} K_lambda (lambda + S)^{-1/2} f`.
    pub master_residuals: Vec<f64>,
    /// `|K_lambda g - K g|_pi` with `g = S^{-1/2} f`.
    pub convergence_errors: Vec<f64>,
    /// `|S^{1/2} u_{lambda_min} - K g|_pi`.
    pub v_mismatch: f64,
    pub pass: bool,
}

pub const CONTRACTION_SLACK: f64 = 1e-10;
pub const MASTER_IDENTITY_TOL: f64 = 1e-9;

pub fn k_operators_check(
    split: &OperatorSplit,
    spec: &SpectralData,
    model: &GeneratorModel,
    f: &Observable,
    cfg: &SweepConfig,
) -> Result<KReport> {
    cfg.validate()?;
    let frame = SectorFrame::new(split, spec);
    let pi = model.pi();
    let lambdas = cfg.lambdas();
    let g = fractional_power_apply(spec, 0.0, Exponent::NegHalf, f.values())?;
    let gc = frame.coords(&g);
    let fc = frame.coords(f.values());
    let k = frame.k_lambda(0.0)?;
    let kg = &k * &gc;

    let mut k_lambda_norms = Vec::with_capacity(lambdas.len());
    let mut master_residuals = Vec::with_capacity(lambdas.len());
    let mut convergence_errors = Vec::with_capacity(lambdas.len());
    let mut last_u = None;
    for &lambda in &lambdas {
        let kl = frame.k_lambda(lambda)?;
        k_lambda_norms.push(linalg::spectral_norm(&kl));

        let w = frame.eigenvalues().map(|m| 1.0 / (lambda + m).sqrt());
        let via_k = frame.synthesize(&w.component_mul(&(&kl * w.component_mul(&fc))));
        let u = resolvent_apply(model, lambda, f)?;
        let scale = linalg::norm(pi, &u);
        let diff = linalg::norm(pi, &(&u - via_k));
        master_residuals.push(if scale > 0.0 { diff / scale } else { diff });

        convergence_errors.push((&kl * &gc - &kg).norm());
        last_u = Some(u);
    }
    let u = last_u.expect("sweep has at least one lambda");
    let v_sweep = frame.coords(&fractional_power_apply(spec, 0.0, Exponent::Half, &u)?);
    let v_mismatch = (v_sweep - &kg).norm();
    let k_norm = linalg::spectral_norm(&k);

    let pass = k_lambda_norms.iter().all(|&x| x <= 1.0 + CONTRACTION_SLACK)
        && k_norm <= 1.0 + CONTRACTION_SLACK
        && master_residuals.iter().all(|&r| r <= MASTER_IDENTITY_TOL)
        && convergence_errors.last().is_some_and(|&e| e <= cfg.tol_b)
        && v_mismatch <= cfg.tol_b;
    Ok(KReport {
        lambdas,
        k_lambda_norms,
        k_norm,
        master_residuals,
        convergence_errors,
        v_mismatch,
        pass,
    })
}

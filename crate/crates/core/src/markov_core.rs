//! Finite-state generators, their stationary law and the symmetric /
//! antisymmetric split `G = -S + A` in `L^2(pi)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Relative tolerances used across the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Row sums and `pi Q` residual, relative to `max |Q|`.
    pub row: f64,
    /// Observable pi-mean, relative to `|f|_inf`.
    pub mean: f64,
    /// Kernel cutoff for eigenvalues of `S`, relative to its largest eigenvalue.
    pub kernel: f64,
    /// Block leakage allowed by a grading, relative to `max(1, |S|_F, |A|_F)`.
    pub grade: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            row: 1e-9,
            mean: 1e-10,
            kernel: 1e-8,
            grade: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    q: DMatrix<f64>,
    pi: DVector<f64>,
    labels: Option<Vec<String>>,
    tol: Tolerances,
    signed: bool,
}

impl GeneratorModel {
    /// Assembles a model with no validation at all. Used for diagnostics on
    /// inputs that are known to be defective (e.g. reducible chains).
    pub fn from_raw_parts(q: DMatrix<f64>, pi: DVector<f64>) -> Self {
        let signed = has_negative_off_diagonal(&q);
        Self {
            q,
            pi,
            labels: None,
            tol: Tolerances::default(),
            signed,
        }
    }

    /// An operator-level model: `Q` annihilates constants and `pi Q = 0`, but
    /// off-diagonal entries may be negative. Linear-algebra diagnostics work
    /// on such models; simulation does not.
    pub fn operator_model(q: DMatrix<f64>, pi: DVector<f64>, tol: Tolerances) -> Result<Self> {
        check_shape(&q)?;
        check_row_sums(&q, tol.row)?;
        verify_pi(&q, &pi, tol.row)?;
        let signed = has_negative_off_diagonal(&q);
        Ok(Self {
            q,
            pi,
            labels: None,
            tol,
            signed,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// False for operator models with negative off-diagonal entries.
    pub fn is_markov(&self) -> bool {
        !self.signed
    }

    /// Detailed balance `pi_i Q_ij = pi_j Q_ji`, checked relative to `max |Q|`.
    pub fn is_reversible(&self, rel_tol: f64) -> bool {
        let scale = self.q.amax().max(f64::MIN_POSITIVE);
        let n = self.n();
        (0..n).all(|i| {
            (0..n).all(|j| (self.pi[i] * self.q[(i, j)] - self.pi[j] * self.q[(j, i)]).abs() <= rel_tol * scale)
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }
}

/// A function on the state space with zero pi-mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    values: DVector<f64>,
}

impl Observable {
    /// Validates the pi-mean against `tol.mean * |f|_inf`.
    pub fn new(f: DVector<f64>, model: &GeneratorModel) -> Result<Self> {
        model.check_len(f.len())?;
        let mean = linalg::mean(model.pi(), &f);
        let tol = model.tol.mean * f.amax();
        if mean.abs() > tol {
            return Err(Error::NotMeanZero { mean, tol });
        }
        Ok(Self { values: f })
    }

    pub fn zero(model: &GeneratorModel) -> Self {
        Self {
            values: DVector::zeros(model.n()),
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: &self.values * c,
        }
    }
}

/// `S = -(G + G*)/2`, `A = (G - G*)/2` with `G* = Pi^-1 Q^T Pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSplit {
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub g_star: DMatrix<f64>,
}

impl OperatorSplit {
    pub fn from_generator(q: &DMatrix<f64>, pi: &DVector<f64>) -> Self {
        let n = q.nrows();
        let g_star = DMatrix::from_fn(n, n, |i, j| pi[j] * q[(j, i)] / pi[i]);
        let s = -(q + &g_star) * 0.5;
        let a = (q - &g_star) * 0.5;
        Self { s, a, g_star }
    }

    /// `-S + A`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.a - &self.s
    }

    pub fn is_reversible(&self, tol: f64) -> bool {
        self.a.norm() <= tol
    }

    /// Same split with `A` replaced by `c A`.
    pub fn with_scaled_skew(&self, c: f64) -> Self {
        let a = &self.a * c;
        let g_star = -&self.s - &a;
        Self {
            s: self.s.clone(),
            a,
            g_star,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub kernel_dim: usize,
    pub kernel_is_constants: bool,
    /// Smallest eigenvalue of `S` above the kernel cutoff.
    pub spectral_gap: Option<f64>,
    pub kernel_tol: f64,
    pub pass: bool,
}

pub fn load_generator(raw: DMatrix<f64>, pi: Option<DVector<f64>>) -> Result<GeneratorModel> {
    load_generator_with(raw, pi, Tolerances::default())
}

pub fn load_generator_with(raw: DMatrix<f64>, pi: Option<DVector<f64>>, tol: Tolerances) -> Result<GeneratorModel> {
    check_shape(&raw)?;
    let n = raw.nrows();
    for i in 0..n {
        for j in 0..n {
            let v = raw[(i, j)];
            if i != j && v < 0.0 {
                return Err(Error::NegativeOffDiagonal {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    check_row_sums(&raw, tol.row)?;
    check_irreducible(&raw)?;
    let pi = match pi {
        Some(pi) => {
            verify_pi(&raw, &pi, tol.row)?;
            pi
        }
        None => stationary_distribution_with(&raw, tol.row)?,
    };
    Ok(GeneratorModel {
        q: raw,
        pi,
        labels: None,
        tol,
        signed: false,
    })
}

pub fn stationary_distribution(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    stationary_distribution_with(q, Tolerances::default().row)
}

/// Null vector of `Q^T` from its smallest singular triple, normalized to a
/// probability vector.
fn stationary_distribution_with(q: &DMatrix<f64>, row_tol: f64) -> Result<DVector<f64>> {
    check_shape(q)?;
    check_irreducible(q)?;
    let n = q.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let svd = q.transpose().svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::SolveFailure("SVD returned no right singular vectors".into()))?;
    let sv = &svd.singular_values;
    let k = sv.imin();
    let scale = q.amax();
    let second = sv
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, &s)| s)
        .fold(f64::INFINITY, f64::min);
    if second <= row_tol * scale {
        return Err(Error::Reducible(format!(
            "null space of Q^T has dimension > 1 (second singular value {second:e})"
        )));
    }
    let mut pi: DVector<f64> = v_t.row(k).transpose();
    let total = pi.sum();
    pi /= total;
    if let Some(bad) = pi.iter().position(|&p| p <= 0.0) {
        return Err(Error::Reducible(format!(
            "stationary vector has nonpositive entry at state {bad}"
        )));
    }
    Ok(pi)
}

pub fn pi_inner(f: &DVector<f64>, g: &DVector<f64>, model: &GeneratorModel) -> Result<f64> {
    model.check_len(f.len())?;
    model.check_len(g.len())?;
    Ok(linalg::inner(model.pi(), f, g))
}

pub fn decompose(model: &GeneratorModel) -> OperatorSplit {
    OperatorSplit::from_generator(model.q(), model.pi())
}

pub fn check_ergodicity(split: &OperatorSplit, model: &GeneratorModel) -> Result<ErgodicityReport> {
    let pi = model.pi();
    let sym = linalg::to_sym_frame(&split.s, pi);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(sym, 1e-15, 10_000).ok_or(Error::EigSolverFailure)?;
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let kernel_tol = model.tolerances().kernel * top;
    let root_pi = pi.map(f64::sqrt);
    let mut kernel_dim = 0;
    let mut constant_overlap = 0.0;
    let mut gap: Option<f64> = None;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() <= kernel_tol {
            kernel_dim += 1;
            constant_overlap += eig.eigenvectors.column(k).dot(&root_pi).powi(2);
        } else {
            gap = Some(gap.map_or(ev, |g| g.min(ev)));
        }
    }
    let kernel_is_constants = kernel_dim == 1 && (constant_overlap - 1.0).abs() <= 1e-8;
    Ok(ErgodicityReport {
        kernel_dim,
        kernel_is_constants,
        spectral_gap: gap,
        kernel_tol,
        pass: kernel_is_constants,
    })
}

pub fn project_mean_zero(f: &DVector<f64>, model: &GeneratorModel) -> Result<Observable> {
    model.check_len(f.len())?;
    let pi = model.pi();
    let mut g = f.add_scalar(-linalg::mean(pi, f));
    // one more pass removes the rounding left by the first subtraction
    let residual = linalg::mean(pi, &g);
    g.add_scalar_mut(-residual);
    Ok(Observable { values: g })
}

fn check_shape(q: &DMatrix<f64>) -> Result<()> {
    if q.nrows() != q.ncols() {
        return Err(Error::NonSquare {
            rows: q.nrows(),
            cols: q.ncols(),
        });
    }
    if q.nrows() == 0 {
        return Err(Error::Empty);
    }
    for i in 0..q.nrows() {
        for j in 0..q.ncols() {
            if !q[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_row_sums(q: &DMatrix<f64>, rel: f64) -> Result<()> {
    let tol = rel * q.amax();
    for (i, row) in q.row_iter().enumerate() {
        let sum = row.sum();
        if sum.abs() > tol {
            return Err(Error::RowSumNonzero { row: i, sum, tol });
        }
    }
    Ok(())
}

fn verify_pi(q: &DMatrix<f64>, pi: &DVector<f64>, rel: f64) -> Result<()> {
    if pi.len() != q.nrows() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            got: pi.len(),
        });
    }
    if let Some(i) = pi.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::PiMismatch(format!("entry {i} is not strictly positive")));
    }
    if (pi.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::PiMismatch(format!("entries sum to {}", pi.sum())));
    }
    let tol = rel * q.amax();
    let residual = (q.transpose() * pi).amax();
    if residual > tol {
        return Err(Error::PiMismatch(format!("|pi Q|_inf = {residual:e} exceeds {tol:e}")));
    }
    Ok(())
}

fn has_negative_off_diagonal(q: &DMatrix<f64>) -> bool {
    (0..q.nrows()).any(|i| (0..q.ncols()).any(|j| i != j && q[(i, j)] < 0.0))
}

/// Strong connectivity of the rate graph `i -> j` iff `Q_ij > 0`.
fn check_irreducible(q: &DMatrix<f64>) -> Result<()> {
    let n = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let rate = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    for forward in [true, false] {
        if let Some(j) = reach(forward).iter().position(|s| !s) {
            let msg = if forward {
                format!("state {j} is not reachable from state 0")
            } else {
                format!("state 0 is not reachable from state {j}")
            };
            return Err(Error::Reducible(msg));
        }
    }
    Ok(())
}

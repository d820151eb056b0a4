//! Built-in models, addressable by name (`2state(a,b)`, `3cycle`,
//! `ladder(N,profile)`, `random(n,seed)`).

use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::markov_core::{load_generator, project_mean_zero, GeneratorModel, Observable, Tolerances};
use crate::sector_conditions::Grading;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BuiltinModel {
    pub name: String,
    pub model: GeneratorModel,
    pub observable: Observable,
    pub grading: Option<Grading>,
}

/// `Q = [[-a, a], [b, -b]]` with `f = (a, -b)`, an eigenvector of `-Q` for
/// `a + b`. The asymptotic variance is `2ab / (a + b)`.
pub fn two_state(a: f64, b: f64) -> Result<BuiltinModel> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "2state rates must be positive, got ({a}, {b})"
        )));
    }
    let model = load_generator(dmatrix![-a, a; b, -b], None)?;
    let observable = project_mean_zero(&DVector::from_vec(vec![a, -b]), &model)?;
    Ok(BuiltinModel {
        name: format!("2state({a},{b})"),
        model,
        observable,
        grading: None,
    })
}

/// Deterministic rotation `0 -> 1 -> 2 -> 0` at unit rate, `f = (1, -1, 0)`.
pub fn three_cycle() -> Result<BuiltinModel> {
    let model = load_generator(dmatrix![-1.0, 1.0, 0.0; 0.0, -1.0, 1.0; 1.0, 0.0, -1.0], None)?;
    let observable = Observable::new(DVector::from_vec(vec![1.0, -1.0, 0.0]), &model)?;
    Ok(BuiltinModel {
        name: "3cycle".into(),
        model,
        observable,
        grading: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderProfile {
    /// `s_n = 1`, `a_n = 1`.
    Unit,
    /// `s_n = 1`, `a_n = sqrt(n)`.
    Sqrt,
    /// `s_n = 1`, `a_n = n`.
    Linear,
}

impl LadderProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "unit" => Ok(Self::Unit),
            "sqrt" => Ok(Self::Sqrt),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidConfig(format!(
                "unknown ladder profile `{other}` (expected unit, sqrt or linear)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Unit => "unit",
            Self::Sqrt => "sqrt",
            Self::Linear => "linear",
        }
    }

    pub fn coefficients(&self, levels: usize) -> (Vec<f64>, Vec<f64>) {
        let s = vec![1.0; levels];
        let a = (1..levels)
            .map(|n| {
                let n = n as f64;
                match self {
                    Self::Unit => 1.0,
                    Self::Sqrt => n.sqrt(),
                    Self::Linear => n,
                }
            })
            .collect();
        (s, a)
    }
}

/// pi-orthonormal Helmert basis of the mean-zero functions on `n` states
/// under the uniform law: `e_k` is `1` on the first `k` states and `-k` on
/// state `k`, rescaled.
fn helmert_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n - 1, |i, col| {
        let k = col + 1;
        let scale = (n as f64 / (k * (k + 1)) as f64).sqrt();
        match i.cmp(&k) {
            std::cmp::Ordering::Less => scale,
            std::cmp::Ordering::Equal => -(k as f64) * scale,
            std::cmp::Ordering::Greater => 0.0,
        }
    })
}

/// The ladder: levels `H_n = span{e_n}` with `S e_n = s_n e_n` and
/// `A e_n = a_n e_{n+1} - a_{n-1} e_{n-1}`, uniform law on `levels + 1`
/// states, band width 1. `s` has one entry per level, `a` one fewer.
///
/// The resulting `Q = -S + A` annihilates constants and preserves the uniform
/// law but may have negative off-diagonal entries, so it is an operator model.
pub fn ladder_from(s: &[f64], a: &[f64]) -> Result<BuiltinModel> {
    let levels = s.len();
    if levels == 0 || a.len() + 1 != levels {
        return Err(Error::InvalidConfig(format!(
            "ladder needs N >= 1 values of s and N - 1 values of a, got {} and {}",
            levels,
            a.len()
        )));
    }
    if s.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidConfig("ladder s_n must be positive".into()));
    }
    let n = levels + 1;
    let e = helmert_basis(n);
    let pi = DVector::from_element(n, 1.0 / n as f64);
    let w = 1.0 / n as f64;
    let mut s_op = DMatrix::zeros(n, n);
    let mut a_op = DMatrix::zeros(n, n);
    for k in 0..levels {
        let ek = e.column(k);
        s_op += ek * ek.transpose() * (s[k] * w);
        if k + 1 < levels {
            let up = e.column(k + 1);
            a_op += (up * ek.transpose() - ek * up.transpose()) * (a[k] * w);
        }
    }
    let q = a_op - s_op;
    let model = GeneratorModel::operator_model(q, pi, Tolerances::default())?;
    let observable = Observable::new(e.column(0).into_owned(), &model)?;
    let bases = (0..levels).map(|k| e.columns(k, 1).into_owned()).collect();
    let grading = Grading::from_bases(bases, 1, &model)?;
    Ok(BuiltinModel {
        name: String::new(),
        model,
        observable,
        grading: Some(grading),
    })
}

pub fn ladder(levels: usize, profile: LadderProfile) -> Result<BuiltinModel> {
    let (s, a) = profile.coefficients(levels);
    let mut m = ladder_from(&s, &a)?;
    m.name = format!("ladder({levels},{})", profile.name());
    Ok(m)
}

/// A non-reversible irreducible chain: a ring `i -> i+1` plus random extra
/// edges, rates uniform in `[0.2, 2)`; the observable is a centered Gaussian
/// vector. Deterministic in `seed`.
pub fn random(n: usize, seed: u64) -> Result<BuiltinModel> {
    if n < 2 {
        return Err(Error::InvalidConfig("random model needs at least 2 states".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_edge = (4.0 / n as f64).min(0.5);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, (i + 1) % n)] += rng.random_range(0.2..2.0);
        for j in 0..n {
            if j != i && rng.random::<f64>() < p_edge {
                q[(i, j)] += rng.random_range(0.2..2.0);
            }
        }
        let out: f64 = q.row(i).sum();
        q[(i, i)] = -out;
    }
    let model = load_generator(q, None)?;
    let raw = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let observable = project_mean_zero(&raw, &model)?;
    Ok(BuiltinModel {
        name: format!("random({n},{seed})"),
        model,
        observable,
        grading: None,
    })
}

fn args(inner: &str) -> Vec<&str> {
    inner.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {what} from `{s}`")))
}

/// Parses a builtin name, with or without the `builtin:` prefix.
pub fn parse_builtin(spec: &str) -> Result<BuiltinModel> {
    let spec = spec.trim();
    let spec = spec.strip_prefix("builtin:").unwrap_or(spec);
    let (head, inner) = match spec.find('(') {
        Some(open) => {
            let body = spec[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::InvalidConfig(format!("missing `)` in `{spec}`")))?;
            (&spec[..open], args(body))
        }
        None => (spec, Vec::new()),
    };
    match (head, inner.as_slice()) {
        ("2state", []) => two_state(1.0, 2.0),
        ("2state", [a, b]) => two_state(num(a, "rate a")?, num(b, "rate b")?),
        ("3cycle", []) => three_cycle(),
        ("ladder", [n]) => ladder(num(n, "level count")?, LadderProfile::Unit),
        ("ladder", [n, p]) => ladder(num(n, "level count")?, LadderProfile::parse(p)?),
        ("random", [n, seed]) => random(num(n, "state count")?, num(seed, "seed")?),
        _ => Err(Error::InvalidConfig(format!(
            "unknown builtin `{spec}` (expected 2state(a,b), 3cycle, ladder(N,profile) or random(n,seed))"
        ))),
    }
}

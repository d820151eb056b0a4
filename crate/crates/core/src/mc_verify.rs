//! Monte Carlo cross-check: exact jump-chain simulation, the rescaled
//! additive functional `N^{-1/2} int_0^N f(eta_s) ds`, and the Dynkin
//! martingale built from the Poisson corrector.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::markov_core::{GeneratorModel, Observable, OperatorSplit};
use crate::par::ordered_map;
use crate::spectral_ops::poisson_solve;
use crate::{linalg, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Start time of each holding interval; `jump_times[0] = 0`.
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl Trajectory {
    /// Time spent in each state over `[0, t]`.
    pub fn occupation(&self, n_states: usize, t: f64) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (k, &s) in self.states.iter().enumerate() {
            let start = self.jump_times[k];
            if start >= t {
                break;
            }
            let end = self.jump_times.get(k + 1).copied().unwrap_or(self.horizon).min(t);
            occ[s] += end - start;
        }
        occ
    }

    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }
}

/// Per-trajectory stream: `ChaCha8(base_seed)` on stream `index`.
pub fn trajectory_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartState {
    Stationary,
    Fixed(usize),
}

/// Exit rates and cumulative jump distributions, precomputed once per model.
struct JumpKernel {
    rates: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
    pi_cumulative: Vec<f64>,
}

impl JumpKernel {
    fn new(model: &GeneratorModel) -> Result<Self> {
        if !model.is_markov() {
            return Err(Error::NotMarkov);
        }
        let q = model.q();
        let n = model.n();
        let mut rates = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        for i in 0..n {
            let out: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
            let mut acc = 0.0;
            let cum = (0..n)
                .map(|j| {
                    if j != i {
                        acc += q[(i, j)];
                    }
                    acc / out
                })
                .collect();
            rates.push(out);
            cumulative.push(cum);
        }
        let mut acc = 0.0;
        let pi_cumulative = model.pi().iter().map(|p| {
            acc += p;
            acc
        });
        Ok(Self {
            rates,
            cumulative,
            pi_cumulative: pi_cumulative.collect(),
        })
    }

    fn pick(cum: &[f64], u: f64) -> usize {
        cum.partition_point(|&c| c <= u).min(cum.len() - 1)
    }

    fn start(&self, rng: &mut ChaCha8Rng, start: StartState) -> usize {
        match start {
            StartState::Stationary => Self::pick(
                &self.pi_cumulative,
                rng.random::<f64>() * self.pi_cumulative.last().unwrap(),
            ),
            StartState::Fixed(i) => i,
        }
    }

    /// Walks the path on `[0, horizon]`, calling `visit(state, start, end)`
    /// for each holding interval. Returns the state at `horizon`.
    fn walk(
        &self,
        rng: &mut ChaCha8Rng,
        start: StartState,
        horizon: f64,
        mut visit: impl FnMut(usize, f64, f64),
    ) -> usize {
        let mut state = self.start(rng, start);
        let mut t = 0.0;
        loop {
            let rate = self.rates[state];
            let hold = if rate > 0.0 {
                let e: f64 = Exp1.sample(rng);
                e / rate
            } else {
                f64::INFINITY
            };
            let end = t + hold;
            if end >= horizon {
                visit(state, t, horizon);
                return state;
            }
            visit(state, t, end);
            let u: f64 = rng.random();
            state = Self::pick(&self.cumulative[state], u);
            t = end;
        }
    }
}

pub fn simulate_trajectory(model: &GeneratorModel, horizon: f64, seed: u64) -> Result<Trajectory> {
    simulate_with(
        model,
        horizon,
        &mut ChaCha8Rng::seed_from_u64(seed),
        StartState::Stationary,
    )
}

pub fn simulate_with(
    model: &GeneratorModel,
    horizon: f64,
    rng: &mut ChaCha8Rng,
    start: StartState,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
    }
    if let StartState::Fixed(i) = start {
        if i >= model.n() {
            return Err(Error::InvalidConfig(format!("start state {i} out of range")));
        }
    }
    let kernel = JumpKernel::new(model)?;
    let mut jump_times = Vec::new();
    let mut states = Vec::new();
    kernel.walk(rng, start, horizon, |s, t0, _| {
        jump_times.push(t0);
        states.push(s);
    });
    Ok(Trajectory {
        jump_times,
        states,
        horizon,
    })
}

/// `N^{-1/2} int_0^N f(eta_s) ds`, summed exactly over holding intervals.
pub fn additive_functional(traj: &Trajectory, f: &Observable, n: f64) -> Result<f64> {
    if traj.horizon < n {
        return Err(Error::HorizonTooShort {
            horizon: traj.horizon,
            requested: n,
        });
    }
    let fv = f.values();
    let mut total = 0.0;
    for (k, &s) in traj.states.iter().enumerate() {
        let start = traj.jump_times[k];
        if start >= n {
            break;
        }
        let end = traj.jump_times.get(k + 1).copied().unwrap_or(traj.horizon).min(n);
        total += fv[s] * (end - start);
    }
    Ok(total / n.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub horizon: f64,
    pub base_seed: u64,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub mean: f64,
    pub mean_std_error: f64,
    pub variance: f64,
    /// Normal-theory 95% interval for the variance.
    pub variance_ci: (f64, f64),
    /// Kolmogorov-Smirnov distance of the standardized sample to N(0, 1);
    /// `None` when the sample has zero variance.
    pub ks_statistic: Option<f64>,
    /// Asymptotic 1% critical value `1.628 / sqrt(n)`.
    pub ks_critical_1pct: f64,
}

fn check_ensemble(n: f64, n_traj: usize) -> Result<()> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidConfig(format!("horizon must be positive, got {n}")));
    }
    if n_traj == 0 {
        return Err(Error::InvalidConfig("trajectories must be positive".into()));
    }
    Ok(())
}

pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn ks_against_normal(values: &[f64], mean: f64, sd: f64) -> f64 {
    let normal = Normal::standard();
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let k = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / k).abs().max(((i + 1) as f64 / k - c).abs())
        })
        .fold(0.0, f64::max)
}

fn variance_ci(var: f64, n: usize) -> (f64, f64) {
    if n < 2 || var == 0.0 {
        return (var, var);
    }
    let dof = (n - 1) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    (dof * var / chi.inverse_cdf(0.975), dof * var / chi.inverse_cdf(0.025))
}

/// Rescaled additive functionals of `n_traj` independent stationary paths.
/// Trajectory `k` uses [`trajectory_rng`]`(base_seed, k)`, so results do not
/// depend on the thread count.
pub fn variance_estimate(
    model: &GeneratorModel,
    f: &Observable,
    n: f64,
    n_traj: usize,
    base_seed: u64,
) -> Result<EnsembleStats> {
    check_ensemble(n, n_traj)?;
    let kernel = JumpKernel::new(model)?;
    let fv = f.values();
    let scale = 1.0 / n.sqrt();
    let values = ordered_map(n_traj, |k| {
        let mut rng = trajectory_rng(base_seed, k as u64);
        let mut integral = 0.0;
        kernel.walk(&mut rng, StartState::Stationary, n, |s, t0, t1| {
            integral += fv[s] * (t1 - t0);
        });
        integral * scale
    });
    Ok(EnsembleStats::from_values(values, n, base_seed))
}

impl EnsembleStats {
    /// Summary statistics of rescaled additive functionals.
    pub fn from_values(values: Vec<f64>, horizon: f64, base_seed: u64) -> Self {
        let n_traj = values.len();
        let (mean, variance) = mean_and_variance(&values);
        let ks_statistic = (variance > 0.0).then(|| ks_against_normal(&values, mean, variance.sqrt()));
        EnsembleStats {
            n_traj,
            horizon,
            base_seed,
            mean,
            mean_std_error: (variance / n_traj as f64).sqrt(),
            variance,
            variance_ci: variance_ci(variance, n_traj),
            ks_statistic,
            ks_critical_1pct: 1.628 / (n_traj as f64).sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    /// `int_0^N f(eta_s) ds`.
    pub integral: f64,
    /// `M(N) = u(eta_N) - u(eta_0) + int_0^N f`.
    pub martingale: f64,
    /// `u(eta_0) - u(eta_N)`, the gap between the integral and `M(N)`.
    pub corrector_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub horizon: f64,
    pub n_traj: usize,
    pub sigma2_oracle: f64,
    pub mean_m: f64,
    pub mean_m_std_error: f64,
    /// `|mean| <= 3 se`.
    pub mean_ok: bool,
    /// Sample `E[M(N)^2] / N`.
    pub second_moment: f64,
    /// 95% normal interval for `E[M(N)^2] / N`.
    pub second_moment_ci: (f64, f64),
    pub ci_covers_oracle: bool,
    pub relative_error: f64,
    /// `E[(int f - M(N))^2] / N`.
    pub approximation_error: f64,
    /// `4 max u^2 / N`.
    pub approximation_bound: f64,
    #[serde(skip)]
    pub samples: Vec<PathSample>,
}

pub fn path_samples(
    model: &GeneratorModel,
    f: &Observable,
    corrector: &DVector<f64>,
    n: f64,
    n_traj: usize,
    base_seed: u64,
) -> Result<Vec<PathSample>> {
    check_ensemble(n, n_traj)?;
    let kernel = JumpKernel::new(model)?;
    let fv = f.values();
    Ok(ordered_map(n_traj, |k| {
        let mut rng = trajectory_rng(base_seed, k as u64);
        let mut integral = 0.0;
        let mut first = None;
        let last = kernel.walk(&mut rng, StartState::Stationary, n, |s, t0, t1| {
            first.get_or_insert(s);
            integral += fv[s] * (t1 - t0);
        });
        let gap = corrector[first.unwrap_or(last)] - corrector[last];
        PathSample {
            integral,
            martingale: integral - gap,
            corrector_gap: gap,
        }
    }))
}

pub fn martingale_check(
    model: &GeneratorModel,
    split: &OperatorSplit,
    f: &Observable,
    n: f64,
    n_traj: usize,
    base_seed: u64,
) -> Result<MartingaleReport> {
    let u = poisson_solve(model, f)?;
    let sigma2_oracle = 2.0 * linalg::inner(model.pi(), &u, &(&split.s * &u));
    let samples = path_samples(model, f, &u, n, n_traj, base_seed)?;
    let k = n_traj as f64;

    let m: Vec<f64> = samples.iter().map(|s| s.martingale).collect();
    let (mean_m, var_m) = mean_and_variance(&m);
    let mean_m_std_error = (var_m / k).sqrt();

    let sq: Vec<f64> = m.iter().map(|x| x * x / n).collect();
    let (second_moment, var_sq) = mean_and_variance(&sq);
    let half = 1.96 * (var_sq / k).sqrt();
    let second_moment_ci = (second_moment - half, second_moment + half);

    let approximation_error = samples.iter().map(|s| s.corrector_gap.powi(2)).sum::<f64>() / k / n;
    let relative_error = if sigma2_oracle > 0.0 {
        (second_moment - sigma2_oracle).abs() / sigma2_oracle
    } else {
        second_moment.abs()
    };
    Ok(MartingaleReport {
        horizon: n,
        n_traj,
        sigma2_oracle,
        mean_m,
        mean_m_std_error,
        mean_ok: mean_m.abs() <= 3.0 * mean_m_std_error,
        second_moment,
        second_moment_ci,
        ci_covers_oracle: second_moment_ci.0 <= sigma2_oracle && sigma2_oracle <= second_moment_ci.1,
        relative_error,
        approximation_error,
        approximation_bound: 4.0 * u.amax().powi(2) / n,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationProfile {
    pub horizons: Vec<f64>,
    pub errors: Vec<f64>,
    pub decreasing: bool,
}

/// `N^{-1} E[(int_0^N f - M(N))^2]` over increasing horizons.
pub fn approximation_profile(
    model: &GeneratorModel,
    f: &Observable,
    horizons: &[f64],
    n_traj: usize,
    base_seed: u64,
) -> Result<ApproximationProfile> {
    let u = poisson_solve(model, f)?;
    let mut errors = Vec::with_capacity(horizons.len());
    for &n in horizons {
        let s = path_samples(model, f, &u, n, n_traj, base_seed)?;
        errors.push(s.iter().map(|p| p.corrector_gap.powi(2)).sum::<f64>() / n_traj as f64 / n);
    }
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    Ok(ApproximationProfile {
        horizons: horizons.to_vec(),
        errors,
        decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use nalgebra::dmatrix;

    #[test]
    fn single_state_has_no_jumps() {
        let m = crate::markov_core::load_generator(dmatrix![0.0], None).unwrap();
        let t = simulate_trajectory(&m, 10.0, 1).unwrap();
        assert_eq!(t.states, vec![0]);
        assert_eq!(t.jump_times, vec![0.0]);
    }

    #[test]
    fn same_seed_same_path() {
        let b = builtin::three_cycle().unwrap();
        let a = simulate_trajectory(&b.model, 50.0, 7).unwrap();
        let c = simulate_trajectory(&b.model, 50.0, 7).unwrap();
        assert_eq!(a, c);
        assert_ne!(a, simulate_trajectory(&b.model, 50.0, 8).unwrap());
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.states.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn additive_functional_edges() {
        let b = builtin::two_state(1.0, 2.0).unwrap();
        let t = simulate_trajectory(&b.model, 100.0, 3).unwrap();
        let zero = Observable::zero(&b.model);
        assert_eq!(additive_functional(&t, &zero, 100.0).unwrap(), 0.0);
        assert!(matches!(
            additive_functional(&t, &b.observable, 200.0),
            Err(Error::HorizonTooShort { .. })
        ));
        let constant = Trajectory {
            jump_times: vec![0.0],
            states: vec![1],
            horizon: 9.0,
        };
        let v = additive_functional(&constant, &b.observable, 9.0).unwrap();
        assert!((v - (-2.0 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_observable_is_degenerate() {
        let b = builtin::two_state(1.0, 2.0).unwrap();
        let s = variance_estimate(&b.model, &Observable::zero(&b.model), 10.0, 50, 1).unwrap();
        assert_eq!(s.variance, 0.0);
        assert!(s.ks_statistic.is_none());
        let split = crate::markov_core::decompose(&b.model);
        let r = martingale_check(&b.model, &split, &Observable::zero(&b.model), 10.0, 20, 1).unwrap();
        assert!(r.samples.iter().all(|s| s.martingale == 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let b = builtin::two_state(1.0, 2.0).unwrap();
        assert!(variance_estimate(&b.model, &b.observable, 10.0, 0, 1).is_err());
        assert!(variance_estimate(&b.model, &b.observable, 0.0, 10, 1).is_err());
        let l = builtin::ladder(3, builtin::LadderProfile::Unit).unwrap();
        assert!(matches!(
            variance_estimate(&l.model, &l.observable, 1.0, 1, 1),
            Err(Error::NotMarkov)
        ));
    }

    #[test]
    fn trajectory_helpers() {
        let t = Trajectory {
            jump_times: vec![0.0, 1.0, 3.0],
            states: vec![0, 1, 0],
            horizon: 4.0,
        };
        assert_eq!(t.occupation(2, 4.0), vec![2.0, 2.0]);
        assert_eq!(t.occupation(2, 2.0), vec![1.0, 1.0]);
        assert_eq!(t.state_at(0.5), 0);
        assert_eq!(t.state_at(1.0), 1);
        assert_eq!(t.state_at(3.5), 0);
    }
}

use std::io::Write as _;
use std::path::Path;

use kvclt_core::markov_core::{check_ergodicity, decompose};
use kvclt_core::mc_verify::{approximation_profile, martingale_check, EnsembleStats};
use kvclt_core::sector_conditions::{
    build_graded, graded_dense_range_certificate, gsc_check, k_operators_check, random_test_vectors,
    rsc_convergence_check, ssc_norm, ssc_pairwise_check, GradedBoundSpec,
};
use kvclt_core::spectral_ops::{
    condition_sweep, h_minus_one_norm, sigma_squared, sigma_squared_oracle, spectral_decompose_s, HMinusOne,
};
use kvclt_core::{Error, OperatorSplit, SpectralData};

use crate::args::{AnalyzeArgs, Common, SectorArgs, SimulateArgs};
use crate::config::{parse_bounds, Config};
use crate::model_file::{self, LoadOptions, LoadedModel, ModelFile};
use crate::report::{GscSection, McSection, ModelSummary, Report, RscSection, SigmaSection, SscSection};
use crate::CliError;

/// Polarization identity residual allowed on any pair of sweep points.
const POLARIZATION_TOL: f64 = 1e-9;
/// Monte Carlo variance must land within this relative distance of the oracle.
const MC_REL_TOL: f64 = 0.05;

struct Prepared {
    loaded: LoadedModel,
    config: Config,
    split: OperatorSplit,
    spec: SpectralData,
}

fn prepare(common: &Common) -> Result<Prepared, CliError> {
    let config = Config::from_common(common)?;
    let opts = LoadOptions {
        tolerances: config.tolerances,
        project: common.project,
        observable: common.observable.as_deref(),
        matrix_csv: common.matrix_csv.as_deref(),
    };
    let loaded = model_file::load(common.model.as_deref(), &opts)?;
    let split = decompose(&loaded.model);
    let spec = spectral_decompose_s(&split, &loaded.model)?;
    Ok(Prepared {
        loaded,
        config,
        split,
        spec,
    })
}

impl Prepared {
    fn report(&self, command: &'static str, echo: bool) -> Report {
        let m = &self.loaded.model;
        let summary = ModelSummary {
            name: self.loaded.name.clone(),
            states: m.n(),
            markov: m.is_markov(),
            reversible: self.split.is_reversible(1e-10),
            graded: self.loaded.grading.is_some(),
        };
        let mut r = Report::new(command, summary, self.config);
        if echo {
            r.echo_model = Some(ModelFile::echo(&self.loaded));
        }
        r
    }
}

pub fn analyze(args: &AnalyzeArgs) -> Result<Report, CliError> {
    let p = prepare(&args.common)?;
    let (model, f) = (&p.loaded.model, &p.loaded.observable);
    let mut r = p.report("analyze", args.common.echo_model);

    let erg = check_ergodicity(&p.split, model)?;
    r.verdict(
        "ergodicity",
        erg.pass,
        format!("kernel of S has dimension {}", erg.kernel_dim),
    );
    r.ergodicity = Some(erg);

    let h = h_minus_one_norm(f, &p.spec);
    r.verdict(
        "h_minus_one",
        matches!(h, HMinusOne::Finite { .. }),
        match h {
            HMinusOne::Finite { value } => format!("|f|_-1^2 = {value:e}"),
            HMinusOne::Infinite { offending_component } => {
                format!("f has kernel component {offending_component:e}")
            }
        },
    );
    r.h_minus_one = Some(h);

    let sweep = condition_sweep(model, &p.split, &p.spec, f, &p.config.sweep)?;
    r.verdict(
        "condition_a",
        sweep.converged_a,
        format!("sqrt(l)|u_l| = {:e} at lambda_min", sweep.last().norm_a),
    );
    r.verdict(
        "condition_b",
        sweep.converged_b,
        format!(
            "|S^1/2 (u_l - u_l')| = {:e} at lambda_min",
            sweep.last().cauchy_b.unwrap_or(0.0)
        ),
    );
    let worst = sweep
        .records
        .iter()
        .filter_map(|x| x.polarization_residual)
        .fold(0.0, f64::max);
    r.verdict(
        "polarization_identity",
        worst <= POLARIZATION_TOL,
        format!("max relative residual {worst:e}"),
    );

    let oracle = sigma_squared_oracle(model, &p.split, &p.spec, f)?;
    let tol = p.config.sweep.tol_match;
    let sigma = match sigma_squared(&sweep, &p.spec, model, f) {
        Ok(v) => {
            let rel = if oracle > 0.0 {
                (v.sigma2 - oracle).abs() / oracle
            } else {
                v.sigma2.abs()
            };
            r.verdict(
                "sigma2_from_v",
                v.matches,
                format!("sweep {:e}, 2|v|^2 {:e}", v.sigma2, v.sigma2_from_v),
            );
            r.verdict(
                "sigma2_oracle",
                rel <= tol,
                format!("relative error {rel:e} vs oracle {oracle:e}"),
            );
            SigmaSection {
                sweep: Some(v.sigma2),
                from_v: Some(v.sigma2_from_v),
                oracle,
                relative_error: Some(rel),
                detail: Some(v),
            }
        }
        Err(Error::NotConverged(msg)) => {
            r.verdict("sigma2_oracle", false, format!("sweep did not converge: {msg}"));
            SigmaSection {
                sweep: None,
                from_v: None,
                oracle,
                relative_error: None,
                detail: None,
            }
        }
        Err(e) => return Err(e.into()),
    };
    r.sigma2 = Some(sigma);
    r.sweep = Some(sweep);
    Ok(r)
}

pub fn sector(args: &SectorArgs) -> Result<Report, CliError> {
    let p = prepare(&args.common)?;
    let model = &p.loaded.model;
    let mut r = p.report("sector", args.common.echo_model);
    let none_selected = !args.ssc && !args.rsc && args.gsc.is_none();
    let seed = p.config.seed;

    if args.ssc || none_selected {
        let constant = ssc_norm(&p.split, &p.spec, model);
        let sampled = ssc_pairwise_check(&p.split, model, constant, args.samples, seed);
        r.verdict(
            "ssc",
            sampled.pass,
            format!(
                "C = {constant:.10e}; worst sampled ratio {:.10e} over {} pairs",
                sampled.worst_ratio, sampled.samples
            ),
        );
        r.ssc = Some(SscSection { constant, sampled });
    }

    if let Some(raw) = &args.gsc {
        let grading = p.loaded.grading.as_ref().ok_or(CliError::MissingGrading)?;
        let bounds = parse_bounds(raw, grading.levels().len())?;
        let g = build_graded(&p.split, model, grading)?;
        let check = gsc_check(&g, &bounds)?;
        let dense_range = match bounds {
            GradedBoundSpec::Sequences { .. } => Some(graded_dense_range_certificate(&g, &bounds)?),
            GradedBoundSpec::Power { .. } => None,
        };
        let worst = check.blocks.iter().map(|b| b.margin).fold(f64::INFINITY, f64::min);
        r.verdict("gsc_blocks", check.pass, format!("smallest margin {worst:e}"));
        if let Some(d) = &check.divergence {
            r.verdict(
                "gsc_divergence",
                d.divergent,
                format!(
                    "sum 1/c_n: fitted growth exponent {}",
                    d.exponent.map_or("n/a".into(), |e| format!("{e:.6}"))
                ),
            );
        }
        if let Some(d) = &dense_range {
            r.verdict(
                "gsc_dense_range",
                d.pass,
                format!("{} truncations checked", d.rows.len()),
            );
        }
        r.gsc = Some(GscSection {
            bounds,
            level_dims: g.level_dims.clone(),
            band: g.band,
            offband_residual: g.offband_residual,
            check,
            dense_range,
        });
    }

    if args.rsc || none_selected {
        let vectors = random_test_vectors(model, args.test_vectors, seed);
        let convergence = rsc_convergence_check(&p.split, &p.spec, model, &vectors, &p.config.sweep)?;
        let k_operators = k_operators_check(&p.split, &p.spec, model, &p.loaded.observable, &p.config.sweep)?;
        r.verdict(
            "rsc_convergence",
            convergence.final_max_error < convergence.tol,
            format!("max |B_l x - B x| at lambda_min {:e}", convergence.final_max_error),
        );
        r.verdict(
            "skew_certificate",
            convergence.certificate.pass,
            format!(
                "sigma_min(I -+ B) = {:.12}, {:.12}; expected {:.12}",
                convergence.certificate.sigma_min_minus,
                convergence.certificate.sigma_min_plus,
                convergence.certificate.expected
            ),
        );
        r.verdict(
            "k_operators",
            k_operators.pass,
            format!(
                "|K| = {:.12}, |K_l g - K g| = {:e} at lambda_min",
                k_operators.k_norm,
                k_operators.convergence_errors.last().copied().unwrap_or(0.0)
            ),
        );
        r.rsc = Some(RscSection {
            test_vectors: vectors.len(),
            convergence,
            k_operators,
        });
    }
    Ok(r)
}

fn write_values_csv(path: &Path, ensemble: &EnsembleStats, martingale: &[f64]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "trajectory,additive_functional,martingale").map_err(io)?;
    for (k, (v, m)) in ensemble.values.iter().zip(martingale).enumerate() {
        writeln!(w, "{k},{v},{m}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn simulate(args: &SimulateArgs) -> Result<Report, CliError> {
    if args.trajectories == 0 {
        return Err(CliError::Input("trajectories must be positive".into()));
    }
    if !(args.horizon > 0.0) || !args.horizon.is_finite() {
        return Err(CliError::Input(format!(
            "horizon must be positive, got {}",
            args.horizon
        )));
    }
    let p = prepare(&args.common)?;
    let (model, f) = (&p.loaded.model, &p.loaded.observable);
    let mut r = p.report("simulate", args.common.echo_model);
    let (n, k, seed) = (args.horizon, args.trajectories, p.config.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| CliError::Input(format!("--threads: {e}")))?;
    let (martingale, profile) = pool.install(|| -> Result<_, CliError> {
        let m = martingale_check(model, &p.split, f, n, k, seed)?;
        let profile = if args.profile {
            Some(approximation_profile(model, f, &[n / 100.0, n / 10.0, n], k, seed)?)
        } else {
            None
        };
        Ok((m, profile))
    })?;
    let scale = 1.0 / n.sqrt();
    let ensemble = EnsembleStats::from_values(martingale.samples.iter().map(|s| s.integral * scale).collect(), n, seed);
    if let Some(path) = &args.values_csv {
        let m: Vec<f64> = martingale.samples.iter().map(|s| s.martingale * scale).collect();
        write_values_csv(path, &ensemble, &m)?;
    }

    let oracle = martingale.sigma2_oracle;
    let rel = if oracle > 0.0 {
        (ensemble.variance - oracle).abs() / oracle
    } else {
        ensemble.variance
    };
    r.verdict(
        "mc_variance",
        rel <= MC_REL_TOL,
        format!(
            "variance {:.6} (CI {:.6} .. {:.6}) vs oracle {oracle:.6}: relative error {rel:.4}",
            ensemble.variance, ensemble.variance_ci.0, ensemble.variance_ci.1
        ),
    );
    if let Some(ks) = ensemble.ks_statistic {
        r.verdict(
            "ks_normality",
            ks <= ensemble.ks_critical_1pct,
            format!("KS {ks:.5} vs 1% critical value {:.5}", ensemble.ks_critical_1pct),
        );
    }
    r.verdict(
        "martingale_mean",
        martingale.mean_ok,
        format!(
            "mean {:e}, standard error {:e}",
            martingale.mean_m, martingale.mean_m_std_error
        ),
    );
    r.verdict(
        "martingale_second_moment",
        martingale.relative_error <= MC_REL_TOL,
        format!(
            "E[M^2]/N = {:.6}, relative error {:.4}",
            martingale.second_moment, martingale.relative_error
        ),
    );
    r.verdict(
        "corrector_bound",
        martingale.approximation_error <= martingale.approximation_bound,
        format!(
            "N^-1 E[(int f - M)^2] = {:e} <= {:e}",
            martingale.approximation_error, martingale.approximation_bound
        ),
    );
    if let Some(pr) = &profile {
        r.verdict(
            "approximation_decreasing",
            pr.decreasing,
            format!("errors {:?} at N = {:?}", pr.errors, pr.horizons),
        );
    }
    r.mc = Some(McSection {
        ensemble,
        martingale,
        relative_error: rel,
        profile,
    });
    Ok(r)
}

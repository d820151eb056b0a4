//! Tolerance overrides and the `--gsc` bounds syntax.

use kvclt_core::sector_conditions::GradedBoundSpec;
use kvclt_core::{SweepConfig, Tolerances};
use serde::Serialize;

use crate::args::Common;
use crate::CliError;

/// Every tolerance in effect, echoed in each report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Config {
    pub tolerances: Tolerances,
    pub sweep: SweepConfig,
    pub seed: u64,
}

fn parse_value(name: &str, raw: &str) -> Result<f64, CliError> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("--tol.{name}: cannot parse `{raw}`")))?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(CliError::Input(format!(
            "--tol.{name}: must be positive and finite, got {v}"
        )));
    }
    Ok(v)
}

impl Config {
    pub fn from_common(c: &Common) -> Result<Self, CliError> {
        let mut tolerances = Tolerances::default();
        let mut sweep = SweepConfig {
            lambda_max: c.lambda_max,
            lambda_min: c.lambda_min,
            ratio: c.lambda_ratio,
            ..SweepConfig::default()
        };
        for item in &c.tol {
            let (name, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("--tol expects name=value, got `{item}`")))?;
            let v = parse_value(name, raw)?;
            match name.trim() {
                "row" => tolerances.row = v,
                "mean" => tolerances.mean = v,
                "ker" | "kernel" => tolerances.kernel = v,
                "grade" => tolerances.grade = v,
                "A" | "a" => sweep.tol_a = v,
                "B" | "b" => sweep.tol_b = v,
                "match" => sweep.tol_match = v,
                other => {
                    return Err(CliError::Input(format!(
                        "unknown tolerance `{other}` (expected row, mean, ker, grade, A, B or match)"
                    )))
                }
            }
        }
        sweep.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(Self {
            tolerances,
            sweep,
            seed: c.seed,
        })
    }
}

fn parse_sequence(raw: &str, levels: usize) -> Result<Vec<f64>, CliError> {
    let bad = |msg: String| CliError::Input(format!("--gsc sequence `{raw}`: {msg}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("cannot parse `{s}`")));
    let (kind, arg) = raw
        .split_once(':')
        .ok_or_else(|| bad("expected const:x, pow:p or list:x1|x2|...".into()))?;
    match kind.trim() {
        "const" => Ok(vec![num(arg)?; levels]),
        "pow" => {
            let p = num(arg)?;
            Ok((1..=levels).map(|n| (n as f64).powf(p)).collect())
        }
        "list" => arg.split('|').map(num).collect(),
        other => Err(bad(format!("unknown sequence kind `{other}`"))),
    }
}

/// `power:C,kappa,beta` or `seq:d=<seq>;c=<seq>` (`d` defaults to `c`).
pub fn parse_bounds(raw: &str, levels: usize) -> Result<GradedBoundSpec, CliError> {
    let bad = |msg: &str| CliError::Input(format!("--gsc `{raw}`: {msg}"));
    let (mode, rest) = raw
        .split_once(':')
        .ok_or_else(|| bad("expected power:C,kappa,beta or seq:d=...;c=..."))?;
    match mode.trim() {
        "power" => {
            let parts: Vec<f64> = rest
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("cannot parse power parameters"))?;
            match parts.as_slice() {
                &[c, kappa, beta] => Ok(GradedBoundSpec::Power { c, kappa, beta }),
                _ => Err(bad("power mode takes exactly C,kappa,beta")),
            }
        }
        "seq" => {
            let (mut d, mut c) = (None, None);
            for part in rest.split(';').filter(|s| !s.trim().is_empty()) {
                let (key, value) = part.split_once('=').ok_or_else(|| bad("expected d=... or c=..."))?;
                let seq = parse_sequence(value, levels)?;
                match key.trim() {
                    "d" => d = Some(seq),
                    "c" => c = Some(seq),
                    _ => return Err(bad("sequence keys are d and c")),
                }
            }
            let c = c.ok_or_else(|| bad("sequence c is required"))?;
            let d = d.unwrap_or_else(|| c.clone());
            Ok(GradedBoundSpec::Sequences { d, c })
        }
        _ => Err(bad("mode must be power or seq")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_syntax() {
        assert_eq!(
            parse_bounds("power:2,0,0.5", 3).unwrap(),
            GradedBoundSpec::Power {
                c: 2.0,
                kappa: 0.0,
                beta: 0.5
            }
        );
        assert_eq!(
            parse_bounds("seq:d=const:1;c=pow:2", 3).unwrap(),
            GradedBoundSpec::Sequences {
                d: vec![1.0; 3],
                c: vec![1.0, 4.0, 9.0]
            }
        );
        assert_eq!(
            parse_bounds("seq:c=list:1|2", 2).unwrap(),
            GradedBoundSpec::Sequences {
                d: vec![1.0, 2.0],
                c: vec![1.0, 2.0]
            }
        );
        for bad in ["power:1,2", "seq:d=const:1", "cubic:1", "seq:c=exp:2", "nothing"] {
            assert!(parse_bounds(bad, 3).is_err(), "{bad}");
        }
    }
}

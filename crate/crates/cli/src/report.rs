use std::fmt::Write as _;

use kvclt_core::markov_core::ErgodicityReport;
use kvclt_core::mc_verify::{ApproximationProfile, EnsembleStats, MartingaleReport};
use kvclt_core::sector_conditions::{
    DenseRangeReport, GradedBoundSpec, GscReport, KReport, RscReport, SscSampleReport,
};
use kvclt_core::spectral_ops::{HMinusOne, LambdaSweep, VarianceResult};
use serde::Serialize;

use crate::args::Format;
use crate::config::Config;
use crate::model_file::ModelFile;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub states: usize,
    pub markov: bool,
    pub reversible: bool,
    pub graded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaSection {
    /// Extrapolated from the sweep; `None` when the sweep did not converge.
    pub sweep: Option<f64>,
    pub from_v: Option<f64>,
    pub oracle: f64,
    pub relative_error: Option<f64>,
    pub detail: Option<VarianceResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SscSection {
    pub constant: f64,
    pub sampled: SscSampleReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GscSection {
    pub bounds: GradedBoundSpec,
    pub level_dims: Vec<usize>,
    pub band: usize,
    pub offband_residual: f64,
    pub check: GscReport,
    pub dense_range: Option<DenseRangeReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RscSection {
    pub test_vectors: usize,
    pub convergence: RscReport,
    pub k_operators: KReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSection {
    pub ensemble: EnsembleStats,
    pub martingale: MartingaleReport,
    pub relative_error: f64,
    pub profile: Option<ApproximationProfile>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub model: ModelSummary,
    pub config: Config,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergodicity: Option<ErgodicityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_minus_one: Option<HMinusOne>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<LambdaSweep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<SigmaSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssc: Option<SscSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gsc: Option<GscSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsc: Option<RscSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSection>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub echo_model: Option<ModelFile>,
}

impl Report {
    pub fn new(command: &'static str, model: ModelSummary, config: Config) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            model,
            config,
            ergodicity: None,
            h_minus_one: None,
            sweep: None,
            sigma2: None,
            ssc: None,
            gsc: None,
            rsc: None,
            mc: None,
            verdicts: Vec::new(),
            pass: true,
            echo_model: None,
        }
    }

    pub fn verdict(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.pass &= pass;
        self.verdicts.push(Verdict {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Csv => self.csv(),
            Format::Text => self.text(),
        }
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        if let Some(sweep) = &self.sweep {
            w.write_record(["lambda", "normA", "cauchyB", "condC", "2(u,f)", "condD"])
                .unwrap();
            for r in &sweep.records {
                w.write_record([
                    r.lambda.to_string(),
                    r.norm_a.to_string(),
                    opt(r.cauchy_b),
                    opt(r.cond_c),
                    r.two_uf.to_string(),
                    r.cond_d.to_string(),
                ])
                .unwrap();
            }
        } else if let Some(gsc) = &self.gsc {
            w.write_record(["m", "n", "norm", "bound", "margin", "pass"]).unwrap();
            for b in &gsc.check.blocks {
                w.write_record([
                    b.m.to_string(),
                    b.n.to_string(),
                    b.norm.to_string(),
                    b.bound.to_string(),
                    b.margin.to_string(),
                    b.pass.to_string(),
                ])
                .unwrap();
            }
        } else {
            w.write_record(["verdict", "pass", "detail"]).unwrap();
            for v in &self.verdicts {
                w.write_record([
                    v.name.as_str(),
                    if v.pass { "true" } else { "false" },
                    v.detail.as_str(),
                ])
                .unwrap();
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    fn text(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let _ = writeln!(
            s,
            "{} on {} ({} states, {}, {})",
            self.command,
            m.name,
            m.states,
            if m.markov { "Markov" } else { "operator model" },
            if m.reversible { "reversible" } else { "non-reversible" }
        );
        if let Some(h) = &self.h_minus_one {
            match h {
                HMinusOne::Finite { value } => {
                    let _ = writeln!(s, "  |f|_-1^2          {value:.10e}");
                }
                HMinusOne::Infinite { offending_component } => {
                    let _ = writeln!(
                        s,
                        "  |f|_-1            infinite (kernel component {offending_component:e})"
                    );
                }
            }
        }
        if let Some(sig) = &self.sigma2 {
            if let Some(v) = sig.sweep {
                let _ = writeln!(s, "  sigma^2 (sweep)   {v:.10e}");
            }
            let _ = writeln!(s, "  sigma^2 (oracle)  {:.10e}", sig.oracle);
        }
        if let Some(ssc) = &self.ssc {
            let _ = writeln!(s, "  SSC constant      {:.10e}", ssc.constant);
        }
        if let Some(rsc) = &self.rsc {
            let _ = writeln!(
                s,
                "  |B_l x - B x| at lambda_min  {:.3e}",
                rsc.convergence.final_max_error
            );
        }
        if let Some(mc) = &self.mc {
            let e = &mc.ensemble;
            let _ = writeln!(
                s,
                "  MC variance       {:.6} (95% CI {:.6} .. {:.6}), oracle {:.6}",
                e.variance, e.variance_ci.0, e.variance_ci.1, mc.martingale.sigma2_oracle
            );
        }
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "  [{}] {}: {}",
                if v.pass { "pass" } else { "FAIL" },
                v.name,
                v.detail
            );
        }
        let _ = writeln!(
            s,
            "{}",
            if self.pass {
                "all verdicts pass"
            } else {
                "verdict failure"
            }
        );
        s
    }
}

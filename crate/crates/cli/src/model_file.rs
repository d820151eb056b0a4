//! The JSON model file, `builtin:` model paths, and `--matrix-csv` input.

use std::path::Path;

use kvclt_core::builtin::{self, BuiltinModel};
use kvclt_core::markov_core::{load_generator_with, project_mean_zero};
use kvclt_core::sector_conditions::Grading;
use kvclt_core::{GeneratorModel, Observable, Tolerances};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: usize,
    pub generator: Vec<Vec<f64>>,
    pub observable: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<GradingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// `"markov"` (default) or `"operator"`; operator models may have
    /// negative off-diagonal entries and cannot be simulated.
    #[serde(default, skip_serializing_if = "ModelKind::is_markov")]
    pub kind: ModelKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Markov,
    Operator,
}

impl ModelKind {
    fn is_markov(&self) -> bool {
        *self == ModelKind::Markov
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GradingSpec {
    /// Shorthand: a list of state-index groups, band width 1.
    Groups(Vec<Vec<usize>>),
    Detailed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        groups: Option<Vec<Vec<usize>>>,
        /// Per level, a list of basis vectors (each of length `states`).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bases: Option<Vec<Vec<Vec<f64>>>>,
        #[serde(default = "default_band")]
        band: usize,
    },
}

fn default_band() -> usize {
    1
}

/// A validated model ready for the pipeline.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub name: String,
    pub model: GeneratorModel,
    pub observable: Observable,
    pub grading: Option<Grading>,
}

pub struct LoadOptions<'a> {
    pub tolerances: Tolerances,
    pub project: bool,
    pub observable: Option<&'a [f64]>,
    pub matrix_csv: Option<&'a Path>,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("field `{field}`: {msg}"))
}

fn observable_from(raw: &[f64], model: &GeneratorModel, project: bool, field: &str) -> Result<Observable, CliError> {
    if raw.len() != model.n() {
        return Err(field_err(
            field,
            format!("has {} entries, expected {}", raw.len(), model.n()),
        ));
    }
    let f = DVector::from_column_slice(raw);
    let result = if project {
        project_mean_zero(&f, model)
    } else {
        Observable::new(f, model)
    };
    result.map_err(|e| field_err(field, e))
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, field: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != n {
        return Err(field_err(field, format!("has {} rows, expected {n}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(field_err(
            field,
            format!("row {i} has {} entries, expected {n}", r.len()),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn build_grading(spec: &GradingSpec, model: &GeneratorModel) -> Result<Grading, CliError> {
    let err = |e| field_err("grading", e);
    match spec {
        GradingSpec::Groups(groups) => Grading::from_state_groups(groups, 1, model).map_err(err),
        GradingSpec::Detailed { groups, bases, band } => match (groups, bases) {
            (Some(g), None) => Grading::from_state_groups(g, *band, model).map_err(err),
            (None, Some(b)) => {
                let n = model.n();
                let mut levels = Vec::with_capacity(b.len());
                for (k, vecs) in b.iter().enumerate() {
                    if vecs.iter().any(|v| v.len() != n) {
                        return Err(field_err(
                            "grading",
                            format!("level {} has a basis vector whose length is not {n}", k + 1),
                        ));
                    }
                    let cols: Vec<DVector<f64>> = vecs.iter().map(|v| DVector::from_column_slice(v)).collect();
                    if cols.is_empty() {
                        return Err(field_err("grading", format!("level {} is empty", k + 1)));
                    }
                    levels.push(DMatrix::from_columns(&cols));
                }
                Grading::from_bases(levels, *band, model).map_err(err)
            }
            _ => Err(field_err("grading", "give exactly one of `groups` or `bases`")),
        },
    }
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("model file: {e}")))
    }

    pub fn into_model(self, name: String, opts: &LoadOptions) -> Result<LoadedModel, CliError> {
        let n = self.states;
        if n == 0 {
            return Err(field_err("states", "must be at least 1"));
        }
        let q = matrix_from_rows(&self.generator, n, "generator")?;
        let pi = match &self.pi {
            Some(p) if p.len() != n => return Err(field_err("pi", format!("has {} entries, expected {n}", p.len()))),
            Some(p) => Some(DVector::from_column_slice(p)),
            None => None,
        };
        let model = match self.kind {
            ModelKind::Markov => load_generator_with(q, pi, opts.tolerances).map_err(|e| field_err("generator", e))?,
            ModelKind::Operator => {
                let pi = pi.ok_or_else(|| field_err("pi", "required for operator models"))?;
                GeneratorModel::operator_model(q, pi, opts.tolerances).map_err(|e| field_err("generator", e))?
            }
        };
        let model = match self.labels {
            Some(l) => model.with_labels(l).map_err(|e| field_err("labels", e))?,
            None => model,
        };
        let observable = match opts.observable {
            Some(raw) => observable_from(raw, &model, opts.project, "--observable")?,
            None => observable_from(&self.observable, &model, opts.project, "observable")?,
        };
        let grading = self.grading.as_ref().map(|g| build_grading(g, &model)).transpose()?;
        Ok(LoadedModel {
            name,
            model,
            observable,
            grading,
        })
    }

    /// The model file describing `loaded`, with `pi` spelled out so that it
    /// re-parses to the same model.
    pub fn echo(loaded: &LoadedModel) -> Self {
        let m = &loaded.model;
        let n = m.n();
        let q = m.q();
        let grading = loaded.grading.as_ref().map(|g| GradingSpec::Detailed {
            groups: None,
            bases: Some(
                g.levels()
                    .iter()
                    .map(|l| l.column_iter().map(|c| c.iter().copied().collect()).collect())
                    .collect(),
            ),
            band: g.band(),
        });
        ModelFile {
            states: n,
            generator: (0..n).map(|i| (0..n).map(|j| q[(i, j)]).collect()).collect(),
            observable: loaded.observable.values().iter().copied().collect(),
            pi: Some(m.pi().iter().copied().collect()),
            grading,
            labels: m.labels().map(<[String]>::to_vec),
            kind: if m.is_markov() {
                ModelKind::Markov
            } else {
                ModelKind::Operator
            },
        }
    }
}

fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.parse::<f64>().map_err(|_| {
                    CliError::Input(format!("{}: row {i}, column {j}: cannot parse `{s}`", path.display()))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn from_builtin(b: BuiltinModel, opts: &LoadOptions) -> Result<LoadedModel, CliError> {
    let observable = match opts.observable {
        Some(raw) => observable_from(raw, &b.model, opts.project, "--observable")?,
        None => b.observable,
    };
    Ok(LoadedModel {
        name: format!("builtin:{}", b.name),
        model: b.model.with_tolerances(opts.tolerances),
        observable,
        grading: b.grading,
    })
}

/// Resolves a model path: `builtin:<name>`, a JSON model file, or (with no
/// path) the `--matrix-csv` generator.
pub fn load(path: Option<&str>, opts: &LoadOptions) -> Result<LoadedModel, CliError> {
    match (path, opts.matrix_csv) {
        (Some(_), Some(_)) => Err(CliError::Input(
            "give either a model path or --matrix-csv, not both".into(),
        )),
        (None, None) => Err(CliError::Input("no model given (model path or --matrix-csv)".into())),
        (None, Some(csv)) => {
            let generator = read_matrix_csv(csv)?;
            let observable = opts
                .observable
                .ok_or_else(|| CliError::Input("--matrix-csv needs --observable".into()))?
                .to_vec();
            let file = ModelFile {
                states: generator.len(),
                generator,
                observable,
                pi: None,
                grading: None,
                labels: None,
                kind: ModelKind::Markov,
            };
            file.into_model(csv.display().to_string(), opts)
        }
        (Some(p), None) if p.starts_with("builtin:") => {
            let b = builtin::parse_builtin(p).map_err(|e| CliError::Input(e.to_string()))?;
            from_builtin(b, opts)
        }
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{p}: {e}")))?;
            ModelFile::parse(&text)
                .map_err(|e| CliError::Input(format!("{p}: {e}")))?
                .into_model(p.to_string(), opts)
        }
    }
}

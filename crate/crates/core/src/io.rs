//! JSON model and perturbation files, CSV helpers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model_labeled, FluidModel};
use crate::numerics::Matrix;
use crate::perturb::PerturbationSpec;

/// `{"A": [[...]], "c": [...], "labels": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Generator,
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionValue {
    Matrix(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

/// `{"kind": "generator"|"rate", "direction": [[...]] | [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationFile {
    pub kind: PerturbationKind,
    pub direction: DirectionValue,
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelFile {
    pub fn from_model(model: &FluidModel) -> Self {
        ModelFile {
            a: matrix_to_rows(&model.original_a()),
            c: model.original_c(),
            labels: Some(model.labels().to_vec()),
        }
    }

    pub fn into_model(self) -> Result<FluidModel> {
        let a = rows_to_matrix(&self.a)?;
        validate_model_labeled(&a, &self.c, self.labels)
    }
}

impl PerturbationFile {
    pub fn into_spec(self, model: &FluidModel) -> Result<PerturbationSpec> {
        match (self.kind, self.direction) {
            (PerturbationKind::Generator, DirectionValue::Matrix(rows)) => {
                PerturbationSpec::generator(model, rows_to_matrix(&rows)?)
            }
            (PerturbationKind::Rate, DirectionValue::Diagonal(d)) => {
                PerturbationSpec::rate(model, d)
            }
            (PerturbationKind::Rate, DirectionValue::Matrix(rows)) => {
                let m = rows_to_matrix(&rows)?;
                if !m.is_square()
                    || (0..m.nrows()).any(|i| (0..m.ncols()).any(|j| i != j && m[(i, j)] != 0.0))
                {
                    return Err(Error::Parse("rate direction must be a diagonal".into()));
                }
                PerturbationSpec::rate(model, m.diagonal().iter().copied().collect())
            }
            (PerturbationKind::Generator, DirectionValue::Diagonal(_)) => {
                Err(Error::Parse("generator direction must be a matrix".into()))
            }
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<FluidModel> {
    read_json::<ModelFile>(path)?.into_model()
}

pub fn load_perturbation(path: &Path, model: &FluidModel) -> Result<PerturbationSpec> {
    read_json::<PerturbationFile>(path)?.into_spec(model)
}

/// Round-trip formatting with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Formats a number to three significant digits, `4.60e-3` style.
pub fn fmt3(x: f64) -> String {
    format!("{x:.2e}")
}

pub fn csv_line<I: IntoIterator<Item = String>>(fields: I) -> String {
    fields.into_iter().collect::<Vec<_>>().join(",")
}

/// CSV of a labeled matrix: a header row of column labels, then one row per
/// matrix row led by its label.
pub fn matrix_csv(m: &Matrix, row_labels: &[String], col_labels: &[String]) -> String {
    let mut out = csv_line(std::iter::once("phase".to_string()).chain(col_labels.iter().cloned()));
    out.push('\n');
    for (i, label) in row_labels.iter().enumerate() {
        out.push_str(&csv_line(
            std::iter::once(label.clone()).chain(m.row(i).iter().map(|v| fmt_num(*v))),
        ));
        out.push('\n');
    }
    out
}

//! File formats: row-major JSON matrices, dataset files, basis files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;
use crate::linalg::Mat;

/// A matrix serialized as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowMatrix(pub Vec<Vec<f64>>);

impl RowMatrix {
    pub fn from_matrix(m: &Mat) -> Self {
        RowMatrix(
            m.row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        )
    }

    pub fn into_matrix(self) -> Result<Mat> {
        let nrows = self.0.len();
        let ncols = self.0.first().map_or(0, Vec::len);
        if self.0.iter().any(|r| r.len() != ncols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        let flat: Vec<f64> = self.0.into_iter().flatten().collect();
        Ok(Mat::from_row_slice(nrows, ncols, &flat))
    }
}

pub(crate) mod row_matrix {
    //! `#[serde(with = ...)]` adapter for `DMatrix<f64>` fields.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::RowMatrix;
    use crate::linalg::Mat;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        RowMatrix::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        RowMatrix::deserialize(d)?
            .into_matrix()
            .map_err(serde::de::Error::custom)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A data file: neuronal series `x`, BOLD series `y`, or both, rows are time.
/// Files written by `simulate` carry the sampling interval under `meta.t_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetFile {
    #[serde(default)]
    pub x: Option<RowMatrix>,
    #[serde(default)]
    pub y: Option<RowMatrix>,
    #[serde(default)]
    pub t_r: Option<f64>,
    #[serde(default)]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Option<Mat>,
    pub y: Option<Mat>,
    pub t_r: Option<f64>,
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file: DatasetFile = read_json(path)?;
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let conv = |m: Option<RowMatrix>| m.map(RowMatrix::into_matrix).transpose().map_err(|e| format(e.to_string()));
    let t_r = file
        .t_r
        .or_else(|| file.meta.as_ref().and_then(|m| m.get("t_r")).and_then(|v| v.as_f64()));
    let data = Dataset {
        x: conv(file.x)?,
        y: conv(file.y)?,
        t_r,
    };
    if data.x.is_none() && data.y.is_none() {
        return Err(format("dataset has neither `x` nor `y`".into()));
    }
    if let (Some(x), Some(y)) = (&data.x, &data.y) {
        if x.shape() != y.shape() {
            return Err(format(format!("x is {:?} but y is {:?}", x.shape(), y.shape())));
        }
    }
    Ok(data)
}

pub fn read_basis(path: &Path) -> Result<HemoBasis> {
    let basis: HemoBasis = read_json(path)?;
    basis.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(basis)
}

//! Row-major JSON encoding of dense matrices: `[[a11, a12], [a21, a22]]`.

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub type Rows = Vec<Vec<f64>>;

pub fn mat_to_rows(m: &Mat) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Rejects ragged input. An empty row list yields a 0x0 matrix.
pub fn rows_to_mat(rows: &[Vec<f64>], field: &str) -> Result<Mat> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "field {field}: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    if let Some(x) = rows.iter().flatten().find(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "field {field}: non-finite entry {x}"
        )));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// `#[serde(with = "json::matrix")]` for `DMatrix<f64>` fields.
pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Rows::deserialize(d)?;
        rows_to_mat(&rows, "matrix").map_err(serde::de::Error::custom)
    }
}

pub mod row {
    use super::*;

    pub fn serialize<S: Serializer>(
        v: &RowDVector<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        v.iter().cloned().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<RowDVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(RowDVector::from_vec(v))
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(
        v: &DVector<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        v.iter().cloned().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

/// Complex numbers as `{"re": .., "im": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

impl From<num_complex::Complex64> for ComplexJson {
    fn from(z: num_complex::Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

pub mod complex_vec {
    use super::*;
    use num_complex::Complex64;

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
        v.iter()
            .map(|z| ComplexJson::from(*z))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Complex64>, D::Error> {
        let v = Vec::<ComplexJson>::deserialize(d)?;
        Ok(v.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
    }
}

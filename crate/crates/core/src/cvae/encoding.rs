use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid side length and action count of the gridworld encoding.
pub const GRID_CLASSES: usize = 7;
pub const GRID_COORDS: usize = 6;
pub const GRID_ACTIONS: usize = 4;

/// How raw conditioning inputs become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputEncoding {
    /// Real-valued inputs passed through unchanged.
    Passthrough { width: usize },
    /// Six grid coordinates one-hot over seven classes, followed by the
    /// action one-hot over four.
    GridStateAction,
}

impl InputEncoding {
    pub fn raw_width(&self) -> usize {
        match self {
            InputEncoding::Passthrough { width } => *width,
            InputEncoding::GridStateAction => GRID_COORDS + 1,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            InputEncoding::Passthrough { width } => *width,
            InputEncoding::GridStateAction => GRID_COORDS * GRID_CLASSES + GRID_ACTIONS,
        }
    }
}

/// One-hot of `value` over `classes`; the value must be an integer in range.
pub fn one_hot(value: f64, classes: usize) -> Result<Vec<f64>> {
    if value.fract() != 0.0 || value < 0.0 || value >= classes as f64 {
        return Err(Error::Domain(format!(
            "value {value} is not a class index below {classes}"
        )));
    }
    let mut out = vec![0.0; classes];
    out[value as usize] = 1.0;
    Ok(out)
}

/// Encodes one raw input row.
pub fn encode_input(enc: &InputEncoding, raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != enc.raw_width() {
        return Err(Error::Config(format!(
            "raw input has {} values, expected {}",
            raw.len(),
            enc.raw_width()
        )));
    }
    match enc {
        InputEncoding::Passthrough { .. } => Ok(raw.to_vec()),
        InputEncoding::GridStateAction => {
            let mut out = Vec::with_capacity(enc.width());
            for &c in &raw[..GRID_COORDS] {
                out.extend(one_hot(c, GRID_CLASSES)?);
            }
            out.extend(one_hot(raw[GRID_COORDS], GRID_ACTIONS)?);
            Ok(out)
        }
    }
}

/// Encodes every row of a raw input matrix.
pub fn encode_inputs(enc: &InputEncoding, raw: &Array2<f64>) -> Result<Array2<f64>> {
    encode_rows(raw, enc.width(), |r| encode_input(enc, r))
}

pub(crate) fn encode_rows(
    raw: &Array2<f64>,
    width: usize,
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Array2<f64>> {
    let mut out = Vec::with_capacity(raw.nrows() * width);
    for row in raw.rows() {
        out.extend(f(&row.to_vec())?);
    }
    Array2::from_shape_vec((raw.nrows(), width), out).map_err(|e| Error::Config(e.to_string()))
}

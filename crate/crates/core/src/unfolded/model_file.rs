//! Model file format.
//!
//! ```json
//! {"version": 1, "family": "detnet", "K": 16, "N": 32, "L": 10,
//!  "alphabet": "qpsk", "hyper": {"h": 128, "v_dim": 64, "w_soft": 0.35},
//!  "params": [{"name": "W1[0]", "shape": [128, 96], "data": "..."}, ...]}
//! ```
//!
//! Each `data` blob is a base64 string of little-endian float64 values in
//! row-major order. Tensors appear in the family's declared order.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{check_shapes, tensor_specs, Dims, Family, Hyper, ModelParams};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::modulation::Scheme;

const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    family: Family,
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "N")]
    antennas: usize,
    #[serde(rename = "L")]
    layers: usize,
    alphabet: Scheme,
    hyper: Hyper,
    params: Vec<Blob>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blob {
    name: String,
    shape: [usize; 2],
    data: String,
}

fn encode(m: &Matrix) -> String {
    let mut bytes = Vec::with_capacity(8 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

fn decode(blob: &Blob) -> Result<Matrix> {
    let bytes = STANDARD
        .decode(&blob.data)
        .map_err(|e| Error::Format(format!("tensor {}: {e}", blob.name)))?;
    let [rows, cols] = blob.shape;
    if bytes.len() != 8 * rows * cols {
        return Err(Error::Format(format!(
            "tensor {} holds {} bytes, shape {:?} needs {}",
            blob.name,
            bytes.len(),
            blob.shape,
            8 * rows * cols
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

/// Serializes a model to JSON text.
pub fn write_model(model: &ModelParams) -> Result<String> {
    let d = model.dims();
    let file = ModelFile {
        version: VERSION,
        family: model.family(),
        users: d.users,
        antennas: d.antennas,
        layers: d.layers,
        alphabet: model.alphabet().scheme(),
        hyper: model.hyper(),
        params: model
            .specs()
            .into_iter()
            .zip(model.tensors())
            .map(|(s, t)| Blob {
                name: s.name,
                shape: [s.rows, s.cols],
                data: encode(t),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses model JSON text, validating every tensor against `(K, N, L)`.
pub fn read_model(text: &str) -> Result<ModelParams> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.version != VERSION {
        return Err(Error::Format(format!("unsupported model file version {}", file.version)));
    }
    let dims = Dims::new(file.users, file.antennas, file.layers);
    let mut model = ModelParams::zeros(file.family, dims, file.alphabet, file.hyper)?;
    let specs = tensor_specs(file.family, dims, file.hyper);
    for (s, b) in specs.iter().zip(&file.params) {
        if s.name != b.name {
            return Err(Error::ModelMismatch(format!("expected tensor {}, found {}", s.name, b.name)));
        }
    }
    let tensors = file.params.iter().map(decode).collect::<Result<Vec<_>>>()?;
    check_shapes(&specs, &tensors)?;
    model.set_tensors(tensors)?;
    if !model.is_finite() {
        return Err(Error::NonFinite("model file contains non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_model(&text)
}

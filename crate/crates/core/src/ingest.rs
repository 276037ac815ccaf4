//! Weight bundles, prediction files and per-layer weight pooling.
//!
//! A weight bundle (QWB) is a compact JSON manifest, a single `\n`, then a raw
//! little-endian `f32` payload:
//!
//! ```text
//! {"qwb_version":1,"layers":[{"name":"dense_0.weight","shape":[100,1],"dtype":"f32","offset":0,"length":100}],"meta":{}}
//! <payload bytes>
//! ```
//!
//! `offset` and `length` count floats, not bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};

pub const QWB_VERSION: u32 = 1;

/// One named parameter tensor, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Layer {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            shape,
            values,
        };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(QipfError::invalid(format!(
                "layer `{}` needs a shape of positive extents, got {:?}",
                self.name, self.shape
            )));
        }
        let expected: usize = self.shape.iter().product();
        if expected != self.values.len() {
            return Err(QipfError::ShapeMismatch {
                layer: self.name.clone(),
                expected,
                actual: self.values.len(),
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(QipfError::NonFinite(format!("layer `{}` value {i}", self.name)));
        }
        Ok(())
    }

    pub fn is_bias(&self) -> bool {
        self.name.to_ascii_lowercase().contains("bias")
    }
}

/// Serialized parameters of a trained model, before pooling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBundle {
    pub layers: Vec<Layer>,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    qwb_version: u32,
    layers: Vec<LayerEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    length: usize,
}

impl WeightBundle {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            meta: BTreeMap::new(),
        }
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    /// Drops layers whose name mentions `bias`.
    pub fn without_biases(&self) -> Self {
        Self {
            layers: self.layers.iter().filter(|l| !l.is_bias()).cloned().collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layers.iter().try_for_each(Layer::validate)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let entry = LayerEntry {
                    name: l.name.clone(),
                    shape: l.shape.clone(),
                    dtype: "f32".into(),
                    offset,
                    length: l.values.len(),
                };
                offset += l.values.len();
                entry
            })
            .collect();
        let manifest = Manifest {
            qwb_version: QWB_VERSION,
            layers,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&manifest).map_err(|e| QipfError::Parse {
            location: "manifest".into(),
            message: e.to_string(),
        })?;
        out.push(b'\n');
        out.reserve(offset * 4);
        for l in &self.layers {
            for v in &l.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut stream = serde_json::Deserializer::from_slice(bytes).into_iter::<Manifest>();
        let manifest = match stream.next() {
            Some(Ok(m)) => m,
            Some(Err(e)) => {
                return Err(QipfError::Parse {
                    location: format!("manifest line {} column {}", e.line(), e.column()),
                    message: e.to_string(),
                })
            }
            None => {
                return Err(QipfError::Parse {
                    location: "manifest".into(),
                    message: "empty file".into(),
                })
            }
        };
        let end = stream.byte_offset();
        if manifest.qwb_version != QWB_VERSION {
            return Err(QipfError::Parse {
                location: "manifest field `qwb_version`".into(),
                message: format!("unsupported version {}", manifest.qwb_version),
            });
        }
        if bytes.get(end) != Some(&b'\n') {
            return Err(QipfError::Parse {
                location: format!("byte {end}"),
                message: "manifest must be followed by a single newline".into(),
            });
        }
        let payload = &bytes[end + 1..];
        if !payload.len().is_multiple_of(4) {
            return Err(QipfError::Parse {
                location: "payload".into(),
                message: format!("{} bytes is not a whole number of f32 values", payload.len()),
            });
        }
        let floats = payload.len() / 4;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (i, entry) in manifest.layers.into_iter().enumerate() {
            if entry.dtype != "f32" {
                return Err(QipfError::Parse {
                    location: format!("layer {i} field `dtype`"),
                    message: format!("unsupported dtype `{}`", entry.dtype),
                });
            }
            let stop = entry.offset.checked_add(entry.length).filter(|&s| s <= floats);
            let Some(stop) = stop else {
                return Err(QipfError::Parse {
                    location: format!("layer {i} (`{}`) fields `offset`/`length`", entry.name),
                    message: format!(
                        "range {}+{} exceeds payload of {floats} values",
                        entry.offset, entry.length
                    ),
                });
            };
            let values = payload[entry.offset * 4..stop * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            layers.push(Layer::new(entry.name, entry.shape, values)?);
        }
        Ok(Self {
            layers,
            meta: manifest.meta,
        })
    }
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    WeightBundle::from_bytes(&bytes)
}

pub fn save_bundle(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bundle.to_bytes()?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Window length used by [`pool_weights`]: `ceil(total / pool_target)`.
pub fn pool_window(total_params: usize, pool_target: usize) -> usize {
    total_params.div_ceil(pool_target).max(1)
}

/// Average-pools each layer in non-overlapping windows of a common length.
///
/// The last window of a layer is averaged over its actual length. Layers are
/// concatenated in bundle order.
pub fn pool_weights(bundle: &WeightBundle, pool_target: usize) -> Result<Vec<f64>> {
    if pool_target < 1 {
        return Err(QipfError::invalid("pool target must be at least 1"));
    }
    let total = bundle.total_params();
    if total == 0 {
        return Err(QipfError::invalid("bundle has no parameters"));
    }
    let window = pool_window(total, pool_target);
    let mut pooled = Vec::with_capacity(total / window + bundle.layers.len());
    for layer in &bundle.layers {
        for chunk in layer.values.chunks(window) {
            let sum: f64 = chunk.iter().map(|&v| f64::from(v)).sum();
            pooled.push(sum / chunk.len() as f64);
        }
    }
    Ok(pooled)
}

/// One scored test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Largest pre-softmax output.
    pub y_eval: f64,
    /// Largest softmax probability.
    pub confidence: f64,
    pub true_label: u32,
    pub predicted_label: u32,
}

impl PredictionRecord {
    pub fn is_error(&self) -> bool {
        self.true_label != self.predicted_label
    }
}

pub const PREDICTIONS_HEADER: [&str; 5] = ["id", "y_eval", "confidence", "true_label", "predicted_label"];

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = csv.headers().map_err(|e| QipfError::Parse {
        location: "predictions header".into(),
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(QipfError::Parse {
            location: "predictions header".into(),
            message: format!("expected `{}`", PREDICTIONS_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in csv.deserialize::<PredictionRecord>().enumerate() {
        // Data rows are numbered from 1, after the header.
        let location = format!("predictions row {}", i + 1);
        let rec = row.map_err(|e| QipfError::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        if !rec.y_eval.is_finite() {
            return Err(QipfError::Parse {
                location,
                message: "y_eval must be finite".into(),
            });
        }
        if !(0.0..=1.0).contains(&rec.confidence) {
            return Err(QipfError::Parse {
                location,
                message: format!("confidence {} outside [0, 1]", rec.confidence),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_predictions(fs::File::open(path)?)
}

pub fn write_predictions<W: Write>(writer: W, records: &[PredictionRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in records {
        csv.serialize(r).map_err(|e| QipfError::Io(e.into()))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    write_predictions(fs::File::create(path)?, records)
}

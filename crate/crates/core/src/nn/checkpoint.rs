//! JSON checkpoint container: format tag, version, layer specs and row-major
//! weight arrays, plus a free-form metadata object for component settings.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, LayerParams, LayerSpec, ParamSet};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hvacft-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLayer {
    pub spec: LayerSpec,
    pub weight_rows: usize,
    pub weight_cols: usize,
    /// Row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub layers: Vec<StoredLayer>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_network(kind: &str, arch: &Architecture, params: &ParamSet, metadata: serde_json::Value) -> Result<Self> {
        arch.check_params(params)?;
        Self::from_layers(kind, arch.layers(), params, metadata)
    }

    /// For composite models whose layers do not form a single chain.
    pub fn from_layers(kind: &str, specs: &[LayerSpec], params: &ParamSet, metadata: serde_json::Value) -> Result<Self> {
        if specs.len() != params.layers().len()
            || specs
                .iter()
                .zip(params.layers())
                .any(|(s, p)| p.weight.dim() != s.weight_shape() || p.bias.len() != s.bias_len())
        {
            return Err(Error::Shape("parameters do not match the layer specs".into()));
        }
        let layers = specs
            .iter()
            .zip(params.layers())
            .map(|(spec, p)| {
                let (weight_rows, weight_cols) = p.weight.dim();
                StoredLayer {
                    spec: *spec,
                    weight_rows,
                    weight_cols,
                    weight: p.weight.iter().copied().collect(),
                    bias: p.bias.to_vec(),
                }
            })
            .collect();
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            layers,
            metadata,
        })
    }

    /// Container with no network, only metadata (e.g. identified model coefficients).
    pub fn metadata_only(kind: &str, metadata: serde_json::Value) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            layers: Vec::new(),
            metadata,
        }
    }

    pub fn network(&self) -> Result<(Architecture, ParamSet)> {
        let arch = Architecture::new(self.layers.iter().map(|l| l.spec).collect())?;
        let params = self.params()?;
        arch.check_params(&params)?;
        Ok((arch, params))
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Stored weights without assembling an [`Architecture`].
    pub fn params(&self) -> Result<ParamSet> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.weight_rows, l.weight_cols), l.weight.clone())
                    .map_err(|e| Error::Shape(format!("checkpoint weight: {e}")))?;
                Ok(LayerParams {
                    weight,
                    bias: Array1::from(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet::new(layers))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!(
                "checkpoint holds a `{}`, expected `{kind}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != FORMAT {
            return Err(Error::Config(format!("{}: not a checkpoint file", path.display())));
        }
        if ck.version != VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} unsupported (expected {VERSION})",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }
}

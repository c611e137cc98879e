//! Persisted models and PCA projections.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, Ix1, Ix2, Ix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{NormStats, PcaModel, StackSpec};
use crate::io::{read_container, write_container, Block};
use crate::model::{GrbmParams, MgrbmParams, ModelKind, ModelParams, RbmParams};
use crate::training::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const MODEL_TAG: &str = "MGRBM-MODEL";
pub const PCA_TAG: &str = "MGRBM-PCA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub source: String,
}

/// A trained model plus everything extraction needs to reproduce its input
/// pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: ModelParams,
    pub stack: StackSpec,
    pub norm: Option<NormStats>,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct NormBody {
    mean: Block,
    std: Block,
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    schema_version: u32,
    kind: ModelKind,
    params: BTreeMap<String, Block>,
    stack_spec: StackSpec,
    norm_stats: Option<NormBody>,
    provenance: Option<Provenance>,
}

fn block1(a: &Array1<f64>) -> Block {
    Block::encode(a.shape(), a.iter())
}

fn block2(a: &Array2<f64>) -> Block {
    Block::encode(a.shape(), a.iter())
}

fn params_to_blocks(model: &ModelParams) -> BTreeMap<String, Block> {
    let mut out = BTreeMap::new();
    match model {
        ModelParams::Rbm(p) => {
            out.insert("w".into(), block2(&p.w));
            out.insert("visible_bias".into(), block1(&p.visible_bias));
            out.insert("hidden_bias".into(), block1(&p.hidden_bias));
        }
        ModelParams::Grbm(p) => {
            out.insert("w".into(), block2(&p.w));
            out.insert("visible_bias".into(), block1(&p.visible_bias));
            out.insert("hidden_bias".into(), block1(&p.hidden_bias));
            out.insert("sigma".into(), block1(&p.sigma));
        }
        ModelParams::Mgrbm(p) => {
            out.insert("mu".into(), block2(&p.mu));
            out.insert("factors".into(), Block::encode(p.factors.shape(), p.factors.iter()));
            out.insert("w".into(), block2(&p.w));
            out.insert("hidden_bias".into(), block1(&p.hidden_bias));
        }
    }
    out
}

struct Blocks(BTreeMap<String, Block>);

impl Blocks {
    fn raw(&self, name: &str) -> Result<ArrayD<f64>> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter block {name:?}")))?
            .decode(name)
    }

    fn vector(&self, name: &str) -> Result<Array1<f64>> {
        self.raw(name)?
            .into_dimensionality::<Ix1>()
            .map_err(|_| Error::Shape(format!("block {name} must be a vector")))
    }

    fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        self.raw(name)?
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::Shape(format!("block {name} must be a matrix")))
    }

    fn cube(&self, name: &str) -> Result<Array3<f64>> {
        self.raw(name)?
            .into_dimensionality::<Ix3>()
            .map_err(|_| Error::Shape(format!("block {name} must be 3-dimensional")))
    }
}

fn params_from_blocks(kind: ModelKind, blocks: Blocks) -> Result<ModelParams> {
    Ok(match kind {
        ModelKind::Rbm => RbmParams::new(
            blocks.matrix("w")?,
            blocks.vector("visible_bias")?,
            blocks.vector("hidden_bias")?,
        )?
        .into(),
        ModelKind::Grbm => GrbmParams::new(
            blocks.matrix("w")?,
            blocks.vector("visible_bias")?,
            blocks.vector("hidden_bias")?,
            blocks.vector("sigma")?,
        )?
        .into(),
        ModelKind::Mgrbm => MgrbmParams::new(
            blocks.matrix("mu")?,
            blocks.cube("factors")?,
            blocks.matrix("w")?,
            blocks.vector("hidden_bias")?,
        )?
        .into(),
    })
}

fn check_schema(body: &serde_json::Value) -> Result<()> {
    let version = body
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("missing schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion(version.min(u32::MAX as u64) as u32));
    }
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let body = ModelBody {
        schema_version: SCHEMA_VERSION,
        kind: file.model.kind(),
        params: params_to_blocks(&file.model),
        stack_spec: file.stack,
        norm_stats: file.norm.as_ref().map(|n| NormBody {
            mean: Block::encode(&[n.mean.len()], &n.mean),
            std: Block::encode(&[n.std.len()], &n.std),
        }),
        provenance: file.provenance.clone(),
    };
    write_container(path, MODEL_TAG, &body)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let value = read_container(path, MODEL_TAG)?;
    check_schema(&value)?;
    let body: ModelBody = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let model = params_from_blocks(body.kind, Blocks(body.params))?;
    let norm = match body.norm_stats {
        Some(n) => {
            let mean = n.mean.decode("norm mean")?.iter().copied().collect::<Vec<_>>();
            let std = n.std.decode("norm std")?.iter().copied().collect::<Vec<_>>();
            if mean.len() != model.visible_dim() || std.len() != model.visible_dim() {
                return Err(Error::Shape(format!(
                    "normalizer has {} dimensions, model visible layer has {}",
                    mean.len(),
                    model.visible_dim()
                )));
            }
            Some(NormStats { mean, std })
        }
        None => None,
    };
    body.stack_spec.validate()?;
    if let ModelParams::Mgrbm(p) = &model {
        if p.dim() != body.stack_spec.context {
            return Err(Error::Shape(format!(
                "mgrbm unit dimension {} differs from stored context {}",
                p.dim(),
                body.stack_spec.context
            )));
        }
    }
    Ok(ModelFile { model, stack: body.stack_spec, norm, provenance: body.provenance })
}

#[derive(Serialize, Deserialize)]
struct PcaBody {
    schema_version: u32,
    mean: Block,
    components: Block,
    eigenvalues: Block,
    coverage: f64,
}

pub fn save_pca(path: impl AsRef<Path>, pca: &PcaModel) -> Result<()> {
    let body = PcaBody {
        schema_version: SCHEMA_VERSION,
        mean: Block::encode(&[pca.mean.len()], &pca.mean),
        components: block2(&pca.components),
        eigenvalues: Block::encode(&[pca.eigenvalues.len()], &pca.eigenvalues),
        coverage: pca.coverage,
    };
    write_container(path, PCA_TAG, &body)
}

pub fn load_pca(path: impl AsRef<Path>) -> Result<PcaModel> {
    let value = read_container(path, PCA_TAG)?;
    check_schema(&value)?;
    let body: PcaBody = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let components = body
        .components
        .decode("components")?
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::Shape("PCA components must be a matrix".into()))?;
    let mean: Vec<f64> = body.mean.decode("mean")?.iter().copied().collect();
    let eigenvalues: Vec<f64> = body.eigenvalues.decode("eigenvalues")?.iter().copied().collect();
    if mean.len() != components.nrows() || eigenvalues.len() != components.nrows() {
        return Err(Error::Shape("PCA mean/eigenvalue length differs from component rows".into()));
    }
    Ok(PcaModel { mean, components, eigenvalues, coverage: body.coverage })
}

//! Acoustic feature pipeline: context stacking, per-dimension
//! normalization, hidden-posterior extraction and PCA.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::symmetric_eigen;
use crate::model::{ModelKind, ModelParams};

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// T frames of D coefficients each.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub data: Array2<f64>,
    pub frame_period: Option<f64>,
    pub source: String,
}

impl FrameMatrix {
    pub fn new(data: Array2<f64>, source: impl Into<String>) -> Result<Self> {
        let m = FrameMatrix { data, frame_period: None, source: source.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Error::Empty("frame matrix".into()));
        }
        if let Some(((row, col), x)) = self.data.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Err(Error::NonFinite(format!("frame matrix at row {row}, column {col} ({x})")));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One `D·C` vector; frame `c` occupies entries `c*D .. (c+1)*D`.
    Flat,
    /// `D` units of dimension `C`; unit `k` holds coefficient `k` of each frame.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Out-of-range frames repeat the nearest boundary frame.
    Replicate,
    ZeroPad,
    /// Only frames with a full window produce output.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSpec {
    pub context: usize,
    pub layout: Layout,
    pub edge: EdgePolicy,
}

impl Default for StackSpec {
    fn default() -> Self {
        StackSpec { context: 9, layout: Layout::Flat, edge: EdgePolicy::Replicate }
    }
}

impl StackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.context == 0 || self.context.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!(
                "context length must be a positive odd number, got {}",
                self.context
            )));
        }
        Ok(())
    }

    /// Layout an untrained model of `kind` expects.
    pub fn layout_for(kind: ModelKind) -> Layout {
        match kind {
            ModelKind::Mgrbm => Layout::Block,
            ModelKind::Rbm | ModelKind::Grbm => Layout::Flat,
        }
    }
}

/// Stacked context windows, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDataset {
    pub data: Array2<f64>,
    pub layout: Layout,
    pub context: usize,
    pub frame_dim: usize,
    /// Source frame index of each row.
    pub centers: Vec<usize>,
}

/// Position in the block layout of flat-layout entry `c*D + k`.
pub fn flat_to_block_index(flat: usize, frame_dim: usize, context: usize) -> usize {
    let (c, k) = (flat / frame_dim, flat % frame_dim);
    k * context + c
}

pub fn stack_context(frames: &FrameMatrix, spec: &StackSpec) -> Result<StackedDataset> {
    spec.validate()?;
    frames.validate()?;
    let (t_len, dim) = frames.data.dim();
    let half = (spec.context / 2) as isize;
    let centers: Vec<usize> = match spec.edge {
        EdgePolicy::Drop => {
            if t_len < spec.context {
                return Err(Error::Empty(format!(
                    "stacked dataset: {t_len} frames cannot fill a {}-frame window under the drop policy",
                    spec.context
                )));
            }
            (half as usize..t_len - half as usize).collect()
        }
        _ => (0..t_len).collect(),
    };

    let width = dim * spec.context;
    let mut data = Array2::zeros((centers.len(), width));
    for (row, &t) in centers.iter().enumerate() {
        for c in 0..spec.context {
            let src = t as isize + c as isize - half;
            let frame = if (0..t_len as isize).contains(&src) {
                Some(src as usize)
            } else {
                match spec.edge {
                    EdgePolicy::Replicate => Some(src.clamp(0, t_len as isize - 1) as usize),
                    EdgePolicy::ZeroPad => None,
                    EdgePolicy::Drop => unreachable!("drop keeps full windows only"),
                }
            };
            let Some(f) = frame else { continue };
            for k in 0..dim {
                let col = match spec.layout {
                    Layout::Flat => c * dim + k,
                    Layout::Block => k * spec.context + c,
                };
                data[[row, col]] = frames.data[[f, k]];
            }
        }
    }
    Ok(StackedDataset { data, layout: spec.layout, context: spec.context, frame_dim: dim, centers })
}

/// Per-dimension mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_normalizer(data: ArrayView2<f64>) -> Result<NormStats> {
    if data.nrows() == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let std = data.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    Ok(NormStats { mean: mean.to_vec(), std: std.to_vec() })
}

pub fn apply_normalizer(stats: &NormStats, data: ArrayView2<f64>) -> Result<Array2<f64>> {
    if data.ncols() != stats.mean.len() {
        return Err(Error::Shape(format!(
            "normalizer fitted on {} dimensions, data has {}",
            stats.mean.len(),
            data.ncols()
        )));
    }
    let mean = Array1::from(stats.mean.clone());
    let std = Array1::from(stats.std.clone());
    Ok((&data - &mean) / &std)
}

/// Hidden posteriors of every stacked row: the G-feature (GRBM) or
/// M-feature (MGRBM) matrix.
pub fn extract(model: &ModelParams, stacked: &StackedDataset) -> Result<Array2<f64>> {
    match (model, stacked.layout) {
        (ModelParams::Mgrbm(p), Layout::Block) => {
            if p.dim() != stacked.context || p.units() != stacked.frame_dim {
                return Err(Error::Layout(format!(
                    "model has {} units of dimension {}, data has {} coefficients × {} frames",
                    p.units(),
                    p.dim(),
                    stacked.frame_dim,
                    stacked.context
                )));
            }
        }
        (ModelParams::Mgrbm(_), Layout::Flat) => {
            return Err(Error::Layout("mgrbm needs block-layout input, got flat".into()));
        }
        (_, Layout::Block) => {
            return Err(Error::Layout(format!("{} needs flat-layout input, got block", model.kind())));
        }
        (_, Layout::Flat) => {}
    }
    model.hidden_posterior_batch(stacked.data.view())
}

/// Principal components of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// input_dim × out_dim, orthonormal columns.
    pub components: Array2<f64>,
    /// All input_dim eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of the total eigenvalue mass kept by the retained components.
    pub coverage: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    /// Coverage as a percentage with one decimal, e.g. `91.8%`.
    pub fn coverage_percent(&self) -> String {
        format!("{:.1}%", self.coverage * 100.0)
    }

    pub fn report(&self) -> String {
        format!(
            "coverage: {} (top {} of {} eigenvalues)",
            self.coverage_percent(),
            self.output_dim(),
            self.input_dim()
        )
    }
}

pub fn pca_fit(features: ArrayView2<f64>, out_dim: usize) -> Result<PcaModel> {
    let (n, input_dim) = features.dim();
    if out_dim == 0 || out_dim > input_dim {
        return Err(Error::InvalidParam(format!(
            "output dimension {out_dim} must be between 1 and the input dimension {input_dim}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParam("PCA needs at least two samples".into()));
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = &features - &mean;
    let covariance = centered.t().dot(&centered) / (n - 1) as f64;
    let (values, vectors) = symmetric_eigen(covariance.view());
    let eigenvalues: Vec<f64> = values.into_iter().map(|x| if (-1e-10..0.0).contains(&x) { 0.0 } else { x }).collect();

    let mut components = vectors.slice(ndarray::s![.., ..out_dim]).to_owned();
    for mut col in components.columns_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    let total: f64 = eigenvalues.iter().sum();
    let kept: f64 = eigenvalues[..out_dim].iter().sum();
    let coverage = if total > 0.0 { (kept / total).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PcaModel { mean: mean.to_vec(), components, eigenvalues, coverage })
}

pub fn pca_apply(pca: &PcaModel, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != pca.input_dim() {
        return Err(Error::Shape(format!(
            "PCA fitted on {} dimensions, features have {}",
            pca.input_dim(),
            features.ncols()
        )));
    }
    let mean = Array1::from(pca.mean.clone());
    Ok((&features - &mean).dot(&pca.components))
}

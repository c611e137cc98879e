//! The three model parameterizations, their energies, exact conditionals and
//! block Gibbs sampling.
//!
//! Visible states are flat real vectors. For the multivariate Gaussian model
//! the vector is in block layout: unit `i` occupies entries
//! `i*dim .. (i+1)*dim`. Hidden states are vectors of 0.0/1.0. Batched
//! operations take one state per row.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{determinant, inverse, sigmoid, softplus};

/// Smallest |det B_i| accepted for a multivariate Gaussian model.
pub const DEFAULT_DET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rbm,
    Grbm,
    Mgrbm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Rbm => "rbm",
            ModelKind::Grbm => "grbm",
            ModelKind::Mgrbm => "mgrbm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbm" => Ok(ModelKind::Rbm),
            "grbm" => Ok(ModelKind::Grbm),
            "mgrbm" => Ok(ModelKind::Mgrbm),
            other => Err(Error::InvalidParam(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Trainable parameter groups. Each group gets its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// `W` (all kinds).
    Weights,
    /// `a` for RBM/GRBM, `mu` for MGRBM.
    VisibleBias,
    /// `b` (all kinds).
    HiddenBias,
    /// The `B_i` factors of an MGRBM.
    Precision,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Weights => "W",
            ParamGroup::VisibleBias => "visible bias",
            ParamGroup::HiddenBias => "hidden bias",
            ParamGroup::Precision => "B",
        }
    }
}

/// Binary RBM: `E(v,h) = -a'v - b'h - v'Wh`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// Nv × Nh.
    pub w: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

/// Gaussian-Bernoulli RBM with per-unit standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct GrbmParams {
    /// Nv × Nh.
    pub w: Array2<f64>,
    /// Gaussian means `a`.
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub sigma: Array1<f64>,
}

/// Multivariate Gaussian RBM.
///
/// Each of the `units` visible units is a `dim`-dimensional vector with
/// precision `B_i B_i'`. `w` stacks the `W_i` blocks vertically, so rows
/// `i*dim .. (i+1)*dim` hold `W_i` (dim × Nh).
#[derive(Debug, Clone, PartialEq)]
pub struct MgrbmParams {
    /// units × dim; row `i` is `mu_i`.
    pub mu: Array2<f64>,
    /// units × dim × dim; slice `i` is `B_i`.
    pub factors: Array3<f64>,
    /// (units·dim) × Nh.
    pub w: Array2<f64>,
    pub hidden_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Rbm(RbmParams),
    Grbm(GrbmParams),
    Mgrbm(MgrbmParams),
}

/// Exact distribution of the visible layer given a hidden state.
#[derive(Debug, Clone, PartialEq)]
pub enum VisibleConditional {
    Bernoulli(Array1<f64>),
    Gaussian {
        mean: Array1<f64>,
        variance: Array1<f64>,
    },
    MultivariateGaussian {
        /// units × dim.
        mean: Array2<f64>,
        /// units × dim × dim.
        covariance: Array3<f64>,
    },
}

fn check_finite<'a>(what: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: expected length {want}, got {got}")))
    }
}

impl RbmParams {
    pub fn new(w: Array2<f64>, visible_bias: Array1<f64>, hidden_bias: Array1<f64>) -> Result<Self> {
        let p = RbmParams { w, visible_bias, hidden_bias };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(visible: usize, hidden: usize) -> Self {
        RbmParams {
            w: Array2::zeros((visible, hidden)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("visible bias", self.visible_bias.len(), self.w.nrows())?;
        check_len("hidden bias", self.hidden_bias.len(), self.w.ncols())?;
        check_finite("W", &self.w)?;
        check_finite("visible bias", &self.visible_bias)?;
        check_finite("hidden bias", &self.hidden_bias)
    }
}

impl GrbmParams {
    pub fn new(
        w: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        sigma: Array1<f64>,
    ) -> Result<Self> {
        let p = GrbmParams { w, visible_bias, hidden_bias, sigma };
        p.validate()?;
        Ok(p)
    }

    /// Zero weights and biases with unit standard deviations.
    pub fn zeros(visible: usize, hidden: usize) -> Self {
        GrbmParams {
            w: Array2::zeros((visible, hidden)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
            sigma: Array1::ones(visible),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("visible bias", self.visible_bias.len(), self.w.nrows())?;
        check_len("sigma", self.sigma.len(), self.w.nrows())?;
        check_len("hidden bias", self.hidden_bias.len(), self.w.ncols())?;
        check_finite("W", &self.w)?;
        check_finite("visible bias", &self.visible_bias)?;
        check_finite("hidden bias", &self.hidden_bias)?;
        check_finite("sigma", &self.sigma)?;
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParam("sigma must be strictly positive".into()));
        }
        Ok(())
    }
}

impl MgrbmParams {
    pub fn new(
        mu: Array2<f64>,
        factors: Array3<f64>,
        w: Array2<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        let p = MgrbmParams { mu, factors, w, hidden_bias };
        p.validate()?;
        Ok(p)
    }

    /// Zero means, weights and biases; every `B_i` is the identity.
    pub fn zeros(units: usize, dim: usize, hidden: usize) -> Self {
        let mut factors = Array3::zeros((units, dim, dim));
        for i in 0..units {
            factors.slice_mut(s![i, .., ..]).diag_mut().fill(1.0);
        }
        MgrbmParams {
            mu: Array2::zeros((units, dim)),
            factors,
            w: Array2::zeros((units * dim, hidden)),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    pub fn units(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn factor(&self, unit: usize) -> ArrayView2<'_, f64> {
        self.factors.index_axis(Axis(0), unit)
    }

    /// `W_i`, dim × Nh.
    pub fn unit_weights(&self, unit: usize) -> ArrayView2<'_, f64> {
        let d = self.dim();
        self.w.slice(s![unit * d..(unit + 1) * d, ..])
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_floor(DEFAULT_DET_FLOOR)
    }

    pub fn validate_with_floor(&self, det_floor: f64) -> Result<()> {
        let (units, dim) = self.mu.dim();
        let fd = self.factors.dim();
        if fd != (units, dim, dim) {
            return Err(Error::Shape(format!(
                "B: expected {units}×{dim}×{dim}, got {}×{}×{}",
                fd.0, fd.1, fd.2
            )));
        }
        check_len("W rows", self.w.nrows(), units * dim)?;
        check_len("hidden bias", self.hidden_bias.len(), self.w.ncols())?;
        check_finite("mu", &self.mu)?;
        check_finite("B", &self.factors)?;
        check_finite("W", &self.w)?;
        check_finite("hidden bias", &self.hidden_bias)?;
        for i in 0..units {
            let det = determinant(self.factor(i));
            if !(det.abs() >= det_floor) {
                return Err(Error::SingularFactor { unit: i, det });
            }
        }
        Ok(())
    }

    /// `B_i^{-1}` for every unit.
    pub fn factor_inverses(&self) -> Result<Array3<f64>> {
        let (units, dim) = self.mu.dim();
        let mut out = Array3::zeros((units, dim, dim));
        for i in 0..units {
            let b = self.factor(i);
            let det = determinant(b);
            if !(det.abs() >= DEFAULT_DET_FLOOR) {
                return Err(Error::SingularFactor { unit: i, det });
            }
            let inv = inverse(b).ok_or(Error::SingularFactor { unit: i, det })?;
            out.slice_mut(s![i, .., ..]).assign(&inv);
        }
        Ok(out)
    }

    /// Rows become `[v_1' B_1, ..., v_N' B_N]`, i.e. each unit mapped by `B_i'`.
    fn transform_visible(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros(v.raw_dim());
        for i in 0..self.units() {
            let cols = s![.., i * d..(i + 1) * d];
            out.slice_mut(cols).assign(&v.slice(cols).dot(&self.factor(i)));
        }
        out
    }
}

/// The MGRBM whose energy equals the given GRBM's for every state:
/// `d = 1`, `mu_i = a_i`, `B_i = [1/sigma_i]`, `W_i` = row `i` of `W`.
pub fn mgrbm_from_grbm(g: &GrbmParams) -> MgrbmParams {
    let nv = g.w.nrows();
    let mu = g.visible_bias.clone().insert_axis(Axis(1));
    let factors = Array3::from_shape_fn((nv, 1, 1), |(i, _, _)| 1.0 / g.sigma[i]);
    MgrbmParams {
        mu,
        factors,
        w: g.w.clone(),
        hidden_bias: g.hidden_bias.clone(),
    }
}

impl From<RbmParams> for ModelParams {
    fn from(p: RbmParams) -> Self {
        ModelParams::Rbm(p)
    }
}

impl From<GrbmParams> for ModelParams {
    fn from(p: GrbmParams) -> Self {
        ModelParams::Grbm(p)
    }
}

impl From<MgrbmParams> for ModelParams {
    fn from(p: MgrbmParams) -> Self {
        ModelParams::Mgrbm(p)
    }
}

fn bernoulli_draw<R: Rng + ?Sized>(probs: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Rbm(_) => ModelKind::Rbm,
            ModelParams::Grbm(_) => ModelKind::Grbm,
            ModelParams::Mgrbm(_) => ModelKind::Mgrbm,
        }
    }

    /// Length of the flat visible vector.
    pub fn visible_dim(&self) -> usize {
        match self {
            ModelParams::Rbm(p) => p.w.nrows(),
            ModelParams::Grbm(p) => p.w.nrows(),
            ModelParams::Mgrbm(p) => p.w.nrows(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            ModelParams::Rbm(p) => p.w.ncols(),
            ModelParams::Grbm(p) => p.w.ncols(),
            ModelParams::Mgrbm(p) => p.w.ncols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelParams::Rbm(p) => p.validate(),
            ModelParams::Grbm(p) => p.validate(),
            ModelParams::Mgrbm(p) => p.validate(),
        }
    }

    /// Trainable arrays in a fixed order. GRBM `sigma` is not trainable.
    pub fn groups(&self) -> Vec<(ParamGroup, ArrayViewD<'_, f64>)> {
        match self {
            ModelParams::Rbm(p) => vec![
                (ParamGroup::Weights, p.w.view().into_dyn()),
                (ParamGroup::VisibleBias, p.visible_bias.view().into_dyn()),
                (ParamGroup::HiddenBias, p.hidden_bias.view().into_dyn()),
            ],
            ModelParams::Grbm(p) => vec![
                (ParamGroup::Weights, p.w.view().into_dyn()),
                (ParamGroup::VisibleBias, p.visible_bias.view().into_dyn()),
                (ParamGroup::HiddenBias, p.hidden_bias.view().into_dyn()),
            ],
            ModelParams::Mgrbm(p) => vec![
                (ParamGroup::Weights, p.w.view().into_dyn()),
                (ParamGroup::VisibleBias, p.mu.view().into_dyn()),
                (ParamGroup::HiddenBias, p.hidden_bias.view().into_dyn()),
                (ParamGroup::Precision, p.factors.view().into_dyn()),
            ],
        }
    }

    pub fn groups_mut(&mut self) -> Vec<(ParamGroup, ArrayViewMutD<'_, f64>)> {
        match self {
            ModelParams::Rbm(p) => vec![
                (ParamGroup::Weights, p.w.view_mut().into_dyn()),
                (ParamGroup::VisibleBias, p.visible_bias.view_mut().into_dyn()),
                (ParamGroup::HiddenBias, p.hidden_bias.view_mut().into_dyn()),
            ],
            ModelParams::Grbm(p) => vec![
                (ParamGroup::Weights, p.w.view_mut().into_dyn()),
                (ParamGroup::VisibleBias, p.visible_bias.view_mut().into_dyn()),
                (ParamGroup::HiddenBias, p.hidden_bias.view_mut().into_dyn()),
            ],
            ModelParams::Mgrbm(p) => vec![
                (ParamGroup::Weights, p.w.view_mut().into_dyn()),
                (ParamGroup::VisibleBias, p.mu.view_mut().into_dyn()),
                (ParamGroup::HiddenBias, p.hidden_bias.view_mut().into_dyn()),
                (ParamGroup::Precision, p.factors.view_mut().into_dyn()),
            ],
        }
    }

    fn check_visible_cols(&self, cols: usize) -> Result<()> {
        check_len("visible state", cols, self.visible_dim())
    }

    fn check_hidden_cols(&self, cols: usize) -> Result<()> {
        check_len("hidden state", cols, self.hidden_dim())
    }

    /// `E(v, h)` for a single state.
    pub fn energy(&self, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
        self.check_visible_cols(v.len())?;
        self.check_hidden_cols(h.len())?;
        check_finite("visible state", v)?;
        check_finite("hidden state", h)?;
        Ok(match self {
            ModelParams::Rbm(p) => {
                -p.visible_bias.dot(&v) - p.hidden_bias.dot(&h) - v.dot(&p.w.dot(&h))
            }
            ModelParams::Grbm(p) => {
                let wh = p.w.dot(&h);
                let mut e = -p.hidden_bias.dot(&h);
                for i in 0..v.len() {
                    let z = v[i] - p.visible_bias[i];
                    let s = p.sigma[i];
                    e += z * z / (2.0 * s * s) - wh[i] * v[i] / s;
                }
                e
            }
            ModelParams::Mgrbm(p) => {
                let d = p.dim();
                let wh = p.w.dot(&h);
                let mut e = -p.hidden_bias.dot(&h);
                for i in 0..p.units() {
                    let b = p.factor(i);
                    let vi = v.slice(s![i * d..(i + 1) * d]);
                    let centered = &vi - &p.mu.row(i);
                    let y = b.t().dot(&centered);
                    e += 0.5 * y.dot(&y);
                    e -= vi.dot(&b.dot(&wh.slice(s![i * d..(i + 1) * d])));
                }
                e
            }
        })
    }

    /// Total input to each hidden unit, one row per visible state.
    pub fn hidden_preactivation(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible_cols(v.ncols())?;
        let mut pre = match self {
            ModelParams::Rbm(p) => v.dot(&p.w),
            ModelParams::Grbm(p) => (&v / &p.sigma).dot(&p.w),
            ModelParams::Mgrbm(p) => p.transform_visible(v).dot(&p.w),
        };
        pre += &self.hidden_bias();
        Ok(pre)
    }

    fn hidden_bias(&self) -> ArrayView1<'_, f64> {
        match self {
            ModelParams::Rbm(p) => p.hidden_bias.view(),
            ModelParams::Grbm(p) => p.hidden_bias.view(),
            ModelParams::Mgrbm(p) => p.hidden_bias.view(),
        }
    }

    /// `p(h_j = 1 | v)` for each row of `v`.
    pub fn hidden_posterior_batch(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.hidden_preactivation(v)?.mapv_into(sigmoid))
    }

    pub fn hidden_posterior(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        let rows = v.insert_axis(Axis(0));
        Ok(self.hidden_posterior_batch(rows)?.row(0).to_owned())
    }

    /// Mean of `p(v | h)` for each row of `h` (Bernoulli probabilities for
    /// the binary model).
    pub fn visible_mean_batch(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_hidden_cols(h.ncols())?;
        Ok(match self {
            ModelParams::Rbm(p) => (h.dot(&p.w.t()) + &p.visible_bias).mapv_into(sigmoid),
            ModelParams::Grbm(p) => h.dot(&p.w.t()) * &p.sigma + &p.visible_bias,
            ModelParams::Mgrbm(p) => {
                let inverses = p.factor_inverses()?;
                let u = h.dot(&p.w.t());
                mgrbm_mean(p, &inverses, u)
            }
        })
    }

    pub fn visible_conditional(&self, h: ArrayView1<f64>) -> Result<VisibleConditional> {
        let mean = self.visible_mean_batch(h.insert_axis(Axis(0)))?.row(0).to_owned();
        Ok(match self {
            ModelParams::Rbm(_) => VisibleConditional::Bernoulli(mean),
            ModelParams::Grbm(p) => VisibleConditional::Gaussian {
                mean,
                variance: p.sigma.mapv(|s| s * s),
            },
            ModelParams::Mgrbm(p) => {
                let (units, d) = p.mu.dim();
                let inverses = p.factor_inverses()?;
                let mut covariance = Array3::zeros((units, d, d));
                for i in 0..units {
                    let inv = inverses.index_axis(Axis(0), i);
                    // (B B')^{-1} = B^{-T} B^{-1}
                    covariance.slice_mut(s![i, .., ..]).assign(&inv.t().dot(&inv));
                }
                VisibleConditional::MultivariateGaussian {
                    mean: mean.into_shape_with_order((units, d)).expect("block layout"),
                    covariance,
                }
            }
        })
    }

    pub fn sample_hidden_batch<R: Rng + ?Sized>(&self, v: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>> {
        let probs = self.hidden_posterior_batch(v)?;
        Ok(bernoulli_draw(&probs, rng))
    }

    pub fn sample_hidden<R: Rng + ?Sized>(&self, v: ArrayView1<f64>, rng: &mut R) -> Result<Array1<f64>> {
        Ok(self.sample_hidden_batch(v.insert_axis(Axis(0)), rng)?.row(0).to_owned())
    }

    pub fn sample_visible_batch<R: Rng + ?Sized>(&self, h: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>> {
        self.check_hidden_cols(h.ncols())?;
        Ok(match self {
            ModelParams::Rbm(_) => {
                let probs = self.visible_mean_batch(h)?;
                bernoulli_draw(&probs, rng)
            }
            ModelParams::Grbm(p) => {
                let mut v = self.visible_mean_batch(h)?;
                for mut row in v.rows_mut() {
                    Zip::from(&mut row).and(&p.sigma).for_each(|x, &s| {
                        let z: f64 = StandardNormal.sample(rng);
                        *x += s * z;
                    });
                }
                v
            }
            ModelParams::Mgrbm(p) => {
                let inverses = p.factor_inverses()?;
                let mut v = mgrbm_mean(p, &inverses, h.dot(&p.w.t()));
                let d = p.dim();
                for mut row in v.rows_mut() {
                    for i in 0..p.units() {
                        let z: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                        // B^{-T} z has covariance B^{-T} B^{-1}
                        let noise = inverses.index_axis(Axis(0), i).t().dot(&z);
                        let mut block = row.slice_mut(s![i * d..(i + 1) * d]);
                        block += &noise;
                    }
                }
                v
            }
        })
    }

    pub fn sample_visible<R: Rng + ?Sized>(&self, h: ArrayView1<f64>, rng: &mut R) -> Result<Array1<f64>> {
        Ok(self.sample_visible_batch(h.insert_axis(Axis(0)), rng)?.row(0).to_owned())
    }

    /// One full alternating update per row: `h ~ p(h|v)`, then `v' ~ p(v|h)`.
    pub fn gibbs_sweep_batch<R: Rng + ?Sized>(
        &self,
        v: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let h = self.sample_hidden_batch(v, rng)?;
        let v_next = self.sample_visible_batch(h.view(), rng)?;
        Ok((h, v_next))
    }

    pub fn gibbs_sweep<R: Rng + ?Sized>(
        &self,
        v: ArrayView1<f64>,
        rng: &mut R,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let (h, v_next) = self.gibbs_sweep_batch(v.insert_axis(Axis(0)), rng)?;
        Ok((h.row(0).to_owned(), v_next.row(0).to_owned()))
    }

    /// `F(v) = -log sum_h exp(-E(v,h))` per row.
    pub fn free_energy_batch(&self, v: ArrayView2<f64>) -> Result<Array1<f64>> {
        let pre = self.hidden_preactivation(v)?;
        let softplus_sum = pre.mapv(softplus).sum_axis(Axis(1));
        let visible_term: Array1<f64> = match self {
            ModelParams::Rbm(p) => -v.dot(&p.visible_bias),
            ModelParams::Grbm(p) => v
                .rows()
                .into_iter()
                .map(|row| {
                    Zip::from(&row)
                        .and(&p.visible_bias)
                        .and(&p.sigma)
                        .fold(0.0, |acc, &x, &a, &s| acc + (x - a) * (x - a) / (2.0 * s * s))
                })
                .collect(),
            ModelParams::Mgrbm(p) => {
                let d = p.dim();
                v.rows()
                    .into_iter()
                    .map(|row| {
                        (0..p.units())
                            .map(|i| {
                                let centered = &row.slice(s![i * d..(i + 1) * d]) - &p.mu.row(i);
                                let y = p.factor(i).t().dot(&centered);
                                0.5 * y.dot(&y)
                            })
                            .sum()
                    })
                    .collect()
            }
        };
        Ok(visible_term - softplus_sum)
    }

    pub fn free_energy(&self, v: ArrayView1<f64>) -> Result<f64> {
        Ok(self.free_energy_batch(v.insert_axis(Axis(0)))?[0])
    }
}

/// `mu_i + B_i^{-T} u_i` per row, where `u = h W'` in block layout.
fn mgrbm_mean(p: &MgrbmParams, inverses: &Array3<f64>, u: Array2<f64>) -> Array2<f64> {
    let d = p.dim();
    let mut out = u;
    for i in 0..p.units() {
        let cols = s![.., i * d..(i + 1) * d];
        // row form: (B^{-T} u)' = u' B^{-1}
        let mapped = out.slice(cols).dot(&inverses.index_axis(Axis(0), i)) + p.mu.row(i);
        out.slice_mut(cols).assign(&mapped);
    }
    out
}

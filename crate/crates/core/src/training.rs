//! Maximum-likelihood learning with CD-k or persistent CD.
//!
//! Sufficient statistics hold batch averages of `-dE/dθ` for every trainable
//! group, with one exception: the MGRBM `B` statistic is kept in the form
//! `(v-μ)(v-μ)'B - v h'W'`, which is `+dE/dB`. [`gradient`] flips it so the
//! returned delta ascends the log-likelihood.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::trace;
use crate::model::{GrbmParams, MgrbmParams, ModelKind, ModelParams, ParamGroup, RbmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Contrastive divergence with `k` Gibbs sweeps from the data.
    Cd { k: usize },
    /// Persistent CD: one sweep per particle per update.
    Pcd,
}

/// Rescaling applied to every `B_i` after each MGRBM update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BNormalization {
    /// `B_i <- B_i * d / trace(B_i)`; the identity is a fixed point.
    TraceD,
    /// `B_i <- B_i / trace(B_i)`.
    Trace1,
    Off,
}

/// Orientation of the `B` component of the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BGradientSign {
    /// `-(v-μ)(v-μ)'B + v h'W'`, the derivative of `-E`.
    EnergyDerived,
    /// The opposite orientation, kept for comparison experiments only.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_weights: f64,
    pub lr_biases: f64,
    pub lr_b: f64,
    pub momentum: f64,
    pub particle_count: usize,
    pub seed: u64,
    pub b_normalization: BNormalization,
    pub b_gradient_sign: BGradientSign,
    /// Data-parallel workers for batch statistics. Results are
    /// bit-reproducible for a fixed worker count.
    pub workers: usize,
}

impl Default for TrainConfig {
    /// The feature-model recipe: PCD, batch 128, as many particles as the
    /// batch, no momentum, lr 0.001 for weights and biases, 0.0001 for `B`,
    /// 400 epochs.
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Pcd,
            batch_size: 128,
            epochs: 400,
            lr_weights: 0.001,
            lr_biases: 0.001,
            lr_b: 0.0001,
            momentum: 0.0,
            particle_count: 128,
            seed: 0,
            b_normalization: BNormalization::TraceD,
            b_gradient_sign: BGradientSign::EnergyDerived,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParam(msg.to_string()));
        if let Algorithm::Cd { k: 0 } = self.algorithm {
            return bad("CD k must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.particle_count == 0 {
            return bad("particle count must be positive");
        }
        if self.workers == 0 {
            return bad("worker count must be positive");
        }
        for (name, lr) in [("lr_weights", self.lr_weights), ("lr_biases", self.lr_biases), ("lr_b", self.lr_b)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be a positive real")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn learning_rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Weights => self.lr_weights,
            ParamGroup::VisibleBias | ParamGroup::HiddenBias => self.lr_biases,
            ParamGroup::Precision => self.lr_b,
        }
    }
}

/// Arrays keyed by parameter group, in the order of [`ModelParams::groups`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupArrays {
    pub groups: Vec<(ParamGroup, ArrayD<f64>)>,
}

impl GroupArrays {
    pub fn zeros_like(model: &ModelParams) -> Self {
        GroupArrays {
            groups: model
                .groups()
                .into_iter()
                .map(|(g, a)| (g, ArrayD::zeros(a.raw_dim())))
                .collect(),
        }
    }

    pub fn get(&self, group: ParamGroup) -> Option<&ArrayD<f64>> {
        self.groups.iter().find(|(g, _)| *g == group).map(|(_, a)| a)
    }

    fn check_compatible(&self, other: &GroupArrays) -> Result<()> {
        let same = self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|((g1, a1), (g2, a2))| g1 == g2 && a1.shape() == a2.shape());
        if same {
            Ok(())
        } else {
            Err(Error::Shape("parameter group layouts differ".into()))
        }
    }

    fn add_assign(&mut self, other: &GroupArrays) {
        for ((_, a), (_, b)) in self.groups.iter_mut().zip(&other.groups) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, a) in &mut self.groups {
            a.mapv_inplace(|x| x * factor);
        }
    }

    /// Frobenius norm per group.
    pub fn norms(&self) -> Vec<(ParamGroup, f64)> {
        self.groups
            .iter()
            .map(|(g, a)| (*g, a.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }
}

/// Batch-averaged sufficient statistics for one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats(pub GroupArrays);

/// An ascent direction on the log-likelihood, one array per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDelta(pub GroupArrays);

/// Momentum velocity, shaped like a [`ParamDelta`].
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub GroupArrays);

impl Velocity {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Velocity(GroupArrays::zeros_like(model))
    }
}

/// Persistent negative-phase chains, one visible state per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub states: Array2<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// `count` particles copied cyclically from the rows of `batch`.
    pub fn from_batch(batch: ArrayView2<f64>, count: usize) -> Result<Self> {
        if batch.nrows() == 0 {
            return Err(Error::Empty("batch for particle initialization".into()));
        }
        let idx: Vec<usize> = (0..count).map(|i| i % batch.nrows()).collect();
        Ok(ParticleSet { states: batch.select(Axis(0), &idx) })
    }
}

/// Sums (not averages) of the statistics over the rows of `v`, with the
/// hidden layer represented by its posterior probabilities `hprob`.
fn stat_sums(model: &ModelParams, v: ArrayView2<f64>, hprob: ArrayView2<f64>) -> GroupArrays {
    let groups = match model {
        ModelParams::Rbm(_) => vec![
            (ParamGroup::Weights, v.t().dot(&hprob).into_dyn()),
            (ParamGroup::VisibleBias, v.sum_axis(Axis(0)).into_dyn()),
            (ParamGroup::HiddenBias, hprob.sum_axis(Axis(0)).into_dyn()),
        ],
        ModelParams::Grbm(p) => {
            let scaled = &v / &p.sigma;
            let variance = p.sigma.mapv(|s| s * s);
            let centered_sum = (&v - &p.visible_bias).sum_axis(Axis(0)) / &variance;
            vec![
                (ParamGroup::Weights, scaled.t().dot(&hprob).into_dyn()),
                (ParamGroup::VisibleBias, centered_sum.into_dyn()),
                (ParamGroup::HiddenBias, hprob.sum_axis(Axis(0)).into_dyn()),
            ]
        }
        ModelParams::Mgrbm(p) => {
            let (units, d) = p.mu.dim();
            let mut mu_stat = Array2::zeros((units, d));
            let mut w_stat = Array2::zeros(p.w.raw_dim());
            let mut b_stat = Array3::zeros((units, d, d));
            for i in 0..units {
                let b = p.factor(i);
                let vi = v.slice(s![.., i * d..(i + 1) * d]);
                let centered = &vi - &p.mu.row(i);
                mu_stat
                    .row_mut(i)
                    .assign(&centered.sum_axis(Axis(0)).dot(&b.dot(&b.t())));
                let vh = vi.t().dot(&hprob);
                w_stat.slice_mut(s![i * d..(i + 1) * d, ..]).assign(&b.t().dot(&vh));
                let scatter = centered.t().dot(&centered).dot(&b);
                let cross = vh.dot(&p.unit_weights(i).t());
                b_stat.slice_mut(s![i, .., ..]).assign(&(scatter - cross));
            }
            vec![
                (ParamGroup::Weights, w_stat.into_dyn()),
                (ParamGroup::VisibleBias, mu_stat.into_dyn()),
                (ParamGroup::HiddenBias, hprob.sum_axis(Axis(0)).into_dyn()),
                (ParamGroup::Precision, b_stat.into_dyn()),
            ]
        }
    };
    GroupArrays { groups }
}

/// Average statistics over `v` using mean-field hidden probabilities.
pub fn stats_from_states(model: &ModelParams, v: ArrayView2<f64>) -> Result<SufficientStats> {
    if v.nrows() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    let hprob = model.hidden_posterior_batch(v)?;
    let mut sums = stat_sums(model, v, hprob.view());
    sums.scale(1.0 / v.nrows() as f64);
    Ok(SufficientStats(sums))
}

/// Data-phase statistics with `v` clamped to the batch and exact `p(h|v)`.
pub fn positive_stats(model: &ModelParams, batch: ArrayView2<f64>) -> Result<SufficientStats> {
    stats_from_states(model, batch)
}

/// Runs `k` Gibbs sweeps from every data row and averages the statistics of
/// the final reconstruction.
pub fn cd_negative_stats<R: Rng + ?Sized>(
    model: &ModelParams,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut R,
) -> Result<SufficientStats> {
    if k == 0 {
        return Err(Error::InvalidParam("CD k must be at least 1".into()));
    }
    let recon = reconstruct(model, batch, k, rng)?;
    stats_from_states(model, recon.view())
}

fn reconstruct<R: Rng + ?Sized>(model: &ModelParams, batch: ArrayView2<f64>, k: usize, rng: &mut R) -> Result<Array2<f64>> {
    let mut v = batch.to_owned();
    for _ in 0..k {
        v = model.gibbs_sweep_batch(v.view(), rng)?.1;
    }
    Ok(v)
}

/// One Gibbs sweep per particle; statistics are taken on the moved particles.
pub fn pcd_negative_stats<R: Rng + ?Sized>(
    model: &ModelParams,
    particles: &ParticleSet,
    rng: &mut R,
) -> Result<(SufficientStats, ParticleSet)> {
    if particles.is_empty() {
        return Err(Error::Empty("particle set".into()));
    }
    let (_, moved) = model.gibbs_sweep_batch(particles.states.view(), rng)?;
    let stats = stats_from_states(model, moved.view())?;
    Ok((stats, ParticleSet { states: moved }))
}

pub fn gradient(pos: &SufficientStats, neg: &SufficientStats) -> Result<ParamDelta> {
    gradient_with_sign(pos, neg, BGradientSign::EnergyDerived)
}

/// `pos - neg` per group; the `B` group is negated under
/// [`BGradientSign::EnergyDerived`].
pub fn gradient_with_sign(
    pos: &SufficientStats,
    neg: &SufficientStats,
    sign: BGradientSign,
) -> Result<ParamDelta> {
    pos.0.check_compatible(&neg.0)?;
    let groups = pos
        .0
        .groups
        .iter()
        .zip(&neg.0.groups)
        .map(|((g, p), (_, n))| {
            let diff = p - n;
            let diff = match (g, sign) {
                (ParamGroup::Precision, BGradientSign::EnergyDerived) => -diff,
                _ => diff,
            };
            (*g, diff)
        })
        .collect();
    Ok(ParamDelta(GroupArrays { groups }))
}

/// `velocity <- momentum * velocity + lr * delta; params <- params + velocity`,
/// followed by `B` normalization for an MGRBM.
pub fn apply_update(
    model: &ModelParams,
    delta: &ParamDelta,
    config: &TrainConfig,
    velocity: &Velocity,
) -> Result<(ModelParams, Velocity)> {
    let template = GroupArrays::zeros_like(model);
    template.check_compatible(&delta.0)?;
    template.check_compatible(&velocity.0)?;

    let mut next = model.clone();
    let mut next_velocity = velocity.clone();
    for (((group, mut param), (_, d)), (_, vel)) in next
        .groups_mut()
        .into_iter()
        .zip(&delta.0.groups)
        .zip(&mut next_velocity.0.groups)
    {
        let lr = config.learning_rate(group);
        Zip::from(&mut *vel).and(d).for_each(|v, &d| *v = config.momentum * *v + lr * d);
        param += &*vel;
        if param.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(group.name().to_string()));
        }
    }
    if let ModelParams::Mgrbm(p) = &next {
        if config.b_normalization != BNormalization::Off {
            next = ModelParams::Mgrbm(normalize_b(p, config.b_normalization)?);
        }
    }
    next.validate()?;
    Ok((next, next_velocity))
}

/// Rescales every `B_i` by its trace.
pub fn normalize_b(model: &MgrbmParams, mode: BNormalization) -> Result<MgrbmParams> {
    let mut out = model.clone();
    if mode == BNormalization::Off {
        return Ok(out);
    }
    let d = model.dim() as f64;
    for i in 0..model.units() {
        let tr = trace(model.factor(i));
        if !(tr.abs() >= 1e-12) {
            return Err(Error::ZeroTrace { unit: i, trace: tr });
        }
        let scale = match mode {
            BNormalization::TraceD => d / tr,
            BNormalization::Trace1 => 1.0 / tr,
            BNormalization::Off => unreachable!(),
        };
        out.factors.slice_mut(s![i, .., ..]).mapv_inplace(|x| x * scale);
    }
    Ok(out)
}

/// Starting point for training: weights `N(0, 0.01²)`, zero biases and means,
/// unit `sigma`, identity `B_i`. `units × dim` is the visible layout
/// (`dim = 1` for the binary and Gaussian kinds).
pub fn init_params<R: Rng + ?Sized>(
    kind: ModelKind,
    units: usize,
    dim: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<ModelParams> {
    if units == 0 || dim == 0 || hidden == 0 {
        return Err(Error::InvalidParam("model dimensions must be positive".into()));
    }
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let visible = units * dim;
    let w = Array2::from_shape_simple_fn((visible, hidden), || normal.sample(rng));
    Ok(match kind {
        ModelKind::Rbm => RbmParams { w, ..RbmParams::zeros(visible, hidden) }.into(),
        ModelKind::Grbm => GrbmParams { w, ..GrbmParams::zeros(visible, hidden) }.into(),
        ModelKind::Mgrbm => MgrbmParams { w, ..MgrbmParams::zeros(units, dim, hidden) }.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared difference between data and its mean-field reconstruction.
    pub recon_error: f64,
    pub loglik: Option<f64>,
    /// Mean gradient norm per group, keyed by group name.
    pub grad_norms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub fn train(
    model: &ModelParams,
    data: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    train_with_hook(model, data, config, |_, _| None)
}

struct ChunkResult {
    pos: GroupArrays,
    neg: GroupArrays,
    recon_sq: f64,
    particles: Option<Array2<f64>>,
}

fn chunk_step<R: Rng + ?Sized>(
    model: &ModelParams,
    data: ArrayView2<f64>,
    particles: Option<ArrayView2<f64>>,
    algorithm: Algorithm,
    rng: &mut R,
) -> Result<ChunkResult> {
    let mut pos = GroupArrays::zeros_like(model);
    let mut recon_sq = 0.0;
    if data.nrows() > 0 {
        let hprob = model.hidden_posterior_batch(data)?;
        pos = stat_sums(model, data, hprob.view());
        let recon = model.visible_mean_batch(hprob.view())?;
        recon_sq = (&recon - &data).mapv(|x| x * x).sum();
    }
    let (neg, particles) = match (algorithm, particles) {
        (Algorithm::Cd { k }, _) => {
            let mut neg = GroupArrays::zeros_like(model);
            if data.nrows() > 0 {
                let recon = reconstruct(model, data, k, rng)?;
                let hprob = model.hidden_posterior_batch(recon.view())?;
                neg = stat_sums(model, recon.view(), hprob.view());
            }
            (neg, None)
        }
        (Algorithm::Pcd, Some(states)) => {
            let mut neg = GroupArrays::zeros_like(model);
            let mut moved = states.to_owned();
            if states.nrows() > 0 {
                moved = model.gibbs_sweep_batch(states, rng)?.1;
                let hprob = model.hidden_posterior_batch(moved.view())?;
                neg = stat_sums(model, moved.view(), hprob.view());
            }
            (neg, Some(moved))
        }
        (Algorithm::Pcd, None) => unreachable!("PCD step without particles"),
    };
    Ok(ChunkResult { pos, neg, recon_sq, particles })
}

/// Splits `0..n` into `parts` contiguous ranges of near-equal length.
fn partition(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    (0..parts)
        .map(|p| (p * n / parts)..((p + 1) * n / parts))
        .collect()
}

/// Like [`train`], calling `hook(epoch, model)` after every epoch. A `Some`
/// return is recorded as that epoch's log-likelihood.
pub fn train_with_hook<F>(
    model: &ModelParams,
    data: ArrayView2<f64>,
    config: &TrainConfig,
    mut hook: F,
) -> Result<(ModelParams, TrainHistory)>
where
    F: FnMut(usize, &ModelParams) -> Option<f64>,
{
    config.validate()?;
    model.validate()?;
    if data.nrows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if data.ncols() != model.visible_dim() {
        return Err(Error::Shape(format!(
            "training data has {} columns, model expects {}",
            data.ncols(),
            model.visible_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model.clone();
    let mut velocity = Velocity::zeros_like(&model);
    let mut particles: Option<ParticleSet> = None;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.nrows()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut recon_sq = 0.0;
        let mut norm_sums: Vec<(ParamGroup, f64)> = Vec::new();
        let mut batches = 0usize;

        for (batch_index, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            if config.algorithm == Algorithm::Pcd && particles.is_none() {
                particles = Some(ParticleSet::from_batch(batch.view(), config.particle_count)?);
            }

            let (pos, neg, sq, moved) = if config.workers == 1 {
                let r = chunk_step(
                    &model,
                    batch.view(),
                    particles.as_ref().map(|p| p.states.view()),
                    config.algorithm,
                    &mut rng,
                )?;
                (r.pos, r.neg, r.recon_sq, r.particles)
            } else {
                let seeds: Vec<u64> = (0..config.workers).map(|_| rng.next_u64()).collect();
                let data_parts = partition(batch.nrows(), config.workers);
                let particle_parts = particles
                    .as_ref()
                    .map(|p| partition(p.len(), config.workers));
                let results: Vec<Result<ChunkResult>> = (0..config.workers)
                    .into_par_iter()
                    .map(|w| {
                        let mut worker_rng = ChaCha8Rng::seed_from_u64(seeds[w]);
                        let states = particles
                            .as_ref()
                            .zip(particle_parts.as_ref())
                            .map(|(p, parts)| p.states.slice(s![parts[w].clone(), ..]));
                        chunk_step(
                            &model,
                            batch.slice(s![data_parts[w].clone(), ..]),
                            states,
                            config.algorithm,
                            &mut worker_rng,
                        )
                    })
                    .collect();
                let mut pos = GroupArrays::zeros_like(&model);
                let mut neg = GroupArrays::zeros_like(&model);
                let mut sq = 0.0;
                let mut moved_parts = Vec::new();
                for r in results {
                    let r = r?;
                    pos.add_assign(&r.pos);
                    neg.add_assign(&r.neg);
                    sq += r.recon_sq;
                    if let Some(p) = r.particles {
                        moved_parts.push(p);
                    }
                }
                let moved = if moved_parts.is_empty() {
                    None
                } else {
                    let views: Vec<_> = moved_parts.iter().map(|p| p.view()).collect();
                    Some(ndarray::concatenate(Axis(0), &views).expect("particle chunks share width"))
                };
                (pos, neg, sq, moved)
            };

            let mut pos = pos;
            let mut neg = neg;
            pos.scale(1.0 / batch.nrows() as f64);
            let neg_count = match config.algorithm {
                Algorithm::Cd { .. } => batch.nrows(),
                Algorithm::Pcd => config.particle_count,
            };
            neg.scale(1.0 / neg_count as f64);
            if let Some(states) = moved {
                particles = Some(ParticleSet { states });
            }
            recon_sq += sq;

            let delta = gradient_with_sign(&SufficientStats(pos), &SufficientStats(neg), config.b_gradient_sign)?;
            let norms = delta.0.norms();
            if norm_sums.is_empty() {
                norm_sums = norms;
            } else {
                for ((_, acc), (_, n)) in norm_sums.iter_mut().zip(norms) {
                    *acc += n;
                }
            }
            let (next, next_velocity) = apply_update(&model, &delta, config, &velocity).map_err(|e| match e {
                Error::NonFinite(group) => Error::Divergence { epoch, batch: batch_index, group },
                other => other,
            })?;
            model = next;
            velocity = next_velocity;
            batches += 1;
        }

        let loglik = hook(epoch, &model);
        history.epochs.push(EpochRecord {
            epoch,
            recon_error: recon_sq / (data.nrows() * data.ncols()) as f64,
            loglik,
            grad_norms: norm_sums
                .into_iter()
                .map(|(g, n)| (g.name().to_string(), n / batches as f64))
                .collect(),
        });
    }
    Ok((model, history))
}

/// `max_i |trace(B_i) - d|`.
pub fn max_trace_deviation(model: &MgrbmParams) -> f64 {
    let d = model.dim() as f64;
    (0..model.units())
        .map(|i| (trace(model.factor(i)) - d).abs())
        .fold(0.0, f64::max)
}

/// Flattened view of all group entries, mostly for comparisons in tests.
pub fn flatten(groups: &GroupArrays) -> Array1<f64> {
    groups.groups.iter().flat_map(|(_, a)| a.iter().copied()).collect()
}

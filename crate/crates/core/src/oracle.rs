//! Exact inference for small models by enumerating hidden configurations.
//!
//! Gaussian visible layers are integrated in closed form, so only the
//! `2^Nh` hidden states are enumerated. Everything here is ground truth for
//! the learning rules and is meant for desk-scale models only.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{determinant, log_sum_exp, sigmoid, softplus};
use crate::model::{ModelKind, ModelParams, ParamGroup, RbmParams};
use crate::training::{GroupArrays, ParamDelta, SufficientStats};

/// Largest exponent `n` for which `2^n` configurations are enumerated.
pub const ENUMERATION_CAP: usize = 20;

fn check_cap(n: usize) -> Result<()> {
    if n > ENUMERATION_CAP {
        Err(Error::EnumerationCap { hidden: n, cap: ENUMERATION_CAP })
    } else {
        Ok(())
    }
}

/// All `2^n` binary vectors, one per row; row `c` has bit `j` of `c` in column `j`.
pub fn binary_configurations(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((1 << n, n), |(c, j)| ((c >> j) & 1) as f64)
}

/// `log p~(h) = log ∫ exp(-E(v,h)) dv` (or the sum over binary `v`) for each
/// row of `hs`.
fn hidden_log_weights(model: &ModelParams, hs: ArrayView2<f64>) -> Result<Array1<f64>> {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut out = Array1::zeros(hs.nrows());
    match model {
        ModelParams::Rbm(p) => {
            let pre = hs.dot(&p.w.t()) + &p.visible_bias;
            for (k, h) in hs.rows().into_iter().enumerate() {
                out[k] = p.hidden_bias.dot(&h) + pre.row(k).iter().map(|&x| softplus(x)).sum::<f64>();
            }
        }
        ModelParams::Grbm(p) => {
            let u = hs.dot(&p.w.t());
            let log_sigma: f64 = p.sigma.iter().map(|s| s.ln()).sum();
            let nv = p.sigma.len() as f64;
            for (k, h) in hs.rows().into_iter().enumerate() {
                let quad: f64 = (0..p.sigma.len())
                    .map(|i| p.visible_bias[i] / p.sigma[i] * u[[k, i]] + 0.5 * u[[k, i]] * u[[k, i]])
                    .sum();
                out[k] = p.hidden_bias.dot(&h) + nv * half_log_2pi + log_sigma + quad;
            }
        }
        ModelParams::Mgrbm(p) => {
            let d = p.dim();
            let mut constant = 0.0;
            for i in 0..p.units() {
                let det = determinant(p.factor(i));
                if !(det.abs() >= crate::model::DEFAULT_DET_FLOOR) {
                    return Err(Error::SingularFactor { unit: i, det });
                }
                constant += d as f64 * half_log_2pi - det.abs().ln();
            }
            let u = hs.dot(&p.w.t());
            // mu_i' B_i stacked, so the linear term is a single dot product
            let mut mu_b = Array1::zeros(p.units() * d);
            for i in 0..p.units() {
                mu_b.slice_mut(s![i * d..(i + 1) * d]).assign(&p.mu.row(i).dot(&p.factor(i)));
            }
            for (k, h) in hs.rows().into_iter().enumerate() {
                let uk = u.row(k);
                out[k] = p.hidden_bias.dot(&h) + constant + mu_b.dot(&uk) + 0.5 * uk.dot(&uk);
            }
        }
    }
    Ok(out)
}

/// `log Z`, summing the visible layer analytically and enumerating `h`.
pub fn exact_log_partition(model: &ModelParams) -> Result<f64> {
    check_cap(model.hidden_dim())?;
    let hs = binary_configurations(model.hidden_dim());
    let weights = hidden_log_weights(model, hs.view())?;
    Ok(log_sum_exp(weights.as_slice().expect("contiguous")))
}

/// Mean log-likelihood per example.
pub fn exact_loglik(model: &ModelParams, data: ArrayView2<f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let log_z = exact_log_partition(model)?;
    let free = model.free_energy_batch(data)?;
    Ok(-free.mean().expect("non-empty") - log_z)
}

/// Marginal `p(h)` over all hidden configurations (rows of
/// [`binary_configurations`]).
pub fn hidden_marginal(model: &ModelParams) -> Result<Array1<f64>> {
    check_cap(model.hidden_dim())?;
    let hs = binary_configurations(model.hidden_dim());
    let weights = hidden_log_weights(model, hs.view())?;
    let log_z = log_sum_exp(weights.as_slice().expect("contiguous"));
    Ok(weights.mapv(|w| (w - log_z).exp()))
}

/// Model expectations of every sufficient statistic under `p(v, h)`.
pub fn exact_model_stats(model: &ModelParams) -> Result<SufficientStats> {
    let hs = binary_configurations(model.hidden_dim());
    let probs = hidden_marginal(model)?;
    let mut acc = GroupArrays::zeros_like(model);
    let h_mean = probs.dot(&hs);

    match model {
        ModelParams::Rbm(p) => {
            let means = (hs.dot(&p.w.t()) + &p.visible_bias).mapv_into(sigmoid);
            let weighted = &means * &probs.view().insert_axis(Axis(1));
            acc.groups[0].1 = weighted.t().dot(&hs).into_dyn();
            acc.groups[1].1 = weighted.sum_axis(Axis(0)).into_dyn();
        }
        ModelParams::Grbm(p) => {
            let u = hs.dot(&p.w.t());
            // E[v|h] = a + sigma*u, so E[v/sigma h'] = (a/sigma + u) h'
            let scaled_mean = &u + &(&p.visible_bias / &p.sigma);
            let weighted = &scaled_mean * &probs.view().insert_axis(Axis(1));
            acc.groups[0].1 = weighted.t().dot(&hs).into_dyn();
            // E[(v-a)/sigma^2 | h] = u / sigma
            acc.groups[1].1 = (probs.dot(&u) / &p.sigma).into_dyn();
        }
        ModelParams::Mgrbm(p) => {
            let (units, d) = p.mu.dim();
            let inverses = p.factor_inverses()?;
            let u = hs.dot(&p.w.t());
            let mut w_stat = Array2::<f64>::zeros(p.w.raw_dim());
            let mut mu_stat = Array2::<f64>::zeros((units, d));
            let mut b_stat = Array3::<f64>::zeros((units, d, d));
            for i in 0..units {
                let b = p.factor(i);
                let inv = inverses.index_axis(Axis(0), i);
                let cov = inv.t().dot(&inv);
                let wi = p.unit_weights(i);
                for (k, h) in hs.rows().into_iter().enumerate() {
                    let prob = probs[k];
                    let ui = u.slice(s![k, i * d..(i + 1) * d]);
                    let shift = inv.t().dot(&ui);
                    let mean = &shift + &p.mu.row(i);
                    // E[B B'(v - mu)] = B u
                    mu_stat.row_mut(i).scaled_add(prob, &b.dot(&ui));
                    let bt_mean = b.t().dot(&mean);
                    let outer = bt_mean.view().insert_axis(Axis(1)).dot(&h.insert_axis(Axis(0)));
                    w_stat.slice_mut(s![i * d..(i + 1) * d, ..]).scaled_add(prob, &outer);
                    let shift_col = shift.view().insert_axis(Axis(1));
                    let second = &cov + &shift_col.dot(&shift_col.t());
                    let wh = wi.dot(&h);
                    let cross = mean.view().insert_axis(Axis(1)).dot(&wh.view().insert_axis(Axis(0)));
                    b_stat.slice_mut(s![i, .., ..]).scaled_add(prob, &(second.dot(&b) - cross));
                }
            }
            acc.groups[0].1 = w_stat.into_dyn();
            acc.groups[1].1 = mu_stat.into_dyn();
            acc.groups[3].1 = b_stat.into_dyn();
        }
    }
    acc.groups[2].1 = h_mean.into_dyn();
    Ok(SufficientStats(acc))
}

/// Central differences of [`exact_loglik`] with respect to every trainable
/// scalar.
pub fn finite_diff_grad(model: &ModelParams, data: ArrayView2<f64>, step: f64) -> Result<ParamDelta> {
    let mut out = GroupArrays::zeros_like(model);
    for (g, (_, grad)) in out.groups.iter_mut().enumerate() {
        for k in 0..grad.len() {
            let eval = |offset: f64| -> Result<f64> {
                let mut m = model.clone();
                {
                    let mut groups = m.groups_mut();
                    let slot = groups[g]
                        .1
                        .as_slice_memory_order_mut()
                        .expect("parameters are contiguous");
                    slot[k] += offset;
                }
                exact_loglik(&m, data)
            };
            let value = (eval(step)? - eval(-step)?) / (2.0 * step);
            grad.as_slice_memory_order_mut().expect("contiguous")[k] = value;
        }
    }
    Ok(ParamDelta(out))
}

/// Fully normalized `p(v, h)` of a binary RBM.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub visible: usize,
    pub hidden: usize,
    /// `(v, h, probability)`; index is `v_bits | h_bits << Nv`.
    pub entries: Vec<(Array1<f64>, Array1<f64>, f64)>,
}

impl JointTable {
    pub fn index_of(&self, v: &[f64], h: &[f64]) -> usize {
        let bits = |xs: &[f64]| xs.iter().enumerate().fold(0usize, |acc, (j, &x)| acc | ((x > 0.5) as usize) << j);
        bits(v) | bits(h) << self.visible
    }
}

pub fn enumerate_joint(model: &RbmParams) -> Result<JointTable> {
    let (nv, nh) = model.w.dim();
    check_cap(nv + nh)?;
    let m = ModelParams::Rbm(model.clone());
    let mut entries = Vec::with_capacity(1 << (nv + nh));
    let mut log_weights = Vec::with_capacity(1 << (nv + nh));
    for c in 0..(1usize << (nv + nh)) {
        let v = Array1::from_shape_fn(nv, |i| ((c >> i) & 1) as f64);
        let h = Array1::from_shape_fn(nh, |j| ((c >> (nv + j)) & 1) as f64);
        log_weights.push(-m.energy(v.view(), h.view())?);
        entries.push((v, h, 0.0));
    }
    let log_z = log_sum_exp(&log_weights);
    for (e, lw) in entries.iter_mut().zip(&log_weights) {
        e.2 = (lw - log_z).exp();
    }
    Ok(JointTable { visible: nv, hidden: nh, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub kind: ModelKind,
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledDataset {
    /// One visible state per row.
    pub data: Array2<f64>,
    pub provenance: SampleProvenance,
}

/// Draws `n` visible states from one Gibbs chain: random start, `burn_in`
/// discarded sweeps, then every `thin`-th state.
pub fn sample_dataset<R: Rng + ?Sized>(
    model: &ModelParams,
    n: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> Result<SampledDataset> {
    if n == 0 {
        return Err(Error::InvalidParam("sample count must be at least 1".into()));
    }
    let thin = thin.max(1);
    let dim = model.visible_dim();
    let mut v: Array2<f64> = match model {
        ModelParams::Rbm(_) => Array2::from_shape_simple_fn((1, dim), || if rng.random::<bool>() { 1.0 } else { 0.0 }),
        _ => Array2::from_shape_simple_fn((1, dim), || StandardNormal.sample(rng)),
    };
    for _ in 0..burn_in {
        v = model.gibbs_sweep_batch(v.view(), rng)?.1;
    }
    let mut data = Array2::zeros((n, dim));
    for mut row in data.rows_mut() {
        for _ in 0..thin {
            v = model.gibbs_sweep_batch(v.view(), rng)?.1;
        }
        row.assign(&v.row(0));
    }
    Ok(SampledDataset {
        data,
        provenance: SampleProvenance { kind: model.kind(), samples: n, burn_in, thin },
    })
}

/// A random model for synthetic-data experiments: weights uniform in
/// `±weight_scale`, biases and means uniform in `±1`, unit `sigma`, and for
/// the multivariate kind `B_i = I` plus off-diagonal entries uniform in
/// `±0.5`, rescaled to trace `dim`.
pub fn random_model<R: Rng + ?Sized>(
    kind: ModelKind,
    units: usize,
    dim: usize,
    hidden: usize,
    weight_scale: f64,
    rng: &mut R,
) -> Result<ModelParams> {
    if units == 0 || dim == 0 || hidden == 0 {
        return Err(Error::InvalidParam("model dimensions must be positive".into()));
    }
    if !(weight_scale > 0.0 && weight_scale.is_finite()) {
        return Err(Error::InvalidParam("weight scale must be a positive real".into()));
    }
    let visible = units * dim;
    let mut uniform = |scale: f64| rng.random_range(-scale..scale);
    let w = Array2::from_shape_simple_fn((visible, hidden), || uniform(weight_scale));
    let hidden_bias = Array1::from_shape_simple_fn(hidden, || uniform(1.0));
    Ok(match kind {
        ModelKind::Rbm => {
            let visible_bias = Array1::from_shape_simple_fn(visible, || uniform(1.0));
            RbmParams::new(w, visible_bias, hidden_bias)?.into()
        }
        ModelKind::Grbm => {
            let visible_bias = Array1::from_shape_simple_fn(visible, || uniform(1.0));
            crate::model::GrbmParams::new(w, visible_bias, hidden_bias, Array1::ones(visible))?.into()
        }
        ModelKind::Mgrbm => {
            let mu = Array2::from_shape_simple_fn((units, dim), || uniform(1.0));
            let factors = Array3::from_shape_fn((units, dim, dim), |(_, a, b)| if a == b { 1.0 } else { uniform(0.5) });
            let p = crate::model::MgrbmParams::new(mu, factors, w, hidden_bias)?;
            crate::training::normalize_b(&p, crate::training::BNormalization::TraceD)?.into()
        }
    })
}

/// Index of each trainable group inside a [`GroupArrays`], for callers that
/// want to compare one group at a time.
pub fn group_index(model: &ModelParams, group: ParamGroup) -> Option<usize> {
    model.groups().iter().position(|(g, _)| *g == group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GrbmParams, MgrbmParams};
    use crate::training::{flatten, gradient, positive_stats};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ln2() -> f64 {
        2f64.ln()
    }

    fn random_rbm(r: &mut ChaCha8Rng, nv: usize, nh: usize) -> RbmParams {
        RbmParams::new(
            Array2::from_shape_simple_fn((nv, nh), || r.random_range(-1.0..1.0)),
            Array1::from_shape_simple_fn(nv, || r.random_range(-1.0..1.0)),
            Array1::from_shape_simple_fn(nh, || r.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn zero_rbm_partition() {
        let m: ModelParams = RbmParams::zeros(3, 4).into();
        assert!((exact_log_partition(&m).unwrap() - 7.0 * ln2()).abs() < 1e-12);
        let data = array![[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        assert!((exact_loglik(&m, data.view()).unwrap() + 3.0 * ln2()).abs() < 1e-12);
    }

    #[test]
    fn standard_grbm_partition() {
        let m: ModelParams = GrbmParams::zeros(3, 2).into();
        let want = 1.5 * (2.0 * std::f64::consts::PI).ln() + 2.0 * ln2();
        assert!((exact_log_partition(&m).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let m: ModelParams = RbmParams::zeros(2, 21).into();
        assert!(matches!(exact_log_partition(&m), Err(Error::EnumerationCap { hidden: 21, cap: 20 })));
        assert!(matches!(enumerate_joint(&RbmParams::zeros(11, 10)), Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn joint_table_normalized_and_consistent() {
        let one = enumerate_joint(&RbmParams::zeros(1, 1)).unwrap();
        assert_eq!(one.entries.len(), 4);
        assert!(one.entries.iter().all(|e| (e.2 - 0.25).abs() < 1e-15));

        let mut r = ChaCha8Rng::seed_from_u64(1);
        let p = random_rbm(&mut r, 3, 2);
        let table = enumerate_joint(&p).unwrap();
        let total: f64 = table.entries.iter().map(|e| e.2).sum();
        assert!((total - 1.0).abs() < 1e-10);

        // p(h|v) from the table equals the factorized posterior
        let m: ModelParams = p.into();
        for vbits in 0..8usize {
            let v = Array1::from_shape_fn(3, |i| ((vbits >> i) & 1) as f64);
            let rows: Vec<_> = table.entries.iter().filter(|e| e.0 == v).collect();
            let pv: f64 = rows.iter().map(|e| e.2).sum();
            let post = m.hidden_posterior(v.view()).unwrap();
            for e in rows {
                let prod: f64 = (0..2).map(|j| if e.1[j] == 1.0 { post[j] } else { 1.0 - post[j] }).product();
                assert!((e.2 / pv - prod).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn free_energy_matches_enumerated_marginal() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let p = random_rbm(&mut r, 2, 2);
        let table = enumerate_joint(&p).unwrap();
        let m: ModelParams = p.into();
        let hs = binary_configurations(2);
        for vbits in 0..4usize {
            let v = Array1::from_shape_fn(2, |i| ((vbits >> i) & 1) as f64);
            let direct: f64 = hs.rows().into_iter().map(|h| (-m.energy(v.view(), h).unwrap()).exp()).sum();
            let via_f = (-m.free_energy(v.view()).unwrap()).exp();
            assert!((direct - via_f).abs() <= 1e-12 * direct);

            let marginal: f64 = table.entries.iter().filter(|e| e.0 == v).map(|e| e.2).sum();
            let ll = exact_loglik(&m, v.view().insert_axis(Axis(0))).unwrap();
            assert!((ll - marginal.ln()).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_rbm_model_stats() {
        let m: ModelParams = RbmParams::zeros(2, 3).into();
        let s = exact_model_stats(&m).unwrap();
        assert!(s.0.get(ParamGroup::HiddenBias).unwrap().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert!(s.0.get(ParamGroup::VisibleBias).unwrap().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert!(s.0.get(ParamGroup::Weights).unwrap().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn grbm_zero_weight_mean_is_bias() {
        // <(v-a)/sigma^2> = 0 exactly means <v> = a, whatever b is
        let mut g = GrbmParams::zeros(3, 2);
        g.visible_bias = array![1.0, -2.0, 0.3];
        g.hidden_bias = array![3.0, -1.0];
        let s = exact_model_stats(&g.into()).unwrap();
        assert!(s.0.get(ParamGroup::VisibleBias).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grbm_bias_gradient_closed_form() {
        let mut g = GrbmParams::zeros(2, 2);
        g.visible_bias = array![0.2, -0.4];
        g.sigma = array![0.8, 1.5];
        let data = array![[1.0, 0.5], [0.0, -1.0], [2.0, 0.2]];
        let fd = finite_diff_grad(&g.clone().into(), data.view(), 1e-5).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();
        let fd_a = fd.0.get(ParamGroup::VisibleBias).unwrap();
        for i in 0..2 {
            let analytic = (mean[i] - g.visible_bias[i]) / (g.sigma[i] * g.sigma[i]);
            assert!((fd_a[i] - analytic).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_at_model_stats_is_zero() {
        let mut m = MgrbmParams::zeros(2, 2, 2);
        m.w.fill(0.3);
        let m: ModelParams = m.into();
        let s = exact_model_stats(&m).unwrap();
        assert!(flatten(&gradient(&s, &s).unwrap().0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rbm_gradient_matches_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let m: ModelParams = random_rbm(&mut r, 3, 2).into();
        let data = Array2::from_shape_simple_fn((10, 3), || if r.random::<bool>() { 1.0 } else { 0.0 });
        let analytic = gradient(&positive_stats(&m, data.view()).unwrap(), &exact_model_stats(&m).unwrap()).unwrap();
        let fd = finite_diff_grad(&m, data.view(), 1e-5).unwrap();
        let (a, f) = (flatten(&analytic.0), flatten(&fd.0));
        let err = (&a - &f).mapv(|x| x * x).sum().sqrt() / f.mapv(|x| x * x).sum().sqrt();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn central_difference_is_second_order() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let m: ModelParams = random_rbm(&mut r, 3, 2).into();
        let data = Array2::from_shape_simple_fn((6, 3), || if r.random::<bool>() { 1.0 } else { 0.0 });
        let exact = flatten(
            &gradient(&positive_stats(&m, data.view()).unwrap(), &exact_model_stats(&m).unwrap())
                .unwrap()
                .0,
        );
        let err = |h: f64| {
            let fd = flatten(&finite_diff_grad(&m, data.view(), h).unwrap().0);
            (&fd - &exact).mapv(|x| x * x).sum().sqrt()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn sampling_is_seeded() {
        let m: ModelParams = GrbmParams::zeros(2, 2).into();
        let a = sample_dataset(&m, 10, 5, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_dataset(&m, 10, 5, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance.thin, 2);
        assert!(sample_dataset(&m, 0, 0, 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn zero_rbm_samples_are_fair() {
        let m: ModelParams = RbmParams::zeros(3, 2).into();
        let s = sample_dataset(&m, 100_000, 10, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for mean in s.data.mean_axis(Axis(0)).unwrap() {
            assert!((mean - 0.5).abs() < 0.005, "{mean}");
        }
    }
}

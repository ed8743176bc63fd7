//! Neural additive network for K competing risks.
//!
//! Every input feature `i` has its own small tanh MLP (a "feature net")
//! mapping the scalar `x_i` to a representation `h_i ∈ R^d`. Each
//! (feature, risk) pair owns a projection vector `w_{i,k}` that is
//! L2-normalized before use, so the contribution of feature `i` to risk `k`
//! is `g_{i,k} = h_i · w_{i,k} / (‖w_{i,k}‖ + ε)`, and the risk score is the
//! plain sum `η_k(x) = Σ_i g_{i,k}`.
//!
//! Gradients are derived by hand; the architecture is fixed and small.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Stabilizer in the projection normalization `w / (‖w‖ + ε)`.
pub const NORM_EPS: f64 = 1e-12;
/// Variance stabilizer inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the old value in the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub num_features: usize,
    pub num_risks: usize,
    /// Output width of every feature-net layer; the last entry is `d`.
    pub widths: Vec<usize>,
    pub dropout: f64,
    pub feature_dropout: f64,
    pub batch_norm: bool,
}

impl Architecture {
    pub fn new(num_features: usize, num_risks: usize, widths: Vec<usize>) -> Self {
        Architecture {
            num_features,
            num_risks,
            widths,
            dropout: 0.0,
            feature_dropout: 0.0,
            batch_norm: false,
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_features == 0 || self.num_risks == 0 {
            return Err(Error::InvalidInput(
                "a model needs at least one feature and one risk".into(),
            ));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "layer widths must be nonempty and positive, got {:?}",
                self.widths
            )));
        }
        for (name, rate) in [
            ("dropout", self.dropout),
            ("feature_dropout", self.feature_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [0, 1), got {rate}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamModel {
    pub arch: Architecture,
    pub nets: Vec<FeatureNet>,
    /// Unnormalized projection vectors, `p × K × d`.
    pub projections: Array3<f64>,
}

/// Dropout and feature-dropout masks for one training batch, already scaled
/// by the inverse keep probability.
#[derive(Debug, Clone)]
pub struct Masks {
    /// `[feature][layer]`, each `batch × width`.
    pub dropout: Vec<Vec<Array2<f64>>>,
    /// `batch × p`.
    pub feature: Array2<f64>,
}

impl Masks {
    pub fn ones(arch: &Architecture, batch: usize) -> Self {
        Masks {
            dropout: (0..arch.num_features)
                .map(|_| {
                    arch.widths
                        .iter()
                        .map(|&w| Array2::ones((batch, w)))
                        .collect()
                })
                .collect(),
            feature: Array2::ones((batch, arch.num_features)),
        }
    }

    pub fn sample<R: Rng>(arch: &Architecture, batch: usize, rng: &mut R) -> Self {
        let mut masks = Masks::ones(arch, batch);
        if arch.dropout > 0.0 {
            let keep = 1.0 - arch.dropout;
            for net in &mut masks.dropout {
                for m in net {
                    m.mapv_inplace(|_| bernoulli_scaled(rng, keep));
                }
            }
        }
        if arch.feature_dropout > 0.0 {
            let keep = 1.0 - arch.feature_dropout;
            masks.feature.mapv_inplace(|_| bernoulli_scaled(rng, keep));
        }
        masks
    }

    pub fn batch_size(&self) -> usize {
        self.feature.nrows()
    }
}

fn bernoulli_scaled<R: Rng>(rng: &mut R, keep: f64) -> f64 {
    if rng.random::<f64>() < keep {
        1.0 / keep
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a Masks),
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Array2<f64>,
    pub mean: Array1<f64>,
    /// Biased batch variance (or the running variance in eval mode).
    pub var: Array1<f64>,
    pub inv_std: Array1<f64>,
    pub from_batch: bool,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `W z + b`.
    pub pre_activation: Array2<f64>,
    pub norm: Option<BatchNormCache>,
    /// `tanh` output before dropout.
    pub activation: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct FeatureTrace {
    /// `outputs[0]` is the input column; `outputs[l]` the (masked) output
    /// of layer `l`. The last entry is the representation `h_i`.
    pub outputs: Vec<Array2<f64>>,
    pub layers: Vec<LayerTrace>,
}

impl FeatureTrace {
    pub fn representation(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least the input column")
    }
}

/// Everything a forward pass over a batch computed.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub features: Vec<FeatureTrace>,
    /// Unmasked contributions, `batch × p × K`.
    pub raw_contributions: Array3<f64>,
    /// Contributions after feature dropout, `batch × p × K`; `eta` is their
    /// sum over features.
    pub contributions: Array3<f64>,
    /// `batch × K`.
    pub eta: Array2<f64>,
    pub feature_mask: Option<Array2<f64>>,
    pub dropout: Option<Vec<Vec<Array2<f64>>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub nets: Vec<Vec<LayerGrad>>,
    pub projections: Array3<f64>,
}

impl Gradient {
    /// Flattened in the same order as [`NamModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for net in &self.nets {
            for l in net {
                out.extend(l.weight.iter());
                out.extend(l.bias.iter());
                if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                    out.extend(g.iter());
                    out.extend(b.iter());
                }
            }
        }
        out.extend(self.projections.iter());
        out
    }
}

/// Normalized projection `w / (‖w‖ + ε)`.
pub fn normalize(w: &[f64]) -> Vec<f64> {
    let s = l2(w) + NORM_EPS;
    w.iter().map(|v| v / s).collect()
}

/// Contribution `g = w̃ · h` for one projection vector and representation.
pub fn project(w: &[f64], h: &[f64]) -> f64 {
    let s = l2(w) + NORM_EPS;
    w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / s
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.random_range(-limit..limit)
}

impl NamModel {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights and projections, zero
    /// biases, identity batch norm.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets = Vec::with_capacity(arch.num_features);
        for _ in 0..arch.num_features {
            let mut layers = Vec::with_capacity(arch.widths.len());
            let mut fan_in = 1;
            for &w in &arch.widths {
                let weight = Array2::from_shape_fn((w, fan_in), |_| glorot(&mut rng, fan_in, w));
                let norm = arch.batch_norm.then(|| BatchNorm {
                    gamma: Array1::ones(w),
                    beta: Array1::zeros(w),
                    running_mean: Array1::zeros(w),
                    running_var: Array1::ones(w),
                });
                layers.push(Layer {
                    weight,
                    bias: Array1::zeros(w),
                    norm,
                });
                fan_in = w;
            }
            nets.push(FeatureNet { layers });
        }
        let d = arch.repr_dim();
        let projections = Array3::from_shape_fn((arch.num_features, arch.num_risks, d), |_| {
            glorot(&mut rng, d, 1)
        });
        Ok(NamModel {
            arch,
            nets,
            projections,
        })
    }

    pub fn num_features(&self) -> usize {
        self.arch.num_features
    }

    pub fn num_risks(&self) -> usize {
        self.arch.num_risks
    }

    pub fn projection(&self, feature: usize, risk: usize) -> Vec<f64> {
        self.projections
            .index_axis(Axis(0), feature)
            .index_axis(Axis(0), risk)
            .to_vec()
    }

    pub fn normalized_projection(&self, feature: usize, risk: usize) -> Vec<f64> {
        normalize(&self.projection(feature, risk))
    }

    /// Forward pass of a single feature net over a column of inputs.
    pub fn feature_forward(
        &self,
        feature: usize,
        xs: &[f64],
        mode: Mode<'_>,
    ) -> Result<FeatureTrace> {
        let net = &self.nets[feature];
        let batch = xs.len();
        let mut outputs = Vec::with_capacity(net.layers.len() + 1);
        outputs.push(Array2::from_shape_vec((batch, 1), xs.to_vec()).expect("column shape"));
        let mut layers = Vec::with_capacity(net.layers.len());
        for (l, layer) in net.layers.iter().enumerate() {
            let z = outputs.last().expect("input pushed");
            let pre = linear(z, &layer.weight, &layer.bias);
            let (y, norm) = match &layer.norm {
                None => (pre.clone(), None),
                Some(bn) => {
                    let cache = match mode {
                        Mode::Train(_) => batch_norm_train(&pre),
                        Mode::Eval => batch_norm_eval(&pre, bn),
                    };
                    let mut y = cache.normalized.clone();
                    for mut row in y.rows_mut() {
                        for ((v, g), b) in row.iter_mut().zip(&bn.gamma).zip(&bn.beta) {
                            *v = *v * g + b;
                        }
                    }
                    (y, Some(cache))
                }
            };
            let activation = y.mapv(f64::tanh);
            if activation.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { feature, layer: l });
            }
            let out = match mode {
                Mode::Train(m) if self.arch.dropout > 0.0 => &activation * &m.dropout[feature][l],
                _ => activation.clone(),
            };
            layers.push(LayerTrace {
                pre_activation: pre,
                norm,
                activation,
            });
            outputs.push(out);
        }
        Ok(FeatureTrace { outputs, layers })
    }

    /// Batched forward pass. `x` is `batch × p`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<ForwardTrace> {
        let (batch, p) = x.dim();
        let k_risks = self.arch.num_risks;
        if p != self.arch.num_features {
            return Err(Error::Shape(format!(
                "input has {p} features, model expects {}",
                self.arch.num_features
            )));
        }
        if let Mode::Train(m) = mode {
            if m.batch_size() != batch {
                return Err(Error::Shape(format!(
                    "masks sized for batch {}, input batch {batch}",
                    m.batch_size()
                )));
            }
        }
        if let Some((idx, _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite input at row {}, feature {}",
                idx.0, idx.1
            )));
        }
        let features = par::try_map_range(p, |i| {
            let col = x.column(i).to_vec();
            self.feature_forward(i, &col, mode)
        })?;

        let normalized: Vec<Vec<Vec<f64>>> = (0..p)
            .map(|i| {
                (0..k_risks)
                    .map(|k| self.normalized_projection(i, k))
                    .collect()
            })
            .collect();
        let mut raw = Array3::<f64>::zeros((batch, p, k_risks));
        for (i, ft) in features.iter().enumerate() {
            let h = ft.representation();
            for b in 0..batch {
                let hb = h.row(b);
                for k in 0..k_risks {
                    raw[[b, i, k]] = normalized[i][k]
                        .iter()
                        .zip(hb.iter())
                        .map(|(w, h)| w * h)
                        .sum();
                }
            }
        }
        let feature_mask = match mode {
            Mode::Train(m) if self.arch.feature_dropout > 0.0 => Some(m.feature.clone()),
            _ => None,
        };
        let contributions = match &feature_mask {
            Some(fm) => {
                let mut c = raw.clone();
                for ((b, i, _), v) in c.indexed_iter_mut() {
                    *v *= fm[[b, i]];
                }
                c
            }
            None => raw.clone(),
        };
        let mut eta = Array2::<f64>::zeros((batch, k_risks));
        for b in 0..batch {
            for k in 0..k_risks {
                let mut s = 0.0;
                for i in 0..p {
                    s += contributions[[b, i, k]];
                }
                eta[[b, k]] = s;
            }
        }
        let dropout = match mode {
            Mode::Train(m) if self.arch.dropout > 0.0 => Some(m.dropout.clone()),
            _ => None,
        };
        Ok(ForwardTrace {
            features,
            raw_contributions: raw,
            contributions,
            eta,
            feature_mask,
            dropout,
        })
    }

    /// Forward pass for one subject.
    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<ForwardTrace> {
        let view =
            ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
        self.forward_batch(view, mode)
    }

    /// Eval-mode risk scores, `n × K`. Rows are processed in parallel
    /// chunks; every row's value is independent of the chunking.
    pub fn eta(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        const CHUNK: usize = 512;
        let n = x.nrows();
        let chunks = n.div_ceil(CHUNK);
        let parts = par::try_map_range(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            self.forward_batch(x.slice(ndarray::s![lo..hi, ..]), Mode::Eval)
                .map(|t| t.eta)
        })?;
        let mut eta = Array2::zeros((n, self.arch.num_risks));
        for (c, part) in parts.into_iter().enumerate() {
            let lo = c * CHUNK;
            eta.slice_mut(ndarray::s![lo..lo + part.nrows(), ..])
                .assign(&part);
        }
        Ok(eta)
    }

    /// Shape function `s_{i,k}` evaluated (eval mode) on many inputs.
    pub fn shape_values(&self, feature: usize, risk: usize, xs: &[f64]) -> Result<Vec<f64>> {
        let ft = self.feature_forward(feature, xs, Mode::Eval)?;
        let w = self.normalized_projection(feature, risk);
        Ok(ft
            .representation()
            .rows()
            .into_iter()
            .map(|h| w.iter().zip(h.iter()).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn shape_value(&self, feature: usize, risk: usize, x: f64) -> Result<f64> {
        Ok(self.shape_values(feature, risk, &[x])?[0])
    }

    /// Exact gradient of `Σ_{b,k} upstream[b,k] · η_k(x_b)` with respect to
    /// every trainable parameter.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<Gradient> {
        let (batch, k_risks) = trace.eta.dim();
        if upstream.dim() != (batch, k_risks) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected ({batch}, {k_risks})",
                upstream.dim()
            )));
        }
        if trace.features.len() != self.arch.num_features {
            return Err(Error::Shape("trace does not match the model".into()));
        }
        let d = self.arch.repr_dim();
        let per_feature = par::map_range(self.arch.num_features, |i| {
            let ft = &trace.features[i];
            let h = ft.representation();
            // dL/dg_raw[b, k]
            let mut dg = upstream.to_owned();
            if let Some(fm) = &trace.feature_mask {
                for b in 0..batch {
                    let m = fm[[b, i]];
                    dg.row_mut(b).mapv_inplace(|v| v * m);
                }
            }
            let mut proj_grad = Array2::<f64>::zeros((k_risks, d));
            let mut dh = Array2::<f64>::zeros((batch, d));
            for k in 0..k_risks {
                let w = self.projection(i, k);
                let r = l2(&w);
                let s = r + NORM_EPS;
                // H = Σ_b dg[b,k] h_b
                let mut acc = vec![0.0; d];
                for b in 0..batch {
                    let g = dg[[b, k]];
                    if g == 0.0 {
                        continue;
                    }
                    for (a, hv) in acc.iter_mut().zip(h.row(b)) {
                        *a += g * hv;
                    }
                    for (j, dv) in dh.row_mut(b).iter_mut().enumerate() {
                        *dv += g * w[j] / s;
                    }
                }
                let wh: f64 = w.iter().zip(&acc).map(|(a, b)| a * b).sum();
                let radial = if r > 0.0 { wh / (r * s * s) } else { 0.0 };
                for j in 0..d {
                    proj_grad[[k, j]] = acc[j] / s - radial * w[j];
                }
            }
            let net_grad = self.feature_backward(i, ft, trace.dropout.as_ref(), dh);
            (net_grad, proj_grad)
        });

        let mut projections = Array3::zeros(self.projections.raw_dim());
        let mut nets = Vec::with_capacity(per_feature.len());
        for (i, (net_grad, proj_grad)) in per_feature.into_iter().enumerate() {
            projections.index_axis_mut(Axis(0), i).assign(&proj_grad);
            nets.push(net_grad);
        }
        Ok(Gradient { nets, projections })
    }

    fn feature_backward(
        &self,
        feature: usize,
        ft: &FeatureTrace,
        dropout: Option<&Vec<Vec<Array2<f64>>>>,
        mut dz: Array2<f64>,
    ) -> Vec<LayerGrad> {
        let net = &self.nets[feature];
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(net.layers.len());
        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let lt = &ft.layers[l];
            if let Some(masks) = dropout {
                dz = &dz * &masks[feature][l];
            }
            // through tanh
            let mut dy = dz;
            for (g, a) in dy.iter_mut().zip(lt.activation.iter()) {
                *g *= 1.0 - a * a;
            }
            let (da, gamma, beta) = match (&layer.norm, &lt.norm) {
                (Some(bn), Some(cache)) => {
                    let (da, dgamma, dbeta) = batch_norm_backward(&dy, bn, cache);
                    (da, Some(dgamma), Some(dbeta))
                }
                _ => (dy, None, None),
            };
            let z = &ft.outputs[l];
            let weight = da.t().dot(z);
            let bias = da.sum_axis(Axis(0));
            dz = if l > 0 { da.dot(&layer.weight) } else { da };
            grads.push(LayerGrad {
                weight,
                bias,
                gamma,
                beta,
            });
        }
        grads.reverse();
        grads
    }

    /// Moves running batch-norm statistics toward the batch statistics in
    /// `trace`. The only place model state changes outside the optimizer.
    pub fn update_batch_norm(&mut self, trace: &ForwardTrace) {
        for (net, ft) in self.nets.iter_mut().zip(&trace.features) {
            for (layer, lt) in net.layers.iter_mut().zip(&ft.layers) {
                let (Some(bn), Some(cache)) = (&mut layer.norm, &lt.norm) else {
                    continue;
                };
                if !cache.from_batch {
                    continue;
                }
                let b = lt.pre_activation.nrows() as f64;
                let unbias = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
                bn.running_mean.zip_mut_with(&cache.mean, |r, m| {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m
                });
                bn.running_var.zip_mut_with(&cache.var, |r, v| {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbias
                });
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.nets
            .iter()
            .flat_map(|n| &n.layers)
            .map(|l| {
                l.weight.len() + l.bias.len() + l.norm.as_ref().map_or(0, |bn| 2 * bn.gamma.len())
            })
            .sum::<usize>()
            + self.projections.len()
    }

    /// All trainable parameters; running statistics are excluded.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for net in &self.nets {
            for l in &net.layers {
                out.extend(l.weight.iter());
                out.extend(l.bias.iter());
                if let Some(bn) = &l.norm {
                    out.extend(bn.gamma.iter());
                    out.extend(bn.beta.iter());
                }
            }
        }
        out.extend(self.projections.iter());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter().copied();
        let mut fill = |xs: &mut dyn Iterator<Item = &mut f64>| {
            for x in xs {
                *x = it.next().expect("length checked");
            }
        };
        for net in &mut self.nets {
            for l in &mut net.layers {
                fill(&mut l.weight.iter_mut());
                fill(&mut l.bias.iter_mut());
                if let Some(bn) = &mut l.norm {
                    fill(&mut bn.gamma.iter_mut());
                    fill(&mut bn.beta.iter_mut());
                }
            }
        }
        fill(&mut self.projections.iter_mut());
        Ok(())
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.flat_params().iter().map(|v| v * v).sum()
    }
}

/// `z · Wᵀ + b`, row by row so each output row depends only on its input row.
fn linear(z: &Array2<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let (batch, fan_in) = z.dim();
    let fan_out = weight.nrows();
    let mut out = Array2::<f64>::zeros((batch, fan_out));
    for (zr, mut or) in z.rows().into_iter().zip(out.rows_mut()) {
        for u in 0..fan_out {
            let wu = weight.row(u);
            let mut s = bias[u];
            for j in 0..fan_in {
                s += wu[j] * zr[j];
            }
            or[u] = s;
        }
    }
    out
}

fn batch_norm_train(pre: &Array2<f64>) -> BatchNormCache {
    let b = pre.nrows() as f64;
    let mean = pre.sum_axis(Axis(0)) / b;
    let centered = pre - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let normalized = &centered * &inv_std;
    BatchNormCache {
        normalized,
        mean,
        var,
        inv_std,
        from_batch: true,
    }
}

fn batch_norm_eval(pre: &Array2<f64>, bn: &BatchNorm) -> BatchNormCache {
    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let normalized = (pre - &bn.running_mean) * &inv_std;
    BatchNormCache {
        normalized,
        mean: bn.running_mean.clone(),
        var: bn.running_var.clone(),
        inv_std,
        from_batch: false,
    }
}

fn batch_norm_backward(
    dy: &Array2<f64>,
    bn: &BatchNorm,
    cache: &BatchNormCache,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let xhat = &cache.normalized;
    let dgamma = (dy * xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &bn.gamma;
    let da = if cache.from_batch {
        let b = dy.nrows() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
        let mut da = dxhat * b;
        da -= &sum_dxhat;
        da -= &(xhat * &sum_dxhat_xhat);
        da * &(&cache.inv_std / b)
    } else {
        dxhat * &cache.inv_std
    };
    (da, dgamma, dbeta)
}

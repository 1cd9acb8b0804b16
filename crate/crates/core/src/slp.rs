//! Single-hidden-layer perceptron detector.
//!
//! `hidden = relu(w1·x + b1)`, `scores = sigmoid(w2·hidden + b2)`, trained on
//! the mean binary cross-entropy over the K device outputs (and over the
//! batch) with Adam.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied before taking logs in the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SlpParams {
    /// hidden × input
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// outputs × hidden
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl SlpParams {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((outputs, hidden)),
            b2: Array1::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (input, hidden, outputs) = self.dims();
        Self::zeros(input, hidden, outputs)
    }

    /// (input, hidden, outputs)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameter tensors in the fixed order w1, b1, w2, b2 (row-major).
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w1.dim() == other.w1.dim()
            && self.b1.dim() == other.b1.dim()
            && self.w2.dim() == other.w2.dim()
            && self.b2.dim() == other.b2.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.w1.ncols() {
            return Err(Error::DimensionMismatch {
                what: "SLP input features",
                expected: self.w1.ncols(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_outputs(&self, len: usize) -> Result<()> {
        if len != self.w2.nrows() {
            return Err(Error::DimensionMismatch {
                what: "SLP labels",
                expected: self.w2.nrows(),
                got: len,
            });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(input: usize, hidden: usize, outputs: usize, rng: &mut R) -> SlpParams {
    let mut glorot = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
    };
    let w1 = glorot(hidden, input);
    let w2 = glorot(outputs, hidden);
    SlpParams {
        w1,
        b1: Array1::zeros(hidden),
        w2,
        b2: Array1::zeros(outputs),
    }
}

/// Per-device activity probabilities ã.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionScores(pub Vec<f64>);

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub pre_hidden: Array1<f64>,
    pub hidden: Array1<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward(params: &SlpParams, features: &[f64]) -> Result<(DetectionScores, ForwardCache)> {
    params.check_input(features.len())?;
    let x = ArrayView1::from(features);
    let pre_hidden = params.w1.dot(&x) + &params.b1;
    let hidden = pre_hidden.mapv(|z| z.max(0.0));
    let logits = params.w2.dot(&hidden) + &params.b2;
    let scores = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok((DetectionScores(scores), ForwardCache { pre_hidden, hidden }))
}

/// Scores for a batch; rows of `features` are samples, rows of the result
/// are the matching score vectors.
pub fn forward_batch(params: &SlpParams, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    params.check_input(features.ncols())?;
    let mut hidden = features.dot(&params.w1.t());
    hidden += &params.b1;
    hidden.mapv_inplace(|z| z.max(0.0));
    let mut out = hidden.dot(&params.w2.t());
    out += &params.b2;
    out.mapv_inplace(sigmoid);
    Ok(out)
}

fn bce_term(score: f64, label: f64) -> f64 {
    let p = score.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over the K outputs.
pub fn bce_loss(scores: &[f64], label: &[f64]) -> f64 {
    debug_assert_eq!(scores.len(), label.len());
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().zip(label).map(|(&p, &a)| bce_term(p, a)).sum::<f64>() / scores.len() as f64
}

/// Mean BCE over every entry of a batch of score rows.
pub fn bce_loss_batch(scores: ArrayView2<f64>, labels: ArrayView2<f64>) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    Zip::from(&scores)
        .and(&labels)
        .fold(0.0, |acc, &p, &a| acc + bce_term(p, a))
        / scores.len() as f64
}

/// Exact gradient of the single-sample mean BCE.
pub fn backward(params: &SlpParams, features: &[f64], label: &[f64]) -> Result<SlpParams> {
    params.check_outputs(label.len())?;
    let (scores, cache) = forward(params, features)?;
    let k = label.len() as f64;
    let delta_out: Array1<f64> = scores.0.iter().zip(label).map(|(p, a)| (p - a) / k).collect();
    let db2 = delta_out.clone();
    let dw2 = outer(&delta_out, &cache.hidden.view());
    let mut delta_hidden = params.w2.t().dot(&delta_out);
    Zip::from(&mut delta_hidden)
        .and(&cache.pre_hidden)
        .for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
    let dw1 = outer(&delta_hidden, &ArrayView1::from(features));
    Ok(SlpParams {
        w1: dw1,
        b1: delta_hidden,
        w2: dw2,
        b2: db2,
    })
}

fn outer(a: &Array1<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Mean BCE and its gradient over a batch (rows are samples).
pub fn loss_and_grad_batch(
    params: &SlpParams,
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
) -> Result<(f64, SlpParams)> {
    params.check_input(features.ncols())?;
    params.check_outputs(labels.ncols())?;
    if features.nrows() != labels.nrows() {
        return Err(Error::DimensionMismatch {
            what: "batch labels",
            expected: features.nrows(),
            got: labels.nrows(),
        });
    }
    let batch = features.nrows();
    let mut pre_hidden = features.dot(&params.w1.t());
    pre_hidden += &params.b1;
    let hidden = pre_hidden.mapv(|z| z.max(0.0));
    let mut scores = hidden.dot(&params.w2.t());
    scores += &params.b2;
    scores.mapv_inplace(sigmoid);
    let loss = bce_loss_batch(scores.view(), labels);

    let scale = 1.0 / (batch * labels.ncols()).max(1) as f64;
    let mut delta_out = scores;
    Zip::from(&mut delta_out)
        .and(&labels)
        .for_each(|p, &a| *p = (*p - a) * scale);
    let dw2 = delta_out.t().dot(&hidden);
    let db2 = delta_out.sum_axis(Axis(0));
    let mut delta_hidden = delta_out.dot(&params.w2);
    Zip::from(&mut delta_hidden)
        .and(&pre_hidden)
        .for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
    let dw1 = delta_hidden.t().dot(&features);
    let db1 = delta_hidden.sum_axis(Axis(0));
    Ok((
        loss,
        SlpParams {
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(&format!("{prefix}.lr"), "must be positive and finite"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(&format!("{prefix}.{name}"), "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(&format!("{prefix}.epsilon"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: SlpParams,
    pub second_moment: SlpParams,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &SlpParams) -> Self {
        Self {
            config,
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut SlpParams, grads: &SlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(Error::DimensionMismatch {
            what: "Adam parameter/gradient shapes",
            expected: params.num_params(),
            got: grads.num_params(),
        });
    }
    state.step_count += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let m_all = state.first_moment.tensors_mut();
    let v_all = state.second_moment.tensors_mut();
    for (((theta, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(m_all).zip(v_all) {
        for i in 0..theta.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = RngStream::root(1).rng();
        let p = init_params(160, 512, 100, &mut rng);
        let limit = (6.0f64 / 672.0).sqrt();
        assert!(p.w1.iter().all(|w| w.abs() <= limit));
        assert!(p.b1.iter().all(|b| *b == 0.0) && p.b2.iter().all(|b| *b == 0.0));
        assert_eq!(p.dims(), (160, 512, 100));
        let again = init_params(160, 512, 100, &mut RngStream::root(1).rng());
        assert_eq!(p, again);
    }

    #[test]
    fn zero_params_give_half() {
        let p = SlpParams::zeros(4, 3, 2);
        let (s, _) = forward(&p, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(s.0, vec![0.5, 0.5]);
    }

    #[test]
    fn saturated_output() {
        let mut p = init_params(4, 3, 2, &mut RngStream::root(2).rng());
        p.w2.row_mut(1).fill(0.0);
        p.b2[1] = 20.0;
        let (s, _) = forward(&p, &[0.3, 0.1, -0.2, 0.9]).unwrap();
        assert!(s.0[1] > 0.9999);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let p = SlpParams {
            w1: array![[0.5, -1.0, 0.0, 2.0], [1.0, 1.0, 1.0, 1.0], [-0.5, 0.25, 0.0, 0.0]],
            b1: array![0.1, -3.0, 0.2],
            w2: array![[1.0, -2.0, 0.5], [0.0, 1.0, -1.0]],
            b2: array![0.0, 0.3],
        };
        let x = [1.0, 0.5, -1.0, 0.25];
        // pre = [0.5-0.5+0+0.5+0.1, 0.75-3, -0.5+0.125+0.2] = [0.6, -2.25, -0.175]
        // hidden = [0.6, 0, 0]; logits = [0.6, 0.3]
        let (s, cache) = forward(&p, &x).unwrap();
        assert_abs_diff_eq!(cache.pre_hidden[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(cache.pre_hidden[1], -2.25, epsilon = 1e-15);
        assert_abs_diff_eq!(cache.pre_hidden[2], -0.175, epsilon = 1e-15);
        assert_abs_diff_eq!(s.0[0], 1.0 / (1.0 + (-0.6f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(s.0[1], 1.0 / (1.0 + (-0.3f64).exp()), epsilon = 1e-15);
        let batch = forward_batch(&p, ndarray::aview2(&[x, x])).unwrap();
        assert_abs_diff_eq!(batch[[1, 0]], s.0[0], epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = SlpParams::zeros(4, 3, 2);
        assert!(matches!(forward(&p, &[1.0; 5]), Err(Error::DimensionMismatch { .. })));
        assert!(backward(&p, &[1.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn bce_values() {
        assert_abs_diff_eq!(bce_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]), std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]) <= 1e-11);
        let expected = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        assert_abs_diff_eq!(bce_loss(&[0.9, 0.2], &[1.0, 0.0]), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.164252, epsilon = 1e-6);
    }

    #[test]
    fn zero_params_output_bias_gradient() {
        let p = SlpParams::zeros(4, 3, 5);
        let g = backward(&p, &[1.0, 2.0, 3.0, 4.0], &[0.0; 5]).unwrap();
        assert!(g.b2.iter().all(|v| (*v - 0.5 / 5.0).abs() < 1e-15));
    }

    #[test]
    fn batch_of_duplicates_equals_single() {
        let p = init_params(6, 5, 3, &mut RngStream::root(3).rng());
        let x = [0.3, -0.1, 0.8, 0.0, 1.2, -0.7];
        let y = [1.0, 0.0, 0.0];
        let single = backward(&p, &x, &y).unwrap();
        let xb = ndarray::aview2(&[x, x, x]).to_owned();
        let yb = ndarray::aview2(&[y, y, y]).to_owned();
        let (_, batch) = loss_and_grad_batch(&p, xb.view(), yb.view()).unwrap();
        for (a, b) in single.tensors().iter().zip(batch.tensors()) {
            for (u, v) in a.iter().zip(b) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = init_params(3, 2, 2, &mut RngStream::root(4).rng());
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut p = SlpParams::zeros(1, 1, 1);
        let mut g = p.zeros_like();
        g.b2[0] = 0.1;
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert!((p.b2[0] + 1e-3).abs() <= 1e-3 * 1e-6);
        assert_eq!(p.w1[[0, 0]], 0.0);
    }

    #[test]
    fn adam_is_deterministic() {
        let start = init_params(3, 4, 2, &mut RngStream::root(5).rng());
        let grads: Vec<SlpParams> = (0..5)
            .map(|i| init_params(3, 4, 2, &mut RngStream::root(100 + i).rng()))
            .collect();
        let run = || {
            let mut p = start.clone();
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for g in &grads {
                adam_step(&mut p, g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}

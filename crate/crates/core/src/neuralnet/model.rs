//! The two-convolution detector: conv(64)→ReLU→pool→conv(128)→ReLU→pool→
//! dense(64)→ReLU→dense(1)→sigmoid, returning P(normal).

use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::layers::{col2im, conv_forward, im2col, maxpool_raw};
use super::loss::{bce_loss, BCE_EPS};
use super::tensor::{gemm, InputShape};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const CONV1_FILTERS: usize = 64;
pub const CONV2_FILTERS: usize = 128;
pub const HIDDEN_UNITS: usize = 64;

/// Parameter slots, in storage order.
pub mod slot {
    pub const CONV1_W: usize = 0;
    pub const CONV1_B: usize = 1;
    pub const CONV2_W: usize = 2;
    pub const CONV2_B: usize = 3;
    pub const FC1_W: usize = 4;
    pub const FC1_B: usize = 5;
    pub const FC2_W: usize = 6;
    pub const FC2_B: usize = 7;
    pub const COUNT: usize = 8;
}

/// Samples per gradient work unit. Fixed so summation order never depends on
/// the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// One gradient buffer per parameter, in slot order.
pub type Gradients = Vec<Vec<f64>>;

/// `128 · ⌊⌊R/2⌋/2⌋ · ⌊⌊W/2⌋/2⌋`, the length of the flattened second pooling output.
pub fn flatten_dim(rows: usize, cols: usize) -> usize {
    CONV2_FILTERS * (rows / 2 / 2) * (cols / 2 / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    input_shape: InputShape,
    params: Vec<Param>,
    /// Digest of the normalization the model was trained under.
    pub stats_digest: String,
}

#[derive(Default)]
struct Cache {
    cols1: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<usize>,
    cols2: Vec<f64>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    arg2: Vec<usize>,
    h: Vec<f64>,
    da: Vec<f64>,
    dcols: Vec<f64>,
    dp1: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl CnnModel {
    /// Fresh model with seeded uniform fan-in scaled weights, bound `1/√fan_in`.
    pub fn new(input_shape: InputShape, seed: u64) -> Result<Self> {
        let InputShape { channels, rows, cols } = input_shape;
        if channels == 0 || rows < 4 || cols < 4 {
            return Err(Error::Shape(format!(
                "input {input_shape} is too small for two 2×2 poolings (need C ≥ 1, H ≥ 4, W ≥ 4)"
            )));
        }
        let flat = flatten_dim(rows, cols);
        let layout: [(&str, Vec<usize>, usize); slot::COUNT] = [
            ("conv1.weight", vec![CONV1_FILTERS, channels, 3, 3], channels * 9),
            ("conv1.bias", vec![CONV1_FILTERS], channels * 9),
            ("conv2.weight", vec![CONV2_FILTERS, CONV1_FILTERS, 3, 3], CONV1_FILTERS * 9),
            ("conv2.bias", vec![CONV2_FILTERS], CONV1_FILTERS * 9),
            ("fc1.weight", vec![HIDDEN_UNITS, flat], flat),
            ("fc1.bias", vec![HIDDEN_UNITS], flat),
            ("fc2.weight", vec![1, HIDDEN_UNITS], HIDDEN_UNITS),
            ("fc2.bias", vec![1], HIDDEN_UNITS),
        ];
        let mut rng = rng::stream(seed, Stream::WeightInit);
        let params = layout
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                Param {
                    name: name.to_string(),
                    shape,
                    values: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Ok(Self {
            input_shape,
            params,
            stats_digest: String::new(),
        })
    }

    /// Assemble a model from stored parameters, checking every shape.
    pub fn from_params(input_shape: InputShape, params: Vec<Param>, stats_digest: String) -> Result<Self> {
        let template = Self::new(input_shape, 0)?;
        if params.len() != slot::COUNT {
            return Err(Error::Shape(format!("expected {} parameter tensors, got {}", slot::COUNT, params.len())));
        }
        for (p, t) in params.iter().zip(&template.params) {
            if p.name != t.name || p.shape != t.shape || p.values.len() != t.values.len() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?}, expected {} {:?}",
                    p.name, p.shape, t.name, t.shape
                )));
            }
        }
        Ok(Self {
            input_shape,
            params,
            stats_digest,
        })
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn flatten_dim(&self) -> usize {
        flatten_dim(self.input_shape.rows, self.input_shape.cols)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params.iter().map(|p| vec![0.0; p.values.len()]).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_shape.len() {
            return Err(Error::Shape(format!(
                "model expects {} values ({}), got {}",
                self.input_shape.len(),
                self.input_shape,
                x.len()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &[f64], c: &mut Cache) -> f64 {
        let InputShape { channels, rows, cols } = self.input_shape;
        let p = &self.params;
        let (r2, w2) = (rows / 2, cols / 2);
        let (r4, w4) = (r2 / 2, w2 / 2);

        im2col(x, channels, rows, cols, &mut c.cols1);
        conv_forward(&c.cols1, &p[slot::CONV1_W].values, &p[slot::CONV1_B].values, channels, rows * cols, &mut c.a1);
        c.a1.iter_mut().for_each(|v| *v = v.max(0.0));
        maxpool_raw(&c.a1, CONV1_FILTERS, rows, cols, &mut c.p1, &mut c.arg1);

        im2col(&c.p1, CONV1_FILTERS, r2, w2, &mut c.cols2);
        conv_forward(&c.cols2, &p[slot::CONV2_W].values, &p[slot::CONV2_B].values, CONV1_FILTERS, r2 * w2, &mut c.a2);
        c.a2.iter_mut().for_each(|v| *v = v.max(0.0));
        maxpool_raw(&c.a2, CONV2_FILTERS, r2, w2, &mut c.p2, &mut c.arg2);
        debug_assert_eq!(c.p2.len(), CONV2_FILTERS * r4 * w4);

        c.h.clear();
        c.h.extend_from_slice(&p[slot::FC1_B].values);
        gemm(HIDDEN_UNITS, c.p2.len(), 1, &p[slot::FC1_W].values, false, &c.p2, false, 1.0, &mut c.h);
        c.h.iter_mut().for_each(|v| *v = v.max(0.0));

        let w_out = &p[slot::FC2_W].values;
        p[slot::FC2_B].values[0] + w_out.iter().zip(&c.h).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_cached(x, &mut Cache::default()))
    }

    /// Probability that `x` is normal traffic.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    /// Accumulate `dlogit`-scaled gradients of one cached sample into `g`.
    fn backward_cached(&self, c: &mut Cache, dlogit: f64, g: &mut Gradients) {
        let InputShape { channels, rows, cols } = self.input_shape;
        let p = &self.params;
        let (r2, w2) = (rows / 2, cols / 2);
        let flat = c.p2.len();

        g[slot::FC2_B][0] += dlogit;
        let mut dh = vec![0.0; HIDDEN_UNITS];
        for k in 0..HIDDEN_UNITS {
            g[slot::FC2_W][k] += dlogit * c.h[k];
            if c.h[k] > 0.0 {
                dh[k] = dlogit * p[slot::FC2_W].values[k];
            }
        }

        let gw = &mut g[slot::FC1_W];
        for (k, &d) in dh.iter().enumerate() {
            if d != 0.0 {
                gw[k * flat..(k + 1) * flat].iter_mut().zip(&c.p2).for_each(|(a, b)| *a += d * b);
            }
        }
        g[slot::FC1_B].iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
        let mut dp2 = vec![0.0; flat];
        gemm(flat, HIDDEN_UNITS, 1, &p[slot::FC1_W].values, true, &dh, false, 0.0, &mut dp2);

        // Second block.
        let hw2 = r2 * w2;
        c.da.clear();
        c.da.resize(CONV2_FILTERS * hw2, 0.0);
        for (&idx, &d) in c.arg2.iter().zip(&dp2) {
            if c.a2[idx] > 0.0 {
                c.da[idx] += d;
            }
        }
        let k2 = CONV1_FILTERS * 9;
        gemm(CONV2_FILTERS, hw2, k2, &c.da, false, &c.cols2, true, 1.0, &mut g[slot::CONV2_W]);
        for (f, b) in g[slot::CONV2_B].iter_mut().enumerate() {
            *b += c.da[f * hw2..(f + 1) * hw2].iter().sum::<f64>();
        }
        c.dcols.clear();
        c.dcols.resize(k2 * hw2, 0.0);
        gemm(k2, CONV2_FILTERS, hw2, &p[slot::CONV2_W].values, true, &c.da, false, 0.0, &mut c.dcols);
        c.dp1.clear();
        c.dp1.resize(CONV1_FILTERS * hw2, 0.0);
        col2im(&c.dcols, CONV1_FILTERS, r2, w2, &mut c.dp1);

        // First block.
        let hw = rows * cols;
        c.da.clear();
        c.da.resize(CONV1_FILTERS * hw, 0.0);
        for (&idx, &d) in c.arg1.iter().zip(&c.dp1) {
            if c.a1[idx] > 0.0 {
                c.da[idx] += d;
            }
        }
        gemm(CONV1_FILTERS, hw, channels * 9, &c.da, false, &c.cols1, true, 1.0, &mut g[slot::CONV1_W]);
        for (f, b) in g[slot::CONV1_B].iter_mut().enumerate() {
            *b += c.da[f * hw..(f + 1) * hw].iter().sum::<f64>();
        }
    }

    fn chunk_gradients(&self, inputs: &[&[f64]], labels: &[u8], scale: f64) -> (f64, Gradients) {
        let mut g = self.zero_gradients();
        let mut cache = Cache::default();
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            let prob = sigmoid(self.forward_cached(x, &mut cache));
            let y = f64::from(y);
            loss += bce_loss(prob, y);
            // Derivative of the clamped loss; zero where the clamp is active.
            let dlogit = if (BCE_EPS..=1.0 - BCE_EPS).contains(&prob) {
                (prob - y) * scale
            } else {
                0.0
            };
            self.backward_cached(&mut cache, dlogit, &mut g);
        }
        (loss, g)
    }

    /// Mean binary cross-entropy of a batch and its exact gradient with respect
    /// to every parameter.
    pub fn loss_and_gradients(&self, inputs: &[&[f64]], labels: &[u8]) -> Result<(f64, Gradients)> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Shape(format!("batch of {} inputs and {} labels", inputs.len(), labels.len())));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let scale = 1.0 / inputs.len() as f64;
        let chunks: Vec<(&[&[f64]], &[u8])> = inputs.chunks(GRAD_CHUNK).zip(labels.chunks(GRAD_CHUNK)).collect();
        #[cfg(feature = "parallel")]
        let parts: Vec<(f64, Gradients)> = chunks.par_iter().map(|(x, y)| self.chunk_gradients(x, y, scale)).collect();
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<(f64, Gradients)> = chunks.iter().map(|(x, y)| self.chunk_gradients(x, y, scale)).collect();

        let mut parts = parts.into_iter();
        let (mut loss, mut grads) = parts.next().expect("non-empty batch");
        for (l, g) in parts {
            loss += l;
            for (acc, part) in grads.iter_mut().zip(&g) {
                acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            }
        }
        Ok((loss * scale, grads))
    }

    /// Mean loss of a batch without gradients.
    pub fn batch_loss(&self, inputs: &[&[f64]], labels: &[u8]) -> Result<f64> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Shape("empty or mismatched batch".into()));
        }
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            total += bce_loss(self.forward(x)?, f64::from(y));
        }
        Ok(total / inputs.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_dims_follow_the_closed_form() {
        assert_eq!(flatten_dim(9, 23), 1280);
        assert_eq!(flatten_dim(18, 23), 2560);
        assert_eq!(flatten_dim(36, 23), 5760);
        let m = CnnModel::new(InputShape::new(3, 36, 23), 1).unwrap();
        assert_eq!(m.params()[slot::FC1_W].shape, vec![64, 5760]);
        assert_eq!(m.params()[slot::CONV1_W].shape, vec![64, 3, 3, 3]);
    }

    #[test]
    fn rejects_tiny_or_mismatched_inputs() {
        assert!(CnnModel::new(InputShape::new(1, 3, 23), 0).is_err());
        let m = CnnModel::new(InputShape::new(1, 9, 23), 0).unwrap();
        assert!(matches!(m.forward(&[0.0; 10]), Err(Error::Shape(_))));
    }

    #[test]
    fn output_is_a_probability() {
        let m = CnnModel::new(InputShape::new(1, 9, 23), 3).unwrap();
        for v in [0.0, 0.5, 1.0, 50.0, -50.0] {
            let p = m.forward(&vec![v; 207]).unwrap();
            assert!(p > 0.0 && p < 1.0 && p.is_finite());
        }
    }

    #[test]
    fn zero_output_layer_bias_gradient_is_mean_residual() {
        let mut m = CnnModel::new(InputShape::new(1, 9, 23), 4).unwrap();
        m.params_mut()[slot::FC2_W].values.iter_mut().for_each(|w| *w = 0.0);
        m.params_mut()[slot::FC2_B].values[0] = 0.3;
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 5.0; 207]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys = [1, 0, 0, 1, 1];
        let (_, g) = m.loss_and_gradients(&refs, &ys).unwrap();
        let s = sigmoid(0.3);
        let expect = ys.iter().map(|&y| s - f64::from(y)).sum::<f64>() / 5.0;
        assert!((g[slot::FC2_B][0] - expect).abs() < 1e-15);
        assert!(g[slot::CONV1_W].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_sample_doubles_its_contribution() {
        let m = CnnModel::new(InputShape::new(1, 9, 23), 8).unwrap();
        let a: Vec<f64> = (0..207).map(|i| (i as f64 * 0.13).sin().abs()).collect();
        let b: Vec<f64> = (0..207).map(|i| (i as f64 * 0.29).cos().abs()).collect();
        let (_, ga) = m.loss_and_gradients(&[&a], &[0]).unwrap();
        let (_, gb) = m.loss_and_gradients(&[&b], &[1]).unwrap();
        let (_, gab) = m.loss_and_gradients(&[&a, &a, &b], &[0, 0, 1]).unwrap();
        for s in 0..slot::COUNT {
            for i in 0..ga[s].len() {
                let expect = (2.0 * ga[s][i] + gb[s][i]) / 3.0;
                assert!((gab[s][i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}

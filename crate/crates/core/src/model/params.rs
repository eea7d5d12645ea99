use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Scalar};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for every weight matrix.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query: Array2<T>,
    pub query_bias: Array1<T>,
    pub key: Array2<T>,
    pub key_bias: Array1<T>,
    pub value: Array2<T>,
    pub value_bias: Array1<T>,
    pub attn_out: Array2<T>,
    pub attn_out_bias: Array1<T>,
    pub attn_norm_gain: Array1<T>,
    pub attn_norm_bias: Array1<T>,
    pub ffn_in: Array2<T>,
    pub ffn_in_bias: Array1<T>,
    pub ffn_out: Array2<T>,
    pub ffn_out_bias: Array1<T>,
    pub ffn_norm_gain: Array1<T>,
    pub ffn_norm_bias: Array1<T>,
}

/// All trainable tensors of the encoder. Matrices are stored `[in × out]`
/// and applied as `x · W`. The MLM output projection is tied to
/// `token_embeddings`; only its bias is separate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub token_embeddings: Array2<T>,
    pub position_embeddings: Array2<T>,
    pub segment_embeddings: Array2<T>,
    pub embed_norm_gain: Array1<T>,
    pub embed_norm_bias: Array1<T>,
    pub layers: Vec<LayerParams<T>>,
    pub nsp_weight: Array2<T>,
    pub nsp_bias: Array1<T>,
    pub mlm_bias: Array1<T>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct TensorMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

macro_rules! visit_tensors {
    ($params:expr, $f:ident, $as_slice:ident, $iter:ident) => {{
        $f("token_embeddings".to_string(), $params.token_embeddings.shape().to_vec(), $params.token_embeddings.$as_slice().unwrap());
        $f("position_embeddings".to_string(), $params.position_embeddings.shape().to_vec(), $params.position_embeddings.$as_slice().unwrap());
        $f("segment_embeddings".to_string(), $params.segment_embeddings.shape().to_vec(), $params.segment_embeddings.$as_slice().unwrap());
        $f("embed_norm.gain".to_string(), $params.embed_norm_gain.shape().to_vec(), $params.embed_norm_gain.$as_slice().unwrap());
        $f("embed_norm.bias".to_string(), $params.embed_norm_bias.shape().to_vec(), $params.embed_norm_bias.$as_slice().unwrap());
        for (i, l) in $params.layers.$iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            $f(p("query"), l.query.shape().to_vec(), l.query.$as_slice().unwrap());
            $f(p("query_bias"), l.query_bias.shape().to_vec(), l.query_bias.$as_slice().unwrap());
            $f(p("key"), l.key.shape().to_vec(), l.key.$as_slice().unwrap());
            $f(p("key_bias"), l.key_bias.shape().to_vec(), l.key_bias.$as_slice().unwrap());
            $f(p("value"), l.value.shape().to_vec(), l.value.$as_slice().unwrap());
            $f(p("value_bias"), l.value_bias.shape().to_vec(), l.value_bias.$as_slice().unwrap());
            $f(p("attn_out"), l.attn_out.shape().to_vec(), l.attn_out.$as_slice().unwrap());
            $f(p("attn_out_bias"), l.attn_out_bias.shape().to_vec(), l.attn_out_bias.$as_slice().unwrap());
            $f(p("attn_norm.gain"), l.attn_norm_gain.shape().to_vec(), l.attn_norm_gain.$as_slice().unwrap());
            $f(p("attn_norm.bias"), l.attn_norm_bias.shape().to_vec(), l.attn_norm_bias.$as_slice().unwrap());
            $f(p("ffn_in"), l.ffn_in.shape().to_vec(), l.ffn_in.$as_slice().unwrap());
            $f(p("ffn_in_bias"), l.ffn_in_bias.shape().to_vec(), l.ffn_in_bias.$as_slice().unwrap());
            $f(p("ffn_out"), l.ffn_out.shape().to_vec(), l.ffn_out.$as_slice().unwrap());
            $f(p("ffn_out_bias"), l.ffn_out_bias.shape().to_vec(), l.ffn_out_bias.$as_slice().unwrap());
            $f(p("ffn_norm.gain"), l.ffn_norm_gain.shape().to_vec(), l.ffn_norm_gain.$as_slice().unwrap());
            $f(p("ffn_norm.bias"), l.ffn_norm_bias.shape().to_vec(), l.ffn_norm_bias.$as_slice().unwrap());
        }
        $f("nsp.weight".to_string(), $params.nsp_weight.shape().to_vec(), $params.nsp_weight.$as_slice().unwrap());
        $f("nsp.bias".to_string(), $params.nsp_bias.shape().to_vec(), $params.nsp_bias.$as_slice().unwrap());
        $f("mlm.bias".to_string(), $params.mlm_bias.shape().to_vec(), $params.mlm_bias.$as_slice().unwrap());
    }};
}

impl<T: Scalar> ModelParams<T> {
    /// Zero-filled parameters shaped for `config` (gradient and optimizer
    /// moment buffers).
    pub fn zeros(config: &ModelConfig) -> Self {
        let (h, f, v) = (config.hidden, config.ffn_dim(), config.vocab_size);
        let m = |r, c| Array2::zeros((r, c));
        let z = |n| Array1::zeros(n);
        Self {
            token_embeddings: m(v, h),
            position_embeddings: m(config.max_seq_len, h),
            segment_embeddings: m(2, h),
            embed_norm_gain: z(h),
            embed_norm_bias: z(h),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    query: m(h, h),
                    query_bias: z(h),
                    key: m(h, h),
                    key_bias: z(h),
                    value: m(h, h),
                    value_bias: z(h),
                    attn_out: m(h, h),
                    attn_out_bias: z(h),
                    attn_norm_gain: z(h),
                    attn_norm_bias: z(h),
                    ffn_in: m(h, f),
                    ffn_in_bias: z(f),
                    ffn_out: m(f, h),
                    ffn_out_bias: z(h),
                    ffn_norm_gain: z(h),
                    ffn_norm_bias: z(h),
                })
                .collect(),
            nsp_weight: m(h, 2),
            nsp_bias: z(2),
            mlm_bias: z(v),
        }
    }

    /// Tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name, shape, data| out.push(TensorRef { name, shape, data });
        visit_tensors!(self, push, as_slice, iter);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name, shape, data| out.push(TensorMut { name, shape, data });
        visit_tensors!(self, push, as_slice_mut, iter_mut);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c1 = |a: &Array1<T>| a.mapv(|x| U::of(x.as_f64()));
        let c2 = |a: &Array2<T>| a.mapv(|x| U::of(x.as_f64()));
        ModelParams {
            token_embeddings: c2(&self.token_embeddings),
            position_embeddings: c2(&self.position_embeddings),
            segment_embeddings: c2(&self.segment_embeddings),
            embed_norm_gain: c1(&self.embed_norm_gain),
            embed_norm_bias: c1(&self.embed_norm_bias),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    query: c2(&l.query),
                    query_bias: c1(&l.query_bias),
                    key: c2(&l.key),
                    key_bias: c1(&l.key_bias),
                    value: c2(&l.value),
                    value_bias: c1(&l.value_bias),
                    attn_out: c2(&l.attn_out),
                    attn_out_bias: c1(&l.attn_out_bias),
                    attn_norm_gain: c1(&l.attn_norm_gain),
                    attn_norm_bias: c1(&l.attn_norm_bias),
                    ffn_in: c2(&l.ffn_in),
                    ffn_in_bias: c1(&l.ffn_in_bias),
                    ffn_out: c2(&l.ffn_out),
                    ffn_out_bias: c1(&l.ffn_out_bias),
                    ffn_norm_gain: c1(&l.ffn_norm_gain),
                    ffn_norm_bias: c1(&l.ffn_norm_bias),
                })
                .collect(),
            nsp_weight: c2(&self.nsp_weight),
            nsp_bias: c1(&self.nsp_bias),
            mlm_bias: c1(&self.mlm_bias),
        }
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(config);
        let want = expected.tensors();
        let have = self.tensors();
        if want.len() != have.len() {
            return Err(Error::Shape {
                dimension: "tensor count".into(),
                expected: want.len(),
                actual: have.len(),
            });
        }
        for (w, h) in want.iter().zip(&have) {
            if w.shape != h.shape {
                return Err(Error::InvalidModelConfig(format!(
                    "tensor {} has shape {:?}, config implies {:?}",
                    h.name, h.shape, w.shape
                )));
            }
        }
        Ok(())
    }

    /// Digest of all non-embedding tensors; a cheap fingerprint for checking
    /// that the encoder stack was carried over untouched.
    pub fn encoder_checksum(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for t in self.tensors() {
            if t.name == "token_embeddings" || t.name == "mlm.bias" {
                continue;
            }
            hasher.update(t.name.as_bytes());
            for x in t.data {
                hasher.update(x.as_f64().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Gaussian(0, 0.02) weights, zero biases, unit normalization gains.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut params = ModelParams::<T>::zeros(config);
    for t in params.tensors_mut() {
        let is_gain = t.name.ends_with(".gain");
        let is_matrix = t.shape.len() == 2;
        for x in t.data.iter_mut() {
            *x = if is_gain {
                T::one()
            } else if is_matrix {
                T::of(normal.sample(&mut rng))
            } else {
                T::zero()
            };
        }
    }
    Ok(params)
}

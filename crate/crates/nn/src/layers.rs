//! Layer builders. Each constructor registers its parameters in the
//! given store under a dotted name prefix; forward methods build graph
//! nodes on call.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{multi_head_attention, AttentionParams};
use crate::conv::{conv2d, maxpool2};
use crate::optim::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Result;

/// Uniform Glorot init on `[-sqrt(6/(fan_in+fan_out)), +...]`.
fn glorot<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> ArrayD<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut a = ArrayD::zeros(IxDyn(shape));
    for v in a.iter_mut() {
        *v = F::from_f64(rng.gen_range(-limit..limit));
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// Fully connected layer; weight stored `[in, out]` so forward is `x.w + b`.
pub struct Dense<F: Real> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
    activation: Activation,
}

impl<F: Real> Dense<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.register(&format!("{name}.w"), glorot(rng, &[in_dim, out_dim], in_dim, out_dim))?;
        let b = store.register(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_dim])))?;
        Ok(Dense { w, b, activation })
    }

    /// `x: [N, in] -> [N, out]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = x.matmul(&self.w)?.add(&self.b)?;
        Ok(match self.activation {
            Activation::Linear => y,
            Activation::Relu => y.relu(),
        })
    }
}

/// Convolution + bias + ReLU with optional 2x2 max pooling.
pub struct ConvBlock<F: Real> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
    kernel: usize,
    pad: usize,
    pool: bool,
}

impl<F: Real> ConvBlock<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
        pool: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        let w = store.register(
            &format!("{name}.w"),
            glorot(rng, &[out_ch, fan_in], fan_in, fan_out),
        )?;
        let b = store.register(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_ch])))?;
        Ok(ConvBlock {
            w,
            b,
            kernel,
            pad,
            pool,
        })
    }

    /// `x: [N,C,H,W] -> [N,OC,H',W']`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = conv2d(x, &self.w, &self.b, self.kernel, self.kernel, self.pad)?.relu();
        if self.pool {
            maxpool2(&y)
        } else {
            Ok(y)
        }
    }
}

/// Standard LSTM cell with fused gate weights, gate order `i, f, g, o`.
///
/// i = sigmoid(x Wx_i + h Wh_i + b_i)      input gate
/// f = sigmoid(x Wx_f + h Wh_f + b_f)      forget gate
/// g = tanh(x Wx_g + h Wh_g + b_g)         candidate
/// o = sigmoid(x Wx_o + h Wh_o + b_o)      output gate
/// c' = f * c + i * g;  h' = o * tanh(c')
pub struct LstmCell<F: Real> {
    pub wx: Tensor<F>, // [X, 4H]
    pub wh: Tensor<F>, // [H, 4H]
    pub b: Tensor<F>,  // [4H]
    hidden: usize,
}

impl<F: Real> LstmCell<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let wx = store.register(
            &format!("{name}.wx"),
            glorot(rng, &[input, 4 * hidden], input, hidden),
        )?;
        let wh = store.register(
            &format!("{name}.wh"),
            glorot(rng, &[hidden, 4 * hidden], hidden, hidden),
        )?;
        let b = store.register(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[4 * hidden])))?;
        Ok(LstmCell { wx, wh, b, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Zero initial state for a batch of `n` items: `(h0, c0)`.
    pub fn zero_state(&self, n: usize) -> (Tensor<F>, Tensor<F>) {
        (
            Tensor::zeros(&[n, self.hidden]),
            Tensor::zeros(&[n, self.hidden]),
        )
    }

    /// One step: `x [N,X], h [N,H], c [N,H] -> (h', c')`.
    pub fn step(
        &self,
        x: &Tensor<F>,
        h: &Tensor<F>,
        c: &Tensor<F>,
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        let hsz = self.hidden;
        let z = x.matmul(&self.wx)?.add(&h.matmul(&self.wh)?)?.add(&self.b)?;
        let i = z.narrow(1, 0, hsz)?.sigmoid();
        let f = z.narrow(1, hsz, hsz)?.sigmoid();
        let g = z.narrow(1, 2 * hsz, hsz)?.tanh();
        let o = z.narrow(1, 3 * hsz, hsz)?.sigmoid();
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_next = o.mul(&c_next.tanh())?;
        Ok((h_next, c_next))
    }
}

/// Pre-built transformer encoder layer: self-attention with residual and
/// layer norm, then a two-layer feed-forward block with residual and
/// layer norm. Affine layer-norm parameters start at identity.
pub struct EncoderLayer<F: Real> {
    attn: AttentionParams<F>,
    heads: usize,
    dim: usize,
    ff1: Dense<F>,
    ff2: Dense<F>,
    ln1_g: Tensor<F>,
    ln1_b: Tensor<F>,
    ln2_g: Tensor<F>,
    ln2_b: Tensor<F>,
}

impl<F: Real> EncoderLayer<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let proj = |store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, n: &str| -> Result<(Tensor<F>, Tensor<F>)> {
            let w = store.register(&format!("{name}.{n}.w"), glorot(rng, &[dim, dim], dim, dim))?;
            let b = store.register(&format!("{name}.{n}.b"), ArrayD::zeros(IxDyn(&[dim])))?;
            Ok((w, b))
        };
        let (wq, bq) = proj(store, rng, "q")?;
        let (wk, bk) = proj(store, rng, "k")?;
        let (wv, bv) = proj(store, rng, "v")?;
        let (wo, bo) = proj(store, rng, "o")?;
        let attn = AttentionParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        };
        let ff1 = Dense::new(store, &format!("{name}.ff1"), dim, ffn, Activation::Relu, rng)?;
        let ff2 = Dense::new(store, &format!("{name}.ff2"), ffn, dim, Activation::Linear, rng)?;
        let ones = ArrayD::from_elem(IxDyn(&[dim]), F::one());
        let ln1_g = store.register(&format!("{name}.ln1.g"), ones.clone())?;
        let ln1_b = store.register(&format!("{name}.ln1.b"), ArrayD::zeros(IxDyn(&[dim])))?;
        let ln2_g = store.register(&format!("{name}.ln2.g"), ones)?;
        let ln2_b = store.register(&format!("{name}.ln2.b"), ArrayD::zeros(IxDyn(&[dim])))?;
        Ok(EncoderLayer {
            attn,
            heads,
            dim,
            ff1,
            ff2,
            ln1_g,
            ln1_b,
            ln2_g,
            ln2_b,
        })
    }

    /// `x: [B,T,D] -> [B,T,D]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = x.shape();
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        debug_assert_eq!(d, self.dim);
        let a = multi_head_attention(x, &self.attn, self.heads)?;
        let h1 = x
            .add(&a)?
            .layer_norm()
            .mul(&self.ln1_g)?
            .add(&self.ln1_b)?;
        let flat = h1.reshape(&[b * t, d])?;
        let f = self.ff2.forward(&self.ff1.forward(&flat)?)?;
        let f3 = f.reshape(&[b, t, d])?;
        let h2 = h1
            .add(&f3)?
            .layer_norm()
            .mul(&self.ln2_g)?
            .add(&self.ln2_b)?;
        Ok(h2)
    }

    pub fn attention_params(&self) -> &AttentionParams<F> {
        &self.attn
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

//! The three regression architectures and their shared image encoder.
//! Every model maps a batch of grasps (three frames plus whatever
//! scalars its input strategy admits) to one normalized modulus.

use std::path::Path;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use modsense_nn::{
    Activation, ConvBlock, Dense, EncoderLayer, LstmCell, ParamStore, Real, Tensor,
};

use crate::seed;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Top10nn,
    VggLstm,
    ResTf,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Top10nn => "top10nn",
            Architecture::VggLstm => "vgg-lstm",
            Architecture::ResTf => "res-tf",
        }
    }
}

/// Which inputs the model consumes; each level adds to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputStrategy {
    Image,
    ImageF,
    ImageFw,
    All,
}

impl InputStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            InputStrategy::Image => "image",
            InputStrategy::ImageF => "image-f",
            InputStrategy::ImageFw => "image-fw",
            InputStrategy::All => "all",
        }
    }

    pub fn includes_force(self) -> bool {
        !matches!(self, InputStrategy::Image)
    }

    pub fn includes_width(self) -> bool {
        matches!(self, InputStrategy::ImageFw | InputStrategy::All)
    }

    pub fn includes_estimates(self) -> bool {
        matches!(self, InputStrategy::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub strategy: InputStrategy,
    /// Frames are resized to this square edge before entering the model.
    pub image_size: usize,
    pub encoder_channels: Vec<usize>,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub tf_dim: usize,
    pub tf_depth: usize,
    pub tf_heads: usize,
    pub tf_ffn: usize,
    pub pos_dim: usize,
    /// Hidden widths of the main decoder stack.
    pub decoder_widths: Vec<usize>,
    /// Hidden widths of the small output head.
    pub head_widths: Vec<usize>,
    /// One encoder reused for all three frames (default), or three
    /// independently trained instances.
    pub shared_encoder: bool,
    pub l2_lambda: f64,
    /// Optional checkpoint whose `encoder.*` entries seed the image
    /// encoder (externally trained feature extractors plug in here).
    pub encoder_weights: Option<std::path::PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::VggLstm,
            strategy: InputStrategy::Image,
            image_size: 48,
            encoder_channels: vec![8, 16, 32],
            embed_dim: 64,
            lstm_hidden: 64,
            tf_dim: 64,
            tf_depth: 2,
            tf_heads: 4,
            tf_ffn: 128,
            pos_dim: 8,
            decoder_widths: vec![64, 16],
            head_widths: vec![8],
            shared_encoder: true,
            l2_lambda: 0.0,
            encoder_weights: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CoreError::Config(msg));
        if self.encoder_channels.is_empty() {
            return err("encoder_channels must be nonempty".into());
        }
        let shrink = 1usize << self.encoder_channels.len();
        if self.image_size == 0 || self.image_size % shrink != 0 {
            return err(format!(
                "image_size {} must be a positive multiple of {shrink} (one halving per encoder stage)",
                self.image_size
            ));
        }
        if self.tf_dim % self.tf_heads != 0 {
            return err(format!("tf_dim {} not divisible by tf_heads {}", self.tf_dim, self.tf_heads));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("tf_dim", self.tf_dim),
            ("tf_heads", self.tf_heads),
            ("tf_ffn", self.tf_ffn),
            ("pos_dim", self.pos_dim),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return err(format!("l2_lambda {} must be finite and nonnegative", self.l2_lambda));
        }
        Ok(())
    }
}

/// One batch of grasps, already normalized: force by the 60 N stop
/// threshold, width by each grasp's initial width, estimates and targets
/// through the log min-max map.
#[derive(Debug, Clone)]
pub struct GraspBatch<F: Real> {
    pub grasp_ids: Vec<String>,
    /// Three frame tensors, each `[B, 3, H, W]` (channels first).
    pub frames: [ArrayD<F>; 3],
    /// `[B, 3]`: force at the three frame timestamps.
    pub force: Array2<F>,
    /// `[B, 3]`: width at the three frame timestamps.
    pub width: Array2<F>,
    /// `[B, 2]`: (e_elastic, e_hertz); present only for strategy `All`.
    pub estimates: Option<Array2<F>>,
    /// `[B, 1]`.
    pub targets: Array2<F>,
}

impl<F: Real> GraspBatch<F> {
    pub fn len(&self) -> usize {
        self.grasp_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grasp_ids.is_empty()
    }
}

/// softmax(logits) dotted with per-item outputs; `outputs` is `[B, 3]`,
/// `logits` `[3]`, result `[B, 1]`.
pub fn weighted_average<F: Real>(outputs: &Tensor<F>, logits: &Tensor<F>) -> Result<Tensor<F>> {
    let weights = logits.reshape(&[1, 3])?.softmax().reshape(&[3, 1])?;
    Ok(outputs.matmul(&weights)?)
}

struct ImageEncoder<F: Real> {
    blocks: Vec<ConvBlock<F>>,
    embed: Dense<F>,
}

impl<F: Real> ImageEncoder<F> {
    fn new(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut in_ch = 3;
        for (i, &out_ch) in cfg.encoder_channels.iter().enumerate() {
            blocks.push(ConvBlock::new(
                store,
                &format!("{prefix}.conv{i}"),
                in_ch,
                out_ch,
                3,
                1,
                true,
                rng,
            )?);
            in_ch = out_ch;
        }
        let spatial = cfg.image_size >> cfg.encoder_channels.len();
        let flat = in_ch * spatial * spatial;
        let embed = Dense::new(
            store,
            &format!("{prefix}.embed"),
            flat,
            cfg.embed_dim,
            Activation::Relu,
            rng,
        )?;
        Ok(ImageEncoder { blocks, embed })
    }

    /// `[B, 3, H, W]` frame -> `[B, embed_dim]`.
    fn forward(&self, frame: &ArrayD<F>) -> Result<Tensor<F>> {
        let batch = frame.shape()[0];
        let mut x = Tensor::leaf(frame.clone());
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let flat: usize = x.shape()[1..].iter().product();
        Ok(self.embed.forward(&x.reshape(&[batch, flat])?)?)
    }
}

/// One encoder applied to every frame, or three siblings, depending on
/// `shared_encoder`.
struct FrameEncoders<F: Real> {
    encoders: Vec<ImageEncoder<F>>,
}

impl<F: Real> FrameEncoders<F> {
    fn new(store: &mut ParamStore<F>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoders = if cfg.shared_encoder {
            vec![ImageEncoder::new(store, "encoder", cfg, rng)?]
        } else {
            (0..3)
                .map(|t| ImageEncoder::new(store, &format!("encoder{t}"), cfg, rng))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(FrameEncoders { encoders })
    }

    fn forward(&self, t: usize, frame: &ArrayD<F>) -> Result<Tensor<F>> {
        let idx = if self.encoders.len() == 1 { 0 } else { t };
        self.encoders[idx].forward(frame)
    }
}

/// Dense stack: ReLU after every hidden layer, linear final layer.
struct Mlp<F: Real> {
    layers: Vec<Dense<F>>,
}

impl<F: Real> Mlp<F> {
    fn new(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{prefix}.{i}"), dim, h, Activation::Relu, rng)?);
            dim = h;
        }
        layers.push(Dense::new(
            store,
            &format!("{prefix}.{}", hidden.len()),
            dim,
            out_dim,
            Activation::Linear,
            rng,
        )?);
        Ok(Mlp { layers })
    }

    fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }
}

struct Top10Net<F: Real> {
    encoder: FrameEncoders<F>,
    large: Vec<Dense<F>>,
    small: Mlp<F>,
}

struct VggLstmNet<F: Real> {
    encoder: FrameEncoders<F>,
    cell: LstmCell<F>,
    head: Mlp<F>,
    agg_logits: Tensor<F>,
}

struct ResTfNet<F: Real> {
    encoder: FrameEncoders<F>,
    positions: Tensor<F>, // [3, pos_dim]
    project: Dense<F>,
    layers: Vec<EncoderLayer<F>>,
    decoder: Mlp<F>,
}

enum Net<F: Real> {
    Top10(Top10Net<F>),
    Lstm(VggLstmNet<F>),
    Tf(ResTfNet<F>),
}

pub struct Model<F: Real> {
    cfg: ModelConfig,
    store: ParamStore<F>,
    net: Net<F>,
}

fn scalar_count(strategy: InputStrategy, per_timestep: bool) -> usize {
    let mut n = 0;
    if strategy.includes_force() {
        n += if per_timestep { 1 } else { 3 };
    }
    if strategy.includes_width() {
        n += if per_timestep { 1 } else { 3 };
    }
    // estimates ride along with the per-timestep scalars for the
    // sequence models and join after pooling for the transformer
    if strategy.includes_estimates() {
        n += 2;
    }
    n
}

impl<F: Real> Model<F> {
    pub fn new(cfg: &ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::stream(init_seed, &["model-init", cfg.architecture.as_str()]);
        let encoder = FrameEncoders::new(&mut store, cfg, &mut rng)?;
        let strategy = cfg.strategy;
        let net = match cfg.architecture {
            Architecture::Top10nn => {
                // final-timestep force and width only; estimates go to
                // the small decoder
                let mut n_scalars = 0;
                if strategy.includes_force() {
                    n_scalars += 1;
                }
                if strategy.includes_width() {
                    n_scalars += 1;
                }
                let mut large = Vec::new();
                let mut dim = 3 * cfg.embed_dim + n_scalars;
                for (i, &h) in cfg.decoder_widths.iter().enumerate() {
                    large.push(Dense::new(
                        &mut store,
                        &format!("large.{i}"),
                        dim,
                        h,
                        Activation::Relu,
                        &mut rng,
                    )?);
                    dim = h;
                }
                let small_in = dim + if strategy.includes_estimates() { 2 } else { 0 };
                let small = Mlp::new(&mut store, "small", small_in, &cfg.head_widths, 1, &mut rng)?;
                Net::Top10(Top10Net { encoder, large, small })
            }
            Architecture::VggLstm => {
                let in_dim = cfg.embed_dim + scalar_count(strategy, true);
                let cell = LstmCell::new(&mut store, "lstm", in_dim, cfg.lstm_hidden, &mut rng)?;
                let head = Mlp::new(&mut store, "head", cfg.lstm_hidden, &cfg.head_widths, 1, &mut rng)?;
                let agg_logits = store.register("agg.logits", ArrayD::zeros(IxDyn(&[3])))?;
                Net::Lstm(VggLstmNet {
                    encoder,
                    cell,
                    head,
                    agg_logits,
                })
            }
            Architecture::ResTf => {
                let positions = store.register(
                    "pos.embed",
                    glorot_like(&mut rng, &[3, cfg.pos_dim]),
                )?;
                let project = Dense::new(
                    &mut store,
                    "project",
                    cfg.embed_dim + cfg.pos_dim,
                    cfg.tf_dim,
                    Activation::Linear,
                    &mut rng,
                )?;
                let mut layers = Vec::new();
                for i in 0..cfg.tf_depth {
                    layers.push(EncoderLayer::new(
                        &mut store,
                        &format!("tf.{i}"),
                        cfg.tf_dim,
                        cfg.tf_heads,
                        cfg.tf_ffn,
                        &mut rng,
                    )?);
                }
                let dec_in = cfg.tf_dim + scalar_count(strategy, false);
                let decoder = Mlp::new(&mut store, "decoder", dec_in, &cfg.decoder_widths, 1, &mut rng)?;
                Net::Tf(ResTfNet {
                    encoder,
                    positions,
                    project,
                    layers,
                    decoder,
                })
            }
        };
        let mut model = Model {
            cfg: cfg.clone(),
            store,
            net,
        };
        if let Some(path) = &cfg.encoder_weights {
            model.load_encoder_weights(path)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    fn check_strategy(&self, batch: &GraspBatch<F>) -> Result<()> {
        let wants = self.cfg.strategy.includes_estimates();
        let has = batch.estimates.is_some();
        if wants != has {
            return Err(CoreError::StrategyMismatch {
                strategy: self.cfg.strategy.as_str().into(),
                details: if has {
                    "batch carries analytical estimates the strategy does not consume".into()
                } else {
                    "strategy requires analytical estimates but the batch has none".into()
                },
            });
        }
        Ok(())
    }

    /// Predictions `[B, 1]` on the normalized modulus scale.
    pub fn forward(&self, batch: &GraspBatch<F>) -> Result<Tensor<F>> {
        self.check_strategy(batch)?;
        let strategy = self.cfg.strategy;
        match &self.net {
            Net::Top10(net) => {
                let embeds = [
                    net.encoder.forward(0, &batch.frames[0])?,
                    net.encoder.forward(1, &batch.frames[1])?,
                    net.encoder.forward(2, &batch.frames[2])?,
                ];
                let mut parts = embeds.to_vec();
                if strategy.includes_force() {
                    parts.push(column(&batch.force, 2));
                }
                if strategy.includes_width() {
                    parts.push(column(&batch.width, 2));
                }
                let mut h = Tensor::concat(1, &parts)?;
                for layer in &net.large {
                    h = layer.forward(&h)?;
                }
                let head_in = match &batch.estimates {
                    Some(est) => Tensor::concat(1, &[h, leaf2(est)])?,
                    None => h,
                };
                net.small.forward(&head_in)
            }
            Net::Lstm(net) => {
                let b = batch.len();
                let (mut h, mut c) = net.cell.zero_state(b);
                let mut outputs = Vec::with_capacity(3);
                for t in 0..3 {
                    let mut parts = vec![net.encoder.forward(t, &batch.frames[t])?];
                    if strategy.includes_force() {
                        parts.push(column(&batch.force, t));
                    }
                    if strategy.includes_width() {
                        parts.push(column(&batch.width, t));
                    }
                    if let Some(est) = &batch.estimates {
                        parts.push(leaf2(est));
                    }
                    let x = Tensor::concat(1, &parts)?;
                    let (h_next, c_next) = net.cell.step(&x, &h, &c)?;
                    h = h_next;
                    c = c_next;
                    outputs.push(net.head.forward(&h)?);
                }
                let stacked = Tensor::concat(1, &outputs)?; // [B, 3]
                weighted_average(&stacked, &net.agg_logits)
            }
            Net::Tf(net) => {
                let b = batch.len();
                let dim = self.cfg.tf_dim;
                let mut tokens = Vec::with_capacity(3);
                let ones = Tensor::leaf(ArrayD::from_elem(IxDyn(&[b, 1]), F::one()));
                for t in 0..3 {
                    let embed = net.encoder.forward(t, &batch.frames[t])?;
                    // replicate the learned position row across the batch
                    let pos = ones.matmul(&net.positions.narrow(0, t, 1)?)?;
                    let token = net.project.forward(&Tensor::concat(1, &[embed, pos])?)?;
                    tokens.push(token.reshape(&[b, 1, dim])?);
                }
                let mut seq = Tensor::concat(1, &tokens)?; // [B, 3, D]
                for layer in &net.layers {
                    seq = layer.forward(&seq)?;
                }
                let pooled = seq
                    .narrow(1, 0, 1)?
                    .add(&seq.narrow(1, 1, 1)?)?
                    .add(&seq.narrow(1, 2, 1)?)?
                    .scale(F::from_f64(1.0 / 3.0))
                    .reshape(&[b, dim])?;
                let mut parts = vec![pooled];
                if strategy.includes_force() {
                    parts.push(leaf2(&batch.force));
                }
                if strategy.includes_width() {
                    parts.push(leaf2(&batch.width));
                }
                if let Some(est) = &batch.estimates {
                    parts.push(leaf2(est));
                }
                net.decoder.forward(&Tensor::concat(1, &parts)?)
            }
        }
    }

    /// Forward pass without graph bookkeeping kept around: returns the
    /// normalized predictions as plain floats.
    pub fn predict(&self, batch: &GraspBatch<F>) -> Result<Vec<f64>> {
        let out = self.forward(batch)?;
        Ok(out.value().iter().map(|v| v.as_f64()).collect())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        modsense_nn::checkpoint::save(&self.store, path).map_err(CoreError::from)
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let ckpt = modsense_nn::checkpoint::load(path)?;
        ckpt.apply_all(&mut self.store)?;
        Ok(())
    }

    /// Loads any `encoder.*` entries from a checkpoint, leaving the rest
    /// of the network untouched. Returns how many tensors matched.
    pub fn load_encoder_weights(&mut self, path: &Path) -> Result<usize> {
        let ckpt = modsense_nn::checkpoint::load(path)?;
        let loaded = ckpt.apply_matching(&mut self.store)?;
        Ok(loaded)
    }
}

fn column<F: Real>(values: &Array2<F>, t: usize) -> Tensor<F> {
    let col = values.index_axis(Axis(1), t).to_owned();
    let b = col.len();
    Tensor::leaf(col.into_shape_with_order(IxDyn(&[b, 1])).expect("column reshape"))
}

fn leaf2<F: Real>(values: &Array2<F>) -> Tensor<F> {
    Tensor::leaf(values.clone().into_dyn())
}

fn glorot_like<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<F> {
    use rand::Rng;
    let fan: usize = shape.iter().sum();
    let limit = (6.0 / fan as f64).sqrt();
    let mut a = ArrayD::zeros(IxDyn(shape));
    for v in a.iter_mut() {
        *v = F::from_f64(rng.gen_range(-limit..limit));
    }
    a
}

//! Encoder/decoder segmentation network with concatenating skip connections.
//!
//! Layout for `depth = d`, stage widths `w_k = base_width * 2^k`:
//!
//! ```text
//! enc k    (k = 0..d):   [conv3x3 -> bn -> relu] x2   (skip k stored)  -> maxpool2x2
//! bottleneck:            [conv3x3 -> bn -> relu] x2   at width w_d
//! dec k    (k = d-1..0): convT3x3/2 -> concat(skip k, up) -> [conv3x3 -> bn -> relu] x2 -> dropout2d
//! head:                  conv3x3 -> sigmoid
//! ```
//!
//! Parameters are registered in exactly that order with names such as
//! `enc0.conv1.weight`, `enc0.bn1.gamma`, `bottleneck.conv2.bias`,
//! `dec0.up.weight` and `head.weight`.

use crate::error::{Error, Result};
use crate::nn::{
    dropout2d, maxpool2x2, BatchNorm2dLayer, BatchStats, Conv2dLayer, ConvTranspose2dLayer,
    Dropout2dParams, HeInit, Mode,
};
use crate::tensor::{
    concat_channels, relu, sigmoid, Element, ParamStore, Rng, Stream, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    /// Stacked input channels (RGB + NIR bands).
    pub in_channels: usize,
    /// Number of pooling stages.
    pub depth: usize,
    pub base_width: usize,
    pub dropout_p: f64,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            depth: 4,
            base_width: 16,
            dropout_p: 0.1,
            out_channels: 1,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::config(format!(
                "depth, base_width, in_channels and out_channels must all be >= 1 ({self:?})"
            )));
        }
        if self.depth > 16 {
            return Err(Error::config(format!("depth {} is unreasonably large", self.depth)));
        }
        Dropout2dParams::new(self.dropout_p)?;
        Ok(())
    }

    /// Channel width of stage `k` (`k == depth` is the bottleneck).
    pub fn stage_width(&self, k: usize) -> usize {
        self.base_width << k
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvBnRelu<T: Element> {
    conv: Conv2dLayer,
    bn: BatchNorm2dLayer<T>,
}

#[derive(Clone, Debug, PartialEq)]
struct DoubleConv<T: Element> {
    first: ConvBnRelu<T>,
    second: ConvBnRelu<T>,
}

impl<T: Element> DoubleConv<T> {
    fn new(params: &mut ParamStore<T>, stage: &str, input: usize, width: usize) -> Result<Self> {
        let unit = |params: &mut ParamStore<T>, i: usize, cin: usize| -> Result<ConvBnRelu<T>> {
            Ok(ConvBnRelu {
                conv: Conv2dLayer::new(params, &format!("{stage}.conv{i}"), cin, width)?,
                bn: BatchNorm2dLayer::new(params, &format!("{stage}.bn{i}"), width)?,
            })
        };
        Ok(Self {
            first: unit(params, 1, input)?,
            second: unit(params, 2, width)?,
        })
    }

    fn units(&self) -> [&ConvBnRelu<T>; 2] {
        [&self.first, &self.second]
    }

    fn units_mut(&mut self) -> [&mut ConvBnRelu<T>; 2] {
        [&mut self.first, &mut self.second]
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        mut x: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        for unit in self.units() {
            let y = unit.conv.forward(tape, params, x)?;
            let g = tape.param(params, unit.bn.gamma);
            let b = tape.param(params, unit.bn.beta);
            let y = match mode {
                Mode::Train => {
                    let (y, s) = crate::nn::batch_norm_train(tape, y, g, b, unit.bn.eps)?;
                    stats.push(s);
                    y
                }
                Mode::Eval => crate::nn::batch_norm_eval(
                    tape,
                    y,
                    g,
                    b,
                    &unit.bn.running_mean,
                    &unit.bn.running_var,
                    unit.bn.eps,
                )?,
            };
            x = relu(tape, y)?;
        }
        Ok(x)
    }

    fn cast<U: Element>(&self) -> DoubleConv<U> {
        let unit = |u: &ConvBnRelu<T>| ConvBnRelu {
            conv: u.conv.clone(),
            bn: u.bn.cast(),
        };
        DoubleConv {
            first: unit(&self.first),
            second: unit(&self.second),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderStage<T: Element> {
    up: ConvTranspose2dLayer,
    block: DoubleConv<T>,
}

/// Intermediate handles from one forward pass.
#[derive(Clone, Debug)]
pub struct UNetTrace {
    /// Per-pixel probabilities `[N, out, H, W]`.
    pub output: Var,
    /// Pre-sigmoid scores.
    pub logits: Var,
    /// Encoder activations stored for the decoder, shallowest first.
    pub skips: Vec<Var>,
    /// Channel concatenations in the decoder, indexed like `skips`.
    pub merges: Vec<Var>,
}

/// The segmentation network: parameter store, layer wiring and mode flag.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel<T: Element = f32> {
    config: UNetConfig,
    params: ParamStore<T>,
    encoders: Vec<DoubleConv<T>>,
    bottleneck: DoubleConv<T>,
    /// Indexed by stage, so `decoders[0]` is the shallowest.
    decoders: Vec<DecoderStage<T>>,
    head: Conv2dLayer,
    mode: Mode,
}

impl<T: Element> UNetModel<T> {
    /// Builds and He-initializes every layer from the `Init` stream of `rng`.
    pub fn build(config: UNetConfig, rng: &Rng) -> Result<Self> {
        let mut model = Self::uninitialized(config)?;
        let mut init = rng.split(Stream::Init);
        model.init_he(&mut init)?;
        Ok(model)
    }

    /// Same wiring as [`UNetModel::build`] with zero weights, unit gammas
    /// and default running statistics.
    pub fn uninitialized(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut encoders = Vec::with_capacity(config.depth);
        let mut input = config.in_channels;
        for k in 0..config.depth {
            let w = config.stage_width(k);
            encoders.push(DoubleConv::new(&mut params, &format!("enc{k}"), input, w)?);
            input = w;
        }
        let wb = config.stage_width(config.depth);
        let bottleneck = DoubleConv::new(&mut params, "bottleneck", input, wb)?;
        let mut decoders = Vec::with_capacity(config.depth);
        for k in (0..config.depth).rev() {
            let w = config.stage_width(k);
            let up = ConvTranspose2dLayer::new(
                &mut params,
                &format!("dec{k}.up"),
                config.stage_width(k + 1),
                w,
            )?;
            let block = DoubleConv::new(&mut params, &format!("dec{k}"), 2 * w, w)?;
            decoders.push(DecoderStage { up, block });
        }
        decoders.reverse();
        let head = Conv2dLayer::new(&mut params, "head", config.base_width, config.out_channels)?;
        Ok(Self {
            config,
            params,
            encoders,
            bottleneck,
            decoders,
            head,
            mode: Mode::Train,
        })
    }

    fn init_he(&mut self, rng: &mut Rng) -> Result<()> {
        let params = &mut self.params;
        let mut blocks: Vec<&mut DoubleConv<T>> = self.encoders.iter_mut().collect();
        blocks.push(&mut self.bottleneck);
        for block in blocks {
            for unit in block.units_mut() {
                unit.conv.init_he(params, rng)?;
                unit.bn.init_he(params, rng)?;
            }
        }
        for stage in self.decoders.iter_mut().rev() {
            stage.up.init_he(params, rng)?;
            for unit in stage.block.units_mut() {
                unit.conv.init_he(params, rng)?;
                unit.bn.init_he(params, rng)?;
            }
        }
        self.head.init_he(params, rng)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn bn_layers(&self) -> Vec<&BatchNorm2dLayer<T>> {
        let mut out = Vec::new();
        for block in self.encoders.iter().chain(std::iter::once(&self.bottleneck)) {
            out.extend(block.units().map(|u| &u.bn));
        }
        for stage in self.decoders.iter().rev() {
            out.extend(stage.block.units().map(|u| &u.bn));
        }
        out
    }

    fn bn_layers_mut(&mut self) -> Vec<&mut BatchNorm2dLayer<T>> {
        let mut out = Vec::new();
        for block in self.encoders.iter_mut() {
            out.extend(block.units_mut().map(|u| &mut u.bn));
        }
        out.extend(self.bottleneck.units_mut().map(|u| &mut u.bn));
        for stage in self.decoders.iter_mut().rev() {
            out.extend(stage.block.units_mut().map(|u| &mut u.bn));
        }
        out
    }

    /// Running statistics as `(name, tensor)` pairs in parameter order,
    /// named `<bn>.running_mean` / `<bn>.running_var`.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for bn in self.bn_layers() {
            let stem = self.params.name(bn.gamma).trim_end_matches(".gamma").to_string();
            out.push((format!("{stem}.running_mean"), &bn.running_mean));
            out.push((format!("{stem}.running_var"), &bn.running_var));
        }
        out
    }

    /// Overwrites a running-statistics buffer by name.
    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let stems: Vec<String> = self
            .bn_layers()
            .iter()
            .map(|bn| self.params.name(bn.gamma).trim_end_matches(".gamma").to_string())
            .collect();
        for (stem, bn) in stems.iter().zip(self.bn_layers_mut()) {
            let slot = if name == format!("{stem}.running_mean") {
                &mut bn.running_mean
            } else if name == format!("{stem}.running_var") {
                &mut bn.running_var
            } else {
                continue;
            };
            if slot.shape() != value.shape() {
                return Err(Error::shape(format!(
                    "buffer {name} has shape {:?}, replacement has {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            *slot = value;
            return Ok(());
        }
        Err(Error::contract(format!("no buffer named {name}")))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "model expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!(
                "input height and width must be multiples of {m} for depth {}, got {h}x{w}",
                self.config.depth
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        mut rng: Option<&mut Rng>,
        stats: &mut Vec<BatchStats>,
    ) -> Result<UNetTrace> {
        self.check_input(tape.get(x)?)?;
        let params = &self.params;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for block in &self.encoders {
            let y = block.forward(tape, params, h, mode, stats)?;
            skips.push(y);
            h = maxpool2x2(tape, y)?.0;
        }
        h = self.bottleneck.forward(tape, params, h, mode, stats)?;
        let dropout = Dropout2dParams::new(self.config.dropout_p)?;
        let mut merges = vec![h; self.config.depth];
        let mut decoder_stats = Vec::new();
        for (k, stage) in self.decoders.iter().enumerate().rev() {
            let up = stage.up.forward(tape, params, h)?;
            let merged = concat_channels(tape, &[skips[k], up])?;
            merges[k] = merged;
            h = stage.block.forward(tape, params, merged, mode, &mut decoder_stats)?;
            if mode == Mode::Train {
                let rng = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::contract("train-mode forward needs a dropout stream"))?;
                h = dropout2d(tape, h, dropout, mode, rng)?;
            }
        }
        stats.extend(decoder_stats);
        let logits = self.head.forward(tape, params, h)?;
        let output = sigmoid(tape, logits)?;
        Ok(UNetTrace {
            output,
            logits,
            skips,
            merges,
        })
    }

    /// Forward pass in the current mode. Train mode draws dropout masks from
    /// `rng` and folds batch statistics into the running estimates.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, rng: &mut Rng) -> Result<UNetTrace> {
        let mut stats = Vec::new();
        let trace = self.run(tape, x, self.mode, Some(rng), &mut stats)?;
        if self.mode == Mode::Train {
            let mut layers = self.bn_layers_mut();
            debug_assert_eq!(layers.len(), stats.len());
            for (bn, s) in layers.iter_mut().zip(&stats) {
                let m = bn.momentum;
                for (r, b) in bn.running_mean.data_mut().iter_mut().zip(&s.mean) {
                    *r = T::from_f64_lossy((1.0 - m) * r.as_f64() + m * b);
                }
                for (r, b) in bn.running_var.data_mut().iter_mut().zip(&s.var) {
                    *r = T::from_f64_lossy((1.0 - m) * r.as_f64() + m * b);
                }
            }
        }
        Ok(trace)
    }

    /// Eval-mode forward on a fresh tape, independent of the mode flag.
    /// Read-only, so it may run concurrently on a shared model.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let trace = self.run(&mut tape, xv, Mode::Eval, None, &mut Vec::new())?;
        Ok(tape.value(trace.output).clone())
    }

    /// Copy of the model in another precision (e.g. the `f64` shadow).
    pub fn cast<U: Element>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoders: self.encoders.iter().map(DoubleConv::cast).collect(),
            bottleneck: self.bottleneck.cast(),
            decoders: self
                .decoders
                .iter()
                .map(|d| DecoderStage {
                    up: d.up.clone(),
                    block: d.block.cast(),
                })
                .collect(),
            head: self.head.clone(),
            mode: self.mode,
        }
    }
}

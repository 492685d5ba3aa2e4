use crate::error::{Error, Result};
use crate::tensor::{Element, ParamId, ParamStore, Rng, Tape, Tensor, Var};

use super::conv::KERNEL;
use super::{batch_norm_eval, batch_norm_train, conv2d, conv_transpose2d, Mode};

/// He (Kaiming normal) initialization.
pub trait HeInit<T: Element> {
    fn init_he(&mut self, params: &mut ParamStore<T>, rng: &mut Rng) -> Result<()>;
}

fn he_normal<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    Tensor::randn(shape, rng, 0.0, (2.0 / fan_in as f64).sqrt())
}

fn check_channels<T: Element>(
    tape: &Tape<T>,
    x: Var,
    expected: usize,
    what: &str,
) -> Result<()> {
    let (_, c, _, _) = tape.get(x)?.dims4()?;
    if c != expected {
        return Err(Error::shape(format!(
            "{what}: input has {c} channels, layer expects {expected}"
        )));
    }
    Ok(())
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    /// `[out, in, 3, 3]`
    pub weight: ParamId,
    /// `[out]`
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2dLayer {
    /// Registers `{name}.weight` and `{name}.bias` (zero filled).
    pub fn new<T: Element>(
        params: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_channels, in_channels, KERNEL, KERNEL])?,
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])?);
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        check_channels(tape, x, self.in_channels, "conv2d")?;
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        conv2d(tape, x, w, b)
    }
}

impl<T: Element> HeInit<T> for Conv2dLayer {
    fn init_he(&mut self, params: &mut ParamStore<T>, rng: &mut Rng) -> Result<()> {
        let shape = params.get(self.weight).shape().to_vec();
        params.set_value(self.weight, he_normal(&shape, self.in_channels * KERNEL * KERNEL, rng)?)?;
        params.set_value(self.bias, Tensor::zeros(&[self.out_channels])?)
    }
}

/// 3x3 transposed convolution, stride 2, padding 1, output padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2dLayer {
    /// `[in, out, 3, 3]`
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2dLayer {
    pub fn new<T: Element>(
        params: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::zeros(&[in_channels, out_channels, KERNEL, KERNEL])?,
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])?);
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        check_channels(tape, x, self.in_channels, "conv_transpose2d")?;
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        conv_transpose2d(tape, x, w, b)
    }
}

impl<T: Element> HeInit<T> for ConvTranspose2dLayer {
    fn init_he(&mut self, params: &mut ParamStore<T>, rng: &mut Rng) -> Result<()> {
        let shape = params.get(self.weight).shape().to_vec();
        // fan-in counted as input channels times kernel area, as for conv2d
        params.set_value(self.weight, he_normal(&shape, self.in_channels * KERNEL * KERNEL, rng)?)?;
        params.set_value(self.bias, Tensor::zeros(&[self.out_channels])?)
    }
}

/// Batch normalization over (batch, H, W) per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2dLayer<T: Element = f32> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    pub channels: usize,
}

impl<T: Element> BatchNorm2dLayer<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(params: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = params.add(format!("{name}.gamma"), Tensor::ones(&[channels])?);
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[channels])?);
        Ok(Self {
            gamma,
            beta,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            channels,
        })
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates; eval mode reads the running estimates only.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        check_channels(tape, x, self.channels, "batchnorm2d")?;
        let g = tape.param(params, self.gamma);
        let b = tape.param(params, self.beta);
        match mode {
            Mode::Eval => batch_norm_eval(
                tape,
                x,
                g,
                b,
                &self.running_mean,
                &self.running_var,
                self.eps,
            ),
            Mode::Train => {
                let (y, stats) = batch_norm_train(tape, x, g, b, self.eps)?;
                let m = self.momentum;
                let blend = |r: &mut Tensor<T>, batch: &[f64]| {
                    for (rv, bv) in r.data_mut().iter_mut().zip(batch) {
                        *rv = T::from_f64_lossy((1.0 - m) * rv.as_f64() + m * bv);
                    }
                };
                blend(&mut self.running_mean, &stats.mean);
                blend(&mut self.running_var, &stats.var);
                Ok(y)
            }
        }
    }

    pub fn cast<U: Element>(&self) -> BatchNorm2dLayer<U> {
        BatchNorm2dLayer {
            gamma: self.gamma,
            beta: self.beta,
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            eps: self.eps,
            momentum: self.momentum,
            channels: self.channels,
        }
    }
}

impl<T: Element> HeInit<T> for BatchNorm2dLayer<T> {
    fn init_he(&mut self, params: &mut ParamStore<T>, _rng: &mut Rng) -> Result<()> {
        params.set_value(self.gamma, Tensor::ones(&[self.channels])?)?;
        params.set_value(self.beta, Tensor::zeros(&[self.channels])?)?;
        self.running_mean = Tensor::zeros(&[self.channels])?;
        self.running_var = Tensor::ones(&[self.channels])?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Stream;

    #[test]
    fn he_init_statistics_on_frozen_seed() {
        let mut params = ParamStore::<f32>::new();
        let mut conv = Conv2dLayer::new(&mut params, "c", 32, 64).unwrap();
        let mut rng = Rng::new(17).split(Stream::Init);
        conv.init_he(&mut params, &mut rng).unwrap();
        let w = params.get(conv.weight);
        let n = w.len() as f64;
        let mean = w.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let std = (w.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0f64 / (32.0 * 9.0)).sqrt();
        assert!((std / target - 1.0).abs() < 0.1, "std {std} vs {target}");
        assert!(params.get(conv.bias).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn batchnorm_init_and_running_stats() {
        let mut params = ParamStore::<f32>::new();
        let mut bn = BatchNorm2dLayer::new(&mut params, "bn", 2).unwrap();
        bn.init_he(&mut params, &mut Rng::new(0)).unwrap();
        assert_eq!(params.get(bn.gamma).data(), &[1.0, 1.0]);
        assert_eq!(params.get(bn.beta).data(), &[0.0, 0.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[2, 2, 1, 1], &[1.0, 10.0, 3.0, 10.0]).unwrap());
        bn.forward(&mut tape, &params, x, Mode::Train).unwrap();
        // mean (2, 10), biased var (1, 0)
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-6);
        assert!((bn.running_mean.data()[1] - 1.0).abs() < 1e-6);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-6);
        assert!((bn.running_var.data()[1] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut params = ParamStore::<f32>::new();
        let conv = Conv2dLayer::new(&mut params, "c", 3, 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]).unwrap());
        assert!(matches!(conv.forward(&mut tape, &params, x), Err(Error::Shape(_))));
        let up = ConvTranspose2dLayer::new(&mut params, "u", 3, 4).unwrap();
        assert!(matches!(up.forward(&mut tape, &params, x), Err(Error::Shape(_))));
    }
}

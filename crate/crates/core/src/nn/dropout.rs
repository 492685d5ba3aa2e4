use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Element, Rng, Tape, Tensor, Var};

use super::Mode;

/// Channel dropout: each `(sample, channel)` plane is zeroed with
/// probability `p` and survivors are scaled by `1 / (1 - p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout2dParams {
    pub p: f64,
}

impl Dropout2dParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        Ok(Self { p })
    }
}

struct DropoutRule<T: Element> {
    scale: Vec<T>,
    plane: usize,
}

impl<T: Element> BackwardOp<T> for DropoutRule<T> {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        gy: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(apply_mask(gy, &self.scale, self.plane))])
    }
}

fn apply_mask<T: Element>(x: &Tensor<T>, scale: &[T], plane: usize) -> Tensor<T> {
    let data = x
        .data()
        .chunks(plane)
        .zip(scale)
        .flat_map(|(chunk, &s)| chunk.iter().map(move |v| *v * s))
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Draws the per-`(sample, channel)` keep mask, already scaled.
pub fn dropout_mask<T: Element>(n: usize, c: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..n * c)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect()
}

/// Identity in eval mode and for `p == 0`; channel dropout otherwise. The
/// mask drawn in forward is the one used in backward.
pub fn dropout2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    params: Dropout2dParams,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    Dropout2dParams::new(params.p)?;
    if mode == Mode::Eval || params.p == 0.0 {
        return Ok(x);
    }
    let xv = tape.get(x)?;
    let (n, c, h, w) = xv.dims4()?;
    let scale = dropout_mask(n, c, params.p, rng);
    let out = apply_mask(xv, &scale, h * w);
    tape.record("dropout2d", vec![x], out, DropoutRule { scale, plane: h * w })
}

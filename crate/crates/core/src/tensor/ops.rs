//! Elementwise and structural operations recorded on a [`Tape`].

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::{BackwardOp, Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct AddRule;

impl<T: Element> BackwardOp<T> for AddRule {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(needs.iter().map(|&n| n.then(|| g.clone())).collect())
    }
}

/// Elementwise sum of two same-shaped tensors.
pub fn add<T: Element>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let (x, y) = (tape.get(a)?, tape.get(b)?);
    x.same_shape(y, "add")?;
    let data = x.data().iter().zip(y.data()).map(|(p, q)| *p + *q).collect();
    let out = Tensor::from_parts(x.shape().to_vec(), data);
    tape.record("add", vec![a, b], out, AddRule)
}

struct MulRule;

impl<T: Element> BackwardOp<T> for MulRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let scaled = |other: &Tensor<T>| {
            let data = g.data().iter().zip(other.data()).map(|(g, o)| *g * *o).collect();
            Tensor::from_parts(g.shape().to_vec(), data)
        };
        Ok(vec![
            needs[0].then(|| scaled(inputs[1])),
            needs[1].then(|| scaled(inputs[0])),
        ])
    }
}

/// Elementwise product of two same-shaped tensors.
pub fn mul<T: Element>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let (x, y) = (tape.get(a)?, tape.get(b)?);
    x.same_shape(y, "mul")?;
    let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
    let out = Tensor::from_parts(x.shape().to_vec(), data);
    tape.record("mul", vec![a, b], out, MulRule)
}

struct ReluRule;

impl<T: Element> BackwardOp<T> for ReluRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        // Subgradient at exactly zero is zero.
        let data = inputs[0]
            .data()
            .iter()
            .zip(g.data())
            .map(|(x, g)| if *x > T::zero() { *g } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), data))])
    }

    fn branch_fingerprint(&self, inputs: &[&Tensor<T>]) -> Option<u64> {
        let mut h = DefaultHasher::new();
        let mut word = 0u64;
        for (i, x) in inputs[0].data().iter().enumerate() {
            word = (word << 1) | u64::from(*x > T::zero());
            if i % 64 == 63 {
                h.write_u64(word);
                word = 0;
            }
        }
        h.write_u64(word);
        Some(h.finish())
    }
}

pub fn relu<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let out = tape.get(x)?.map(|v| if v > T::zero() { v } else { T::zero() });
    tape.record("relu", vec![x], out, ReluRule)
}

struct SigmoidRule;

impl<T: Element> BackwardOp<T> for SigmoidRule {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = output
            .data()
            .iter()
            .zip(g.data())
            .map(|(s, g)| *s * (T::one() - *s) * *g)
            .collect();
        Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), data))])
    }
}

pub(crate) fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Logistic function, evaluated in the overflow-free branch for each sign.
pub fn sigmoid<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let out = tape.get(x)?.map(sigmoid_scalar);
    tape.record("sigmoid", vec![x], out, SigmoidRule)
}

struct SumRule {
    scale: f64,
}

impl<T: Element> BackwardOp<T> for SumRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let v = g.data()[0] * T::from_f64_lossy(self.scale);
        Ok(vec![Some(Tensor::from_parts(
            inputs[0].shape().to_vec(),
            vec![v; inputs[0].len()],
        ))])
    }
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let out = Tensor::scalar(tape.get(x)?.sum_all());
    tape.record("sum", vec![x], out, SumRule { scale: 1.0 })
}

/// Mean of all elements, as a `[1]` tensor.
pub fn mean<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let n = tape.get(x)?.len() as f64;
    let out = Tensor::scalar(T::from_f64_lossy(tape.get(x)?.sum_all().as_f64() / n));
    tape.record("mean", vec![x], out, SumRule { scale: 1.0 / n })
}

struct ConcatRule {
    channels: Vec<usize>,
}

impl<T: Element> BackwardOp<T> for ConcatRule {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let parts = split_channels(g, &self.channels)?;
        Ok(parts
            .into_iter()
            .zip(needs)
            .map(|(p, &n)| n.then_some(p))
            .collect())
    }
}

fn concat_raw<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels needs at least one part"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut channels = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(format!(
                "concat_channels: part {:?} does not match batch/height/width of {:?}",
                p.shape(),
                first.shape()
            )));
        }
        channels += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * channels * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[b * pc * plane..(b + 1) * pc * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, channels, h, w], data))
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<T: Element>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let values: Vec<&Tensor<T>> = parts.iter().map(|&v| tape.get(v)).collect::<Result<_>>()?;
    let out = concat_raw(&values)?;
    let channels = values.iter().map(|t| t.shape()[1]).collect();
    tape.record("concat_channels", parts.to_vec(), out, ConcatRule { channels })
}

/// Inverse of concatenation: splits `x` into consecutive channel groups.
pub fn split_channels<T: Element>(x: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = x.dims4()?;
    if channels.iter().sum::<usize>() != c || channels.contains(&0) {
        return Err(Error::shape(format!(
            "cannot split {c} channels into groups {channels:?}"
        )));
    }
    let plane = h * w;
    let mut out: Vec<Vec<T>> = channels
        .iter()
        .map(|pc| Vec::with_capacity(n * pc * plane))
        .collect();
    for b in 0..n {
        let mut offset = b * c * plane;
        for (dst, &pc) in out.iter_mut().zip(channels) {
            dst.extend_from_slice(&x.data()[offset..offset + pc * plane]);
            offset += pc * plane;
        }
    }
    Ok(out
        .into_iter()
        .zip(channels)
        .map(|(d, &pc)| Tensor::from_parts(vec![n, pc, h, w], d))
        .collect())
}

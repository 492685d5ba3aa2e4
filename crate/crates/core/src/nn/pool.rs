use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Element, Tape, Tensor, Var};

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the selected maximum. Ties resolve to the
/// first element in row-major scan order.
pub fn maxpool2x2_forward<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2x2 needs even height and width, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), argmax))
}

struct MaxPoolRule {
    argmax: Vec<usize>,
}

impl<T: Element> BackwardOp<T> for MaxPoolRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        gy: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut dx = vec![T::zero(); inputs[0].len()];
        for (&idx, &g) in self.argmax.iter().zip(gy.data()) {
            dx[idx] += g;
        }
        Ok(vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), dx))])
    }

    fn branch_fingerprint(&self, _inputs: &[&Tensor<T>]) -> Option<u64> {
        let mut h = DefaultHasher::new();
        self.argmax.hash(&mut h);
        Some(h.finish())
    }
}

/// [`maxpool2x2_forward`] on the tape. The argmax indices are kept for the
/// backward pass, which routes each gradient to its selected input only.
pub fn maxpool2x2<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<usize>)> {
    let (out, argmax) = maxpool2x2_forward(tape.get(x)?)?;
    let var = tape.record("maxpool2x2", vec![x], out, MaxPoolRule { argmax: argmax.clone() })?;
    Ok((var, argmax))
}

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Element, Tape, Tensor, Var};

pub const PROB_CLAMP: f64 = 1e-7;

struct BceRule {
    target: Vec<f64>,
}

impl<T: Element> BackwardOp<T> for BceRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let pred = inputs[0];
        let scale = g.data()[0].as_f64() / pred.len() as f64;
        let data = pred
            .data()
            .iter()
            .zip(&self.target)
            .map(|(p, &y)| {
                let p = p.as_f64();
                if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                    // clamped region is flat
                    return T::zero();
                }
                T::from_f64_lossy(scale * ((1.0 - y) / (1.0 - p) - y / p))
            })
            .collect();
        Ok(vec![Some(Tensor::new(pred.shape(), data)?)])
    }
}

/// Mean binary cross-entropy of probabilities `pred` against a {0,1} mask.
pub fn bce_loss<T: Element>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let p = tape.get(pred)?;
    if p.shape() != target.shape() {
        return Err(Error::shape(format!(
            "bce_loss: prediction {:?} vs target {:?}",
            p.shape(),
            target.shape()
        )));
    }
    let mut y = Vec::with_capacity(target.len());
    for &v in target.data() {
        let v = v.as_f64();
        if v != 0.0 && v != 1.0 {
            return Err(Error::contract(format!("bce_loss: target value {v} is not 0 or 1")));
        }
        y.push(v);
    }
    let total: f64 = p
        .data()
        .iter()
        .zip(&y)
        .map(|(p, &y)| {
            let p = p.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    let out = Tensor::scalar(T::from_f64_lossy(total / y.len() as f64));
    tape.record("bce_loss", vec![pred], out, BceRule { target: y })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_gives_ln2() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::full(&[2, 1, 3, 3], 0.5).unwrap());
        let y = Tensor::from_slice(
            &[2, 1, 3, 3],
            &(0..18).map(|i| (i % 3 == 0) as u8 as f64).collect::<Vec<_>>(),
        )
        .unwrap();
        let l = bce_loss(&mut tape, p, &y).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn exact_prediction_hits_clamp_floor() {
        let y = Tensor::<f64>::from_slice(&[1, 1, 1, 4], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(y.clone().with_requires_grad(true));
        let l = bce_loss(&mut tape, p, &y).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!(v > 0.0 && v < 1e-6);
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(p).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_binary_target_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let p = tape.leaf(Tensor::full(&[1, 1, 1, 2], 0.5).unwrap());
        let y = Tensor::from_slice(&[1, 1, 1, 2], &[0.0, 0.5]).unwrap();
        assert!(matches!(bce_loss(&mut tape, p, &y), Err(Error::Contract(_))));
    }
}

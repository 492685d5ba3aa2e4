use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Element, Tape, Tensor, Var};

/// Per-channel statistics of one training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide by count) variance.
    pub var: Vec<f64>,
}

fn channel_view(n: usize, c: usize, plane: usize) -> impl Fn(usize) -> Vec<std::ops::Range<usize>> {
    move |ch| (0..n).map(|b| (b * c + ch) * plane..(b * c + ch + 1) * plane).collect()
}

struct BatchNormTrainRule<T: Element> {
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> BackwardOp<T> for BatchNormTrainRule<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        gy: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let count = T::from_f64_lossy((n * plane) as f64);
        let ranges = channel_view(n, c, plane);
        let mut dx = vec![T::zero(); x.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mu, inv) = (self.mean[ch], self.inv_std[ch]);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for r in ranges(ch) {
                for (xv, gv) in x.data()[r.clone()].iter().zip(&gy.data()[r]) {
                    sum_g += *gv;
                    sum_gx += *gv * (*xv - mu) * inv;
                }
            }
            dbeta[ch] = sum_g;
            dgamma[ch] = sum_gx;
            if needs[0] {
                // dx = gamma * inv / m * (m * g - sum(g) - xhat * sum(g * xhat))
                let scale = gamma.data()[ch] * inv / count;
                for r in ranges(ch) {
                    for i in r {
                        let xhat = (x.data()[i] - mu) * inv;
                        dx[i] = scale * (count * gy.data()[i] - sum_g - xhat * sum_gx);
                    }
                }
            }
        }
        Ok(vec![
            needs[0].then(|| Tensor::from_parts(x.shape().to_vec(), dx)),
            Some(Tensor::from_parts(vec![c], dgamma)),
            Some(Tensor::from_parts(vec![c], dbeta)),
        ])
    }
}

fn check_affine<T: Element>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "batchnorm over {c} channels needs gamma/beta of shape [{c}], got {:?}/{:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Training-mode batch normalization: normalizes each channel over
/// (batch, H, W) with the batch mean and biased variance.
pub fn batch_norm_train<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<(Var, BatchStats)> {
    let xv = tape.get(x)?;
    let (n, c, h, w) = xv.dims4()?;
    check_affine(c, tape.get(gamma)?, tape.get(beta)?)?;
    let plane = h * w;
    let count = n * plane;
    if count < 2 {
        return Err(Error::contract(format!(
            "training-mode batchnorm needs at least 2 values per channel, got batch {n} of {h}x{w}"
        )));
    }
    let ranges = channel_view(n, c, plane);
    let mut stats = BatchStats {
        mean: vec![0.0; c],
        var: vec![0.0; c],
    };
    for ch in 0..c {
        let mut s = 0.0;
        for r in ranges(ch) {
            s += xv.data()[r].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = s / count as f64;
        let mut ss = 0.0;
        for r in ranges(ch) {
            ss += xv.data()[r].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
        }
        stats.mean[ch] = mean;
        stats.var[ch] = ss / count as f64;
    }
    let mean: Vec<T> = stats.mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
    let inv_std: Vec<T> = stats
        .var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt()))
        .collect();
    let (g, b) = (tape.get(gamma)?.data(), tape.get(beta)?.data());
    let mut out = vec![T::zero(); xv.len()];
    for ch in 0..c {
        let (mu, inv, gm, bt) = (mean[ch], inv_std[ch], g[ch], b[ch]);
        for r in ranges(ch) {
            for i in r {
                out[i] = gm * (xv.data()[i] - mu) * inv + bt;
            }
        }
    }
    let out = Tensor::from_parts(xv.shape().to_vec(), out);
    let var = tape.record(
        "batch_norm_train",
        vec![x, gamma, beta],
        out,
        BatchNormTrainRule { mean, inv_std },
    )?;
    Ok((var, stats))
}

struct BatchNormEvalRule<T: Element> {
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> BackwardOp<T> for BatchNormEvalRule<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        gy: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let ranges = channel_view(n, c, plane);
        let mut dx = vec![T::zero(); x.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mu, inv, gm) = (self.mean[ch], self.inv_std[ch], gamma.data()[ch]);
            for r in ranges(ch) {
                for i in r {
                    let g = gy.data()[i];
                    dbeta[ch] += g;
                    dgamma[ch] += g * (x.data()[i] - mu) * inv;
                    dx[i] = g * gm * inv;
                }
            }
        }
        Ok(vec![
            needs[0].then(|| Tensor::from_parts(x.shape().to_vec(), dx)),
            Some(Tensor::from_parts(vec![c], dgamma)),
            Some(Tensor::from_parts(vec![c], dbeta)),
        ])
    }
}

/// Evaluation-mode batch normalization with fixed running statistics.
pub fn batch_norm_eval<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Var> {
    let xv = tape.get(x)?;
    let (n, c, h, w) = xv.dims4()?;
    check_affine(c, tape.get(gamma)?, tape.get(beta)?)?;
    check_affine(c, running_mean, running_var)?;
    let mean = running_mean.data().to_vec();
    let inv_std: Vec<T> = running_var
        .data()
        .iter()
        .map(|v| T::from_f64_lossy(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();
    let (g, b) = (tape.get(gamma)?.data(), tape.get(beta)?.data());
    let plane = h * w;
    let ranges = channel_view(n, c, plane);
    let mut out = vec![T::zero(); xv.len()];
    for ch in 0..c {
        for r in ranges(ch) {
            for i in r {
                out[i] = g[ch] * (xv.data()[i] - mean[ch]) * inv_std[ch] + b[ch];
            }
        }
    }
    let out = Tensor::from_parts(xv.shape().to_vec(), out);
    tape.record(
        "batch_norm_eval",
        vec![x, gamma, beta],
        out,
        BatchNormEvalRule { mean, inv_std },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn affine(tape: &mut Tape<f64>, c: usize) -> (Var, Var) {
        (
            tape.leaf(Tensor::ones(&[c]).unwrap()),
            tape.leaf(Tensor::zeros(&[c]).unwrap()),
        )
    }

    #[test]
    fn two_values_normalize_to_plus_minus_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_slice(&[2, 1, 1, 1], &[1.0, 3.0]).unwrap());
        let (g, b) = affine(&mut tape, 1);
        let (y, stats) = batch_norm_train(&mut tape, x, g, b, 1e-5).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
        let y = tape.value(y).data();
        assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4, "{y:?}");
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2, 1, 2, 2], 7.0).unwrap());
        let g = tape.leaf(Tensor::ones(&[1]).unwrap());
        let b = tape.leaf(Tensor::full(&[1], 0.25).unwrap());
        let (y, _) = batch_norm_train(&mut tape, x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn singleton_statistics_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3, 1, 1]).unwrap());
        let (g, b) = affine(&mut tape, 3);
        assert!(matches!(
            batch_norm_train(&mut tape, x, g, b, 1e-5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn train_output_is_standardized() {
        let mut tape = Tape::<f32>::new();
        let x = Tensor::<f32>::randn(&[4, 3, 8, 8], &mut Rng::new(2), 3.0, 2.5).unwrap();
        let x = tape.leaf(x);
        let g = tape.leaf(Tensor::ones(&[3]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[3]).unwrap());
        let (y, _) = batch_norm_train(&mut tape, x, g, b, 1e-5).unwrap();
        let y = tape.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 3 + ch) * 64..(b * 3 + ch + 1) * 64].to_vec())
                .map(f64::from)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_slice(&[1, 1, 1, 2], &[3.0, 5.0]).unwrap());
        let (g, b) = affine(&mut tape, 1);
        let rm = Tensor::from_slice(&[1], &[1.0]).unwrap();
        let rv = Tensor::from_slice(&[1], &[4.0 - 1e-5]).unwrap();
        let y = batch_norm_eval(&mut tape, x, g, b, &rm, &rv, 1e-5).unwrap();
        let y = tape.value(y).data();
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] - 2.0).abs() < 1e-12);
    }
}

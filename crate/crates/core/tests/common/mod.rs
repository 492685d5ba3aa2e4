//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written as plain nested loops over `f64` slices and
//! shares no code with the library kernels it checks.

#![allow(dead_code)]

use scarseg::tensor::{check_against, mul, sum, Evaluation, GradCheckReport, Rng, Tape, Tensor, Var};
use scarseg::train::bce_loss;
use scarseg::unet::{UNetConfig, UNetModel};

/// Direct cross-correlation: `[n, c, h, w]` input, `[o, c, 3, 3]` kernel,
/// zero padding 1, given stride.
pub fn naive_conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    o: usize,
    bias: &[f64],
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (y * stride + ky) as isize - 1;
                                let ix = (xx * stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                acc += xv * k[((oc * c + ic) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Scatter-loop transposed convolution: `[ci, co, 3, 3]` kernel, stride 2,
/// padding 1, output padding 1.
pub fn naive_conv_transpose2d(
    x: &[f64],
    (n, ci, h, w): (usize, usize, usize, usize),
    k: &[f64],
    co: usize,
    bias: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for oc in 0..co {
            for v in &mut out[(b * co + oc) * oh * ow..(b * co + oc + 1) * oh * ow] {
                *v = bias[oc];
            }
        }
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = x[((b * ci + ic) * h + iy) * w + ix];
                    for oc in 0..co {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let oy = (2 * iy + ky) as isize - 1;
                                let ox = (2 * ix + kx) as isize - 1;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out[((b * co + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    xv * k[((ic * co + oc) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2/2 max pool, first maximum in scan order wins.
pub fn naive_maxpool(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let mut out = Vec::new();
    for p in 0..n * c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x[p * h * w + (2 * y + dy) * w + 2 * xx + dx]);
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries an
/// O(1) cotangent in gradient checks.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> scarseg::Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let r = Tensor::<f64>::randn(&shape, &mut Rng::new(seed), 0.0, 1.0)?;
    let r = tape.constant(r);
    let p = mul(tape, y, r)?;
    sum(tape, p)
}

/// Depth-1, width-2 UNet in f64 with dropout off, a random input and a
/// random binary target.
pub fn tiny_fixture() -> (UNetModel<f64>, Tensor<f64>, Tensor<f64>) {
    let c = UNetConfig {
        depth: 1,
        base_width: 2,
        dropout_p: 0.0,
        ..UNetConfig::default()
    };
    let model = UNetModel::<f32>::build(c, &Rng::new(21)).unwrap().cast::<f64>();
    let mut rng = Rng::new(22);
    let x = Tensor::randn(&[2, 4, 8, 8], &mut rng, 0.0, 1.0).unwrap();
    let y = Tensor::rand_uniform(&[2, 1, 8, 8], &mut rng, 0.0, 1.0)
        .unwrap()
        .map(|v| if v < 0.4 { 1.0 } else { 0.0 });
    (model, x, y)
}

pub fn loss_of(model: &UNetModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> scarseg::Result<Evaluation> {
    let mut m = model.clone();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = m.forward(&mut tape, xv, &mut Rng::new(0))?.output;
    let l = bce_loss(&mut tape, out, y)?;
    Ok(Evaluation {
        value: tape.value(l).item()?,
        branch: tape.branch_signature(),
    })
}

/// Finite-difference reports for the input and every parameter of
/// [`tiny_fixture`], step 1e-3.
pub fn whole_model_gradient_reports() -> Vec<(String, GradCheckReport)> {
    let (model, x, y) = tiny_fixture();
    let mut m = model.clone();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let out = m.forward(&mut tape, xv, &mut Rng::new(0)).unwrap().output;
    let l = bce_loss(&mut tape, out, &y).unwrap();
    let grads = tape.backward_into(l, m.params_mut()).unwrap();

    let dx = grads.wrt(xv).unwrap().clone();
    let mut reports = vec![(
        "input".to_string(),
        check_against(|probe| loss_of(&model, probe, &y), &x, &dx, 1e-3, None).unwrap(),
    )];
    for (id, name, t) in m.params().iter() {
        let analytic = Tensor::new(t.shape(), t.grad_data().unwrap().to_vec()).unwrap();
        let report = check_against(
            |probe| {
                let mut probed = model.clone();
                probed.params_mut().set_value(id, probe.clone())?;
                loss_of(&probed, &x, &y)
            },
            model.params().get(id),
            &analytic,
            1e-3,
            None,
        )
        .unwrap();
        reports.push((name.to_string(), report));
    }
    reports
}

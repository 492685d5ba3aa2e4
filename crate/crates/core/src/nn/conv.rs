//! 3x3 convolution kernels built on im2col + GEMM.
//!
//! Geometry shared by every kernel here: a 3x3 window, zero padding 1, and a
//! stride of 1 or 2. Output (`oh`, `ow`) position `(oy, ox)` reads image
//! position `(oy * stride - 1 + ky, ox * stride - 1 + kx)`.

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Element, Tape, Tensor, Var};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
const PAD: isize = 1;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

impl Geometry {
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride) as isize - PAD + k as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

/// Gathers image patches into a `[channels * 9, oh * ow]` matrix.
fn im2col<T: Element>(img: &[T], g: Geometry, cols: &mut [T]) {
    let plane = g.oh * g.ow;
    for c in 0..g.channels {
        let src = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((c * TAPS) + ky * KERNEL + kx) * plane..][..plane];
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    match g.src(oy, ky, g.h) {
                        None => dst.fill(T::zero()),
                        Some(iy) => {
                            let line = &src[iy * g.w..(iy + 1) * g.w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match g.src(ox, kx, g.w) {
                                    Some(ix) => line[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the image.
fn col2im<T: Element>(cols: &[T], g: Geometry, img: &mut [T]) {
    let plane = g.oh * g.ow;
    for c in 0..g.channels {
        let dst = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((c * TAPS) + ky * KERNEL + kx) * plane..][..plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let line = &mut dst[iy * g.w..(iy + 1) * g.w];
                    for (ox, v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            line[ix] += *v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_out_extent(extent: usize, stride: usize) -> usize {
    (extent + 2 * PAD as usize - KERNEL) / stride + 1
}

fn check_kernel<T: Element>(w: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *w.shape() {
        [a, b, KERNEL, KERNEL] => Ok((a, b)),
        _ => Err(Error::shape(format!(
            "{what}: weight must be [_, _, 3, 3], got {:?}",
            w.shape()
        ))),
    }
}

fn check_bias<T: Element>(b: Option<&Tensor<T>>, channels: usize, what: &str) -> Result<()> {
    match b {
        Some(b) if b.shape() != [channels] => Err(Error::shape(format!(
            "{what}: bias must be [{channels}], got {:?}",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &Tensor<T>, n: usize, plane: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, &bv) in bias.data().iter().enumerate() {
            out[(b * c + ch) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Element>(gy: &[T], n: usize, c: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += gy[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
    Tensor::from_parts(vec![c], db)
}

/// Cross-correlation with a `[out, in, 3, 3]` kernel, zero padding 1 and the
/// given stride (1 or 2). Output extent is `(extent - 1) / stride + 1`.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, ci) = check_kernel(w, "conv2d")?;
    if ci != c {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, kernel expects {ci}"
        )));
    }
    check_bias(b, o, "conv2d")?;
    let g = Geometry {
        channels: c,
        h,
        w: wd,
        oh: conv_out_extent(h, stride),
        ow: conv_out_extent(wd, stride),
        stride,
    };
    let plane = g.oh * g.ow;
    let mut cols = vec![T::zero(); c * TAPS * plane];
    let mut out = vec![T::zero(); n * o * plane];
    for bi in 0..n {
        im2col(&x.data()[bi * c * h * wd..(bi + 1) * c * h * wd], g, &mut cols);
        T::gemm(
            o,
            c * TAPS,
            plane,
            w.data(),
            ((c * TAPS) as isize, 1),
            &cols,
            (plane as isize, 1),
            T::zero(),
            &mut out[bi * o * plane..(bi + 1) * o * plane],
        );
    }
    if let Some(b) = b {
        add_bias(&mut out, b, n, plane);
    }
    Ok(Tensor::from_parts(vec![n, o, g.oh, g.ow], out))
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, _) = check_kernel(w, "conv2d")?;
    let (_, _, oh, ow) = gy.dims4()?;
    let g = Geometry {
        channels: c,
        h,
        w: wd,
        oh,
        ow,
        stride,
    };
    let plane = oh * ow;
    let k = c * TAPS;
    let mut cols = vec![T::zero(); k * plane];
    let mut dcols = vec![T::zero(); k * plane];
    let mut dw = vec![T::zero(); o * k];
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    for bi in 0..n {
        let gyb = &gy.data()[bi * o * plane..(bi + 1) * o * plane];
        im2col(&x.data()[bi * c * h * wd..(bi + 1) * c * h * wd], g, &mut cols);
        // dW += gy[o, p] * cols[k, p]^T
        T::gemm(
            o,
            plane,
            k,
            gyb,
            (plane as isize, 1),
            &cols,
            (1, plane as isize),
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols = W[o, k]^T * gy[o, p]
            T::gemm(
                k,
                o,
                plane,
                w.data(),
                (1, k as isize),
                gyb,
                (plane as isize, 1),
                T::zero(),
                &mut dcols,
            );
            col2im(&dcols, g, &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd]);
        }
    }
    Ok((
        dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        Tensor::from_parts(w.shape().to_vec(), dw),
        bias_grad(gy.data(), n, o, plane),
    ))
}

/// Transposed convolution with a `[in, out, 3, 3]` kernel, stride 2,
/// padding 1 and output padding 1: output spatial extents are exactly double.
pub fn conv_transpose2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = x.dims4()?;
    let (ci, o) = check_kernel(w, "conv_transpose2d")?;
    if ci != c {
        return Err(Error::shape(format!(
            "conv_transpose2d: input has {c} channels, kernel expects {ci}"
        )));
    }
    check_bias(b, o, "conv_transpose2d")?;
    let (oh, ow) = (2 * h, 2 * wd);
    // The transposed conv is the adjoint of a stride-2 conv from the
    // (2h, 2w) image down to (h, w).
    let g = Geometry {
        channels: o,
        h: oh,
        w: ow,
        oh: h,
        ow: wd,
        stride: 2,
    };
    let plane = h * wd;
    let k = o * TAPS;
    let mut cols = vec![T::zero(); k * plane];
    let mut out = vec![T::zero(); n * o * oh * ow];
    for bi in 0..n {
        // cols[k, p] = W[c, k]^T * x[c, p]
        T::gemm(
            k,
            c,
            plane,
            w.data(),
            (1, k as isize),
            &x.data()[bi * c * plane..(bi + 1) * c * plane],
            (plane as isize, 1),
            T::zero(),
            &mut cols,
        );
        col2im(&cols, g, &mut out[bi * o * oh * ow..(bi + 1) * o * oh * ow]);
    }
    if let Some(b) = b {
        add_bias(&mut out, b, n, oh * ow);
    }
    Ok(Tensor::from_parts(vec![n, o, oh, ow], out))
}

/// Gradients of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, wd) = x.dims4()?;
    let (_, o) = check_kernel(w, "conv_transpose2d")?;
    let (oh, ow) = (2 * h, 2 * wd);
    let g = Geometry {
        channels: o,
        h: oh,
        w: ow,
        oh: h,
        ow: wd,
        stride: 2,
    };
    let plane = h * wd;
    let k = o * TAPS;
    let mut cols = vec![T::zero(); k * plane];
    let mut dw = vec![T::zero(); c * k];
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    for bi in 0..n {
        im2col(&gy.data()[bi * o * oh * ow..(bi + 1) * o * oh * ow], g, &mut cols);
        let xb = &x.data()[bi * c * plane..(bi + 1) * c * plane];
        // dW[c, k] += x[c, p] * cols[k, p]^T
        T::gemm(
            c,
            plane,
            k,
            xb,
            (plane as isize, 1),
            &cols,
            (1, plane as isize),
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            // dx[c, p] = W[c, k] * cols[k, p]
            T::gemm(
                c,
                k,
                plane,
                w.data(),
                (k as isize, 1),
                &cols,
                (plane as isize, 1),
                T::zero(),
                &mut dx[bi * c * plane..(bi + 1) * c * plane],
            );
        }
    }
    Ok((
        dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        Tensor::from_parts(w.shape().to_vec(), dw),
        bias_grad(gy.data(), n, o, oh * ow),
    ))
}

struct Conv2dRule {
    stride: usize,
}

impl<T: Element> BackwardOp<T> for Conv2dRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        gy: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (dx, dw, db) = conv2d_backward(inputs[0], inputs[1], gy, self.stride, needs[0])?;
        Ok(vec![dx, Some(dw), Some(db)])
    }
}

struct ConvTransposeRule;

impl<T: Element> BackwardOp<T> for ConvTransposeRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        gy: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (dx, dw, db) = conv_transpose2d_backward(inputs[0], inputs[1], gy, needs[0])?;
        Ok(vec![dx, Some(dw), Some(db)])
    }
}

/// Stride-1, padding-1 3x3 convolution on the tape. Output H, W equal input.
pub fn conv2d<T: Element>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let out = conv2d_forward(tape.get(x)?, tape.get(weight)?, Some(tape.get(bias)?), 1)?;
    tape.record("conv2d", vec![x, weight, bias], out, Conv2dRule { stride: 1 })
}

/// Stride-2 variant, the adjoint partner of [`conv_transpose2d`].
pub fn conv2d_stride2<T: Element>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let out = conv2d_forward(tape.get(x)?, tape.get(weight)?, Some(tape.get(bias)?), 2)?;
    tape.record("conv2d_stride2", vec![x, weight, bias], out, Conv2dRule { stride: 2 })
}

pub fn conv_transpose2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let out = conv_transpose2d_forward(tape.get(x)?, tape.get(weight)?, Some(tape.get(bias)?))?;
    tape.record("conv_transpose2d", vec![x, weight, bias], out, ConvTransposeRule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut w = vec![0.0f32; 2 * 2 * 9];
        w[4] = 1.0; // out 0 <- in 0 centre
        w[18 + 9 + 4] = 1.0; // out 1 <- in 1 centre
        let w = Tensor::new(&[2, 2, 3, 3], w).unwrap();
        let x = Tensor::new(&[1, 2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
        let y = conv2d_forward(&x, &w, None, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_in_bounds_taps() {
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d_forward(&x, &w, Some(&Tensor::zeros(&[1]).unwrap()), 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn transpose_doubles_spatial_extent() {
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let x = Tensor::<f32>::ones(&[1, 1, 2, 2]).unwrap();
        let y = conv_transpose2d_forward(&x, &w, None).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let w = Tensor::<f32>::ones(&[1, 2, 3, 3]).unwrap();
        let x = Tensor::<f32>::ones(&[1, 3, 4, 4]).unwrap();
        assert!(matches!(conv2d_forward(&x, &w, None, 1), Err(Error::Shape(_))));
        assert!(matches!(conv_transpose2d_forward(&x, &w, None), Err(Error::Shape(_))));
    }
}

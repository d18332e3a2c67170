use std::sync::Arc;

use rayon::prelude::*;

use super::ops::image_dims;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Zero padding applied on every side of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    /// `k / 2` zeros per side, so stride `s` yields `ceil(H / s)` rows.
    #[default]
    Same,
    Explicit(usize),
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one `[Cin,H,W]` sample into `[Cin*k*k, Ho*Wo]`.
    fn im2col<S: Scalar>(&self, x: &[S], cols: &mut [S]) {
        let p = self.positions();
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(S::zero());
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                S::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im<S: Scalar>(&self, cols: &[S], x: &mut [S]) {
        let p = self.positions();
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of `input[B,Cin,H,W]` with `weight[Cout,Cin,k,k]` plus `bias[Cout]`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<S>> {
    let [b, cin, h, w] = image_dims("conv2d input", input)?;
    let [cout, wcin, k, k2] = image_dims("conv2d weight", weight)?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape(format!(
            "conv2d: kernel must be square with odd size, got {:?}",
            weight.shape()
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "conv2d: bias {:?} does not match {cout} output channels",
            bias.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be positive"));
    }
    let pad = match padding {
        Padding::Same => k / 2,
        Padding::Explicit(p) => p,
    };
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape(format!(
            "conv2d: {h}x{w} input too small for kernel {k} with padding {pad}"
        )));
    }
    let geo = Geometry {
        cin,
        h,
        w,
        k,
        stride,
        pad,
        ho: (h + 2 * pad - k) / stride + 1,
        wo: (w + 2 * pad - k) / stride + 1,
    };
    let (kk, p) = (geo.patch(), geo.positions());
    let in_plane = cin * h * w;
    let out_plane = cout * p;

    let mut out = vec![S::zero(); b * out_plane];
    out.par_chunks_mut(out_plane)
        .zip(input.data().par_chunks(in_plane))
        .for_each_init(
            || vec![S::zero(); kk * p],
            |cols, (dst, src)| {
                geo.im2col(src, cols);
                for (co, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(bias.data()[co]);
                }
                S::gemm(
                    cout, kk, p, S::one(), weight.data(), kk as isize, 1, cols, p as isize, 1,
                    S::one(), dst, p as isize, 1,
                );
            },
        );

    let (xin, wt) = (input.clone(), weight.clone());
    let need = Arc::new([input.requires_grad(), weight.requires_grad(), bias.requires_grad()]);
    Ok(Tensor::from_op(
        vec![b, cout, geo.ho, geo.wo],
        out,
        "conv2d",
        vec![input.clone(), weight.clone(), bias.clone()],
        move |_, g| {
            let [need_x, need_w, need_b] = *need;
            // per-sample (dX, dW) computed in parallel, dW reduced in batch order
            let per_sample: Vec<(Option<Vec<S>>, Option<Vec<S>>)> = g
                .par_chunks(out_plane)
                .zip(xin.data().par_chunks(in_plane))
                .map(|(gs, xs)| {
                    let mut cols = vec![S::zero(); kk * p];
                    let dx = need_x.then(|| {
                        S::gemm(
                            kk, cout, p, S::one(), wt.data(), 1, kk as isize, gs, p as isize, 1,
                            S::zero(), &mut cols, p as isize, 1,
                        );
                        let mut dx = vec![S::zero(); in_plane];
                        geo.col2im(&cols, &mut dx);
                        dx
                    });
                    let dw = need_w.then(|| {
                        geo.im2col(xs, &mut cols);
                        let mut dw = vec![S::zero(); cout * kk];
                        S::gemm(
                            cout, p, kk, S::one(), gs, p as isize, 1, &cols, 1, p as isize,
                            S::zero(), &mut dw, kk as isize, 1,
                        );
                        dw
                    });
                    (dx, dw)
                })
                .collect();
            let gx = need_x.then(|| {
                let mut gx = Vec::with_capacity(b * in_plane);
                for (dx, _) in &per_sample {
                    gx.extend_from_slice(dx.as_ref().expect("dx computed"));
                }
                gx
            });
            let gw = need_w.then(|| {
                let mut gw = vec![S::zero(); cout * kk];
                for (_, dw) in &per_sample {
                    let dw = dw.as_ref().expect("dw computed");
                    gw.iter_mut().zip(dw).for_each(|(a, v)| *a += *v);
                }
                gw
            });
            let gb = need_b.then(|| {
                let mut gb = vec![S::zero(); cout];
                for gs in g.chunks(out_plane) {
                    for (co, row) in gs.chunks(p).enumerate() {
                        gb[co] += row.iter().copied().sum::<S>();
                    }
                }
                gb
            });
            vec![gx, gw, gb]
        },
    ))
}

/// Pure data rearrangement: `out[i] = x[src[i]]` with `src` a permutation.
fn permute<S: Scalar>(
    x: &Tensor<S>,
    shape: Vec<usize>,
    src: Vec<usize>,
    name: &'static str,
) -> Tensor<S> {
    let data = src.iter().map(|&i| x.data()[i]).collect();
    let n = x.len();
    Tensor::from_op(shape, data, name, vec![x.clone()], move |_, g| {
        let mut gx = vec![S::zero(); n];
        for (gi, &i) in g.iter().zip(&src) {
            gx[i] = *gi;
        }
        vec![Some(gx)]
    })
}

/// Depth-to-space: `[B,C,H,W] -> [B,C/r²,rH,rW]`.
///
/// Input channel `c` at `(h, w)` lands in output channel `c / r²` at
/// `(r*h + (c % r²) / r, r*w + c % r)`.
pub fn pixel_shuffle<S: Scalar>(x: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    let [b, c, h, w] = image_dims("pixel_shuffle", x)?;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {c} channels not divisible by r^2 for r = {r}"
        )));
    }
    let (oc, oh, ow) = (c / (r * r), h * r, w * r);
    let mut src = Vec::with_capacity(x.len());
    for bi in 0..b {
        for co in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let ci = co * r * r + (y % r) * r + (xo % r);
                    src.push(((bi * c + ci) * h + y / r) * w + xo / r);
                }
            }
        }
    }
    Ok(permute(x, vec![b, oc, oh, ow], src, "pixel_shuffle"))
}

/// Space-to-depth: `[B,C,H,W] -> [B,C*r²,H/r,W/r]`, inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<S: Scalar>(x: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    let [b, c, h, w] = image_dims("pixel_unshuffle", x)?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: spatial extents {h}x{w} not divisible by r = {r}"
        )));
    }
    let (oc, oh, ow) = (c * r * r, h / r, w / r);
    let mut src = Vec::with_capacity(x.len());
    for bi in 0..b {
        for co in 0..oc {
            let (ci, sub) = (co / (r * r), co % (r * r));
            let (dy, dx) = (sub / r, sub % r);
            for y in 0..oh {
                for xo in 0..ow {
                    src.push(((bi * c + ci) * h + y * r + dy) * w + xo * r + dx);
                }
            }
        }
    }
    Ok(permute(x, vec![b, oc, oh, ow], src, "pixel_unshuffle"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_scales_input() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 1, 1], 2.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn stride_two_halves_extent() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        let y = conv2d(&Tensor::<f32>::full(&[1, 1, 5, 5], 1.0), &w, &b, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        let err = conv2d(&x, &w, &b, 1, Padding::Same).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn shuffle_layout() {
        let x = Tensor::<f32>::new(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_and_unshuffle_identity_at_r1() {
        let x = Tensor::<f32>::new(&[1, 2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(pixel_shuffle(&x, 1).unwrap().data(), x.data());
        assert_eq!(pixel_unshuffle(&x, 1).unwrap().data(), x.data());
    }

    #[test]
    fn unshuffle_to_256_channels() {
        let x = Tensor::<f32>::zeros(&[1, 1, 16, 16]);
        assert_eq!(pixel_unshuffle(&x, 16).unwrap().shape(), &[1, 256, 1, 1]);
    }

    #[test]
    fn shuffle_errors_name_arguments() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let err = pixel_shuffle(&x, 2).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains("r = 2"), "{err}");
        assert!(pixel_unshuffle(&Tensor::<f32>::zeros(&[1, 1, 6, 6]), 4).is_err());
    }
}

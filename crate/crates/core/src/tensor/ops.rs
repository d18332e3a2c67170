use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Negative-side slope used by every leaky ReLU in the model.
pub const DEFAULT_LRELU_SLOPE: f64 = 0.2;

fn same_shape<S: Scalar>(op: &str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "add",
        vec![a.clone(), b.clone()],
        |_, g| vec![Some(g.to_vec()), Some(g.to_vec())],
    ))
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "sub",
        vec![a.clone(), b.clone()],
        |_, g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -*v).collect())],
    ))
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "mul",
        vec![a.clone(), b.clone()],
        move |_, g| {
            let ga = g.iter().zip(bc.data()).map(|(g, y)| *g * *y).collect();
            let gb = g.iter().zip(ac.data()).map(|(g, x)| *g * *x).collect();
            vec![Some(ga), Some(gb)]
        },
    ))
}

pub fn scale<S: Scalar>(x: &Tensor<S>, factor: f64) -> Tensor<S> {
    let f = S::lit(factor);
    let data = x.data().iter().map(|v| *v * f).collect();
    Tensor::from_op(x.shape().to_vec(), data, "scale", vec![x.clone()], move |_, g| {
        vec![Some(g.iter().map(|v| *v * f).collect())]
    })
}

/// Elementwise `max(x, slope * x)`; the derivative at 0 is taken as `slope`.
pub fn leaky_relu<S: Scalar>(x: &Tensor<S>, slope: f64) -> Tensor<S> {
    let s = S::lit(slope);
    let data = x
        .data()
        .iter()
        .map(|v| if *v > S::zero() { *v } else { *v * s })
        .collect();
    let xc = x.clone();
    Tensor::from_op(x.shape().to_vec(), data, "leaky_relu", vec![x.clone()], move |_, g| {
        let gx = g
            .iter()
            .zip(xc.data())
            .map(|(g, v)| if *v > S::zero() { *g } else { *g * s })
            .collect();
        vec![Some(gx)]
    })
}

pub fn sum<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let total = x.data().iter().copied().sum();
    let n = x.len();
    Tensor::from_op(Vec::new(), vec![total], "sum", vec![x.clone()], move |_, g| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let n = x.len();
    let inv = S::one() / S::from_usize(n).expect("count");
    let total: S = x.data().iter().copied().sum();
    Tensor::from_op(Vec::new(), vec![total * inv], "mean", vec![x.clone()], move |_, g| {
        vec![Some(vec![g[0] * inv; n])]
    })
}

pub fn reshape<S: Scalar>(x: &Tensor<S>, shape: &[usize]) -> Result<Tensor<S>> {
    if numel(shape) != x.len() {
        return Err(Error::shape(format!(
            "reshape {:?} -> {:?} changes element count",
            x.shape(),
            shape
        )));
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        "reshape",
        vec![x.clone()],
        |_, g| vec![Some(g.to_vec())],
    ))
}

fn dims2<S: Scalar>(op: &str, t: &Tensor<S>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(format!(
            "{op}: expected a rank-2 tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Matrix view over a row-major buffer, optionally transposed.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl View {
    fn of(stored_rows: usize, stored_cols: usize, transposed: bool) -> Self {
        if transposed {
            View {
                rows: stored_cols,
                cols: stored_rows,
                rs: 1,
                cs: stored_cols as isize,
            }
        } else {
            View {
                rows: stored_rows,
                cols: stored_cols,
                rs: stored_cols as isize,
                cs: 1,
            }
        }
    }

    fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `out (+)= a * b` for matrix views.
fn gemm_into<S: Scalar>(a: &[S], av: View, b: &[S], bv: View, out: &mut [S], accumulate: bool) {
    debug_assert_eq!(av.cols, bv.rows);
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(
        av.rows,
        av.cols,
        bv.cols,
        S::one(),
        a,
        av.rs,
        av.cs,
        b,
        bv.rs,
        bv.cs,
        beta,
        out,
        bv.cols as isize,
        1,
    );
}

fn matmul_impl<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, transpose_b: bool) -> Result<Tensor<S>> {
    let (ar, ac) = dims2("matmul", a)?;
    let (br, bc) = dims2("matmul", b)?;
    let av = View::of(ar, ac, false);
    let bv = View::of(br, bc, transpose_b);
    if av.cols != bv.rows {
        return Err(Error::shape(format!(
            "matmul: inner dimensions differ ({:?} x {:?}{})",
            a.shape(),
            b.shape(),
            if transpose_b { "^T" } else { "" }
        )));
    }
    let (m, n) = (av.rows, bv.cols);
    let mut out = vec![S::zero(); m * n];
    gemm_into(a.data(), av, b.data(), bv, &mut out, false);
    let (ac_, bc_) = (a.clone(), b.clone());
    let (a_req, b_req) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        vec![m, n],
        out,
        "matmul",
        vec![a.clone(), b.clone()],
        move |_, g| {
            let gv = View::of(m, n, false);
            // dA = dC * B^T, shaped like A
            let ga = a_req.then(|| {
                let mut ga = vec![S::zero(); ar * ac];
                gemm_into(g, gv, bc_.data(), bv.t(), &mut ga, false);
                ga
            });
            // dB = A^T * dC, laid out like the stored B
            let gb = b_req.then(|| {
                let mut gb = vec![S::zero(); br * bc];
                if transpose_b {
                    // stored B is [n, k]: dB_stored = dC^T * A
                    gemm_into(g, gv.t(), ac_.data(), av, &mut gb, false);
                } else {
                    gemm_into(ac_.data(), av.t(), g, gv, &mut gb, false);
                }
                gb
            });
            vec![ga, gb]
        },
    ))
}

/// `a[m,k] * b[k,n]`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    matmul_impl(a, b, false)
}

/// `a[m,k] * b[n,k]^T`.
pub fn matmul_bt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    matmul_impl(a, b, true)
}

/// Fully-connected layer `x[T,c_in] * w[c_in,c_out] + b`, bias broadcast over tokens.
pub fn linear<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (t, cin) = dims2("linear input", x)?;
    let (win, cout) = dims2("linear weight", weight)?;
    if cin != win {
        return Err(Error::shape(format!(
            "linear: input {:?} does not match weight {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "linear: bias {:?} does not match {cout} outputs",
            bias.shape()
        )));
    }
    let mut out = vec![S::zero(); t * cout];
    for row in out.chunks_mut(cout) {
        row.copy_from_slice(bias.data());
    }
    let xv = View::of(t, cin, false);
    let wv = View::of(cin, cout, false);
    gemm_into(x.data(), xv, weight.data(), wv, &mut out, true);
    let (xc, wc) = (x.clone(), weight.clone());
    let (x_req, w_req, b_req) = (x.requires_grad(), weight.requires_grad(), bias.requires_grad());
    Ok(Tensor::from_op(
        vec![t, cout],
        out,
        "linear",
        vec![x.clone(), weight.clone(), bias.clone()],
        move |_, g| {
            let gv = View::of(t, cout, false);
            let gx = x_req.then(|| {
                let mut gx = vec![S::zero(); t * cin];
                gemm_into(g, gv, wc.data(), wv.t(), &mut gx, false);
                gx
            });
            let gw = w_req.then(|| {
                let mut gw = vec![S::zero(); cin * cout];
                gemm_into(xc.data(), xv.t(), g, gv, &mut gw, false);
                gw
            });
            let gb = b_req.then(|| {
                let mut gb = vec![S::zero(); cout];
                for row in g.chunks(cout) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                }
                gb
            });
            vec![gx, gw, gb]
        },
    ))
}

/// Numerically stable softmax along `axis`.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!(
            "softmax: axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax input contains NaN".into()));
    }
    let shape = x.shape().to_vec();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![S::zero(); x.len()];
    let src = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| src[idx(j)]).fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for j in 0..n {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..n {
                out[idx(j)] = out[idx(j)] / total;
            }
        }
    }
    Ok(Tensor::from_op(shape, out, "softmax", vec![x.clone()], move |y, g| {
        let mut gx = vec![S::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let dot: S = (0..n).map(|j| y[idx(j)] * g[idx(j)]).sum();
                for j in 0..n {
                    gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// Columns `start..start+len` of a `[rows, cols]` tensor.
pub fn slice_cols<S: Scalar>(x: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    let (rows, cols) = dims2("slice_cols", x)?;
    if len == 0 || start + len > cols {
        return Err(Error::shape(format!(
            "slice_cols: range {start}..{} outside {cols} columns",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x.data()[r * cols + start..r * cols + start + len]);
    }
    Ok(Tensor::from_op(vec![rows, len], out, "slice_cols", vec![x.clone()], move |_, g| {
        let mut gx = vec![S::zero(); rows * cols];
        for r in 0..rows {
            gx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
        }
        vec![Some(gx)]
    }))
}

/// Concatenates `[rows, c_i]` tensors along columns.
pub fn concat_cols<S: Scalar>(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
    let (rows, _) = dims2("concat_cols", first)?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = dims2("concat_cols", p)?;
        if r != rows {
            return Err(Error::shape(format!(
                "concat_cols: row counts {rows} and {r} differ"
            )));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    Ok(Tensor::from_op(vec![rows, total], out, "concat_cols", parts.to_vec(), move |_, g| {
        let mut grads: Vec<Vec<S>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let mut off = r * total;
            for (gp, &w) in grads.iter_mut().zip(&widths) {
                gp.extend_from_slice(&g[off..off + w]);
                off += w;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}

fn dims4<S: Scalar>(op: &str, t: &Tensor<S>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(format!(
            "{op}: expected [B,C,H,W], got {:?}",
            t.shape()
        ))),
    }
}

pub(crate) fn image_dims<S: Scalar>(op: &str, t: &Tensor<S>) -> Result<[usize; 4]> {
    dims4(op, t)
}

/// Concatenates `[B, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels<S: Scalar>(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels of nothing"))?;
    let [b, _, h, w] = dims4("concat_channels", first)?;
    let mut chans = Vec::with_capacity(parts.len());
    for p in parts {
        let [pb, pc, ph, pw] = dims4("concat_channels", p)?;
        if (pb, ph, pw) != (b, h, w) {
            return Err(Error::shape(format!(
                "concat_channels: {:?} does not align with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        chans.push(pc);
    }
    let total: usize = chans.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(b * total * plane);
    for bi in 0..b {
        for (p, &c) in parts.iter().zip(&chans) {
            out.extend_from_slice(&p.data()[bi * c * plane..(bi + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_op(
        vec![b, total, h, w],
        out,
        "concat_channels",
        parts.to_vec(),
        move |_, g| {
            let mut grads: Vec<Vec<S>> = chans.iter().map(|c| Vec::with_capacity(b * c * plane)).collect();
            for bi in 0..b {
                let mut off = bi * total * plane;
                for (gp, &c) in grads.iter_mut().zip(&chans) {
                    gp.extend_from_slice(&g[off..off + c * plane]);
                    off += c * plane;
                }
            }
            grads.into_iter().map(Some).collect()
        },
    ))
}

/// Token sequence `[h*w, C]` of batch item `b` of a `[B,C,h,w]` feature map:
/// one token per spatial site, in row-major site order.
pub fn tokens_of<S: Scalar>(x: &Tensor<S>, b: usize) -> Result<Tensor<S>> {
    let [bn, c, h, w] = dims4("tokenize", x)?;
    if b >= bn {
        return Err(Error::shape(format!("tokenize: batch index {b} >= {bn}")));
    }
    let t = h * w;
    let base = b * c * t;
    let src = x.data();
    let mut out = vec![S::zero(); t * c];
    for ch in 0..c {
        for s in 0..t {
            out[s * c + ch] = src[base + ch * t + s];
        }
    }
    let total = x.len();
    Ok(Tensor::from_op(vec![t, c], out, "tokenize", vec![x.clone()], move |_, g| {
        let mut gx = vec![S::zero(); total];
        for ch in 0..c {
            for s in 0..t {
                gx[base + ch * t + s] = g[s * c + ch];
            }
        }
        vec![Some(gx)]
    }))
}

/// Inverse of [`tokens_of`]: stacks per-item `[h*w, C]` sequences into `[B,C,h,w]`.
pub fn detokenize<S: Scalar>(seqs: &[Tensor<S>], h: usize, w: usize) -> Result<Tensor<S>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::invalid("detokenize of nothing"))?;
    let (t, c) = dims2("detokenize", first)?;
    if t != h * w {
        return Err(Error::shape(format!(
            "detokenize: {t} tokens cannot fill a {h}x{w} grid"
        )));
    }
    for s in seqs {
        if s.shape() != first.shape() {
            return Err(Error::shape(format!(
                "detokenize: sequences {:?} and {:?} differ",
                s.shape(),
                first.shape()
            )));
        }
    }
    let bn = seqs.len();
    let mut out = vec![S::zero(); bn * c * t];
    for (b, s) in seqs.iter().enumerate() {
        let src = s.data();
        for ch in 0..c {
            for p in 0..t {
                out[(b * c + ch) * t + p] = src[p * c + ch];
            }
        }
    }
    Ok(Tensor::from_op(vec![bn, c, h, w], out, "detokenize", seqs.to_vec(), move |_, g| {
        (0..bn)
            .map(|b| {
                let mut gs = vec![S::zero(); t * c];
                for ch in 0..c {
                    for p in 0..t {
                        gs[p * c + ch] = g[(b * c + ch) * t + p];
                    }
                }
                Some(gs)
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_values() {
        let x = t32(&[3], &[3.0, -1.0, 0.0]);
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.data()[0], 3.0);
        assert!(close(y.data()[1] as f64, -0.2, 1e-7));
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let x = t32(&[2, 2], &[1.0, 2.0, -3.0, 4.0]);
        let eye = t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let zero = t32(&[2], &[0.0, 0.0]);
        assert_eq!(linear(&x, &eye, &zero).unwrap().data(), x.data());

        let x = t32(&[1, 2], &[1.0, 2.0]);
        let b = t32(&[2], &[1.0, 1.0]);
        assert_eq!(linear(&x, &eye, &b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn linear_rejects_mismatched_dims() {
        let x = t32(&[1, 3], &[1.0, 2.0, 3.0]);
        let w = t32(&[2, 2], &[1.0; 4]);
        let b = t32(&[2], &[0.0; 2]);
        assert!(matches!(linear(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let y = softmax(&t32(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&t32(&[2], &[1000.0, 1000.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&Tensor::<f64>::new(&[2], vec![0.0, 3f64.ln()]).unwrap(), 0).unwrap();
        assert!(close(y.data()[0], 0.25, 1e-12) && close(y.data()[1], 0.75, 1e-12));
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = t32(&[2], &[0.0, f32::NAN]);
        assert!(matches!(softmax(&x, 0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::<f64>::new(&[2, 3], vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!(y.data().iter().all(|v| close(*v, 0.5, 1e-12)));
    }

    #[test]
    fn tokenize_round_trip() {
        let data: Vec<f32> = (0..2 * 3 * 2 * 2).map(|v| v as f32).collect();
        let x = t32(&[2, 3, 2, 2], &data);
        let seqs: Vec<_> = (0..2).map(|b| tokens_of(&x, b).unwrap()).collect();
        assert_eq!(seqs[0].shape(), &[4, 3]);
        // token 1 of item 0 holds channel values at site (0,1)
        assert_eq!(&seqs[0].data()[3..6], &[1.0, 5.0, 9.0]);
        let back = detokenize(&seqs, 2, 2).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn concat_and_slice_cols_invert() {
        let a = t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t32(&[2, 1], &[5.0, 6.0]);
        let c = concat_cols(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(slice_cols(&c, 0, 2).unwrap().data(), a.data());
        assert_eq!(slice_cols(&c, 2, 1).unwrap().data(), b.data());
    }

    #[test]
    fn matmul_bt_matches_explicit_transpose() {
        let a = t32(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t32(&[2, 3], &[1.0, 0.0, -1.0, 2.0, 1.0, 0.0]);
        let bt = t32(&[3, 2], &[1.0, 2.0, 0.0, 1.0, -1.0, 0.0]);
        assert_eq!(matmul_bt(&a, &b).unwrap().data(), matmul(&a, &bt).unwrap().data());
    }
}

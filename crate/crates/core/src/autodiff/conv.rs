//! im2col-based convolution kernels on raw row-major buffers.
//!
//! Layouts: activations `[N, C, H, W]`, conv kernels `[C_out, C_in, kH, kW]`.
//! A transposed convolution with kernel `[A, B, kH, kW]` maps `A` channels to
//! `B` channels and is exactly the input-gradient of the conv2d that maps
//! `B` channels to `A` with the same kernel and geometry.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Output size of a forward convolution along one axis.
    pub fn conv_out(&self, len: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        let padded = len + 2 * self.pad;
        if padded < k {
            return Err(Error::Shape(format!(
                "kernel {k} larger than padded input {padded}"
            )));
        }
        Ok((padded - k) / self.stride + 1)
    }

    /// Output size of a transposed convolution along one axis.
    pub fn transpose_out(&self, len: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        let full = (len - 1) * self.stride + k;
        if full <= 2 * self.pad {
            return Err(Error::Shape("transposed convolution has zero-size output".into()));
        }
        Ok(full - 2 * self.pad)
    }
}

/// Spatial bookkeeping for one conv2d application (the "small" side is the
/// conv output, the "large" side the conv input).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plan {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub oh: usize,
    pub ow: usize,
    pub g: ConvGeometry,
}

impl Plan {
    fn k(&self) -> usize {
        self.c_in * self.g.kh * self.g.kw
    }
    fn l(&self) -> usize {
        self.oh * self.ow
    }
    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }
}

fn im2col(x: &[f64], p: &Plan, col: &mut [f64]) {
    let (kh, kw, s, pad) = (p.g.kh, p.g.kw, p.g.stride, p.g.pad as isize);
    let l = p.l();
    for c in 0..p.c_in {
        let plane = &x[c * p.h * p.w..(c + 1) * p.h * p.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((c * kh + i) * kw + j) * l;
                let dst = &mut col[row..row + l];
                for oy in 0..p.oh {
                    let iy = (oy * s + i) as isize - pad;
                    let line = &mut dst[oy * p.ow..(oy + 1) * p.ow];
                    if iy < 0 || iy >= p.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + j) as isize - pad;
                        *v = if ix < 0 || ix >= p.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], p: &Plan, x: &mut [f64]) {
    let (kh, kw, s, pad) = (p.g.kh, p.g.kw, p.g.stride, p.g.pad as isize);
    let l = p.l();
    for c in 0..p.c_in {
        let plane = &mut x[c * p.h * p.w..(c + 1) * p.h * p.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((c * kh + i) * kw + j) * l;
                let src = &col[row..row + l];
                for oy in 0..p.oh {
                    let iy = (oy * s + i) as isize - pad;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for ox in 0..p.ow {
                        let ix = (ox * s + j) as isize - pad;
                        if ix >= 0 && ix < p.w as isize {
                            dst[ix as usize] += src[oy * p.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// c[m, n] += a[m, k] * b[k, n]
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, &bv)| *cv += av * bv);
        }
    }
}

/// c[m, k] += a[m, n] * b[k, n]^T
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            c[i * k + kk] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// c[k, n] += a[m, k]^T * b[m, n]
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[kk * n..(kk + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, &bv)| *cv += av * bv);
        }
    }
}

pub(crate) fn conv_plan(
    x_shape: &[usize],
    k_shape: &[usize],
    g: ConvGeometry,
) -> Result<(usize, Plan)> {
    let (n, c, h, w) = split_batch(x_shape)?;
    if k_shape.len() != 4 {
        return Err(Error::Shape(format!("conv kernel must be rank 4, got {k_shape:?}")));
    }
    if k_shape[1] != c {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, input has {c}",
            k_shape[1]
        )));
    }
    let g = ConvGeometry {
        kh: k_shape[2],
        kw: k_shape[3],
        ..g
    };
    let oh = g.conv_out(h, g.kh)?;
    let ow = g.conv_out(w, g.kw)?;
    Ok((
        n,
        Plan {
            c_in: c,
            h,
            w,
            c_out: k_shape[0],
            oh,
            ow,
            g,
        },
    ))
}

/// Plan for a transposed convolution: the returned plan describes the
/// *adjoint* conv2d, whose output side is the transposed-conv input.
pub(crate) fn transpose_plan(
    y_shape: &[usize],
    k_shape: &[usize],
    g: ConvGeometry,
) -> Result<(usize, Plan)> {
    let (n, a, oh, ow) = split_batch(y_shape)?;
    if k_shape.len() != 4 {
        return Err(Error::Shape(format!("conv kernel must be rank 4, got {k_shape:?}")));
    }
    if k_shape[0] != a {
        return Err(Error::Shape(format!(
            "transposed kernel expects {} input channels, input has {a}",
            k_shape[0]
        )));
    }
    let g = ConvGeometry {
        kh: k_shape[2],
        kw: k_shape[3],
        ..g
    };
    let h = g.transpose_out(oh, g.kh)?;
    let w = g.transpose_out(ow, g.kw)?;
    Ok((
        n,
        Plan {
            c_in: k_shape[1],
            h,
            w,
            c_out: a,
            oh,
            ow,
            g,
        },
    ))
}

pub(crate) fn split_batch(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!(
            "expected [C,H,W] or [N,C,H,W], got {shape:?}"
        ))),
    }
}

/// Forward conv2d over a batch. Returns `[N, C_out, oh, ow]` data.
pub(crate) fn conv_forward(x: &[f64], kernel: &[f64], bias: &[f64], n: usize, p: &Plan) -> Vec<f64> {
    let (k, l) = (p.k(), p.l());
    let mut out = vec![0.0; n * p.out_len()];
    let mut col = vec![0.0; k * l];
    for b in 0..n {
        im2col(&x[b * p.in_len()..(b + 1) * p.in_len()], p, &mut col);
        let o = &mut out[b * p.out_len()..(b + 1) * p.out_len()];
        for (co, row) in o.chunks_mut(l).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        gemm_nn(kernel, &col, o, p.c_out, k, l);
    }
    out
}

/// Gradients of conv2d. `dx`, `dk`, `db` are accumulated into when present.
pub(crate) fn conv_backward(
    x: &[f64],
    kernel: &[f64],
    dout: &[f64],
    n: usize,
    p: &Plan,
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let (k, l) = (p.k(), p.l());
    let mut col = vec![0.0; k * l];
    for b in 0..n {
        let d = &dout[b * p.out_len()..(b + 1) * p.out_len()];
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in d.chunks(l).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if let Some(dk) = dk.as_deref_mut() {
            im2col(&x[b * p.in_len()..(b + 1) * p.in_len()], p, &mut col);
            gemm_nt(d, &col, dk, p.c_out, l, k);
        }
        if let Some(dx) = dx.as_deref_mut() {
            col.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(kernel, d, &mut col, p.c_out, k, l);
            col2im(&col, p, &mut dx[b * p.in_len()..(b + 1) * p.in_len()]);
        }
    }
}

/// Forward transposed conv: input `y` lives on the plan's output side.
pub(crate) fn transpose_forward(
    y: &[f64],
    kernel: &[f64],
    bias: &[f64],
    n: usize,
    p: &Plan,
) -> Vec<f64> {
    let (k, l) = (p.k(), p.l());
    let mut out = vec![0.0; n * p.in_len()];
    let mut col = vec![0.0; k * l];
    let plane = p.h * p.w;
    for b in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        gemm_tn(kernel, &y[b * p.out_len()..(b + 1) * p.out_len()], &mut col, p.c_out, k, l);
        let o = &mut out[b * p.in_len()..(b + 1) * p.in_len()];
        for (c, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[c]);
        }
        col2im(&col, p, o);
    }
    out
}

pub(crate) fn transpose_backward(
    y: &[f64],
    kernel: &[f64],
    dout: &[f64],
    n: usize,
    p: &Plan,
    mut dy: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let (k, l) = (p.k(), p.l());
    let mut col = vec![0.0; k * l];
    let plane = p.h * p.w;
    for b in 0..n {
        let d = &dout[b * p.in_len()..(b + 1) * p.in_len()];
        if let Some(db) = db.as_deref_mut() {
            for (c, chunk) in d.chunks(plane).enumerate() {
                db[c] += chunk.iter().sum::<f64>();
            }
        }
        if dy.is_none() && dk.is_none() {
            continue;
        }
        im2col(d, p, &mut col);
        if let Some(dy) = dy.as_deref_mut() {
            gemm_nn(kernel, &col, &mut dy[b * p.out_len()..(b + 1) * p.out_len()], p.c_out, k, l);
        }
        if let Some(dk) = dk.as_deref_mut() {
            gemm_nt(&y[b * p.out_len()..(b + 1) * p.out_len()], &col, dk, p.c_out, l, k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation, independent of im2col.
    fn naive_conv(
        x: &[f64],
        (c, h, w): (usize, usize, usize),
        kernel: &[f64],
        (co, kh, kw): (usize, usize, usize),
        s: usize,
        pad: usize,
    ) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * pad - kh) / s + 1;
        let ow = (w + 2 * pad - kw) / s + 1;
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * s + i) as isize - pad as isize;
                                let ix = (xx * s + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[(ci * h + iy as usize) * w + ix as usize]
                                        * kernel[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[(o * oh + y) * ow + xx] = acc;
                }
            }
        }
        (out, oh, ow)
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn matches_naive_loops() {
        for &(s, pad) in &[(1, 0), (2, 1), (1, 1), (2, 0)] {
            let (c, h, w, co, kh, kw) = (2, 6, 5, 3, 3, 2);
            let x = lcg(1, c * h * w);
            let k = lcg(2, co * c * kh * kw);
            let (expected, oh, ow) = naive_conv(&x, (c, h, w), &k, (co, kh, kw), s, pad);
            let (n, plan) = conv_plan(&[c, h, w], &[co, c, kh, kw], ConvGeometry::new(kh, kw, s, pad)).unwrap();
            assert_eq!((plan.oh, plan.ow), (oh, ow));
            let got = conv_forward(&x, &k, &[0.0; 3], n, &plan);
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let (c, h, w, co) = (3, 8, 8, 4);
        let g = ConvGeometry::new(4, 4, 2, 1);
        let (_, plan) = conv_plan(&[c, h, w], &[co, c, 4, 4], g).unwrap();
        let x = lcg(3, plan.in_len());
        let y = lcg(4, plan.out_len());
        let k = lcg(5, co * c * 16);
        let cx = conv_forward(&x, &k, &[0.0; 4], 1, &plan);
        let (_, tplan) = transpose_plan(&[co, plan.oh, plan.ow], &[co, c, 4, 4], g).unwrap();
        assert_eq!((tplan.h, tplan.w), (h, w));
        let ty = transpose_forward(&y, &k, &[0.0; 3], 1, &tplan);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(conv_plan(&[1, 2, 2], &[1, 1, 3, 3], ConvGeometry::new(3, 3, 1, 0)).is_err());
        assert!(conv_plan(&[2, 4, 4], &[1, 1, 3, 3], ConvGeometry::new(3, 3, 1, 0)).is_err());
        assert!(conv_plan(&[1, 4, 4], &[1, 1, 3, 3], ConvGeometry::new(3, 3, 0, 0)).is_err());
    }
}

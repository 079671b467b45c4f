//! Raw numeric kernels. Everything here is value-in, value-out; the graph
//! layer decides how these compose into forward and backward passes.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_nt")?;
    let (n, k2) = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            out.push(arow.iter().zip(&bd[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum::<f64>());
        }
    }
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2("matmul_tn")?;
    let (k2, n) = b.dims2("matmul_tn")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2("transpose")?;
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::matrix(c, r, out)
}

/// `[r, c] -> [c]`
pub fn sum_rows(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2("sum_rows")?;
    let mut out = vec![0.0; c];
    for row in a.data().chunks_exact(c).take(r) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::vector(out))
}

/// `[r, c] -> [r]`
pub fn sum_cols(a: &Tensor) -> Result<Tensor> {
    let (_, c) = a.dims2("sum_cols")?;
    Ok(Tensor::vector(
        a.data().chunks_exact(c).map(|row| row.iter().sum()).collect(),
    ))
}

/// `[c] -> [rows, c]`
pub fn expand_rows(v: &Tensor, rows: usize) -> Result<Tensor> {
    let c = v.len();
    let mut out = Vec::with_capacity(rows * c);
    for _ in 0..rows {
        out.extend_from_slice(v.data());
    }
    Tensor::matrix(rows, c, out)
}

/// `[r] -> [r, cols]`
pub fn expand_cols(v: &Tensor, cols: usize) -> Result<Tensor> {
    let r = v.len();
    let mut out = Vec::with_capacity(r * cols);
    for &x in v.data() {
        out.extend(std::iter::repeat_n(x, cols));
    }
    Tensor::matrix(r, cols, out)
}

pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (r, c) = a.dims2("slice_cols")?;
    if start + len > c {
        return Err(TensorError::Invalid(format!(
            "slice_cols: columns {start}..{} out of range for width {c}",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(r * len);
    for row in a.data().chunks_exact(c) {
        out.extend_from_slice(&row[start..start + len]);
    }
    Tensor::matrix(r, len, out)
}

pub fn pad_cols(a: &Tensor, start: usize, total: usize) -> Result<Tensor> {
    let (r, c) = a.dims2("pad_cols")?;
    if start + c > total {
        return Err(TensorError::Invalid(format!(
            "pad_cols: width {c} at offset {start} exceeds {total}"
        )));
    }
    let mut out = vec![0.0; r * total];
    for (i, row) in a.data().chunks_exact(c).enumerate() {
        out[i * total + start..i * total + start + c].copy_from_slice(row);
    }
    Tensor::matrix(r, total, out)
}

pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (r, c) = a.dims2("slice_rows")?;
    if start + len > r {
        return Err(TensorError::Invalid(format!(
            "slice_rows: rows {start}..{} out of range for height {r}",
            start + len
        )));
    }
    Tensor::matrix(len, c, a.data()[start * c..(start + len) * c].to_vec())
}

pub fn pad_rows(a: &Tensor, start: usize, total: usize) -> Result<Tensor> {
    let (r, c) = a.dims2("pad_rows")?;
    if start + r > total {
        return Err(TensorError::Invalid(format!(
            "pad_rows: height {r} at offset {start} exceeds {total}"
        )));
    }
    let mut out = vec![0.0; total * c];
    out[start * c..(start + r) * c].copy_from_slice(a.data());
    Tensor::matrix(total, c, out)
}

/// Geometry shared by the three convolution kernels: odd square kernels,
/// zero padding of `k / 2`, so the output is `ceil(H / stride)` high.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height - 1) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - 1) / self.stride + 1
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// Output positions `i` such that `i * stride + u - pad` lands inside
    /// `0..extent`.
    fn valid(&self, u: usize, extent: usize, out_extent: usize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let off = u as isize - self.pad();
        // i*s + off >= 0  and  i*s + off <= extent - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = (extent as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, out_extent as isize);
        (lo as usize).min(hi as usize)..hi as usize
    }
}

pub fn conv_geom(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<ConvGeom> {
    let (c, h, w) = input.dims3("conv2d")?;
    let [o, ci, kh, kw] = kernels.shape() else {
        return Err(TensorError::Invalid(format!(
            "conv2d: kernels must be [C_out, C_in, K, K], got {:?}",
            kernels.shape()
        )));
    };
    if *ci != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernels.shape().to_vec(),
        });
    }
    if kh != kw || kh % 2 == 0 {
        return Err(TensorError::Invalid(format!(
            "conv2d: kernels must be square with odd size, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(TensorError::Invalid("conv2d: stride must be positive".into()));
    }
    Ok(ConvGeom {
        in_channels: c,
        out_channels: *o,
        height: h,
        width: w,
        kernel: *kh,
        stride,
    })
}

/// Cross-correlation `y[o,i,j] = sum k[o,c,u,v] x[c, i*s+u-p, j*s+v-p]`.
pub fn conv2d(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    if g.stride == 1 {
        return Ok(padded::conv2d(x, k, g));
    }
    conv2d_strided(x, k, g)
}

fn conv2d_strided(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, kk, s) = (g.height, g.width, g.kernel, g.stride);
    let p = g.pad();
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; g.out_channels * ho * wo];
    for o in 0..g.out_channels {
        let yo = &mut out[o * ho * wo..(o + 1) * ho * wo];
        for c in 0..g.in_channels {
            let xc = &xd[c * h * w..(c + 1) * h * w];
            for u in 0..kk {
                let rows = g.valid(u, h, ho);
                for v in 0..kk {
                    let wv = kd[((o * g.in_channels + c) * kk + u) * kk + v];
                    if wv == 0.0 {
                        continue;
                    }
                    let cols = g.valid(v, w, wo);
                    for i in rows.clone() {
                        let xr = (i * s) as isize + u as isize - p;
                        let xrow = &xc[xr as usize * w..(xr as usize + 1) * w];
                        let yrow = &mut yo[i * wo..(i + 1) * wo];
                        for j in cols.clone() {
                            let xcol = (j * s) as isize + v as isize - p;
                            yrow[j] += wv * xrow[xcol as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_channels, ho, wo], out)
}

/// Adjoint of [`conv2d`] in its input: maps an output-shaped tensor back to
/// an input-shaped one. Doubles as a transposed convolution.
pub fn conv2d_input_grad(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let (ho, wo) = (g.out_height(), g.out_width());
    if gy.shape() != [g.out_channels, ho, wo] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_input_grad",
            lhs: gy.shape().to_vec(),
            rhs: vec![g.out_channels, ho, wo],
        });
    }
    if g.stride == 1 {
        return Ok(padded::input_grad(gy, k, g));
    }
    conv2d_input_grad_strided(gy, k, g)
}

fn conv2d_input_grad_strided(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, kk, s) = (g.height, g.width, g.kernel, g.stride);
    let p = g.pad();
    let (gd, kd) = (gy.data(), k.data());
    let mut out = vec![0.0; g.in_channels * h * w];
    for o in 0..g.out_channels {
        let go = &gd[o * ho * wo..(o + 1) * ho * wo];
        for c in 0..g.in_channels {
            let xc = &mut out[c * h * w..(c + 1) * h * w];
            for u in 0..kk {
                let rows = g.valid(u, h, ho);
                for v in 0..kk {
                    let wv = kd[((o * g.in_channels + c) * kk + u) * kk + v];
                    if wv == 0.0 {
                        continue;
                    }
                    let cols = g.valid(v, w, wo);
                    for i in rows.clone() {
                        let xr = ((i * s) as isize + u as isize - p) as usize;
                        let grow = &go[i * wo..(i + 1) * wo];
                        let xrow = &mut xc[xr * w..(xr + 1) * w];
                        for j in cols.clone() {
                            let xcol = ((j * s) as isize + v as isize - p) as usize;
                            xrow[xcol] += wv * grow[j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.in_channels, h, w], out)
}

/// Adjoint of [`conv2d`] in its kernels.
pub fn conv2d_kernel_grad(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let (ho, wo) = (g.out_height(), g.out_width());
    if gy.shape() != [g.out_channels, ho, wo] || x.shape() != [g.in_channels, g.height, g.width] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_kernel_grad",
            lhs: x.shape().to_vec(),
            rhs: gy.shape().to_vec(),
        });
    }
    if g.stride == 1 {
        return Ok(padded::kernel_grad(x, gy, g));
    }
    conv2d_kernel_grad_strided(x, gy, g)
}

fn conv2d_kernel_grad_strided(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, kk, s) = (g.height, g.width, g.kernel, g.stride);
    let p = g.pad();
    let (xd, gd) = (x.data(), gy.data());
    let mut out = vec![0.0; g.out_channels * g.in_channels * kk * kk];
    for o in 0..g.out_channels {
        let go = &gd[o * ho * wo..(o + 1) * ho * wo];
        for c in 0..g.in_channels {
            let xc = &xd[c * h * w..(c + 1) * h * w];
            for u in 0..kk {
                let rows = g.valid(u, h, ho);
                for v in 0..kk {
                    let cols = g.valid(v, w, wo);
                    let mut acc = 0.0;
                    for i in rows.clone() {
                        let xr = ((i * s) as isize + u as isize - p) as usize;
                        let grow = &go[i * wo..(i + 1) * wo];
                        let xrow = &xc[xr * w..(xr + 1) * w];
                        for j in cols.clone() {
                            let xcol = ((j * s) as isize + v as isize - p) as usize;
                            acc += xrow[xcol] * grow[j];
                        }
                    }
                    out[((o * g.in_channels + c) * kk + u) * kk + v] = acc;
                }
            }
        }
    }
    Tensor::new(vec![g.out_channels, g.in_channels, kk, kk], out)
}

/// Stride-1 kernels on zero-padded planes. Outputs are accumulated in the
/// padded row pitch, so each kernel tap is one long contiguous loop; the
/// extra columns are dropped (or held at zero) afterwards.
mod padded {
    use super::{ConvGeom, Tensor};

    struct Layout {
        h: usize,
        w: usize,
        pitch: usize,
        plane: usize,
        /// Span from the first to the last interior output in padded pitch.
        span: usize,
        k: usize,
        p: usize,
    }

    impl Layout {
        fn new(g: &ConvGeom) -> Self {
            let p = g.kernel / 2;
            let pitch = g.width + 2 * p;
            Self {
                h: g.height,
                w: g.width,
                pitch,
                plane: (g.height + 2 * p) * pitch,
                span: (g.height - 1) * pitch + g.width,
                k: g.kernel,
                p,
            }
        }

        fn offset(&self, u: usize, v: usize) -> usize {
            u * self.pitch + v
        }

        /// Copies `[C, h, w]` planes into zero-padded `[C, h+2p, w+2p]` planes.
        fn pad(&self, src: &[f64], channels: usize) -> Vec<f64> {
            let mut out = vec![0.0; channels * self.plane];
            for c in 0..channels {
                for i in 0..self.h {
                    let dst = c * self.plane + (i + self.p) * self.pitch + self.p;
                    out[dst..dst + self.w].copy_from_slice(&src[(c * self.h + i) * self.w..][..self.w]);
                }
            }
            out
        }

        /// Lays `[C, h, w]` planes out at the padded pitch without a border,
        /// zero in the extra columns.
        fn spread(&self, src: &[f64], channels: usize) -> Vec<f64> {
            let mut out = vec![0.0; channels * self.span];
            for c in 0..channels {
                for i in 0..self.h {
                    let dst = c * self.span + i * self.pitch;
                    out[dst..dst + self.w].copy_from_slice(&src[(c * self.h + i) * self.w..][..self.w]);
                }
            }
            out
        }
    }

    pub(super) fn conv2d(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let l = Layout::new(g);
        let xp = l.pad(x.data(), g.in_channels);
        let kd = k.data();
        let mut acc = vec![0.0; l.span];
        let mut out = Vec::with_capacity(g.out_channels * l.h * l.w);
        for o in 0..g.out_channels {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for c in 0..g.in_channels {
                let xc = &xp[c * l.plane..(c + 1) * l.plane];
                for u in 0..l.k {
                    for v in 0..l.k {
                        let wv = kd[((o * g.in_channels + c) * l.k + u) * l.k + v];
                        let src = &xc[l.offset(u, v)..][..l.span];
                        for (a, x) in acc.iter_mut().zip(src) {
                            *a += wv * x;
                        }
                    }
                }
            }
            for i in 0..l.h {
                out.extend_from_slice(&acc[i * l.pitch..i * l.pitch + l.w]);
            }
        }
        Tensor::new(vec![g.out_channels, l.h, l.w], out).expect("shape matches data")
    }

    pub(super) fn input_grad(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let l = Layout::new(g);
        let gs = l.spread(gy.data(), g.out_channels);
        let kd = k.data();
        let mut xp = vec![0.0; g.in_channels * l.plane];
        for c in 0..g.in_channels {
            let xc = &mut xp[c * l.plane..(c + 1) * l.plane];
            for o in 0..g.out_channels {
                let go = &gs[o * l.span..(o + 1) * l.span];
                for u in 0..l.k {
                    for v in 0..l.k {
                        let wv = kd[((o * g.in_channels + c) * l.k + u) * l.k + v];
                        let dst = &mut xc[l.offset(u, v)..][..l.span];
                        for (d, gv) in dst.iter_mut().zip(go) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(g.in_channels * l.h * l.w);
        for c in 0..g.in_channels {
            for i in 0..l.h {
                let src = c * l.plane + (i + l.p) * l.pitch + l.p;
                out.extend_from_slice(&xp[src..src + l.w]);
            }
        }
        Tensor::new(vec![g.in_channels, l.h, l.w], out).expect("shape matches data")
    }

    pub(super) fn kernel_grad(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Tensor {
        let l = Layout::new(g);
        let xp = l.pad(x.data(), g.in_channels);
        let gs = l.spread(gy.data(), g.out_channels);
        let mut out = Vec::with_capacity(g.out_channels * g.in_channels * l.k * l.k);
        for o in 0..g.out_channels {
            let go = &gs[o * l.span..(o + 1) * l.span];
            for c in 0..g.in_channels {
                let xc = &xp[c * l.plane..(c + 1) * l.plane];
                for u in 0..l.k {
                    for v in 0..l.k {
                        let src = &xc[l.offset(u, v)..][..l.span];
                        out.push(src.iter().zip(go).map(|(a, b)| a * b).sum::<f64>());
                    }
                }
            }
        }
        Tensor::new(vec![g.out_channels, g.in_channels, l.k, l.k], out).expect("shape matches data")
    }
}

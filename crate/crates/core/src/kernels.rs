//! Raw slice kernels behind the graph ops. Shapes are validated by callers.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let effective = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < effective {
            return None;
        }
        Some((padded - effective) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Output columns `ox` whose input column `ox*stride + offset` lies in `[0, w)`.
#[inline]
fn valid_range(offset: isize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let s = stride as isize;
    // smallest ox with ox*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    // largest ox with ox*s + offset <= w-1
    let hi_num = w as isize - 1 - offset;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s + 1).min(wo as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Unrolls the receptive windows of every output position into
/// `col[(c k + ky) k + kx][n P + oy wo + ox]` with `P = ho wo`; taps landing
/// in the padding are zero.
fn im2col(input: &[f64], d: ConvDims, g: ConvGeom) -> Vec<f64> {
    let plane_in = d.h * d.w;
    let p = d.ho * d.wo;
    let np = d.n * p;
    let mut col = vec![0.0; d.c * d.k * d.k * np];
    for c in 0..d.c {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let xoff = (kx * g.dilation) as isize - g.padding as isize;
                let (lo, hi) = valid_range(xoff, g.stride, d.w, d.wo);
                if lo >= hi {
                    continue;
                }
                for n in 0..d.n {
                    let ib = &input[(n * d.c + c) * plane_in..][..plane_in];
                    for oy in 0..d.ho {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let irow = &ib[iy as usize * d.w..][..d.w];
                        let dst = &mut col[row * np + n * p + oy * d.wo..][..d.wo];
                        if g.stride == 1 {
                            let start = (lo as isize + xoff) as usize;
                            dst[lo..hi].copy_from_slice(&irow[start..start + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                dst[ox] = irow[((ox * g.stride) as isize + xoff) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the input grid.
fn col2im(col: &[f64], d: ConvDims, g: ConvGeom) -> Vec<f64> {
    let plane_in = d.h * d.w;
    let p = d.ho * d.wo;
    let np = d.n * p;
    let mut out = vec![0.0; d.n * d.c * plane_in];
    for c in 0..d.c {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let xoff = (kx * g.dilation) as isize - g.padding as isize;
                let (lo, hi) = valid_range(xoff, g.stride, d.w, d.wo);
                if lo >= hi {
                    continue;
                }
                for n in 0..d.n {
                    let ob = &mut out[(n * d.c + c) * plane_in..][..plane_in];
                    for oy in 0..d.ho {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let orow = &mut ob[iy as usize * d.w..][..d.w];
                        let src = &col[row * np + n * p + oy * d.wo..][..d.wo];
                        if g.stride == 1 {
                            let start = (lo as isize + xoff) as usize;
                            for (t, v) in orow[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                *t += v;
                            }
                        } else {
                            for ox in lo..hi {
                                orow[((ox * g.stride) as isize + xoff) as usize] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums let the loop vectorise
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: ConvDims,
    g: ConvGeom,
) -> Vec<f64> {
    let col = im2col(input, d, g);
    let p = d.ho * d.wo;
    let np = d.n * p;
    let ckk = d.c * d.k * d.k;
    let mut out = vec![0.0; d.n * d.o * p];
    let mut acc = vec![0.0; np];
    for o in 0..d.o {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let w = &weight[o * ckk..][..ckk];
        for (r, &wv) in w.iter().enumerate() {
            axpy(&mut acc, wv, &col[r * np..][..np]);
        }
        let b = bias.map_or(0.0, |b| b[o]);
        for n in 0..d.n {
            let dst = &mut out[(n * d.o + o) * p..][..p];
            for (t, v) in dst.iter_mut().zip(&acc[n * p..][..p]) {
                *t = v + b;
            }
        }
    }
    out
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    g: ConvGeom,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let col = im2col(input, d, g);
    let p = d.ho * d.wo;
    let np = d.n * p;
    let ckk = d.c * d.k * d.k;
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; d.o];
    let mut gcol = need_input.then(|| vec![0.0; ckk * np]);
    let mut go = vec![0.0; np];
    for o in 0..d.o {
        for n in 0..d.n {
            go[n * p..][..p].copy_from_slice(&grad_out[(n * d.o + o) * p..][..p]);
        }
        gb[o] = go.iter().sum();
        let w = &weight[o * ckk..][..ckk];
        for r in 0..ckk {
            let crow = &col[r * np..][..np];
            gw[o * ckk + r] = dot(&go, crow);
            if let Some(gc) = gcol.as_mut() {
                axpy(&mut gc[r * np..][..np], w[r], &go);
            }
        }
    }
    (gcol.map(|gc| col2im(&gc, d, g)), gw, gb)
}

/// One bilinear tap: up to four `(flat index, weight)` pairs.
#[derive(Clone, Copy, Default)]
pub struct Bilinear {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub valid: bool,
}

/// Bilinear sample position on an `h x w` grid whose values sit at integer
/// coordinates. Points more than one cell outside contribute nothing; points
/// in the outer half-cell clamp to the border.
pub fn bilinear_tap(y: f64, x: f64, h: usize, w: usize) -> Bilinear {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return Bilinear::default();
    }
    let mut y = y.max(0.0);
    let mut x = x.max(0.0);
    let mut y0 = libm::floor(y) as usize;
    let mut x0 = libm::floor(x) as usize;
    let y1;
    let x1;
    if y0 >= h - 1 {
        y0 = h - 1;
        y1 = h - 1;
        y = y0 as f64;
    } else {
        y1 = y0 + 1;
    }
    if x0 >= w - 1 {
        x0 = w - 1;
        x1 = w - 1;
        x = x0 as f64;
    } else {
        x1 = x0 + 1;
    }
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    let hy = 1.0 - ly;
    let hx = 1.0 - lx;
    Bilinear {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        w: [hy * hx, hy * lx, ly * hx, ly * lx],
        valid: true,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RoiGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub out: usize,
    pub sampling: usize,
    pub spatial_scale: f64,
}

/// Sample taps for one RoI, `out*out` bins each with `sampling^2` taps.
pub fn roi_taps(roi: &[f64; 4], geo: RoiGeom) -> Vec<Bilinear> {
    let x1 = roi[0] * geo.spatial_scale - 0.5;
    let y1 = roi[1] * geo.spatial_scale - 0.5;
    let x2 = roi[2] * geo.spatial_scale - 0.5;
    let y2 = roi[3] * geo.spatial_scale - 0.5;
    let bin_w = (x2 - x1) / geo.out as f64;
    let bin_h = (y2 - y1) / geo.out as f64;
    let s = geo.sampling;
    let mut taps = Vec::with_capacity(geo.out * geo.out * s * s);
    for py in 0..geo.out {
        for px in 0..geo.out {
            for iy in 0..s {
                let y = y1 + bin_h * (py as f64 + (iy as f64 + 0.5) / s as f64);
                for ix in 0..s {
                    let x = x1 + bin_w * (px as f64 + (ix as f64 + 0.5) / s as f64);
                    taps.push(bilinear_tap(y, x, geo.h, geo.w));
                }
            }
        }
    }
    taps
}

pub fn roi_align_forward(feature: &[f64], rois: &[[f64; 4]], geo: RoiGeom) -> Vec<f64> {
    let plane = geo.h * geo.w;
    let bins = geo.out * geo.out;
    let per_bin = geo.sampling * geo.sampling;
    let norm = 1.0 / per_bin as f64;
    let mut out = vec![0.0; rois.len() * geo.channels * bins];
    for (r, roi) in rois.iter().enumerate() {
        let taps = roi_taps(roi, geo);
        for c in 0..geo.channels {
            let f = &feature[c * plane..][..plane];
            let o = &mut out[(r * geo.channels + c) * bins..][..bins];
            for (b, ov) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in &taps[b * per_bin..][..per_bin] {
                    if t.valid {
                        acc += t.w[0] * f[t.idx[0]]
                            + t.w[1] * f[t.idx[1]]
                            + t.w[2] * f[t.idx[2]]
                            + t.w[3] * f[t.idx[3]];
                    }
                }
                *ov = acc * norm;
            }
        }
    }
    out
}

pub fn roi_align_backward(grad_out: &[f64], rois: &[[f64; 4]], geo: RoiGeom) -> Vec<f64> {
    let plane = geo.h * geo.w;
    let bins = geo.out * geo.out;
    let per_bin = geo.sampling * geo.sampling;
    let norm = 1.0 / per_bin as f64;
    let mut gf = vec![0.0; geo.channels * plane];
    for (r, roi) in rois.iter().enumerate() {
        let taps = roi_taps(roi, geo);
        for c in 0..geo.channels {
            let gplane = &mut gf[c * plane..][..plane];
            let go = &grad_out[(r * geo.channels + c) * bins..][..bins];
            for (b, &gv) in go.iter().enumerate() {
                let gv = gv * norm;
                for t in &taps[b * per_bin..][..per_bin] {
                    if t.valid {
                        for k in 0..4 {
                            gplane[t.idx[k]] += t.w[k] * gv;
                        }
                    }
                }
            }
        }
    }
    gf
}

/// Nearest-neighbour upsampling of `[planes, h, w]` by an integer factor.
pub fn upsample_forward(input: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let ib = &input[p * h * w..][..h * w];
        let ob = &mut out[p * ho * wo..][..ho * wo];
        for y in 0..ho {
            let src = &ib[(y / f) * w..][..w];
            for (x, v) in ob[y * wo..][..wo].iter_mut().enumerate() {
                *v = src[x / f];
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (ho, wo) = (h * f, w * f);
    let mut gin = vec![0.0; planes * h * w];
    for p in 0..planes {
        let gb = &grad_out[p * ho * wo..][..ho * wo];
        let ib = &mut gin[p * h * w..][..h * w];
        for y in 0..ho {
            for x in 0..wo {
                ib[(y / f) * w + x / f] += gb[y * wo + x];
            }
        }
    }
    gin
}

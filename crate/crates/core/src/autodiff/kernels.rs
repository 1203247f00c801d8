//! Forward and backward kernels for the NCHW operations of [`Graph`](super::Graph).

use crate::par;
use crate::{Error, Result};

use super::real::matmul;
use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[n, cin, h, w], &[cout, kcin, kh, kw]) = (x, k) else {
            return Err(Error::Shape(format!("conv2d expects NCHW input and OIHW kernel, got {x:?} and {k:?}")));
        };
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be >= 1".into()));
        }
        if kcin != cin {
            return Err(Error::Shape(format!("conv2d kernel expects {kcin} input channels, input has {cin}")));
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if kh == 0 || kw == 0 || kh > hp || kw > wp {
            return Err(Error::Shape(format!("kernel {kh}x{kw} does not fit padded input {hp}x{wp}")));
        }
        if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(Error::Shape(format!(
                "non-integral conv output: ({hp}-{kh})/{stride}, ({wp}-{kw})/{stride}"
            )));
        }
        Ok(Self { n, cin, h, w, cout, kh, kw, stride, pad, ho: (hp - kh) / stride + 1, wo: (wp - kw) / stride + 1 })
    }

    fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, no padding: the input sample already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<F: Real>(g: &ConvGeom, x: &[F], cols: &mut [F]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = &mut cols[((c * g.kh + u) * g.kw + v) * p..][..p];
                for i in 0..g.ho {
                    let yy = (i * g.stride + u) as isize - g.pad as isize;
                    let out = &mut row[i * g.wo..(i + 1) * g.wo];
                    if yy < 0 || yy >= g.h as isize {
                        out.fill(F::zero());
                        continue;
                    }
                    let src = &plane[yy as usize * g.w..(yy as usize + 1) * g.w];
                    for (j, o) in out.iter_mut().enumerate() {
                        let xx = (j * g.stride + v) as isize - g.pad as isize;
                        *o = if xx < 0 || xx >= g.w as isize { F::zero() } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<F: Real>(g: &ConvGeom, cols: &[F], dx: &mut [F]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = &cols[((c * g.kh + u) * g.kw + v) * p..][..p];
                for i in 0..g.ho {
                    let yy = (i * g.stride + u) as isize - g.pad as isize;
                    if yy < 0 || yy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[yy as usize * g.w..(yy as usize + 1) * g.w];
                    for (j, &val) in row[i * g.wo..(i + 1) * g.wo].iter().enumerate() {
                        let xx = (j * g.stride + v) as isize - g.pad as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[xx as usize] += val;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<F: Real>(g: &ConvGeom, x: &[F], weight: &[F], bias: Option<&[F]>) -> Vec<F> {
    let (p, kc) = (g.out_pixels(), g.cols_rows());
    let in_per = g.cin * g.h * g.w;
    let mut out = vec![F::zero(); g.n * g.cout * p];
    par::for_each_chunk_mut(&mut out, g.cout * p, |n, y| {
        let xs = &x[n * in_per..(n + 1) * in_per];
        if g.is_pointwise() {
            matmul(g.cout, kc, p, weight, false, xs, false, y, F::zero());
        } else {
            let mut cols = vec![F::zero(); kc * p];
            im2col(g, xs, &mut cols);
            matmul(g.cout, kc, p, weight, false, &cols, false, y, F::zero());
        }
        if let Some(b) = bias {
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    });
    out
}

/// Gradients of conv2d. Each requested output is `None` when not needed.
pub struct ConvGrads<F> {
    pub dx: Option<Vec<F>>,
    pub dw: Option<Vec<F>>,
    pub db: Option<Vec<F>>,
}

pub fn conv2d_backward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    weight: &[F],
    dy: &[F],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<F> {
    let (p, kc) = (g.out_pixels(), g.cols_rows());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;

    let db = need_db.then(|| {
        let mut db = vec![F::zero(); g.cout];
        for n in 0..g.n {
            for (o, row) in dy[n * out_per..(n + 1) * out_per].chunks(p).enumerate() {
                db[o] += F::of(row.iter().map(|v| v.f64()).sum::<f64>());
            }
        }
        db
    });

    let dw = need_dw.then(|| {
        // Per-sample partials are summed in sample order so the result does
        // not depend on the execution mode.
        let partials = par::map_range(g.n, |n| {
            let xs = &x[n * in_per..(n + 1) * in_per];
            let dys = &dy[n * out_per..(n + 1) * out_per];
            let mut dw = vec![F::zero(); g.cout * kc];
            if g.is_pointwise() {
                matmul(g.cout, p, kc, dys, false, xs, true, &mut dw, F::zero());
            } else {
                let mut cols = vec![F::zero(); kc * p];
                im2col(g, xs, &mut cols);
                matmul(g.cout, p, kc, dys, false, &cols, true, &mut dw, F::zero());
            }
            dw
        });
        let mut acc = vec![F::zero(); g.cout * kc];
        for part in partials {
            acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        acc
    });

    let dx = need_dx.then(|| {
        let mut dx = vec![F::zero(); g.n * in_per];
        par::for_each_chunk_mut(&mut dx, in_per, |n, dxs| {
            let dys = &dy[n * out_per..(n + 1) * out_per];
            if g.is_pointwise() {
                matmul(kc, g.cout, p, weight, true, dys, false, dxs, F::zero());
            } else {
                let mut dcols = vec![F::zero(); kc * p];
                matmul(kc, g.cout, p, weight, true, dys, false, &mut dcols, F::zero());
                col2im(g, &dcols, dxs);
            }
        });
        dx
    });

    ConvGrads { dx, dw, db }
}

/// Non-overlapping `size`x`size` max pooling. Returns output and, per output
/// element, the flat input index it was taken from. Ties go to the first
/// maximal element in row-major window order.
pub fn maxpool_forward<F: Real>(shape: &[usize], x: &[F], size: usize) -> Result<(Vec<usize>, Vec<F>, Vec<u32>)> {
    let &[n, c, h, w] = shape else {
        return Err(Error::Shape(format!("maxpool2d expects NCHW, got {shape:?}")));
    };
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(Error::Shape(format!("maxpool2d window {size} does not tile {h}x{w}")));
    }
    let (ho, wo) = (h / size, w / size);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + i * size * w + j * size;
                for u in 0..size {
                    for v in 0..size {
                        let idx = base + (i * size + u) * w + j * size + v;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((vec![n, c, ho, wo], out, arg))
}

pub fn upsample_forward<F: Real>(shape: &[usize], x: &[F], factor: usize) -> Result<(Vec<usize>, Vec<F>)> {
    let &[n, c, h, w] = shape else {
        return Err(Error::Shape(format!("upsample expects NCHW, got {shape:?}")));
    };
    if factor == 0 {
        return Err(Error::Shape("upsample factor must be >= 1".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for i in 0..ho {
            let row = &src[(i / factor) * w..(i / factor + 1) * w];
            out.extend((0..wo).map(|j| row[j / factor]));
        }
    }
    Ok((vec![n, c, ho, wo], out))
}

pub fn upsample_backward<F: Real>(in_shape: &[usize], dy: &[F], factor: usize) -> Vec<F> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let wo = w * factor;
    let mut dx = vec![F::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &dy[plane * h * w * factor * factor..(plane + 1) * h * w * factor * factor];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (i, row) in src.chunks(wo).enumerate() {
            let drow = &mut dst[(i / factor) * w..(i / factor + 1) * w];
            for (j, &v) in row.iter().enumerate() {
                drow[j / factor] += v;
            }
        }
    }
    dx
}

/// Splits a shape `[N, K, rest..]` into `(N, K, prod(rest))`.
pub fn class_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("class-axis op needs rank >= 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Softmax along axis 1, accumulated in f64.
pub fn softmax_forward<F: Real>(shape: &[usize], x: &[F]) -> Result<Vec<F>> {
    let (n, k, inner) = class_layout(shape)?;
    let mut out = vec![F::zero(); x.len()];
    let mut buf = vec![0.0f64; k];
    for s in 0..n {
        let base = s * k * inner;
        for p in 0..inner {
            let m = (0..k).map(|c| x[base + c * inner + p].f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, b) in buf.iter_mut().enumerate() {
                *b = (x[base + c * inner + p].f64() - m).exp();
                sum += *b;
            }
            for (c, b) in buf.iter().enumerate() {
                out[base + c * inner + p] = F::of(b / sum);
            }
        }
    }
    Ok(out)
}

pub fn softmax_backward<F: Real>(shape: &[usize], y: &[F], dy: &[F]) -> Vec<F> {
    let (n, k, inner) = class_layout(shape).expect("validated in forward");
    let mut dx = vec![F::zero(); y.len()];
    for s in 0..n {
        let base = s * k * inner;
        for p in 0..inner {
            let dot: f64 = (0..k).map(|c| y[base + c * inner + p].f64() * dy[base + c * inner + p].f64()).sum();
            for c in 0..k {
                let i = base + c * inner + p;
                dx[i] = F::of(y[i].f64() * (dy[i].f64() - dot));
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_geometry_errors() {
        assert!(ConvGeom::new(&[1, 1, 4, 4], &[1, 1, 3, 3], 2, 0).is_err());
        assert!(ConvGeom::new(&[1, 2, 4, 4], &[1, 1, 3, 3], 1, 0).is_err());
        assert!(ConvGeom::new(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0).is_err());
        assert!(ConvGeom::new(&[1, 1, 4, 4], &[1, 1, 3, 3], 0, 0).is_err());
        let g = ConvGeom::new(&[2, 3, 5, 5], &[4, 3, 3, 3], 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (3, 3));
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = [1.0f32, 1.0, 1.0, 1.0];
        let (_, _, arg) = maxpool_forward(&[1, 1, 2, 2], &x, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn upsample_roundtrip_sums() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let (shape, y) = upsample_forward(&[1, 1, 2, 2], &x, 2).unwrap();
        assert_eq!(shape, vec![1, 1, 4, 4]);
        assert_eq!(&y[..4], &[1.0, 1.0, 2.0, 2.0]);
        let dx = upsample_backward(&[1, 1, 2, 2], &vec![1.0; 16], 2);
        assert_eq!(dx, vec![4.0; 4]);
    }
}

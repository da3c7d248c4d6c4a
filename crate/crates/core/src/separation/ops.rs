//! Dense kernels on `[batch, channel, row, col]` tensors stored row-major.

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rustfft::FftNum;
use serde::{Deserialize, Serialize};

/// Floating-point element type of the network (`f32` for training, `f64`
/// for gradient checks).
pub trait Real:
    Float + FftNum + LinalgScalar + ScalarOperand + FromPrimitive + Sum + Debug + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Border handling along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zero,
    Circular,
}

/// "Same"-size 2-D convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (Padding, Padding),
    pub height: usize,
    pub width: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.c_in * self.kernel.0 * self.kernel.1
    }

    pub fn n(&self) -> usize {
        self.height * self.width
    }

    /// Source index along an axis for output position `pos` and tap `tap`,
    /// or `None` when it falls in zero padding.
    fn source(pos: usize, tap: usize, size: usize, kernel: usize, dilation: usize, pad: Padding) -> Option<usize> {
        let offset = (tap as isize - (kernel / 2) as isize) * dilation as isize;
        let s = pos as isize + offset;
        match pad {
            Padding::Circular => Some(s.rem_euclid(size as isize) as usize),
            Padding::Zero => (0..size as isize).contains(&s).then_some(s as usize),
        }
    }
}

/// Lowers one sample `[c_in, h, w]` into a `[c_in·kh·kw, h·w]` matrix.
pub fn im2col<F: Real>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let (h, w) = (g.height, g.width);
    let (kh, kw) = g.kernel;
    debug_assert_eq!(cols.len(), g.k() * g.n());
    for ci in 0..g.c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * h * w..(row + 1) * h * w];
                let off = (kx as isize - (kw / 2) as isize) * g.dilation.1 as isize;
                for r in 0..h {
                    let out = &mut dst[r * w..(r + 1) * w];
                    let Some(sr) = ConvGeom::source(r, ky, h, kh, g.dilation.0, g.padding.0) else {
                        out.fill(F::zero());
                        continue;
                    };
                    let src = &plane[sr * w..(sr + 1) * w];
                    match g.padding.1 {
                        Padding::Zero => {
                            let (lo, hi) = if off >= 0 {
                                (0, (w as isize - off).max(0) as usize)
                            } else {
                                ((-off).min(w as isize) as usize, w)
                            };
                            out[..lo].fill(F::zero());
                            out[hi..].fill(F::zero());
                            if lo < hi {
                                let s0 = (lo as isize + off) as usize;
                                out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                            }
                        }
                        Padding::Circular => {
                            for (c, o) in out.iter_mut().enumerate() {
                                *o = src[(c as isize + off).rem_euclid(w as isize) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dx`.
pub fn col2im<F: Real>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let (h, w) = (g.height, g.width);
    let (kh, kw) = g.kernel;
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * h * w..(row + 1) * h * w];
                let off = (kx as isize - (kw / 2) as isize) * g.dilation.1 as isize;
                for r in 0..h {
                    let Some(sr) = ConvGeom::source(r, ky, h, kh, g.dilation.0, g.padding.0) else {
                        continue;
                    };
                    let seg = &src[r * w..(r + 1) * w];
                    let dst = &mut plane[sr * w..(sr + 1) * w];
                    match g.padding.1 {
                        Padding::Zero => {
                            let (lo, hi) = if off >= 0 {
                                (0, (w as isize - off).max(0) as usize)
                            } else {
                                ((-off).min(w as isize) as usize, w)
                            };
                            if lo < hi {
                                let s0 = (lo as isize + off) as usize;
                                for (d, v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                                    *d = *d + *v;
                                }
                            }
                        }
                        Padding::Circular => {
                            for (c, v) in seg.iter().enumerate() {
                                let i = (c as isize + off).rem_euclid(w as isize) as usize;
                                dst[i] = dst[i] + *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y[b] = W · im2col(x[b]) + bias`, reusing `cols` as scratch.
pub fn conv_forward<F: Real>(
    x: &[F],
    weight: &[F],
    bias: Option<&[F]>,
    g: &ConvGeom,
    batch: usize,
    cols: &mut Vec<F>,
) -> Vec<F> {
    let (k, n) = (g.k(), g.n());
    cols.resize(k * n, F::zero());
    let mut y = vec![F::zero(); batch * g.c_out * n];
    let wv = ArrayView2::from_shape((g.c_out, k), weight).expect("weight shape");
    for b in 0..batch {
        im2col(&x[b * g.c_in * n..(b + 1) * g.c_in * n], g, cols);
        let cv = ArrayView2::from_shape((k, n), &cols[..]).expect("cols shape");
        let out = &mut y[b * g.c_out * n..(b + 1) * g.c_out * n];
        if let Some(bias) = bias {
            for (co, chunk) in out.chunks_mut(n).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let mut ov = ArrayViewMut2::from_shape((g.c_out, n), out).expect("out shape");
        general_mat_mul(F::one(), &wv, &cv, F::one(), &mut ov);
    }
    y
}

/// Gradients of [`conv_forward`]: returns `(dx, dW, dbias)`.
pub fn conv_backward<F: Real>(
    x: &[F],
    weight: &[F],
    dy: &[F],
    g: &ConvGeom,
    batch: usize,
    need_dx: bool,
    cols: &mut Vec<F>,
) -> (Option<Vec<F>>, Vec<F>, Vec<F>) {
    let (k, n) = (g.k(), g.n());
    cols.resize(k * n, F::zero());
    let mut dcols = if need_dx { vec![F::zero(); k * n] } else { Vec::new() };
    let mut dx = need_dx.then(|| vec![F::zero(); batch * g.c_in * n]);
    let mut dw = vec![F::zero(); g.c_out * k];
    let mut db = vec![F::zero(); g.c_out];
    let wv = ArrayView2::from_shape((g.c_out, k), weight).expect("weight shape");
    for b in 0..batch {
        let dyb = &dy[b * g.c_out * n..(b + 1) * g.c_out * n];
        for (co, chunk) in dyb.chunks(n).enumerate() {
            db[co] = db[co] + chunk.iter().copied().sum::<F>();
        }
        let dyv = ArrayView2::from_shape((g.c_out, n), dyb).expect("dy shape");
        im2col(&x[b * g.c_in * n..(b + 1) * g.c_in * n], g, cols);
        let cv = ArrayView2::from_shape((k, n), &cols[..]).expect("cols shape");
        let mut dwv = ArrayViewMut2::from_shape((g.c_out, k), &mut dw[..]).expect("dw shape");
        general_mat_mul(F::one(), &dyv, &cv.t(), F::one(), &mut dwv);
        if let Some(dx) = dx.as_mut() {
            let mut dcv = ArrayViewMut2::from_shape((k, n), &mut dcols[..]).expect("dcols shape");
            general_mat_mul(F::one(), &wv.t(), &dyv, F::zero(), &mut dcv);
            col2im(&dcols, g, &mut dx[b * g.c_in * n..(b + 1) * g.c_in * n]);
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(padding: (Padding, Padding)) -> ConvGeom {
        ConvGeom {
            c_in: 2,
            c_out: 3,
            kernel: (3, 3),
            dilation: (1, 4),
            padding,
            height: 5,
            width: 11,
        }
    }

    /// Direct nested-loop convolution.
    fn naive(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (h, wd) = (g.height, g.width);
        let mut y = vec![0.0; g.c_out * h * wd];
        for co in 0..g.c_out {
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sr = r as isize + (ky as isize - 1) * g.dilation.0 as isize;
                                let sc = c as isize + (kx as isize - 1) * g.dilation.1 as isize;
                                let sr = match g.padding.0 {
                                    Padding::Circular => sr.rem_euclid(h as isize),
                                    Padding::Zero if (0..h as isize).contains(&sr) => sr,
                                    Padding::Zero => continue,
                                };
                                let sc = match g.padding.1 {
                                    Padding::Circular => sc.rem_euclid(wd as isize),
                                    Padding::Zero if (0..wd as isize).contains(&sc) => sc,
                                    Padding::Zero => continue,
                                };
                                acc += w[((co * g.c_in + ci) * 3 + ky) * 3 + kx]
                                    * x[(ci * h + sr as usize) * wd + sc as usize];
                            }
                        }
                    }
                    y[(co * h + r) * wd + c] = acc;
                }
            }
        }
        y
    }

    fn data(n: usize, seed: u64) -> Vec<f64> {
        (0..n).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0) - 1.0).collect()
    }

    #[test]
    fn matches_direct_convolution() {
        for padding in [
            (Padding::Circular, Padding::Zero),
            (Padding::Zero, Padding::Circular),
            (Padding::Zero, Padding::Zero),
        ] {
            let g = geom(padding);
            let x = data(g.c_in * g.n(), 1);
            let w = data(g.c_out * g.k(), 7);
            let mut cols = Vec::new();
            let y = conv_forward(&x, &w, None, &g, 1, &mut cols);
            for (a, b) in y.iter().zip(naive(&x, &w, &g)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint() {
        for padding in [(Padding::Circular, Padding::Zero), (Padding::Zero, Padding::Circular)] {
            let g = geom(padding);
            let x = data(g.c_in * g.n(), 3);
            let c = data(g.k() * g.n(), 11);
            let mut cols = vec![0.0; g.k() * g.n()];
            im2col(&x, &g, &mut cols);
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let mut back = vec![0.0; x.len()];
            col2im(&c, &g, &mut back);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}

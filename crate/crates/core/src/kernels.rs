//! Forward and backward kernels for the fixed layer set.
//!
//! Activations are channel-first (`C x H x W` per example). All reductions run
//! sequentially in index order so results are reproducible bit for bit.

use crate::tensor::Real;

/// `y[b] = x[b] · W + bias` with `W` stored `in x out`.
pub fn dense_forward<T: Real>(x: &[T], batch: usize, inp: usize, out: usize, w: &[T], bias: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), batch * inp);
    debug_assert_eq!(y.len(), batch * out);
    for b in 0..batch {
        let yb = &mut y[b * out..(b + 1) * out];
        yb.copy_from_slice(bias);
        let xb = &x[b * inp..(b + 1) * inp];
        for (k, &xv) in xb.iter().enumerate() {
            let wk = &w[k * out..(k + 1) * out];
            for (yj, &wj) in yb.iter_mut().zip(wk) {
                *yj = *yj + xv * wj;
            }
        }
    }
}

/// Accumulates parameter gradients and optionally writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    dy: &[T],
    batch: usize,
    inp: usize,
    out: usize,
    w: &[T],
    dw: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
) {
    for b in 0..batch {
        let dyb = &dy[b * out..(b + 1) * out];
        let xb = &x[b * inp..(b + 1) * inp];
        for (db, &g) in dbias.iter_mut().zip(dyb) {
            *db = *db + g;
        }
        for (k, &xv) in xb.iter().enumerate() {
            let dwk = &mut dw[k * out..(k + 1) * out];
            for (d, &g) in dwk.iter_mut().zip(dyb) {
                *d = *d + xv * g;
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dyb = &dy[b * out..(b + 1) * out];
            for k in 0..inp {
                let wk = &w[k * out..(k + 1) * out];
                dx[b * inp + k] = wk.iter().zip(dyb).fold(T::zero(), |acc, (&a, &g)| acc + a * g);
            }
        }
    }
}

/// Geometry of a 3x3, stride-1, same-padded convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeometry {
    pub const TAPS: usize = 9;

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn cols_rows(&self) -> usize {
        self.in_ch * Self::TAPS
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.plane()
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.plane()
    }

    /// Scratch length needed by [`conv_forward`] / [`conv_backward`].
    pub fn cols_len(&self) -> usize {
        self.cols_rows() * self.plane()
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (h, w) = (self.height as isize, self.width as isize);
        let plane = self.plane();
        for c in 0..self.in_ch {
            let xc = &x[c * plane..(c + 1) * plane];
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let row = (c * 9 + (ky * 3 + kx) as usize) * plane;
                    let dst = &mut cols[row..row + plane];
                    for y in 0..h {
                        let sy = y + ky - 1;
                        for xx in 0..w {
                            let sx = xx + kx - 1;
                            dst[(y * w + xx) as usize] = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                                xc[(sy * w + sx) as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (h, w) = (self.height as isize, self.width as isize);
        let plane = self.plane();
        dx.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..self.in_ch {
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let row = (c * 9 + (ky * 3 + kx) as usize) * plane;
                    let src = &cols[row..row + plane];
                    for y in 0..h {
                        let sy = y + ky - 1;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx + kx - 1;
                            if sx >= 0 && sx < w {
                                let d = &mut dx[c * plane + (sy * w + sx) as usize];
                                *d = *d + src[(y * w + xx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Weight layout is `out_ch x in_ch x 3 x 3`.
pub fn conv_forward<T: Real>(g: &ConvGeometry, x: &[T], batch: usize, w: &[T], bias: &[T], y: &mut [T], cols: &mut [T]) {
    let plane = g.plane();
    let k = g.cols_rows();
    for b in 0..batch {
        g.im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], cols);
        let yb = &mut y[b * g.out_len()..(b + 1) * g.out_len()];
        for o in 0..g.out_ch {
            let yo = &mut yb[o * plane..(o + 1) * plane];
            yo.iter_mut().for_each(|v| *v = bias[o]);
            let wo = &w[o * k..(o + 1) * k];
            for (r, &wv) in wo.iter().enumerate() {
                let cr = &cols[r * plane..(r + 1) * plane];
                for (yv, &cv) in yo.iter_mut().zip(cr) {
                    *yv = *yv + wv * cv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    dy: &[T],
    batch: usize,
    w: &[T],
    dw: &mut [T],
    dbias: &mut [T],
    mut dx: Option<&mut [T]>,
    cols: &mut [T],
    dcols: &mut [T],
) {
    let plane = g.plane();
    let k = g.cols_rows();
    for b in 0..batch {
        g.im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], cols);
        let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
        for o in 0..g.out_ch {
            let dyo = &dyb[o * plane..(o + 1) * plane];
            dbias[o] = dyo.iter().fold(dbias[o], |acc, &v| acc + v);
            let dwo = &mut dw[o * k..(o + 1) * k];
            for (r, d) in dwo.iter_mut().enumerate() {
                let cr = &cols[r * plane..(r + 1) * plane];
                *d = cr.iter().zip(dyo).fold(*d, |acc, (&c, &e)| acc + c * e);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            for o in 0..g.out_ch {
                let dyo = &dyb[o * plane..(o + 1) * plane];
                let wo = &w[o * k..(o + 1) * k];
                for (r, &wv) in wo.iter().enumerate() {
                    let dc = &mut dcols[r * plane..(r + 1) * plane];
                    for (d, &e) in dc.iter_mut().zip(dyo) {
                        *d = *d + wv * e;
                    }
                }
            }
            g.col2im(dcols, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
        }
    }
}

/// 2x2 max pooling with stride 2. Records the flat argmax of every window
/// (first maximum wins on ties).
pub fn maxpool_forward<T: Real>(x: &[T], batch: usize, ch: usize, h: usize, w: usize, y: &mut [T], argmax: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for b in 0..batch {
        for c in 0..ch {
            let base = (b * ch + c) * h * w;
            let obase = (b * ch + c) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    y[obase + oy * ow + ox] = x[best];
                    argmax[obase + oy * ow + ox] = best;
                }
            }
        }
    }
}

pub fn maxpool_backward<T: Real>(dy: &[T], argmax: &[usize], dx: &mut [T]) {
    dx.iter_mut().for_each(|v| *v = T::zero());
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] = dx[i] + g;
    }
}

pub fn relu_forward<T: Real>(x: &[T], y: &mut [T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

/// Gradient is zero at the kink.
pub fn relu_backward<T: Real>(x: &[T], dy: &[T], dx: &mut [T]) {
    for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d = if v > T::zero() { g } else { T::zero() };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution used as an oracle for the im2col path.
    fn conv_naive(g: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let (h, wd) = (g.height as isize, g.width as isize);
        let mut y = vec![0.0; g.out_len()];
        for o in 0..g.out_ch {
            for yy in 0..h {
                for xx in 0..wd {
                    let mut acc = bias[o];
                    for c in 0..g.in_ch {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if sy >= 0 && sy < h && sx >= 0 && sx < wd {
                                    acc += w[((o * g.in_ch + c) * 9) + (ky * 3 + kx) as usize]
                                        * x[c * (h * wd) as usize + (sy * wd + sx) as usize];
                                }
                            }
                        }
                    }
                    y[o * (h * wd) as usize + (yy * wd + xx) as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let g = ConvGeometry {
            in_ch: 2,
            out_ch: 3,
            height: 4,
            width: 5,
        };
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..g.out_ch * g.in_ch * 9).map(|i| ((i * 3 % 7) as f64) * 0.25 - 0.7).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let mut y = vec![0.0; g.out_len()];
        let mut cols = vec![0.0; g.cols_len()];
        conv_forward(&g, &x, 1, &w, &bias, &mut y, &mut cols);
        let expected = conv_naive(&g, &x, &w, &bias);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_first_max_wins_ties() {
        let x = [1.0f32, 1.0, 1.0, 1.0];
        let mut y = [0.0];
        let mut arg = [9];
        maxpool_forward(&x, 1, 1, 2, 2, &mut y, &mut arg);
        assert_eq!(arg[0], 0);
        assert_eq!(y[0], 1.0);
    }
}

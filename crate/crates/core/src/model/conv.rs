//! Same-padded 2-D convolutions on `C x H x W` tensors via im2col + GEMM.

use super::real::{matmul, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    /// Odd kernel size; padding is `k / 2`.
    pub k: usize,
}

impl ConvShape {
    pub const fn new(c_in: usize, c_out: usize, k: usize) -> Self {
        ConvShape { c_in, c_out, k }
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.fan_in()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.k, self.k]
    }
}

/// `cols[(c * k + ky) * k + kx][r * w + x] = x[c][r + ky - p][x + kx - p]`,
/// zero outside the image.
pub fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut Vec<T>) {
    let hw = h * w;
    let p = (k / 2) as isize;
    cols.clear();
    cols.resize(c * k * k * hw, T::zero());
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dx = kx as isize - p;
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (c0, c1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize).max(0) as usize);
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src = &plane[sr as usize * w..][..w];
                    let dst = &mut row[r * w..][..w];
                    for col in c0..c1 {
                        dst[col] = src[(col as isize + dx) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into `dx`.
pub fn col2im_add<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let hw = h * w;
    let p = (k / 2) as isize;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dxo = kx as isize - p;
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (c0, c1) = (
                    (-dxo).max(0) as usize,
                    (w as isize - dxo).min(w as isize).max(0) as usize,
                );
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src = &row[r * w..][..w];
                    let dst = &mut plane[sr as usize * w..][..w];
                    for col in c0..c1 {
                        dst[(col as isize + dxo) as usize] += src[col];
                    }
                }
            }
        }
    }
}

/// `out = W * x + b`, `out` is `c_out x (h w)`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Real>(
    shape: ConvShape,
    weight: &[T],
    bias: &[T],
    x: &[T],
    h: usize,
    w: usize,
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let hw = h * w;
    debug_assert_eq!(x.len(), shape.c_in * hw);
    debug_assert_eq!(out.len(), shape.c_out * hw);
    if shape.k == 1 {
        matmul(shape.c_out, shape.c_in, hw, weight, false, x, false, out, false);
    } else {
        im2col(x, shape.c_in, h, w, shape.k, scratch);
        matmul(
            shape.c_out,
            shape.fan_in(),
            hw,
            weight,
            false,
            scratch,
            false,
            out,
            false,
        );
    }
    for (o, &b) in out.chunks_mut(hw).zip(bias) {
        o.iter_mut().for_each(|v| *v += b);
    }
}

/// Accumulates weight and bias gradients, and input gradients into `dx`
/// when given.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    shape: ConvShape,
    weight: &[T],
    x: &[T],
    h: usize,
    w: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let hw = h * w;
    let cols: &[T] = if shape.k == 1 {
        x
    } else {
        im2col(x, shape.c_in, h, w, shape.k, scratch);
        scratch
    };
    matmul(shape.c_out, hw, shape.fan_in(), dy, false, cols, true, dweight, true);
    for (db, d) in dbias.iter_mut().zip(dy.chunks(hw)) {
        *db += d.iter().copied().sum::<T>();
    }
    if let Some(dx) = dx {
        if shape.k == 1 {
            matmul(shape.c_in, shape.c_out, hw, weight, true, dy, false, dx, true);
        } else {
            let mut dcols = vec![T::zero(); shape.fan_in() * hw];
            matmul(
                shape.fan_in(),
                shape.c_out,
                hw,
                weight,
                true,
                dy,
                false,
                &mut dcols,
                false,
            );
            col2im_add(&dcols, shape.c_in, h, w, shape.k, dx);
        }
    }
}

pub fn relu_in_place<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero()
        }
    });
}

/// Zeroes gradient entries where the post-activation value is not positive.
pub fn relu_backward_in_place<T: Real>(activation: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

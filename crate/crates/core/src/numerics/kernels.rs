//! Slice-level compute kernels shared by the graph ops.

use super::tensor::Real;

/// `out[m×n] += a[m×k] · b[k×n]`.
pub fn gemm<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += aᵀ · b` with `a` stored as `[k×m]` and `b` as `[k×n]`.
pub fn gemm_at_b<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a · bᵀ` with `a` stored as `[m×k]` and `b` as `[n×k]`.
pub fn gemm_a_bt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(b, n, k);
    gemm(a, &bt, out, m, k, n);
}

/// Transpose a `[rows×cols]` matrix.
pub fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Reflect an index into `[0, n)` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`). Valid for offsets smaller than `n`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r));
    r as usize
}

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    #[inline]
    fn source(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> (usize, usize) {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        (reflect(y, self.h), reflect(x, self.w))
    }
}

/// Unfold reflect-padded patches into a `[c_in·k·k × h_out·w_out]` matrix.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.rows() * cols];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        let (sy, sx) = g.source(oy, ky, ox, kx);
                        dst[oy * g.w_out + ox] = plane[sy * g.w + sx];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
pub fn col2im<T: Real>(cols_data: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let src = &cols_data[r * cols..(r + 1) * cols];
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        let (sy, sx) = g.source(oy, ky, ox, kx);
                        plane[sy * g.w + sx] += src[oy * g.w_out + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    naive[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut o1 = vec![0.0; m * n];
        gemm(&a, &b, &mut o1, m, k, n);
        let mut o2 = vec![0.0; m * n];
        gemm_at_b(&transpose(&a, m, k), &b, &mut o2, m, k, n);
        let mut o3 = vec![0.0; m * n];
        gemm_a_bt(&a, &transpose(&b, k, n), &mut o3, m, k, n);
        for i in 0..m * n {
            assert!((naive[i] - o1[i]).abs() < 1e-12);
            assert!((naive[i] - o2[i]).abs() < 1e-12);
            assert!((naive[i] - o3[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
    }
}

//! Dense numeric kernels shared by the tape operations.

use super::Real;

/// Strided matrix view `(rows, cols, row_stride, col_stride)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        View {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` buffer.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        View {
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = beta * c + a * b` where `c` is row-major `a.rows x b.cols`.
pub(crate) fn gemm<T: Real>(a: &[T], av: View, b: &[T], bv: View, beta: T, c: &mut [T]) {
    assert_eq!(av.cols, bv.rows, "inner dimensions differ");
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    assert!(a.len() >= av.span() && b.len() >= bv.span() && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x = *x * beta);
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with eight independent partial sums.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    s01 + s23 + tail
}

/// `y += alpha * x`
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn add_assign<T: Real>(y: &mut [T], x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub len: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c_in * self.k
    }

    /// Input position feeding output `j` through tap `t`, if inside the signal.
    #[inline]
    fn source(&self, j: usize, t: usize) -> Option<usize> {
        (j * self.stride + t).checked_sub(self.pad).filter(|&s| s < self.len)
    }
}

/// Unfolds `x` (`c_in x len`) into `(c_in * k) x out_len` columns.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.out_len];
    for ci in 0..g.c_in {
        let xr = &x[ci * g.len..(ci + 1) * g.len];
        for t in 0..g.k {
            let row = &mut cols[(ci * g.k + t) * g.out_len..(ci * g.k + t + 1) * g.out_len];
            if g.stride == 1 {
                // contiguous run of valid outputs
                let lo = g.pad.saturating_sub(t);
                let hi = (g.len + g.pad).saturating_sub(t).min(g.out_len);
                if lo < hi {
                    let s0 = lo + t - g.pad;
                    row[lo..hi].copy_from_slice(&xr[s0..s0 + (hi - lo)]);
                }
            } else {
                for (j, r) in row.iter_mut().enumerate() {
                    if let Some(s) = g.source(j, t) {
                        *r = xr[s];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `dx`.
pub(crate) fn col2im<T: Real>(dcols: &[T], g: &ConvGeom, dx: &mut [T]) {
    for ci in 0..g.c_in {
        let xr = &mut dx[ci * g.len..(ci + 1) * g.len];
        for t in 0..g.k {
            let row = &dcols[(ci * g.k + t) * g.out_len..(ci * g.k + t + 1) * g.out_len];
            if g.stride == 1 {
                let lo = g.pad.saturating_sub(t);
                let hi = (g.len + g.pad).saturating_sub(t).min(g.out_len);
                if lo < hi {
                    let s0 = lo + t - g.pad;
                    add_assign(&mut xr[s0..s0 + (hi - lo)], &row[lo..hi]);
                }
            } else {
                for (j, &r) in row.iter().enumerate() {
                    if let Some(s) = g.source(j, t) {
                        xr[s] += r;
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
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(&a, View::row_major(2, 3), &b, View::row_major(3, 4), 1.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // a^T (3x2) times a (2x3)
        let mut c = vec![0.0; 9];
        gemm(&a, View::transposed(2, 3), &a, View::row_major(2, 3), 0.0, &mut c);
        assert_eq!(c[0], 0.0 * 0.0 + 3.0 * 3.0);
        assert_eq!(c[5], 1.0 * 2.0 + 4.0 * 5.0);
    }

    #[test]
    fn dot_and_axpy() {
        let a: Vec<f32> = (0..19).map(|x| x as f32).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|x| (x * x) as f32).sum::<f32>());
        let mut y = vec![1.0f32; 19];
        axpy(2.0, &a, &mut y);
        assert_eq!(y[3], 7.0);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        for &(len, k, stride, pad) in &[(7, 3, 1, 1), (8, 2, 2, 0), (5, 3, 2, 2), (4, 1, 1, 0)] {
            let g = ConvGeom {
                c_in: 2,
                len,
                k,
                stride,
                pad,
                out_len: (len + 2 * pad - k) / stride + 1,
            };
            let x: Vec<f64> = (0..2 * len).map(|i| (i as f64).sin()).collect();
            let y: Vec<f64> = (0..g.rows() * g.out_len).map(|i| (i as f64 * 0.7).cos()).collect();
            let cols = im2col(&x, &g);
            let mut back = vec![0.0; x.len()];
            col2im(&y, &g, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{len} {k} {stride} {pad}");
        }
    }
}

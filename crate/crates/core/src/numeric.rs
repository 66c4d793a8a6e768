//! Small dense helpers shared by the integrators and the action code.
//!
//! Everything here works on flat row-major slices so the hot loops never
//! allocate. Larger decompositions (eigenvalues, SVD) go through `nalgebra`.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    libm::sqrt(dot(u, u))
}

#[inline]
pub fn dist(u: &[f64], v: &[f64]) -> f64 {
    libm::sqrt(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `out = m * v` for a row-major `d x d` matrix.
#[inline]
pub fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, o) in out.iter_mut().enumerate().take(d) {
        *o = dot(&m[i * d..(i + 1) * d], v);
    }
}

/// `out = m m^T` for a row-major `d x d` matrix.
pub fn outer_self(m: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = dot(&m[i * d..(i + 1) * d], &m[j * d..(j + 1) * d]);
        }
    }
}

/// In-place Cholesky factorisation of a symmetric positive definite matrix.
///
/// On success the lower triangle of `a` holds `L` with `a = L L^T`.
/// Returns `false` when a non-positive pivot is met.
pub fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0) || !s.is_finite() {
            return false;
        }
        let ljj = libm::sqrt(s);
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
    }
    true
}

/// Forward substitution `L y = b` with the factor produced by [`cholesky_in_place`].
pub fn forward_solve(l: &[f64], d: usize, b: &[f64], y: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
}

/// Real parts of the eigenvalues of a general row-major square matrix.
pub fn eigen_real_parts(m: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![m[0]];
    }
    let mat = DMatrix::from_row_slice(d, d, m);
    mat.complex_eigenvalues().iter().map(|z| z.re).collect()
}

/// Singular values of a row-major `d x d` matrix, in no particular order.
pub fn singular_values(m: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![libm::fabs(m[0])];
    }
    let mat = DMatrix::from_row_slice(d, d, m);
    mat.singular_values().iter().copied().collect()
}

/// Operator 2-norm of a row-major `d x d` matrix.
pub fn operator_norm(m: &[f64], d: usize) -> f64 {
    singular_values(m, d).into_iter().fold(0.0, f64::max)
}

/// Order-independent accumulator.
///
/// Terms are rounded to a 2^-64 fixed-point grid and summed in `i128`, so the
/// result is identical for every permutation of the inputs. Terms whose
/// magnitude exceeds 2^40 switch the accumulator into a sorted fallback.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    acc: i128,
    overflow: Vec<f64>,
}

const FIXED_SCALE: f64 = 18446744073709551616.0; // 2^64
const FIXED_LIMIT: f64 = 1099511627776.0; // 2^40

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if libm::fabs(x) <= FIXED_LIMIT {
            self.acc += libm::round(x * FIXED_SCALE) as i128;
        } else {
            self.overflow.push(x);
        }
    }

    pub fn value(&self) -> f64 {
        let mut big = self.overflow.clone();
        big.sort_by(|a, b| a.total_cmp(b));
        let hi: f64 = big.iter().sum();
        hi + (self.acc as f64) / FIXED_SCALE
    }
}

/// Sum that does not depend on the order of `values`.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = ExactSum::new();
    for v in values {
        s.add(v);
    }
    s.value()
}

/// Central finite-difference Jacobian of `f` at `x` (row-major, `J[i][j] = df_i/dx_j`).
pub fn fd_jacobian<F: Fn(&[f64], &mut [f64])>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        let step = h * f64::max(1.0, libm::fabs(x[j]));
        xp[j] = x[j] + step;
        f(&xp, &mut fp);
        xp[j] = x[j] - step;
        f(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac
}

/// Bisection for a sign change of `g` on `[lo, hi]`; assumes `g(lo)` and `g(hi)` differ in sign.
pub fn bisect<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> f64 {
    let mut glo = g(lo);
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if (gm > 0.0) == (glo > 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_quadratic_form_matches_inverse() {
        // A = [[4, 1], [1, 3]], A^-1 = 1/11 [[3, -1], [-1, 4]]
        let mut a = [4.0, 1.0, 1.0, 3.0];
        assert!(cholesky_in_place(&mut a, 2));
        let u = [1.0, 2.0];
        let mut y = [0.0; 2];
        forward_solve(&a, 2, &u, &mut y);
        let q = dot(&y, &y);
        let expected = (3.0 * 1.0 - 2.0 * 2.0 + 4.0 * 4.0) / 11.0;
        assert!((q - expected).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2));
    }

    #[test]
    fn eigen_real_parts_of_rotation_generator() {
        // [[-1, 2], [-2, -1]] has eigenvalues -1 ± 2i
        let re = eigen_real_parts(&[-1.0, 2.0, -2.0, -1.0], 2);
        assert!(re.iter().all(|r| (r + 1.0).abs() < 1e-12));
    }

    #[test]
    fn exact_sum_is_permutation_invariant() {
        let xs = [0.1, 1e-17, -3.3, 7.25, 1e-9, 2.0 / 3.0];
        let a = exact_sum(xs.iter().copied());
        let b = exact_sum(xs.iter().rev().copied());
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((a - xs.iter().sum::<f64>()).abs() < 1e-14);
    }
}

//! Dense complex matrices, LU with partial pivoting, BiCGSTAB and an
//! FFT-accelerated product with symmetric block-Toeplitz kernels.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `A x`
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `A^H y`
    pub fn matvec_adjoint(&self, y: &[C64]) -> Vec<C64> {
        assert_eq!(y.len(), self.rows, "adjoint matvec dimension mismatch");
        let mut out = vec![ZERO; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * yr;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Unconjugated dot product `Σ a_i b_i`.
#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    C64::new(re, im)
}

/// Conjugated dot product `Σ conj(a_i) b_i`.
#[inline]
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

pub fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `‖a - b‖ / ‖b‖`
pub fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    num / norm2(b)
}

/// LU factorization `P A = L U` of a square matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
    cond_estimate: f64,
}

impl LuFactor {
    pub fn new(a: ComplexMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Shape(format!("LU of a {}x{} matrix", a.rows, a.cols)));
        }
        let n = a.rows;
        let mut lu = a.data;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut max_pivot: f64 = 0.0;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (piv, piv_abs) = (k..n)
                .map(|r| (r, lu[r * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(piv_abs > 0.0) || !piv_abs.is_finite() {
                return Err(Error::Singular { cond_estimate: f64::INFINITY });
            }
            max_pivot = max_pivot.max(piv_abs);
            min_pivot = min_pivot.min(piv_abs);
            if piv != k {
                for c in 0..n {
                    lu.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
            }
            let inv = 1.0 / lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n + k + 1..k * n + n];
            for row in tail.chunks_exact_mut(n) {
                let l = row[k] * inv;
                row[k] = l;
                if l == ZERO {
                    continue;
                }
                for (dst, &u) in row[k + 1..].iter_mut().zip(pivot_row) {
                    // dst -= l * u, written out to keep the loop vectorizable
                    dst.re -= l.re * u.re - l.im * u.im;
                    dst.im -= l.re * u.im + l.im * u.re;
                }
            }
        }
        let cond_estimate = if n == 0 { 1.0 } else { max_pivot / min_pivot };
        if cond_estimate > 1e14 {
            return Err(Error::Singular { cond_estimate });
        }
        Ok(Self { n, lu, perm, cond_estimate })
    }

    /// Ratio of the largest to the smallest pivot magnitude.
    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        assert_eq!(b.len(), n, "LU solve dimension mismatch");
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu[i * n..i * n + i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu[i * n + i + 1..(i + 1) * n], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

/// Stabilized bi-conjugate gradient for `A x = b`, starting from `x0`.
///
/// Stops once `‖b - A x‖ <= tol ‖b‖`. Returns the solution and the number of
/// iterations used.
pub fn bicgstab<F>(apply: F, b: &[C64], x0: Option<&[C64]>, tol: f64, max_iter: usize) -> Result<(Vec<C64>, usize)>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![ZERO; n], 0));
    }
    let mut x = x0.map(<[C64]>::to_vec).unwrap_or_else(|| vec![ZERO; n]);
    let ax = apply(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let mut p = r.clone();
    let mut rho = cdot(&r_hat, &r);
    if norm2(&r) / bnorm <= tol {
        return Ok((x, 0));
    }
    for it in 1..=max_iter {
        let v = apply(&p);
        let denom = cdot(&r_hat, &v);
        if denom.norm() == 0.0 {
            break;
        }
        let alpha = rho / denom;
        let s: Vec<C64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm2(&s) / bnorm <= tol {
            for (xi, pi) in x.iter_mut().zip(&p) {
                *xi += alpha * pi;
            }
            return Ok((x, it));
        }
        let t = apply(&s);
        let tt = cdot(&t, &t);
        if tt.re == 0.0 {
            break;
        }
        let omega = cdot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) / bnorm <= tol {
            return Ok((x, it));
        }
        let rho_next = cdot(&r_hat, &r);
        if rho_next.norm() == 0.0 || omega.norm() == 0.0 {
            break;
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
    }
    // breakdown or budget exhausted: report the true residual
    let ax = apply(&x);
    let true_res = b.iter().zip(&ax).map(|(b, a)| (b - a).norm_sqr()).sum::<f64>().sqrt() / bnorm;
    if true_res <= tol {
        return Ok((x, max_iter));
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: true_res })
}

/// Restarted GMRES(`restart`) for `A x = b`, starting from `x0`. `max_iter`
/// counts matrix-vector products. Same stopping rule as [`bicgstab`].
pub fn gmres<F>(apply: F, b: &[C64], x0: Option<&[C64]>, restart: usize, tol: f64, max_iter: usize) -> Result<(Vec<C64>, usize)>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![ZERO; n], 0));
    }
    let m = restart.max(1);
    let mut x = x0.map(<[C64]>::to_vec).unwrap_or_else(|| vec![ZERO; n]);
    let mut used = 0;
    while used < max_iter {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm2(&r);
        let mut res = beta / bnorm;
        if res <= tol {
            return Ok((x, used));
        }
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg columns, reduced in place by Givens rotations
        let mut h: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut rot: Vec<(C64, C64)> = Vec::with_capacity(m);
        let mut g = vec![C64::new(beta, 0.0)];
        for j in 0..m {
            if used >= max_iter {
                break;
            }
            let mut w = apply(&basis[j]);
            used += 1;
            let mut col = Vec::with_capacity(j + 2);
            for v in &basis {
                let hij = cdot(v, &w);
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
                col.push(hij);
            }
            let hn = norm2(&w);
            col.push(C64::new(hn, 0.0));
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c.conj() * a + s.conj() * b;
                col[i + 1] = -s * a + c * b;
            }
            let (a, b) = (col[j], col[j + 1]);
            let d = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let (c, s) = if d == 0.0 { (C64::new(1.0, 0.0), ZERO) } else { (a / d, b / d) };
            col[j] = C64::new(d, 0.0);
            col[j + 1] = ZERO;
            let gj = g[j];
            g[j] = c.conj() * gj;
            g.push(-s * gj);
            rot.push((c, s));
            h.push(col);
            res = g[j + 1].norm() / bnorm;
            if res <= tol || hn == 0.0 {
                break;
            }
            basis.push(w.into_iter().map(|v| v / hn).collect());
        }
        // back substitution on the triangular system
        let k = h.len();
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for l in i + 1..k {
                acc -= h[l][i] * y[l];
            }
            y[i] = acc / h[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            for (xk, vk) in x.iter_mut().zip(v) {
                *xk += yi * vk;
            }
        }
        if res <= tol {
            break;
        }
    }
    let ax = apply(&x);
    let true_res = b.iter().zip(&ax).map(|(b, a)| (b - a).norm_sqr()).sum::<f64>().sqrt() / bnorm;
    if true_res <= tol * 1.0001 {
        return Ok((x, used));
    }
    Err(Error::NoConvergence { iterations: used, residual: true_res })
}

/// Product of a symmetric block-Toeplitz kernel with grid vectors on an
/// `ny × nx` row-major grid, via circulant embedding into `2ny × 2nx`.
///
/// `kernel(drow, dcol)` supplies the coupling between cells whose row and
/// column indices differ by `drow` and `dcol` (both non-negative).
pub struct ToeplitzConvolver {
    nx: usize,
    ny: usize,
    kernel_hat: Vec<C64>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl ToeplitzConvolver {
    pub fn new(ny: usize, nx: usize, kernel: impl Fn(usize, usize) -> C64) -> Self {
        let (mx, my) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::new();
        let fft_x = planner.plan_fft_forward(mx);
        let ifft_x = planner.plan_fft_inverse(mx);
        let fft_y = planner.plan_fft_forward(my);
        let ifft_y = planner.plan_fft_inverse(my);
        let mut k = vec![ZERO; mx * my];
        for r in 0..my {
            // wrap offsets: 0..ny-1 positive, ny is a padding row, ny+1.. negative
            let dr = if r < ny { r } else if r == ny { continue } else { my - r };
            for c in 0..mx {
                let dc = if c < nx { c } else if c == nx { continue } else { mx - c };
                k[r * mx + c] = kernel(dr, dc);
            }
        }
        let mut conv = Self { nx, ny, kernel_hat: Vec::new(), fft_x, ifft_x, fft_y, ifft_y };
        conv.fft2(&mut k, false);
        conv.kernel_hat = k;
        conv
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    fn fft2(&self, buf: &mut [C64], inverse: bool) {
        let (mx, my) = (2 * self.nx, 2 * self.ny);
        let (fx, fy) = if inverse { (&self.ifft_x, &self.ifft_y) } else { (&self.fft_x, &self.fft_y) };
        for row in buf.chunks_exact_mut(mx) {
            fx.process(row);
        }
        let mut col = vec![ZERO; my];
        for c in 0..mx {
            for r in 0..my {
                col[r] = buf[r * mx + c];
            }
            fy.process(&mut col);
            for r in 0..my {
                buf[r * mx + c] = col[r];
            }
        }
    }

    /// `y = K x` for `x` of length `ny * nx`.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let (nx, ny) = (self.nx, self.ny);
        assert_eq!(x.len(), nx * ny, "convolver input size mismatch");
        let mx = 2 * nx;
        let mut buf = vec![ZERO; mx * 2 * ny];
        for r in 0..ny {
            buf[r * mx..r * mx + nx].copy_from_slice(&x[r * nx..(r + 1) * nx]);
        }
        self.fft2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (buf.len() as f64);
        let mut out = Vec::with_capacity(nx * ny);
        for r in 0..ny {
            out.extend(buf[r * mx..r * mx + nx].iter().map(|z| z * scale));
        }
        out
    }
}

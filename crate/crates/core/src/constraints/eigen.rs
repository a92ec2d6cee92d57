//! Eigendecomposition of small real nonsymmetric matrices.
//!
//! Orthogonal Hessenberg reduction followed by the Francis double-shift QR
//! iteration with eigenvector back-substitution, after the EISPACK routines
//! `orthes` and `hqr2`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Cosine threshold below which an eigenvalue counts as ill-conditioned.
pub const CONDITION_THRESHOLD: f64 = 1e-8;

const MAX_ITER_PER_EIGENVALUE: usize = 60;

/// Eigenvalues with matched left and right eigenvectors.
///
/// Column `k` of `right` satisfies `A v = l v`; column `k` of `left`
/// satisfies `w^T A = l w^T` (an eigenvector of `A^T` for the same `l`).
/// Both are scaled to unit 2-norm.
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub eigenvalues: Vec<Complex64>,
    pub right: Array2<Complex64>,
    pub left: Array2<Complex64>,
    /// `|w^T v| / (|w| |v|) < CONDITION_THRESHOLD`, i.e. the eigenvalue is
    /// (nearly) defective and its derivative is not usable.
    pub ill_conditioned: Vec<bool>,
}

impl EigenResult {
    /// `w_k^T v_k`.
    pub fn pairing(&self, k: usize) -> Complex64 {
        self.left
            .column(k)
            .iter()
            .zip(self.right.column(k))
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// Eigenvalues and right eigenvectors only.
#[derive(Clone, Debug)]
pub struct RightEigen {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: Array2<Complex64>,
}

fn check_input(a: &Tensor) -> Result<usize> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigen solver input".into()));
    }
    Ok(rows)
}

/// Full decomposition; left vectors come from the transposed problem.
pub fn eig_nonsymmetric(a: &Tensor) -> Result<EigenResult> {
    let n = check_input(a)?;
    let right = eig_right(a)?;
    let transposed = eig_right(&a.t().to_owned())?;

    // Match each eigenvalue of A with the nearest unused one of A^T.
    let mut used = vec![false; n];
    let mut left = Array2::<Complex64>::zeros((n, n));
    for (k, &lambda) in right.eigenvalues.iter().enumerate() {
        let j = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&i, &j| {
                let di = (transposed.eigenvalues[i] - lambda).norm();
                let dj = (transposed.eigenvalues[j] - lambda).norm();
                di.total_cmp(&dj)
            })
            .expect("one unused eigenvalue per column");
        used[j] = true;
        left.column_mut(k).assign(&transposed.vectors.column(j));
    }

    let mut result = EigenResult {
        eigenvalues: right.eigenvalues,
        right: right.vectors,
        left,
        ill_conditioned: vec![false; n],
    };
    for k in 0..n {
        // Both vectors have unit norm.
        result.ill_conditioned[k] = result.pairing(k).norm() < CONDITION_THRESHOLD;
    }
    Ok(result)
}

/// Eigenvalues of `a` (unordered).
pub fn eigenvalues(a: &Tensor) -> Result<Vec<Complex64>> {
    Ok(eig_right(a)?.eigenvalues)
}

/// Eigenvalues and unit-norm right eigenvectors.
pub fn eig_right(a: &Tensor) -> Result<RightEigen> {
    let n = check_input(a)?;
    if n == 0 {
        return Ok(RightEigen {
            eigenvalues: Vec::new(),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let mut s = Schur::new(a);
    s.orthes();
    s.hqr2()?;

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = Array2::<Complex64>::zeros((n, n));
    let mut k = 0;
    while k < n {
        if s.e[k] > 0.0 && k + 1 < n {
            let lambda = Complex64::new(s.d[k], s.e[k]);
            for i in 0..n {
                let v = Complex64::new(s.v[[i, k]], s.v[[i, k + 1]]);
                vectors[[i, k]] = v;
                vectors[[i, k + 1]] = v.conj();
            }
            eigenvalues.push(lambda);
            eigenvalues.push(lambda.conj());
            k += 2;
        } else {
            for i in 0..n {
                vectors[[i, k]] = Complex64::new(s.v[[i, k]], 0.0);
            }
            eigenvalues.push(Complex64::new(s.d[k], 0.0));
            k += 1;
        }
    }
    for mut col in vectors.columns_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|z| z / norm);
        }
    }
    Ok(RightEigen {
        eigenvalues,
        vectors,
    })
}

struct Schur {
    n: usize,
    h: Tensor,
    v: Tensor,
    d: Vec<f64>,
    e: Vec<f64>,
    ort: Vec<f64>,
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

impl Schur {
    fn new(a: &Tensor) -> Self {
        let n = a.nrows();
        Self {
            n,
            h: a.clone(),
            v: Tensor::eye(n),
            d: vec![0.0; n],
            e: vec![0.0; n],
            ort: vec![0.0; n],
        }
    }

    /// Householder reduction to upper Hessenberg form, accumulating the
    /// orthogonal transform in `v`.
    fn orthes(&mut self) {
        let n = self.n;
        let high = n - 1;
        let h = &mut self.h;
        let ort = &mut self.ort;

        for m in 1..high {
            let scale: f64 = (m..=high).map(|i| h[[i, m - 1]].abs()).sum();
            if scale == 0.0 {
                continue;
            }
            let mut hh = 0.0;
            for i in (m..=high).rev() {
                ort[i] = h[[i, m - 1]] / scale;
                hh += ort[i] * ort[i];
            }
            let mut g = hh.sqrt();
            if ort[m] > 0.0 {
                g = -g;
            }
            hh -= ort[m] * g;
            ort[m] -= g;

            for j in m..n {
                let mut f = 0.0;
                for i in (m..=high).rev() {
                    f += ort[i] * h[[i, j]];
                }
                f /= hh;
                for i in m..=high {
                    h[[i, j]] -= f * ort[i];
                }
            }
            for i in 0..=high {
                let mut f = 0.0;
                for j in (m..=high).rev() {
                    f += ort[j] * h[[i, j]];
                }
                f /= hh;
                for j in m..=high {
                    h[[i, j]] -= f * ort[j];
                }
            }
            ort[m] *= scale;
            h[[m, m - 1]] = scale * g;
        }

        let v = &mut self.v;
        for m in (1..high).rev() {
            if h[[m, m - 1]] == 0.0 {
                continue;
            }
            for i in m + 1..=high {
                ort[i] = h[[i, m - 1]];
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += ort[i] * v[[i, j]];
                }
                // Double division avoids possible underflow.
                g = (g / ort[m]) / h[[m, m - 1]];
                for i in m..=high {
                    v[[i, j]] += g * ort[i];
                }
            }
        }
    }

    /// Real Schur form by shifted QR, then eigenvectors by
    /// back-substitution. Signed indices follow the original algorithm,
    /// which counts down past zero.
    #[allow(clippy::many_single_char_names)]
    fn hqr2(&mut self) -> Result<()> {
        let nn = self.n as isize;
        let low: isize = 0;
        let high: isize = nn - 1;
        let eps = f64::EPSILON;
        let Schur { h, v, d, e, .. } = self;

        macro_rules! h {
            ($i:expr, $j:expr) => {
                h[[($i) as usize, ($j) as usize]]
            };
        }
        macro_rules! v {
            ($i:expr, $j:expr) => {
                v[[($i) as usize, ($j) as usize]]
            };
        }

        let mut n = nn - 1;
        let mut exshift = 0.0;
        let (mut p, mut q, mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let (mut t, mut w, mut x, mut y): (f64, f64, f64, f64);

        let mut norm = 0.0;
        for i in 0..nn {
            for j in (i - 1).max(0)..nn {
                norm += h!(i, j).abs();
            }
        }

        let mut iter = 0;
        while n >= low {
            let mut l = n;
            while l > low {
                s = h!(l - 1, l - 1).abs() + h!(l, l).abs();
                if s == 0.0 {
                    s = norm;
                }
                if h!(l, l - 1).abs() <= eps * s {
                    break;
                }
                l -= 1;
            }

            if l == n {
                // One root.
                h!(n, n) += exshift;
                d[n as usize] = h!(n, n);
                e[n as usize] = 0.0;
                n -= 1;
                iter = 0;
            } else if l == n - 1 {
                // Two roots.
                w = h!(n, n - 1) * h!(n - 1, n);
                p = (h!(n - 1, n - 1) - h!(n, n)) / 2.0;
                q = p * p + w;
                z = q.abs().sqrt();
                h!(n, n) += exshift;
                h!(n - 1, n - 1) += exshift;
                x = h!(n, n);

                if q >= 0.0 {
                    z = if p >= 0.0 { p + z } else { p - z };
                    d[(n - 1) as usize] = x + z;
                    d[n as usize] = d[(n - 1) as usize];
                    if z != 0.0 {
                        d[n as usize] = x - w / z;
                    }
                    e[(n - 1) as usize] = 0.0;
                    e[n as usize] = 0.0;
                    x = h!(n, n - 1);
                    s = x.abs() + z.abs();
                    p = x / s;
                    q = z / s;
                    r = (p * p + q * q).sqrt();
                    p /= r;
                    q /= r;

                    for j in n - 1..nn {
                        z = h!(n - 1, j);
                        h!(n - 1, j) = q * z + p * h!(n, j);
                        h!(n, j) = q * h!(n, j) - p * z;
                    }
                    for i in 0..=n {
                        z = h!(i, n - 1);
                        h!(i, n - 1) = q * z + p * h!(i, n);
                        h!(i, n) = q * h!(i, n) - p * z;
                    }
                    for i in low..=high {
                        z = v!(i, n - 1);
                        v!(i, n - 1) = q * z + p * v!(i, n);
                        v!(i, n) = q * v!(i, n) - p * z;
                    }
                } else {
                    d[(n - 1) as usize] = x + p;
                    d[n as usize] = x + p;
                    e[(n - 1) as usize] = z;
                    e[n as usize] = -z;
                }
                n -= 2;
                iter = 0;
            } else {
                x = h!(n, n);
                y = 0.0;
                w = 0.0;
                if l < n {
                    y = h!(n - 1, n - 1);
                    w = h!(n, n - 1) * h!(n - 1, n);
                }

                // Exceptional shifts.
                if iter == 10 {
                    exshift += x;
                    for i in low..=n {
                        h!(i, i) -= x;
                    }
                    s = h!(n, n - 1).abs() + h!(n - 1, n - 2).abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }
                if iter == 30 {
                    s = (y - x) / 2.0;
                    s = s * s + w;
                    if s > 0.0 {
                        s = s.sqrt();
                        if y < x {
                            s = -s;
                        }
                        s = x - w / ((y - x) / 2.0 + s);
                        for i in low..=n {
                            h!(i, i) -= s;
                        }
                        exshift += s;
                        x = 0.964;
                        y = x;
                        w = x;
                    }
                }

                iter += 1;
                if iter > MAX_ITER_PER_EIGENVALUE {
                    return Err(Error::NoConvergence(iter));
                }

                // Look for two consecutive small sub-diagonal elements.
                let mut m = n - 2;
                while m >= l {
                    z = h!(m, m);
                    r = x - z;
                    s = y - z;
                    p = (r * s - w) / h!(m + 1, m) + h!(m, m + 1);
                    q = h!(m + 1, m + 1) - z - r - s;
                    r = h!(m + 2, m + 1);
                    s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    let lhs = h!(m, m - 1).abs() * (q.abs() + r.abs());
                    let rhs = eps * (p.abs() * (h!(m - 1, m - 1).abs() + z.abs() + h!(m + 1, m + 1).abs()));
                    if lhs < rhs {
                        break;
                    }
                    m -= 1;
                }

                for i in m + 2..=n {
                    h!(i, i - 2) = 0.0;
                    if i > m + 2 {
                        h!(i, i - 3) = 0.0;
                    }
                }

                // Double QR step on rows l..=n, columns m..=n.
                let mut k = m;
                while k < n {
                    let notlast = k != n - 1;
                    if k != m {
                        p = h!(k, k - 1);
                        q = h!(k + 1, k - 1);
                        r = if notlast { h!(k + 2, k - 1) } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x == 0.0 {
                            k += 1;
                            continue;
                        }
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                    s = (p * p + q * q + r * r).sqrt();
                    if p < 0.0 {
                        s = -s;
                    }
                    if s != 0.0 {
                        if k != m {
                            h!(k, k - 1) = -s * x;
                        } else if l != m {
                            h!(k, k - 1) = -h!(k, k - 1);
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        z = r / s;
                        q /= p;
                        r /= p;

                        for j in k..nn {
                            p = h!(k, j) + q * h!(k + 1, j);
                            if notlast {
                                p += r * h!(k + 2, j);
                                h!(k + 2, j) -= p * z;
                            }
                            h!(k, j) -= p * x;
                            h!(k + 1, j) -= p * y;
                        }
                        for i in 0..=n.min(k + 3) {
                            p = x * h!(i, k) + y * h!(i, k + 1);
                            if notlast {
                                p += z * h!(i, k + 2);
                                h!(i, k + 2) -= p * r;
                            }
                            h!(i, k) -= p;
                            h!(i, k + 1) -= p * q;
                        }
                        for i in low..=high {
                            p = x * v!(i, k) + y * v!(i, k + 1);
                            if notlast {
                                p += z * v!(i, k + 2);
                                v!(i, k + 2) -= p * r;
                            }
                            v!(i, k) -= p;
                            v!(i, k + 1) -= p * q;
                        }
                    }
                    k += 1;
                }
            }
        }

        if norm == 0.0 {
            return Ok(());
        }

        // Back-substitute for the eigenvectors of the triangular form.
        for n in (0..nn).rev() {
            p = d[n as usize];
            q = e[n as usize];

            if q == 0.0 {
                let mut l = n;
                h!(n, n) = 1.0;
                for i in (0..n).rev() {
                    w = h!(i, i) - p;
                    r = 0.0;
                    for j in l..=n {
                        r += h!(i, j) * h!(j, n);
                    }
                    if e[i as usize] < 0.0 {
                        z = w;
                        s = r;
                    } else {
                        l = i;
                        if e[i as usize] == 0.0 {
                            h!(i, n) = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                        } else {
                            x = h!(i, i + 1);
                            y = h!(i + 1, i);
                            let di = d[i as usize] - p;
                            q = di * di + e[i as usize] * e[i as usize];
                            t = (x * s - z * r) / q;
                            h!(i, n) = t;
                            h!(i + 1, n) = if x.abs() > z.abs() {
                                (-r - w * t) / x
                            } else {
                                (-s - y * t) / z
                            };
                        }
                        t = h!(i, n).abs();
                        if (eps * t) * t > 1.0 {
                            for j in i..=n {
                                h!(j, n) /= t;
                            }
                        }
                    }
                }
            } else if q < 0.0 {
                let mut l = n - 1;
                if h!(n, n - 1).abs() > h!(n - 1, n).abs() {
                    h!(n - 1, n - 1) = q / h!(n, n - 1);
                    h!(n - 1, n) = -(h!(n, n) - p) / h!(n, n - 1);
                } else {
                    let (cr, ci) = cdiv(0.0, -h!(n - 1, n), h!(n - 1, n - 1) - p, q);
                    h!(n - 1, n - 1) = cr;
                    h!(n - 1, n) = ci;
                }
                h!(n, n - 1) = 0.0;
                h!(n, n) = 1.0;
                for i in (0..n - 1).rev() {
                    let (mut ra, mut sa) = (0.0, 0.0);
                    for j in l..=n {
                        ra += h!(i, j) * h!(j, n - 1);
                        sa += h!(i, j) * h!(j, n);
                    }
                    w = h!(i, i) - p;

                    if e[i as usize] < 0.0 {
                        z = w;
                        r = ra;
                        s = sa;
                    } else {
                        l = i;
                        if e[i as usize] == 0.0 {
                            let (cr, ci) = cdiv(-ra, -sa, w, q);
                            h!(i, n - 1) = cr;
                            h!(i, n) = ci;
                        } else {
                            x = h!(i, i + 1);
                            y = h!(i + 1, i);
                            let di = d[i as usize] - p;
                            let mut vr = di * di + e[i as usize] * e[i as usize] - q * q;
                            let vi = di * 2.0 * q;
                            if vr == 0.0 && vi == 0.0 {
                                vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                            }
                            let (cr, ci) = cdiv(
                                x * r - z * ra + q * sa,
                                x * s - z * sa - q * ra,
                                vr,
                                vi,
                            );
                            h!(i, n - 1) = cr;
                            h!(i, n) = ci;
                            if x.abs() > z.abs() + q.abs() {
                                h!(i + 1, n - 1) = (-ra - w * h!(i, n - 1) + q * h!(i, n)) / x;
                                h!(i + 1, n) = (-sa - w * h!(i, n) - q * h!(i, n - 1)) / x;
                            } else {
                                let (cr, ci) =
                                    cdiv(-r - y * h!(i, n - 1), -s - y * h!(i, n), z, q);
                                h!(i + 1, n - 1) = cr;
                                h!(i + 1, n) = ci;
                            }
                        }
                        t = h!(i, n - 1).abs().max(h!(i, n).abs());
                        if (eps * t) * t > 1.0 {
                            for j in i..=n {
                                h!(j, n - 1) /= t;
                                h!(j, n) /= t;
                            }
                        }
                    }
                }
            }
        }

        // Back-transform to eigenvectors of the original matrix.
        for j in (low..nn).rev() {
            for i in low..=high {
                z = 0.0;
                for k in low..=j.min(high) {
                    z += v!(i, k) * h!(k, j);
                }
                v!(i, j) = z;
            }
        }
        Ok(())
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(b: &Tensor) -> Result<Tensor> {
    let (rows, cols) = b.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let n = rows;
    for i in 0..n {
        for j in 0..i {
            if (b[[i, j]] - b[[j, i]]).abs() > 1e-12 * (b[[i, j]].abs() + b[[j, i]].abs()).max(1.0) {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    let mut l = Tensor::zeros((n, n));
    for j in 0..n {
        let mut diag = b[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = diag.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut sum = b[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = sum / djj;
        }
    }
    Ok(l)
}

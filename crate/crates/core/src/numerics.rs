//! Small dense kernels: upper-triangular projection, a general real
//! eigensolver, spectral radius, and central-difference Jacobians.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigenvalue stored as an explicit `(re, im)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn real(re: f64) -> Self {
        Eigenvalue { re, im: 0.0 }
    }

    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// All eigenvalues of a square real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Eigenvalue>,
}

impl Spectrum {
    pub fn from_real(values: impl IntoIterator<Item = f64>) -> Self {
        Spectrum { eigenvalues: values.into_iter().map(Eigenvalue::real).collect() }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(Eigenvalue::modulus).fold(0.0, f64::max)
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.im.abs()).fold(0.0, f64::max)
    }

    /// Real parts sorted ascending.
    pub fn sorted_real_parts(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigenvalues.iter().map(|e| e.re).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Largest relative deviation between two real multisets after sorting,
    /// `|a_i - b_i| / max(1, |b_i|)`. `None` if the lengths differ.
    pub fn real_multiset_distance(&self, other: &Spectrum) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        let a = self.sorted_real_parts();
        let b = other.sorted_real_parts();
        Some(a.iter().zip(&b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max))
    }
}

fn require_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.nrows())
}

/// Keeps the diagonal and everything above it; zeroes the strictly lower part.
pub fn upper_tri(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(a)?;
    Ok(a.upper_triangle())
}

/// Eigenvalues via balancing, Householder reduction to upper Hessenberg form
/// and Francis double-shift QR with deflation.
pub fn eigenvalues_dense(a: &DMatrix<f64>) -> Result<Spectrum> {
    let n = require_square(a)?;
    if n == 0 {
        return Ok(Spectrum { eigenvalues: Vec::new() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    hqr(&mut h)
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues_dense(a)?.spectral_radius())
}

/// Parlett–Reinsch balancing with radix-2 scalings (exact in binary).
fn balance(a: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// In-place Householder reduction to upper Hessenberg form (similarity).
fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let alpha: f64 = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let beta = if x0 >= 0.0 { -alpha } else { alpha };
        for i in k + 1..n {
            v[i] = a[(i, k)];
        }
        v[k + 1] -= beta;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- P A with P = I - 2 v vᵀ / (vᵀ v)
        for j in 0..n {
            let dot: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k + 1..n {
                a[(i, j)] -= f * v[i];
            }
        }
        // A <- A P
        for i in 0..n {
            let dot: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in k + 1..n {
                a[(i, j)] -= f * v[j];
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys `a`).
fn hqr(a: &mut DMatrix<f64>) -> Result<Spectrum> {
    let n = a.nrows();
    let eps = f64::EPSILON;
    let max_sweeps = 100 * n.max(1);
    let mut out = vec![Eigenvalue::real(0.0); n];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut its = 0usize;
    let mut sweeps = 0usize;
    while nn >= 0 {
        let nu = nn as usize;
        // look for a negligible subdiagonal element
        let mut l = nu;
        while l > 0 {
            let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[(l, l - 1)].abs() <= eps * s {
                a[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = a[(nu, nu)];
        if l == nu {
            out[nu] = Eigenvalue::real(x + t);
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[(nu - 1, nu - 1)];
        let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
        if l == nu - 1 {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let mut z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                z = p + sign(z, p);
                out[nu - 1] = Eigenvalue::real(x + z);
                out[nu] = Eigenvalue::real(if z != 0.0 { x - w / z } else { x + z });
            } else {
                out[nu - 1] = Eigenvalue { re: x + p, im: z };
                out[nu] = Eigenvalue { re: x + p, im: -z };
            }
            nn -= 2;
            its = 0;
            continue;
        }

        if sweeps >= max_sweeps {
            return Err(Error::EigenNoConvergence(sweeps));
        }
        if its == 10 || its == 20 {
            // exceptional shift
            t += x;
            for i in 0..=nu {
                a[(i, i)] -= x;
            }
            let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        sweeps += 1;

        // form the shift and look for two consecutive small subdiagonals
        let mut m = nu - 2;
        let (mut p, mut q, mut r);
        loop {
            let z = a[(m, m)];
            let rr = x - z;
            let ss = y - z;
            p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
            q = a[(m + 1, m + 1)] - z - rr - ss;
            r = a[(m + 2, m + 1)];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
            if u <= eps * v {
                break;
            }
            m -= 1;
        }
        for i in m..nu - 1 {
            a[(i + 2, i)] = 0.0;
            if i != m {
                a[(i + 2, i - 1)] = 0.0;
            }
        }
        // double QR step on rows l..=nn, columns m..=nn
        for k in m..nu {
            if k != m {
                p = a[(k, k - 1)];
                q = a[(k + 1, k - 1)];
                r = if k + 1 != nu { a[(k + 2, k - 1)] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = sign((p * p + q * q + r * r).sqrt(), p);
            if s == 0.0 {
                continue;
            }
            if k == m {
                if l != m {
                    a[(k, k - 1)] = -a[(k, k - 1)];
                }
            } else {
                a[(k, k - 1)] = -s * x;
            }
            p += s;
            x = p / s;
            y = q / s;
            let z = r / s;
            q /= p;
            r /= p;
            for j in k..=nu {
                let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                if k + 1 != nu {
                    pp += r * a[(k + 2, j)];
                    a[(k + 2, j)] -= pp * z;
                }
                a[(k + 1, j)] -= pp * y;
                a[(k, j)] -= pp * x;
            }
            let mmin = if nu < k + 3 { nu } else { k + 3 };
            for i in l..=mmin {
                let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                if k + 1 != nu {
                    pp += z * a[(i, k + 2)];
                    a[(i, k + 2)] -= pp * r;
                }
                a[(i, k + 1)] -= pp * q;
                a[(i, k)] -= pp;
            }
        }
    }
    Ok(Spectrum { eigenvalues: out })
}

/// Step used when the caller does not supply one: `eps^(1/3) · max(1, ‖x‖∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    f64::EPSILON.cbrt() * scale
}

/// Central-difference Jacobian of `f: R^k -> R^p`; column `j` is
/// `(f(x + h e_j) - f(x - h e_j)) / 2h`.
pub fn fd_jacobian<F, E>(mut f: F, x: &[f64], h: f64) -> std::result::Result<DMatrix<f64>, E>
where
    F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, E>,
{
    let k = x.len();
    let mut jac = DMatrix::zeros(0, k);
    let mut probe = x.to_vec();
    for j in 0..k {
        probe[j] = x[j] + h;
        let plus = f(&probe)?;
        probe[j] = x[j] - h;
        let minus = f(&probe)?;
        probe[j] = x[j];
        if j == 0 {
            jac = DMatrix::zeros(plus.len(), k);
        }
        for i in 0..jac.nrows() {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

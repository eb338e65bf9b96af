//! Real polynomials in descending-power coefficient order (`[a_n, ..., a_1, a_0]`).

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Drops leading zero coefficients. An all-zero polynomial becomes `[0.0]`.
pub fn trim(p: &[f64]) -> Vec<f64> {
    match p.iter().position(|c| *c != 0.0) {
        Some(i) => p[i..].to_vec(),
        None => vec![0.0],
    }
}

pub fn degree(p: &[f64]) -> usize {
    trim(p).len() - 1
}

pub fn eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter().fold(Complex64::zero(), |acc, c| acc * s + *c)
}

pub fn eval_real(p: &[f64], x: f64) -> f64 {
    p.iter().fold(0.0, |acc, c| acc * x + c)
}

/// `sum |a_k| |s|^k`, the natural scale for judging cancellation in `eval`.
pub fn eval_magnitude_bound(p: &[f64], s: Complex64) -> f64 {
    let r = s.norm();
    p.iter().fold(0.0, |acc, c| acc * r + c.abs())
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, x) in a.iter().enumerate() {
        out[n - a.len() + i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[n - b.len() + i] += y;
    }
    out
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    add(a, &scale(b, -1.0))
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

pub fn pow(a: &[f64], n: usize) -> Vec<f64> {
    (0..n).fold(vec![1.0], |acc, _| mul(&acc, a))
}

/// Polynomial long division: returns `(quotient, remainder)`.
pub fn divmod(num: &[f64], den: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let den = trim(den);
    if den[0] == 0.0 {
        return Err(Error::invalid("division by the zero polynomial"));
    }
    let mut rem = trim(num);
    if rem.len() < den.len() {
        return Ok((vec![0.0], rem));
    }
    let qlen = rem.len() - den.len() + 1;
    let mut q = vec![0.0; qlen];
    for i in 0..qlen {
        let c = rem[i] / den[0];
        q[i] = c;
        for (j, d) in den.iter().enumerate() {
            rem[i + j] -= c * d;
        }
    }
    let r = rem[qlen..].to_vec();
    Ok((q, if r.is_empty() { vec![0.0] } else { r }))
}

/// Monic real polynomial with the given roots. Complex roots must come in conjugate pairs;
/// residual imaginary parts from rounding are discarded.
pub fn from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::zero(); c.len() + 1];
        for (i, a) in c.iter().enumerate() {
            next[i] += *a;
            next[i + 1] -= *a * r;
        }
        c = next;
    }
    c.iter().map(|z| z.re).collect()
}

/// All complex roots of `p`.
///
/// Uses the eigenvalues of a frequency-scaled companion matrix followed by Newton polishing on
/// the original coefficients, which keeps relative accuracy when root magnitudes span many
/// decades (controller polynomials routinely mix 1e0 and 1e5 rad/s roots).
pub fn roots(p: &[f64]) -> Result<Vec<Complex64>> {
    let p = trim(p);
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("polynomial has non-finite coefficients"));
    }
    let mut n = p.len() - 1;
    let mut out = Vec::with_capacity(n);
    // Exact roots at zero.
    let mut q = p.clone();
    while n > 0 && q[n] == 0.0 {
        out.push(Complex64::zero());
        q.pop();
        n -= 1;
    }
    if n == 0 {
        return Ok(out);
    }
    let sigma = (q[n] / q[0]).abs().powf(1.0 / n as f64);
    let sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1.0 };
    // Monic polynomial in x = s / sigma.
    let monic: Vec<f64> = (0..=n).map(|k| q[k] / q[0] / sigma.powi(k as i32)).collect();
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -monic[j + 1];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    let eig = crate::linalg::eigenvalues(&comp)?;
    for z in eig {
        out.push(polish(&q, z * sigma));
    }
    Ok(out)
}

fn polish(p: &[f64], mut z: Complex64) -> Complex64 {
    let dp = derivative(p);
    let mut best = eval(p, z).norm();
    for _ in 0..8 {
        let f = eval(p, z);
        let d = eval(&dp, z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - f / d;
        let r = eval(p, cand).norm();
        if !(r < best) {
            break;
        }
        best = r;
        z = cand;
    }
    z
}

pub fn derivative(p: &[f64]) -> Vec<f64> {
    let n = p.len() - 1;
    if n == 0 {
        return vec![0.0];
    }
    p[..n].iter().enumerate().map(|(i, c)| c * (n - i) as f64).collect()
}

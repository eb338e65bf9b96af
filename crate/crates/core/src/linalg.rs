//! Small dense linear algebra helpers.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`; on return `b` holds `x`.
pub fn solve_complex(a: &mut [Complex64], b: &mut [Complex64]) -> Result<()> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::invalid("matrix and right-hand side sizes disagree"));
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for col in 0..n {
        let (piv, pmag) = (col..n)
            .map(|r| (r, a[r * n + col].norm()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmag <= scale * 1e-14 || pmag == 0.0 {
            return Err(Error::Degenerate("singular linear system".into()));
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f.is_zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = m.nrows();
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-15, 10_000 * n.max(1))
        .ok_or(Error::NonConvergence {
            what: "Schur decomposition",
            iterations: 10_000 * n.max(1),
            residual: f64::NAN,
            history: Vec::new(),
            last_iterate: Vec::new(),
        })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Right (`transpose = false`) or left eigenvector of `m` for eigenvalue `lambda`, by inverse
/// iteration on a slightly shifted complex matrix. Normalised to unit 2-norm.
pub fn eigenvector(m: &DMatrix<f64>, lambda: Complex64, transpose: bool) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    let norm = m.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let shift = lambda + Complex64::new(norm * 1e-10, norm * 1e-10);
    let mut base = vec![Complex64::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let v = if transpose { m[(j, i)] } else { m[(i, j)] };
            base[i * n + j] = Complex64::new(v, 0.0);
        }
        base[i * n + i] -= shift;
    }
    let mut x: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.05)).collect();
    for _ in 0..3 {
        let mut a = base.clone();
        solve_complex(&mut a, &mut x)?;
        let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::Degenerate("eigenvector iteration collapsed".into()));
        }
        for z in x.iter_mut() {
            *z /= nrm;
        }
    }
    Ok(x)
}

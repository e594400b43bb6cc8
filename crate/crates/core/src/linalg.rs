//! Dense linear-algebra helpers shared by the analysis and synthesis modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` (or its complex
//! counterpart) and is sized for desk-scale problems (n <= 16).

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// Entries of canonical / Brunovsky matrices closer than this to 0 or 1 are
/// snapped to the exact structural value.
pub const STRUCTURE_TOL: f64 = 1e-8;
/// Row-norm threshold for "C_k A^j B is nonzero".
pub const NONZERO_TOL: f64 = 1e-9;
/// Absolute distance at which a zero and an exosystem eigenvalue coincide.
pub const COINCIDENCE_TOL: f64 = 1e-6;
/// Condition number above which a matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;
/// An eigenvalue counts as stable when its real part is below this.
pub const HURWITZ_MARGIN: f64 = -1e-9;
/// `sigma_min / scale` below this marks a matrix as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Relative rank threshold: max(rows, cols) * sigma_max * eps * 64.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON * 64.0
}

pub fn singular_values(m: &Mat) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

pub fn rank(m: &Mat) -> usize {
    let sv = singular_values(m);
    count_above(&sv, m.nrows(), m.ncols())
}

pub fn rank_complex(m: &CMat) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    count_above(&sv, m.nrows(), m.ncols())
}

fn count_above(sv: &DVector<f64>, rows: usize, cols: usize) -> usize {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(rows, cols, smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// 2-norm condition number; `f64::INFINITY` for singular input.
pub fn condition(m: &Mat) -> f64 {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 || !smin.is_finite() {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(m: &Mat) -> f64 {
    singular_values(m)
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of a general real matrix, sorted by (re, im).
pub fn eigenvalues(m: &Mat) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().cloned().collect();
    sort_complex(&mut ev);
    ev
}

pub fn sort_complex(v: &mut [Complex64]) {
    v.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

pub fn is_hurwitz(eigs: &[Complex64]) -> bool {
    eigs.iter().all(|z| z.re < HURWITZ_MARGIN)
}

/// Roots of `c[0] + c[1] s + ... + c[d] s^d` via companion-matrix eigenvalues.
/// Leading zero coefficients must already be trimmed by the caller.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let d = coeffs.len().saturating_sub(1);
    if d == 0 {
        return Vec::new();
    }
    let lead = coeffs[d];
    let mut comp = Mat::zeros(d, d);
    for i in 0..d - 1 {
        comp[(i, i + 1)] = 1.0;
    }
    for j in 0..d {
        comp[(d - 1, j)] = -coeffs[j] / lead;
    }
    eigenvalues(&comp)
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Ascending coefficients of the monic polynomial with the given roots.
/// Complex roots must come in conjugate pairs for a real result.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= ci * r;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}

pub fn mat_pow(s: &Mat, k: usize) -> Mat {
    let mut out = Mat::identity(s.nrows(), s.ncols());
    for _ in 0..k {
        out = &out * s;
    }
    out
}

/// `c[0] I + c[1] S + ... + c[d] S^d` by Horner's rule.
pub fn mat_poly(coeffs: &[f64], s: &Mat) -> Mat {
    let r = s.nrows();
    let mut acc = Mat::zeros(r, r);
    for &c in coeffs.iter().rev() {
        acc = &acc * s + Mat::identity(r, r) * c;
    }
    acc
}

/// Solves `x M = rhs` for the row vector `x` with partially pivoted LU.
pub fn solve_row(m: &Mat, rhs: &RowDVector<f64>) -> Option<RowDVector<f64>> {
    let lu = m.transpose().lu();
    lu.solve(&rhs.transpose()).map(|x| x.transpose())
}

/// `(sigma_min, condition, regular)`; regular means well conditioned and
/// `sigma_min` not negligible against `scale`, an a-priori bound on `|m|`.
pub fn regularity(m: &Mat, scale: f64) -> (f64, f64, bool) {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let regular = condition <= COND_LIMIT && smin > SINGULAR_TOL * scale.max(smax);
    (smin, condition, regular)
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    let cond = condition(m);
    if cond > COND_LIMIT {
        return Err(Error::Numerical(format!(
            "{what} is singular or ill-conditioned (condition {cond:.3e})"
        )));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("{what} is not invertible")))
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// True when `a` and `b` agree as multisets up to `tol` (greedy nearest pairing).
pub fn multiset_match(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    for x in a {
        let best = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.partial_cmp(&q.1).unwrap_or(std::cmp::Ordering::Equal));
        match best {
            Some((j, d)) if d <= tol => used[j] = true,
            _ => return false,
        }
    }
    true
}

/// Rows `rows` of `m` stacked into a new matrix.
pub fn select_rows(m: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Start offsets of consecutive blocks with the given sizes.
pub fn offsets(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect()
}

//! Relative degrees, Rosenbrock-pencil tests, invariant zeros and the
//! `M_k` matrices whose regularity decides solvability of the regulator
//! equations.

use nalgebra::RowDVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::canonical::{self, brunovsky_pattern};
use crate::error::{Error, Result};
use crate::json;
use crate::linalg::{self, CMat, Mat, NONZERO_TOL, STRUCTURE_TOL};
use crate::model::{Exosystem, LinearSystem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeDegrees {
    pub deltas: Vec<usize>,
    pub total: usize,
    /// Decoupling matrix with rows `C_k A^{delta_k - 1} B`.
    #[serde(rename = "Dstar", with = "json::matrix")]
    pub dstar: Mat,
}

impl RelativeDegrees {
    /// Rows `C_k A^{delta_k}` (how the state enters each `y_k^(delta_k)`).
    pub fn state_rows(&self, sys: &LinearSystem) -> Mat {
        let rows: Vec<RowDVector<f64>> = self
            .deltas
            .iter()
            .enumerate()
            .map(|(k, &d)| sys.c().row(k) * linalg::mat_pow(sys.a(), d))
            .collect();
        Mat::from_rows(&rows)
    }
}

pub fn relative_degrees(sys: &LinearSystem) -> Result<RelativeDegrees> {
    let n = sys.n();
    let mut deltas = Vec::with_capacity(sys.m());
    let mut dstar_rows = Vec::with_capacity(sys.m());
    for k in 0..sys.m() {
        let mut row = sys.c().row(k).into_owned();
        let mut found = None;
        for nu in 1..=n {
            let markov = &row * sys.b();
            if markov.norm() > NONZERO_TOL {
                found = Some((nu, markov));
                break;
            }
            row = &row * sys.a();
        }
        let (nu, d) = found.ok_or(Error::RelativeDegreeUndefined { output: k + 1 })?;
        deltas.push(nu);
        dstar_rows.push(d);
    }
    Ok(RelativeDegrees {
        total: deltas.iter().sum(),
        deltas,
        dstar: Mat::from_rows(&dstar_rows),
    })
}

/// `R(lambda) = [[lambda I - A, -B], [C, 0]]`.
pub fn rosenbrock_matrix(sys: &LinearSystem, lambda: Complex64) -> CMat {
    let (n, m) = (sys.n(), sys.m());
    let mut r = CMat::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = Complex64::new(-sys.a()[(i, j)], 0.0);
        }
        r[(i, i)] += lambda;
        for j in 0..m {
            r[(i, n + j)] = Complex64::new(-sys.b()[(i, j)], 0.0);
        }
    }
    for i in 0..m {
        for j in 0..n {
            r[(n + i, j)] = Complex64::new(sys.c()[(i, j)], 0.0);
        }
    }
    r
}

pub fn rosenbrock_rank(sys: &LinearSystem, lambda: Complex64) -> usize {
    linalg::rank_complex(&rosenbrock_matrix(sys, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroReport {
    #[serde(rename = "invariant_zeros", with = "json::complex_vec")]
    pub zeros: Vec<Complex64>,
    pub minimum_phase: bool,
    /// Ascending coefficients of `det R(lambda)`.
    #[serde(rename = "pencil_polynomial")]
    pub polynomial: Vec<f64>,
}

/// Invariant zeros as roots of `det R(lambda)`, interpolated from samples
/// on a circle that encloses the spectrum of `A`.
pub fn invariant_zeros(sys: &LinearSystem) -> Result<ZeroReport> {
    let (n, m) = (sys.n(), sys.m());
    let count = n + m + 1;
    let radius = 1.0
        + linalg::eigenvalues(sys.a())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    let nodes: Vec<Complex64> = (0..count)
        .map(|k| {
            Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / count as f64)
        })
        .collect();

    let full = n + m;
    if nodes
        .iter()
        .take(2)
        .all(|&z| rosenbrock_rank(sys, z) < full)
    {
        return Err(Error::DegeneratePencil);
    }
    let values: Vec<Complex64> = nodes
        .iter()
        .map(|&z| rosenbrock_matrix(sys, z).determinant())
        .collect();

    // Inverse DFT on the scaled circle gives c_j * radius^j.
    let scaled: Vec<Complex64> = (0..count)
        .map(|j| {
            values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    v * Complex64::from_polar(
                        1.0,
                        -2.0 * std::f64::consts::PI * (j * k) as f64 / count as f64,
                    )
                })
                .sum::<Complex64>()
                / count as f64
        })
        .collect();
    let peak = scaled.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::DegeneratePencil);
    }
    let degree = scaled
        .iter()
        .rposition(|z| z.norm() > 1e-9 * peak)
        .unwrap_or(0);
    let polynomial: Vec<f64> = scaled[..=degree]
        .iter()
        .enumerate()
        .map(|(j, z)| z.re / radius.powi(j as i32))
        .collect();
    let zeros = linalg::poly_roots(&polynomial);
    let minimum_phase = zeros.iter().all(|z| z.re < 0.0);
    Ok(ZeroReport {
        zeros,
        minimum_phase,
        polynomial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolvabilityVerdict {
    pub solvable: bool,
    /// Exosystem eigenvalues at which `rank R(lambda) < n + m`.
    #[serde(with = "json::complex_vec")]
    pub failures: Vec<Complex64>,
}

/// `rank R(lambda) = n + m` for every eigenvalue `lambda` of `S`.
pub fn check_solvability(sys: &LinearSystem, s: &Mat) -> SolvabilityVerdict {
    let full = sys.n() + sys.m();
    let failures: Vec<Complex64> = linalg::eigenvalues(s)
        .into_iter()
        .filter(|&lambda| rosenbrock_rank(sys, lambda) < full)
        .collect();
    SolvabilityVerdict {
        solvable: failures.is_empty(),
        failures,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MkMatrix {
    pub m: Mat,
    pub sigma_min: f64,
    pub condition: f64,
    pub regular: bool,
}

/// `M_k = S_bar_k (C^T kron I_r)` for a plant in integrator-chain
/// coordinates with chain lengths `kappa` and output matrix `c`.
pub fn build_mk(kappa: &[usize], c: &Mat, s_k: &Mat) -> Result<MkMatrix> {
    let n: usize = kappa.iter().sum();
    let m = kappa.len();
    if c.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "C is {}x{} but chains {kappa:?} need {m}x{n}",
            c.nrows(),
            c.ncols()
        )));
    }
    let r = s_k.nrows();
    if s_k.ncols() != r {
        return Err(Error::Dimension("S_k must be square".into()));
    }
    let mut s_bar = Mat::zeros(m * r, n * r);
    for (i, &off) in linalg::offsets(kappa).iter().enumerate() {
        let mut power = Mat::identity(r, r);
        for nu in 0..kappa[i] {
            s_bar
                .view_mut((i * r, (off + nu) * r), (r, r))
                .copy_from(&power);
            power = &power * s_k;
        }
    }
    let scale = s_bar.norm() * c.norm();
    let mk = s_bar * c.transpose().kronecker(&Mat::identity(r, r));
    let (sigma_min, condition, regular) = linalg::regularity(&mk, scale);
    Ok(MkMatrix {
        m: mk,
        sigma_min,
        condition,
        regular,
    })
}

/// `M_k` for every exosystem block, built on the plant's Brunovsky form.
pub fn mk_matrices(sys: &LinearSystem, exo: &Exosystem) -> Result<Vec<MkMatrix>> {
    exo.check_outputs(sys.m())?;
    let br = canonical::brunovsky_normalize(&canonical::to_controllable_canonical(sys)?)?;
    exo.blocks()
        .iter()
        .map(|b| build_mk(&br.kappa, br.system.c(), &b.s))
        .collect()
}

/// Companion-form coefficients `(a_0..a_{n-1}, b_0..b_{n-1})` of a SISO
/// plant in controllable canonical form.
pub fn companion_coefficients(sys: &LinearSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sys.n();
    if sys.m() != 1 {
        return Err(Error::Precondition("SISO plant required".into()));
    }
    let (pa, pb) = brunovsky_pattern(&[n]);
    let tol = STRUCTURE_TOL * (1.0 + sys.a().amax());
    for r in 0..n - 1 {
        for c in 0..n {
            if (sys.a()[(r, c)] - pa[(r, c)]).abs() > tol {
                return Err(Error::Precondition(
                    "plant is not in controllable canonical form".into(),
                ));
            }
        }
    }
    if (sys.b() - pb).amax() > STRUCTURE_TOL {
        return Err(Error::Precondition("B must be the last unit vector".into()));
    }
    let a = (0..n).map(|j| -sys.a()[(n - 1, j)]).collect();
    let b = (0..n).map(|j| sys.c()[(0, j)]).collect();
    Ok((a, b))
}

/// Index of the highest nonzero zero-polynomial coefficient.
pub fn zero_degree(b: &[f64]) -> Option<usize> {
    b.iter().rposition(|x| x.abs() > NONZERO_TOL)
}

/// `M = sum b_i S^i` and `N = a_0 I + .. + a_{n-1} S^{n-1} + S^n` for a SISO
/// plant in controllable canonical form.
pub fn siso_mn(sys: &LinearSystem, s: &Mat) -> Result<(Mat, Mat)> {
    let (a, b) = companion_coefficients(sys)?;
    let m = linalg::mat_poly(&b, s);
    let mut n_coeffs = a;
    n_coeffs.push(1.0);
    Ok((m, linalg::mat_poly(&n_coeffs, s)))
}

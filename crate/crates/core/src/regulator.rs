//! Solvers for the regulator equations
//!
//! ```text
//! Pi S = A Pi + B Gamma
//!    Q = C Pi
//! ```
//!
//! Three routes: the closed-form SISO solution in controllable canonical
//! form, the block-wise MIMO solution on integrator chains, and a
//! vectorized least-squares oracle that works for any `(A, B, C, S, Q)`.

use nalgebra::{DVector, RowDVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::analysis::{self, rosenbrock_matrix};
use crate::canonical::{self, BrunovskyForm};
use crate::error::{Error, Result};
use crate::json;
use crate::linalg::{self, Mat};
use crate::model::{Exosystem, LinearSystem};

/// Residual acceptance, relative to `1 + |Pi|_F`.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Back-transformed solutions are refused beyond this relative residual.
pub const BACKTRANSFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SisoAnalytic,
    MimoAnalytic,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulatorSolution {
    #[serde(rename = "Pi", with = "json::matrix")]
    pub pi: Mat,
    #[serde(rename = "Gamma", with = "json::matrix")]
    pub gamma: Mat,
    /// `|Pi S - A Pi - B Gamma|_F`
    pub residual1: f64,
    /// `|Q - C Pi|_F`
    pub residual2: f64,
    pub method: Method,
}

impl RegulatorSolution {
    fn new(sys: &LinearSystem, s: &Mat, q: &Mat, pi: Mat, gamma: Mat, method: Method) -> Self {
        let (residual1, residual2) = residuals(sys, s, q, &pi, &gamma);
        Self {
            pi,
            gamma,
            residual1,
            residual2,
            method,
        }
    }

    /// True when both residuals are below `rel * (1 + |Pi|_F)`.
    pub fn within(&self, rel: f64) -> bool {
        let bound = rel * (1.0 + self.pi.norm());
        self.residual1 < bound && self.residual2 < bound
    }

    fn assert_within(self, rel: f64, what: &str) -> Result<Self> {
        if self.within(rel) {
            Ok(self)
        } else {
            Err(Error::Numerical(format!(
                "{what}: residuals ({:.3e}, {:.3e}) exceed {rel:e} * (1 + |Pi|)",
                self.residual1, self.residual2
            )))
        }
    }
}

pub fn residuals(sys: &LinearSystem, s: &Mat, q: &Mat, pi: &Mat, gamma: &Mat) -> (f64, f64) {
    let r1 = (pi * s - sys.a() * pi - sys.b() * gamma).norm();
    let r2 = (q - sys.c() * pi).norm();
    (r1, r2)
}

/// Block partition of a chain-coordinate solution: `Pi_ij` is
/// `kappa_i x r_j`, `Gamma_ij` is `1 x r_j`, seeded by rows `pi1[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub pi_blocks: Vec<Vec<Mat>>,
    pub gamma_blocks: Vec<Vec<Mat>>,
    pub pi1_rows: Vec<Vec<RowDVector<f64>>>,
}

/// Exosystem eigenvalue of `s` closest to making the Rosenbrock matrix singular.
fn offending_eigenvalue(sys: &LinearSystem, s: &Mat) -> Complex64 {
    linalg::eigenvalues(s)
        .into_iter()
        .map(|z| {
            let sv = rosenbrock_matrix(sys, z).svd(false, false).singular_values;
            (z, sv.iter().cloned().fold(f64::INFINITY, f64::min))
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(z, _)| z)
        .unwrap_or_default()
}

/// Closed-form solution for a SISO plant in controllable canonical form:
/// `pi_1 = Q M^-1`, `Pi = [pi_1; pi_1 S; ..]`, `Gamma = pi_1 N`.
pub fn solve_siso_analytic(sys: &LinearSystem, exo: &Exosystem) -> Result<RegulatorSolution> {
    exo.check_outputs(1)?;
    let (s, q) = (exo.s(), exo.q());
    let (_, n_mat) = analysis::siso_mn(sys, s)?;
    let mk = analysis::build_mk(&[sys.n()], sys.c(), s)?;
    if !mk.regular {
        return Err(Error::Unsolvable {
            block: None,
            eigenvalue: offending_eigenvalue(sys, s),
        });
    }
    let q_row = q.row(0).into_owned();
    let pi1 = linalg::solve_row(&mk.m, &q_row)
        .ok_or_else(|| Error::Numerical("LU solve with M failed".into()))?;
    let n = sys.n();
    let mut rows = Vec::with_capacity(n);
    let mut row = pi1.clone();
    for _ in 0..n {
        rows.push(row.clone());
        row = &row * s;
    }
    let pi = Mat::from_rows(&rows);
    let gamma = Mat::from_rows(&[&pi1 * n_mat]);
    RegulatorSolution::new(sys, s, q, pi, gamma, Method::SisoAnalytic)
        .assert_within(RESIDUAL_TOL, "SISO analytic solution")
}

/// Block-wise solution for a plant in integrator-chain form.
pub fn solve_mimo_analytic(
    br: &BrunovskyForm,
    exo: &Exosystem,
) -> Result<(RegulatorSolution, BlockSolution)> {
    solve_chains(&br.system, &br.kappa, exo)
}

/// `sys` must be integrator chains of lengths `kappa` (any `C`).
pub(crate) fn solve_chains(
    sys: &LinearSystem,
    kappa: &[usize],
    exo: &Exosystem,
) -> Result<(RegulatorSolution, BlockSolution)> {
    let m = sys.m();
    exo.check_outputs(m)?;
    let (pa, pb) = canonical::brunovsky_pattern(kappa);
    if sys.a() != &pa || sys.b() != &pb {
        return Err(Error::Precondition(
            "plant is not in integrator-chain form".into(),
        ));
    }
    let sizes = exo.block_sizes();
    let mut pi1_rows: Vec<Vec<RowDVector<f64>>> = vec![Vec::with_capacity(m); m];
    for (k, block) in exo.blocks().iter().enumerate() {
        let r = block.dim();
        let mk = analysis::build_mk(kappa, sys.c(), &block.s)?;
        if !mk.regular {
            return Err(Error::Unsolvable {
                block: Some(k),
                eigenvalue: offending_eigenvalue(sys, &block.s),
            });
        }
        let mut rhs = RowDVector::zeros(m * r);
        rhs.columns_mut(k * r, r).copy_from(&block.q);
        let sol = linalg::solve_row(&mk.m, &rhs)
            .ok_or_else(|| Error::Numerical(format!("LU solve with M_{} failed", k + 1)))?;
        for (i, rows) in pi1_rows.iter_mut().enumerate() {
            rows.push(sol.columns(i * r, r).into_owned());
        }
    }

    let mut pi_blocks = vec![Vec::with_capacity(m); m];
    let mut gamma_blocks = vec![Vec::with_capacity(m); m];
    for i in 0..m {
        for (j, block) in exo.blocks().iter().enumerate() {
            let mut rows = Vec::with_capacity(kappa[i]);
            let mut row = pi1_rows[i][j].clone();
            for _ in 0..kappa[i] {
                rows.push(row.clone());
                row = &row * &block.s;
            }
            pi_blocks[i].push(Mat::from_rows(&rows));
            gamma_blocks[i].push(Mat::from_rows(&[row]));
        }
    }

    let (n, r) = (sys.n(), exo.dim());
    let mut pi = Mat::zeros(n, r);
    let mut gamma = Mat::zeros(m, r);
    let row_offs = linalg::offsets(kappa);
    let col_offs = linalg::offsets(&sizes);
    for i in 0..m {
        for j in 0..m {
            pi.view_mut((row_offs[i], col_offs[j]), (kappa[i], sizes[j]))
                .copy_from(&pi_blocks[i][j]);
            gamma
                .view_mut((i, col_offs[j]), (1, sizes[j]))
                .copy_from(&gamma_blocks[i][j]);
        }
    }
    let sol = RegulatorSolution::new(sys, exo.s(), exo.q(), pi, gamma, Method::MimoAnalytic)
        .assert_within(RESIDUAL_TOL, "MIMO analytic solution")?;
    Ok((
        sol,
        BlockSolution {
            pi_blocks,
            gamma_blocks,
            pi1_rows,
        },
    ))
}

/// Vectorized least-squares solve of both equations at once. Works for
/// arbitrary (not necessarily block-diagonal) `S`, `Q`.
pub fn solve_oracle(sys: &LinearSystem, s: &Mat, q: &Mat) -> Result<RegulatorSolution> {
    let (n, m, r) = (sys.n(), sys.m(), s.nrows());
    if s.ncols() != r || q.shape() != (m, r) {
        return Err(Error::Dimension(format!(
            "S is {}x{} and Q is {}x{}; expected rxr and {m}xr",
            s.nrows(),
            s.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let (np, ng) = (n * r, m * r);
    let ir = Mat::identity(r, r);
    let mut lhs = Mat::zeros(np + ng, np + ng);
    // vec(Pi S - A Pi - B Gamma) = (S^T x I - I x A) vec Pi - (I x B) vec Gamma
    lhs.view_mut((0, 0), (np, np))
        .copy_from(&(s.transpose().kronecker(&Mat::identity(n, n)) - ir.kronecker(sys.a())));
    lhs.view_mut((0, np), (np, ng))
        .copy_from(&(-ir.kronecker(sys.b())));
    lhs.view_mut((np, 0), (ng, np))
        .copy_from(&ir.kronecker(sys.c()));
    let mut rhs = DVector::zeros(np + ng);
    rhs.rows_mut(np, ng).copy_from_slice(q.as_slice());

    // Singular values decide rank; the solve itself goes through pivoted QR
    // because the SVD's singular vectors can lose accuracy.
    if linalg::rank(&lhs) < np + ng {
        return Err(Error::Unsolvable {
            block: None,
            eigenvalue: offending_eigenvalue(sys, s),
        });
    }
    let z = lhs
        .col_piv_qr()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("least-squares solve failed".into()))?;
    let pi = Mat::from_column_slice(n, r, z.rows(0, np).as_slice());
    let gamma = Mat::from_column_slice(m, r, z.rows(np, ng).as_slice());
    RegulatorSolution::new(sys, s, q, pi, gamma, Method::Oracle)
        .assert_within(RESIDUAL_TOL, "oracle solution")
}

/// Maps a solution for `x~ = T x`, `u = -K x~ + F u~` back to the original
/// plant: `Pi = T^-1 Pi~`, `Gamma = F Gamma~ - K Pi~`.
pub fn backtransform(
    sol: &RegulatorSolution,
    t_inv: &Mat,
    k: &Mat,
    f: &Mat,
    original: &LinearSystem,
    exo: &Exosystem,
) -> Result<RegulatorSolution> {
    let pi = t_inv * &sol.pi;
    let gamma = f * &sol.gamma - k * &sol.pi;
    RegulatorSolution::new(original, exo.s(), exo.q(), pi, gamma, sol.method)
        .assert_within(BACKTRANSFORM_TOL, "back-transformed solution")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Analytic,
    Oracle,
}

/// Solves for the original plant. The analytic route goes through the
/// controllable canonical form (SISO) or the Brunovsky form (MIMO).
pub fn solve(
    sys: &LinearSystem,
    exo: &Exosystem,
    method: SolveMethod,
) -> Result<RegulatorSolution> {
    exo.check_outputs(sys.m())?;
    match method {
        SolveMethod::Oracle => solve_oracle(sys, exo.s(), exo.q()),
        SolveMethod::Analytic => {
            let dec = canonical::to_controllable_canonical(sys)?;
            if dec.condition > linalg::COND_LIMIT {
                return Err(Error::Numerical(format!(
                    "canonical transform condition number {:.3e} is too large for the analytic route",
                    dec.condition
                )));
            }
            let solved = if sys.m() == 1 {
                solve_siso_analytic(&dec.system, exo).and_then(|sol| {
                    backtransform(
                        &sol,
                        &dec.t_inv,
                        &Mat::zeros(1, sys.n()),
                        &Mat::identity(1, 1),
                        sys,
                        exo,
                    )
                })
            } else {
                let br = canonical::brunovsky_normalize(&dec)?;
                solve_mimo_analytic(&br, exo)
                    .and_then(|(sol, _)| backtransform(&sol, &br.t_inv, &br.k, &br.f, sys, exo))
            };
            match solved {
                // M_k is formed in canonical coordinates; trust a singular
                // verdict only if the original plant agrees.
                Err(Error::Unsolvable { .. })
                    if analysis::check_solvability(sys, exo.s()).solvable =>
                {
                    Err(Error::Numerical(format!(
                        "M_k looks singular but the plant has no zero at an exosystem eigenvalue; \
                         canonical transform condition number {:.3e}",
                        dec.condition
                    )))
                }
                other => other,
            }
        }
    }
}

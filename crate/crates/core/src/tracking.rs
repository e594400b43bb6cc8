//! Tracking controllers: flatness-based (FBT) laws acting on reference
//! derivatives, regulator-based (ORT) laws acting on the exosystem state,
//! zero cancellation / compensation, and an ORT = FBT cross-check.

use nalgebra::RowDVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, RelativeDegrees};
use crate::canonical::{self, chain_ends, BrunovskyForm};
use crate::error::{Error, Result, Warning};
use crate::json;
use crate::linalg::{self, Mat, COINCIDENCE_TOL, COND_LIMIT, HURWITZ_MARGIN};
use crate::model::{Exosystem, LinearSystem};
use crate::regulator::{self, RegulatorSolution, SolveMethod};

/// Error-dynamics coefficients: output `k` gets
/// `e^(d_k) + p_k,d_k-1 e^(d_k-1) + .. + p_k0 e = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDynamicsSpec {
    pub coeffs: Vec<Vec<f64>>,
}

impl ErrorDynamicsSpec {
    pub fn new(coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self { coeffs };
        spec.validate()?;
        Ok(spec)
    }

    /// Monic polynomials with the given real roots.
    pub fn from_real_poles(poles: &[Vec<f64>]) -> Result<Self> {
        let coeffs = poles
            .iter()
            .map(|p| {
                let roots: Vec<Complex64> = p.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                let mut c = linalg::poly_from_roots(&roots);
                c.pop();
                c
            })
            .collect();
        Self::new(coeffs)
    }

    pub fn orders(&self) -> Vec<usize> {
        self.coeffs.iter().map(Vec::len).collect()
    }

    pub fn roots(&self, k: usize) -> Vec<Complex64> {
        let mut poly = self.coeffs[k].clone();
        poly.push(1.0);
        linalg::poly_roots(&poly)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(Error::Validation(
                "error-dynamics spec has no outputs".into(),
            ));
        }
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Validation(format!(
                    "output {}: empty coefficient list",
                    k + 1
                )));
            }
            if let Some(x) = c.iter().find(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "output {}: non-finite coefficient {x}",
                    k + 1
                )));
            }
            let roots = self.roots(k);
            if !linalg::is_hurwitz(&roots) {
                let worst = roots
                    .iter()
                    .max_by(|a, b| a.re.total_cmp(&b.re))
                    .copied()
                    .unwrap_or_default();
                return Err(Error::NotHurwitz(format!(
                    "output {}: error polynomial has root {}",
                    k + 1,
                    crate::error::fmt_complex(&worst)
                )));
            }
        }
        Ok(())
    }

    fn check_orders(&self, expected: &[usize], what: &str) -> Result<()> {
        if self.orders() != expected {
            return Err(Error::Dimension(format!(
                "spec orders {:?} do not match {what} {expected:?}",
                self.orders()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Original,
    Canonical,
    Brunovsky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Feedforward {
    /// `u_ff = F w`.
    Exo {
        #[serde(rename = "F", with = "json::matrix")]
        f: Mat,
    },
    /// `u_ff = F [y_1, .., y_1^(o_1), y_2, ..]` with `o_k = orders[k]`.
    Stack {
        #[serde(rename = "F", with = "json::matrix")]
        f: Mat,
        orders: Vec<usize>,
    },
}

impl Feedforward {
    pub fn matrix(&self) -> &Mat {
        match self {
            Feedforward::Exo { f } | Feedforward::Stack { f, .. } => f,
        }
    }
}

/// `u = -K x + u_ff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingController {
    #[serde(rename = "K", with = "json::matrix")]
    pub k: Mat,
    pub feedforward: Feedforward,
    pub frame: Frame,
    #[serde(default)]
    pub warnings: Vec<Warning>,
}

fn has_code(ws: &[Warning], code: &str) -> bool {
    ws.iter().any(|w| w.code == code)
}

impl TrackingController {
    pub fn has_warning(&self, code: &str) -> bool {
        has_code(&self.warnings, code)
    }

    /// Shape check against a plant and, for exosystem feedforward, its exosystem size.
    pub fn check_shapes(&self, sys: &LinearSystem, exo_dim: Option<usize>) -> Result<()> {
        if self.k.shape() != (sys.m(), sys.n()) {
            return Err(Error::Dimension(format!(
                "K is {}x{}, plant needs {}x{}",
                self.k.nrows(),
                self.k.ncols(),
                sys.m(),
                sys.n()
            )));
        }
        match &self.feedforward {
            Feedforward::Exo { f } => {
                let r = exo_dim.ok_or_else(|| {
                    Error::Precondition("exosystem feedforward needs an exosystem reference".into())
                })?;
                if f.shape() != (sys.m(), r) {
                    return Err(Error::Dimension(format!(
                        "feedforward F is {}x{}, expected {}x{r}",
                        f.nrows(),
                        f.ncols(),
                        sys.m()
                    )));
                }
            }
            Feedforward::Stack { f, orders } => {
                let width: usize = orders.iter().map(|o| o + 1).sum();
                if orders.len() != sys.m() || f.shape() != (sys.m(), width) {
                    return Err(Error::Dimension(format!(
                        "stack feedforward F is {}x{} with orders {orders:?}; plant has {} outputs",
                        f.nrows(),
                        f.ncols(),
                        sys.m()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn decoupling(sys: &LinearSystem) -> Result<(RelativeDegrees, Mat)> {
    let rd = analysis::relative_degrees(sys)?;
    let cond = linalg::condition(&rd.dstar);
    if cond > COND_LIMIT {
        return Err(Error::SingularDecoupling { cond });
    }
    let inv = linalg::inverse(&rd.dstar, "decoupling matrix")?;
    Ok((rd, inv))
}

fn flat_decoupling(sys: &LinearSystem) -> Result<(RelativeDegrees, Mat)> {
    let rd = analysis::relative_degrees(sys)?;
    if rd.total != sys.n() {
        return Err(Error::NotFlat {
            delta: rd.total,
            n: sys.n(),
        });
    }
    decoupling(sys)
}

/// Integrator chains of lengths `delta_k` with the outputs as chain heads,
/// reached by `x~ = T x` with `T` stacking `C_k A^j`, and
/// `u = -K x~ + F u~` with `F = (D*)^-1`.
pub fn output_chain_form(sys: &LinearSystem) -> Result<BrunovskyForm> {
    let (rd, f) = flat_decoupling(sys)?;
    let rt = canonical::reldeg_transform(sys, &rd.deltas)?;
    let t_inv = linalg::inverse(&rt.t, "output-chain transform")?;
    let raw = sys.transformed(&rt.t, &t_inv);
    let ends = chain_ends(&rd.deltas);
    let k = &f * linalg::select_rows(raw.a(), &ends);
    let mut a = raw.a() - raw.b() * &k;
    let mut b = raw.b() * &f;
    canonical::snap_brunovsky(&mut a, &mut b, &rd.deltas)?;
    Ok(BrunovskyForm {
        t: rt.t,
        t_inv,
        kappa: rd.deltas,
        k,
        f,
        system: LinearSystem::new(a, b, raw.c().clone())?,
    })
}

/// Flatness-based law for a plant whose outputs have total relative degree `n`:
/// `u = (D*)^-1 (y_d^(d) - C_k A^d x + sum_j p_kj (y_d^(j) - C_k A^j x))` per output.
pub fn design_fbt(sys: &LinearSystem, spec: &ErrorDynamicsSpec) -> Result<TrackingController> {
    let (rd, dinv) = flat_decoupling(sys)?;
    spec.check_orders(&rd.deltas, "relative degrees")?;
    spec.validate()?;
    let (n, m) = (sys.n(), sys.m());
    let mut p_rows = rd.state_rows(sys);
    let mut g = Mat::zeros(m, rd.total + m);
    let offs = linalg::offsets(&rd.deltas.iter().map(|d| d + 1).collect::<Vec<_>>());
    for (k, &d) in rd.deltas.iter().enumerate() {
        let mut row = sys.c().row(k).into_owned();
        for j in 0..d {
            let p = spec.coeffs[k][j];
            let updated = p_rows.row(k) + &row * p;
            p_rows.row_mut(k).copy_from(&updated);
            g[(k, offs[k] + j)] = p;
            row = &row * sys.a();
        }
        g[(k, offs[k] + d)] = 1.0;
    }
    debug_assert_eq!(p_rows.shape(), (m, n));
    Ok(TrackingController {
        k: &dinv * p_rows,
        feedforward: Feedforward::Stack {
            f: &dinv * g,
            orders: rd.deltas,
        },
        frame: Frame::Original,
        warnings: Vec::new(),
    })
}

/// Chain-wise coefficient assignment for a plant in integrator-chain form:
/// row `i` of `K` carries `p_i0 .. p_i,kappa_i-1` on chain `i`.
pub fn place_poles(sys: &LinearSystem, kappa: &[usize], spec: &ErrorDynamicsSpec) -> Result<Mat> {
    let (pa, pb) = canonical::brunovsky_pattern(kappa);
    if sys.a() != &pa || sys.b() != &pb {
        return Err(Error::Precondition(
            "pole placement needs integrator-chain form".into(),
        ));
    }
    spec.check_orders(kappa, "chain lengths")?;
    spec.validate()?;
    let mut k = Mat::zeros(kappa.len(), sys.n());
    for (i, off) in linalg::offsets(kappa).into_iter().enumerate() {
        for (j, &p) in spec.coeffs[i].iter().enumerate() {
            k[(i, off + j)] = p;
        }
    }
    Ok(k)
}

/// State feedback for the original plant from chain-wise coefficients on
/// its Kronecker chains.
pub fn place_original(sys: &LinearSystem, spec: &ErrorDynamicsSpec) -> Result<Mat> {
    let dec = canonical::to_controllable_canonical(sys)?;
    let br = canonical::brunovsky_normalize(&dec)?;
    let kb = place_poles(&br.system, &br.kappa, spec)?;
    Ok(br.gain_to_original(&kb))
}

pub enum Gain {
    Explicit(Mat),
    Spec(ErrorDynamicsSpec),
}

/// Regulator-based law `u = -K x + (K Pi + Gamma) w`.
pub fn design_ort(sys: &LinearSystem, exo: &Exosystem, gain: Gain) -> Result<TrackingController> {
    exo.check_outputs(sys.m())?;
    let verdict = analysis::check_solvability(sys, exo.s());
    if let Some(&eigenvalue) = verdict.failures.first() {
        return Err(Error::Unsolvable {
            block: None,
            eigenvalue,
        });
    }
    let k = match gain {
        Gain::Explicit(k) => k,
        Gain::Spec(spec) => place_original(sys, &spec)?,
    };
    if k.shape() != (sys.m(), sys.n()) {
        return Err(Error::Dimension(format!(
            "K is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            sys.m(),
            sys.n()
        )));
    }
    let eigs = linalg::eigenvalues(&sys.closed_loop(&k));
    if !linalg::is_hurwitz(&eigs) {
        return Err(Error::NotHurwitz(
            "A - BK has eigenvalues with Re >= 0".into(),
        ));
    }
    let sol = solve_with_fallback(sys, exo)?;
    let warnings = exo.warnings();
    Ok(TrackingController {
        feedforward: Feedforward::Exo {
            f: &k * &sol.pi + &sol.gamma,
        },
        k,
        frame: Frame::Original,
        warnings,
    })
}

/// Analytic solutions looser than this (relative to `1 + |Pi|`) are
/// compared against the oracle before a controller is built on them.
pub const DESIGN_RESIDUAL_TOL: f64 = 1e-10;

fn worst_residual(sol: &RegulatorSolution) -> f64 {
    sol.residual1.max(sol.residual2) / (1.0 + sol.pi.norm())
}

/// Analytic path first; the oracle takes over when the canonical pipeline
/// is numerically unusable or its back-transformed residual is loose (the
/// more accurate of the two wins).
pub fn solve_with_fallback(sys: &LinearSystem, exo: &Exosystem) -> Result<RegulatorSolution> {
    match regulator::solve(sys, exo, SolveMethod::Analytic) {
        Err(Error::Numerical(_)) | Err(Error::Precondition(_)) => {
            regulator::solve(sys, exo, SolveMethod::Oracle)
        }
        Ok(sol) if !sol.within(DESIGN_RESIDUAL_TOL) => {
            match regulator::solve(sys, exo, SolveMethod::Oracle) {
                Ok(oracle) if worst_residual(&oracle) < worst_residual(&sol) => Ok(oracle),
                _ => Ok(sol),
            }
        }
        other => other,
    }
}

/// Gains that cancel the plant zeros of a SISO plant, leaving the
/// closed loop `1 / (k^_1 + k^_2 s + .. + k^_d s^(d-1) + s^d / b_tau)`.
pub fn zero_cancel_siso(sys: &LinearSystem, hat: &[f64]) -> Result<TrackingController> {
    if sys.m() != 1 {
        return Err(Error::Precondition(
            "zero cancellation needs a SISO plant".into(),
        ));
    }
    let dec = canonical::to_controllable_canonical(sys)?;
    let (a, b) = analysis::companion_coefficients(&dec.system)?;
    let n = sys.n();
    let tau = analysis::zero_degree(&b).ok_or(Error::RelativeDegreeUndefined { output: 1 })?;
    if tau == 0 {
        return Err(Error::Precondition(
            "plant has no zeros (tau = 0); use design_fbt".into(),
        ));
    }
    let delta = n - tau;
    if hat.len() != delta {
        return Err(Error::Dimension(format!(
            "{} coefficients given for relative degree {delta}",
            hat.len()
        )));
    }
    let b_tau = b[tau];
    let mut tracking_poly = hat.to_vec();
    tracking_poly.push(1.0 / b_tau);
    let k_tilde = linalg::poly_mul(&b[..=tau], &tracking_poly);
    let k_can = Mat::from_fn(1, n, |_, i| k_tilde[i] - a[i]);

    let mut warnings = dec.warnings.clone();
    let zeros = linalg::poly_roots(&b[..=tau]);
    if zeros.iter().any(|z| z.re >= HURWITZ_MARGIN) {
        warnings.push(Warning::new(
            Warning::UNSTABLE_INTERNAL_DYNAMICS,
            format!(
                "cancelled zeros include {}",
                zeros
                    .iter()
                    .filter(|z| z.re >= HURWITZ_MARGIN)
                    .map(crate::error::fmt_complex)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ));
    }
    if !linalg::is_hurwitz(&linalg::poly_roots(&tracking_poly)) {
        warnings.push(Warning::new(
            Warning::UNSTABLE_TRACKING_DYNAMICS,
            "remaining reference-to-output dynamics are not Hurwitz",
        ));
    }
    Ok(TrackingController {
        k: k_can * &dec.t,
        feedforward: Feedforward::Stack {
            f: Mat::from_row_slice(1, delta + 1, &tracking_poly),
            orders: vec![delta],
        },
        frame: Frame::Original,
        warnings,
    })
}

/// Feedback that decouples the zero dynamics in the `T_n` coordinates
/// `(xi, eta)`, leaving `eta' = A'_eta eta` with `spec(A'_eta)` equal to
/// the invariant zeros.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroCompensation {
    #[serde(rename = "T_n", with = "json::matrix")]
    pub t_n: Mat,
    /// `(D*)^-1 [0, A_delta*]` acting on `T_n x`.
    #[serde(rename = "K_n", with = "json::matrix")]
    pub k_n: Mat,
    /// `K_n T_n`, acting on `x`.
    #[serde(rename = "K", with = "json::matrix")]
    pub k: Mat,
    /// The `delta`-dimensional input-output part.
    pub reduced: LinearSystem,
    #[serde(rename = "A_eta", with = "json::matrix")]
    pub a_eta: Mat,
    #[serde(with = "json::complex_vec")]
    pub eta_spectrum: Vec<Complex64>,
    pub warnings: Vec<Warning>,
}

pub fn zero_compensate_mimo(sys: &LinearSystem) -> Result<ZeroCompensation> {
    let (rd, dinv) = decoupling(sys)?;
    let rt = canonical::reldeg_transform(sys, &rd.deltas)?;
    let t_inv = linalg::inverse(&rt.t_n, "completed transform T_n")?;
    let an = sys.transformed(&rt.t_n, &t_inv);
    let (n, d) = (sys.n(), rd.total);
    let ends = chain_ends(&rd.deltas);
    let a_star = linalg::select_rows(an.a(), &ends);
    let a_delta_star = a_star.columns(d, n - d).into_owned();
    let mut k_n = Mat::zeros(sys.m(), n);
    k_n.columns_mut(d, n - d)
        .copy_from(&(&dinv * &a_delta_star));

    let a_eta = an.a().view((d, d), (n - d, n - d)) - an.b().rows(d, n - d) * &dinv * &a_delta_star;
    let reduced = LinearSystem::new(
        an.a().view((0, 0), (d, d)).into_owned(),
        an.b().rows(0, d).into_owned(),
        an.c().columns(0, d).into_owned(),
    )?;
    let eta_spectrum = linalg::eigenvalues(&a_eta);
    if n > d {
        let zeros = analysis::invariant_zeros(sys)?;
        if !linalg::multiset_match(&eta_spectrum, &zeros.zeros, COINCIDENCE_TOL) {
            return Err(Error::Numerical(format!(
                "spectrum of A'_eta {:?} differs from the invariant zeros {:?}",
                eta_spectrum, zeros.zeros
            )));
        }
    }
    let mut warnings = Vec::new();
    if eta_spectrum.iter().any(|z| z.re >= HURWITZ_MARGIN) {
        warnings.push(Warning::new(
            Warning::UNSTABLE_INTERNAL_DYNAMICS,
            "compensated zero dynamics are not asymptotically stable",
        ));
    }
    Ok(ZeroCompensation {
        k: &k_n * &rt.t_n,
        t_n: rt.t_n,
        k_n,
        reduced,
        a_eta,
        eta_spectrum,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Equal,
    NotEqual,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    /// `|(K_ort - K_fbt) T^-1|_F` in the output-chain frame.
    pub k_difference: f64,
    /// `|F_exo - F_stack W|_F` with `W` mapping `w` to reference derivatives.
    pub feedforward_difference: f64,
    pub k_norm: f64,
    pub verdict: Verdict,
    pub ort: TrackingController,
    pub fbt: TrackingController,
}

/// Default verdict tolerance, relative to `1 + |K|`.
pub const EQUIVALENCE_TOL: f64 = 1e-8;

impl EquivalenceReport {
    pub fn equal(&self) -> bool {
        self.verdict == Verdict::Equal
    }

    /// Re-issues the verdict at relative tolerance `tol`.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        let bound = tol * (1.0 + self.k_norm);
        self.verdict = if self.k_difference < bound && self.feedforward_difference < bound {
            Verdict::Equal
        } else {
            Verdict::NotEqual
        };
        self
    }
}

/// Matrix `W` with `W w = [y_1, .., y_1^(o_1), y_2, ..]` for the exosystem.
pub fn stack_map(exo: &Exosystem, orders: &[usize]) -> Mat {
    let rows: Vec<RowDVector<f64>> = orders
        .iter()
        .enumerate()
        .flat_map(|(k, &o)| {
            let mut row = exo.q().row(k).into_owned();
            (0..=o).map(move |_| {
                let out = row.clone();
                row = &row * exo.s();
                out
            })
        })
        .collect();
    Mat::from_rows(&rows)
}

/// Builds both controllers from the same error dynamics and compares them.
pub fn verify_equivalence(
    sys: &LinearSystem,
    exo: &Exosystem,
    spec: &ErrorDynamicsSpec,
) -> Result<EquivalenceReport> {
    let chains = output_chain_form(sys)?;
    let kb = place_poles(&chains.system, &chains.kappa, spec)?;
    let ort = design_ort(sys, exo, Gain::Explicit(chains.gain_to_original(&kb)))?;
    let fbt = design_fbt(sys, spec)?;
    let Feedforward::Stack { f: f_stack, orders } = &fbt.feedforward else {
        unreachable!("design_fbt returns stack feedforward")
    };
    let f_exo = ort.feedforward.matrix();
    let k_fbt = &fbt.k * &chains.t_inv;
    let k_difference = ((&ort.k - &fbt.k) * &chains.t_inv).norm();
    let feedforward_difference = (f_exo - f_stack * stack_map(exo, orders)).norm();
    let report = EquivalenceReport {
        k_difference,
        feedforward_difference,
        k_norm: k_fbt.norm(),
        verdict: Verdict::NotEqual,
        ort,
        fbt,
    };
    Ok(report.with_tolerance(EQUIVALENCE_TOL))
}

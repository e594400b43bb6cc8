//! Plant and reference-generator types.
//!
//! A [`LinearSystem`] is the square plant `x' = Ax + Bu, y = Cx`. References
//! come either from an [`Exosystem`] (`w' = Sw, y_d = Qw`, one block per
//! output) or from a [`TrajectorySpec`] of Bohl terms, which can be realized
//! as an exosystem or differentiated in closed form.

use nalgebra::{DVector, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{Error, Result, Warning};
use crate::json::{self, Rows};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct LinearSystem {
    a: Mat,
    b: Mat,
    c: Mat,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct RawSystem {
    A: Rows,
    B: Rows,
    C: Rows,
}

impl TryFrom<RawSystem> for LinearSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        LinearSystem::new(
            json::rows_to_mat(&raw.A, "A")?,
            json::rows_to_mat(&raw.B, "B")?,
            json::rows_to_mat(&raw.C, "C")?,
        )
    }
}

impl From<LinearSystem> for RawSystem {
    fn from(sys: LinearSystem) -> Self {
        RawSystem {
            A: json::mat_to_rows(&sys.a),
            B: json::mat_to_rows(&sys.b),
            C: json::mat_to_rows(&sys.c),
        }
    }
}

impl LinearSystem {
    /// Checks shapes only; rank conditions are reported by [`validate_system`].
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows but A is {n}x{n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C has {} columns but A is {n}x{n}",
                c.ncols()
            )));
        }
        let m = b.ncols();
        if m == 0 {
            return Err(Error::Dimension("B has no columns".into()));
        }
        if c.nrows() != m {
            return Err(Error::Dimension(format!(
                "plant must be square: B has {m} inputs but C has {} outputs",
                c.nrows()
            )));
        }
        if m > n {
            return Err(Error::Dimension(format!(
                "more inputs than states (m={m} > n={n})"
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `(T A T^-1, T B, C T^-1)` for the state change `x_new = T x`.
    pub fn transformed(&self, t: &Mat, t_inv: &Mat) -> LinearSystem {
        LinearSystem {
            a: t * &self.a * t_inv,
            b: t * &self.b,
            c: &self.c * t_inv,
        }
    }

    /// Closed-loop dynamics `A - B K`.
    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a - &self.b * k
    }
}

/// Per-invariant verdicts for a plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub m: usize,
    pub rank_b: usize,
    pub rank_c: usize,
    pub controllability_rank: usize,
    pub controllable: bool,
    pub failures: Vec<String>,
}

impl Diagnostics {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn validate_system(sys: &LinearSystem) -> Diagnostics {
    let (n, m) = (sys.n(), sys.m());
    let rank_b = linalg::rank(sys.b());
    let rank_c = linalg::rank(sys.c());
    let (controllable, ctrb) = canonical::controllability(sys);
    let controllability_rank = linalg::rank(&ctrb);
    let mut failures = Vec::new();
    if rank_b < m {
        failures.push(format!("rank(B) < m ({rank_b} < {m})"));
    }
    if rank_c < m {
        failures.push(format!("rank(C) < m ({rank_c} < {m})"));
    }
    if !controllable {
        failures.push(format!(
            "not controllable (rank of controllability matrix {controllability_rank} < {n})"
        ));
    }
    Diagnostics {
        n,
        m,
        rank_b,
        rank_c,
        controllability_rank,
        controllable,
        failures,
    }
}

/// One per-output generator `w_k' = S_k w_k`, `y_d,k = Q_k w_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoBlock {
    #[serde(rename = "S", with = "json::matrix")]
    pub s: Mat,
    #[serde(rename = "Q", with = "json::row")]
    pub q: RowDVector<f64>,
}

impl ExoBlock {
    pub fn new(s: Mat, q: RowDVector<f64>) -> Self {
        Self { s, q }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// Block-diagonal exosystem with one block per plant output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExosystem", into = "RawExosystem")]
pub struct Exosystem {
    blocks: Vec<ExoBlock>,
    omega0: DVector<f64>,
    s: Mat,
    q: Mat,
}

#[derive(Serialize, Deserialize)]
struct RawExosystem {
    blocks: Vec<ExoBlock>,
    omega0: Vec<f64>,
}

impl TryFrom<RawExosystem> for Exosystem {
    type Error = Error;

    fn try_from(raw: RawExosystem) -> Result<Self> {
        Exosystem::assemble(raw.blocks, DVector::from_vec(raw.omega0))
    }
}

impl From<Exosystem> for RawExosystem {
    fn from(exo: Exosystem) -> Self {
        RawExosystem {
            blocks: exo.blocks,
            omega0: exo.omega0.iter().cloned().collect(),
        }
    }
}

impl Exosystem {
    /// `S = blkdiag(S_1..S_m)`, `Q = blkdiag(Q_1..Q_m)`.
    pub fn assemble(blocks: Vec<ExoBlock>, omega0: DVector<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Dimension(
                "exosystem needs at least one block".into(),
            ));
        }
        for (k, b) in blocks.iter().enumerate() {
            let r = b.s.nrows();
            if r == 0 || b.s.ncols() != r {
                return Err(Error::Dimension(format!(
                    "block {}: S must be square and nonempty, got {}x{}",
                    k + 1,
                    b.s.nrows(),
                    b.s.ncols()
                )));
            }
            if b.q.len() != r {
                return Err(Error::Dimension(format!(
                    "block {}: width mismatch, Q has {} entries but S is {r}x{r}",
                    k + 1,
                    b.q.len()
                )));
            }
        }
        let s = linalg::block_diag(&blocks.iter().map(|b| b.s.clone()).collect::<Vec<_>>());
        let q_blocks: Vec<Mat> = blocks
            .iter()
            .map(|b| Mat::from_row_slice(1, b.q.len(), b.q.as_slice()))
            .collect();
        let q = linalg::block_diag(&q_blocks);
        if omega0.len() != s.nrows() {
            return Err(Error::Dimension(format!(
                "omega0 has {} entries but the exosystem has dimension {}",
                omega0.len(),
                s.nrows()
            )));
        }
        Ok(Self {
            blocks,
            omega0,
            s,
            q,
        })
    }

    /// Fails unless there is exactly one block per plant output.
    pub fn check_outputs(&self, m: usize) -> Result<()> {
        if self.blocks.len() != m {
            return Err(Error::Dimension(format!(
                "exosystem has {} blocks but the plant has {m} outputs",
                self.blocks.len()
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[ExoBlock] {
        &self.blocks
    }

    pub fn s(&self) -> &Mat {
        &self.s
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn omega0(&self) -> &DVector<f64> {
        &self.omega0
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(ExoBlock::dim).collect()
    }

    pub fn with_omega0(mut self, omega0: DVector<f64>) -> Result<Self> {
        if omega0.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "omega0 has {} entries, expected {}",
                omega0.len(),
                self.dim()
            )));
        }
        self.omega0 = omega0;
        Ok(self)
    }

    /// Re-slices the assembled `(S, Q)` into diagonal blocks.
    pub fn extract_blocks(&self) -> Vec<ExoBlock> {
        let sizes = self.block_sizes();
        linalg::offsets(&sizes)
            .into_iter()
            .zip(&sizes)
            .enumerate()
            .map(|(k, (o, &r))| {
                ExoBlock::new(
                    self.s.view((o, o), (r, r)).into_owned(),
                    RowDVector::from_iterator(r, self.q.view((k, o), (1, r)).iter().cloned()),
                )
            })
            .collect()
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        linalg::eigenvalues(&self.s)
    }

    /// Decaying modes are legal but pointless for regulation.
    pub fn warnings(&self) -> Vec<Warning> {
        self.eigenvalues()
            .into_iter()
            .filter(|z| z.re < 0.0)
            .map(|z| {
                Warning::new(
                    Warning::DECAYING_EXOSYSTEM_MODE,
                    format!(
                        "exosystem eigenvalue {} has negative real part",
                        crate::error::fmt_complex(&z)
                    ),
                )
            })
            .collect()
    }

    /// `y_d = Q w`.
    pub fn output(&self, omega: &DVector<f64>) -> DVector<f64> {
        &self.q * omega
    }

    /// Exact reference derivatives `y_d,k^(j) = Q_k S_k^j w_k`, `j = 0..=orders[k]`.
    pub fn derivative_stack(
        &self,
        omega: &DVector<f64>,
        orders: &[usize],
    ) -> Result<DerivativeStack> {
        check_orders(orders, self.blocks.len())?;
        let max = orders.iter().cloned().max().unwrap_or(0);
        let mut per_output: Vec<Vec<f64>> =
            orders.iter().map(|&o| Vec::with_capacity(o + 1)).collect();
        let mut v = omega.clone();
        for j in 0..=max {
            let y = &self.q * &v;
            for (k, out) in per_output.iter_mut().enumerate() {
                if j <= orders[k] {
                    out.push(y[k]);
                }
            }
            v = &self.s * v;
        }
        Ok(DerivativeStack { per_output })
    }
}

fn check_orders(orders: &[usize], outputs: usize) -> Result<()> {
    if orders.len() != outputs {
        return Err(Error::Dimension(format!(
            "{} derivative orders requested for {outputs} outputs",
            orders.len()
        )));
    }
    Ok(())
}

/// Polynomial, exponential and (damped) sinusoidal signal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BohlTerm {
    Const {
        value: f64,
    },
    /// `sum_j coeffs[j] t^j`
    Poly {
        coeffs: Vec<f64>,
    },
    /// `amp * exp(rate t)`
    Exp {
        rate: f64,
        amp: f64,
    },
    /// `amp * sin(freq t + phase)`
    Sin {
        freq: f64,
        amp: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amp * exp(rate t) * sin(freq t + phase)`
    ExpSin {
        rate: f64,
        freq: f64,
        amp: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl BohlTerm {
    /// Closed-form `k`-th time derivative at `t`.
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        match *self {
            BohlTerm::Const { value } => {
                if k == 0 {
                    value
                } else {
                    0.0
                }
            }
            BohlTerm::Poly { ref coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(k)
                .map(|(j, c)| c * falling_factorial(j, k) * t.powi((j - k) as i32))
                .sum(),
            BohlTerm::Exp { rate, amp } => amp * rate.powi(k as i32) * (rate * t).exp(),
            BohlTerm::Sin { freq, amp, phase } => {
                damped_sin_derivative(0.0, freq, amp, phase, k, t)
            }
            BohlTerm::ExpSin {
                rate,
                freq,
                amp,
                phase,
            } => damped_sin_derivative(rate, freq, amp, phase, k, t),
        }
    }

    /// Minimal `(S, Q, w0)` with `Q exp(S t) w0` equal to the term.
    pub fn realize(&self) -> Result<(Mat, RowDVector<f64>, DVector<f64>)> {
        let scalar = |rate: f64, w0: f64| {
            (
                Mat::from_element(1, 1, rate),
                RowDVector::from_element(1, 1.0),
                DVector::from_element(1, w0),
            )
        };
        Ok(match *self {
            BohlTerm::Const { value } => scalar(0.0, value),
            BohlTerm::Poly { ref coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::Validation(
                        "polynomial term without coefficients".into(),
                    ));
                }
                let degree = coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
                let r = degree + 1;
                // Jordan block at 0; state holds p, p', ..., p^(d).
                let mut s = Mat::zeros(r, r);
                for i in 0..degree {
                    s[(i, i + 1)] = 1.0;
                }
                let mut q = RowDVector::zeros(r);
                q[0] = 1.0;
                let w0 = DVector::from_fn(r, |j, _| self.derivative(j, 0.0));
                (s, q, w0)
            }
            BohlTerm::Exp { rate, amp } => scalar(rate, amp),
            BohlTerm::Sin { freq, amp, phase } => rotation(0.0, freq, amp, phase),
            BohlTerm::ExpSin {
                rate,
                freq,
                amp,
                phase,
            } => rotation(rate, freq, amp, phase),
        })
    }
}

fn falling_factorial(j: usize, k: usize) -> f64 {
    ((j - k + 1)..=j).map(|x| x as f64).product()
}

/// `d^k/dt^k [a e^{sigma t} sin(w t + phi)] = Im(a e^{i phi} lambda^k e^{lambda t})`, `lambda = sigma + i w`.
fn damped_sin_derivative(rate: f64, freq: f64, amp: f64, phase: f64, k: usize, t: f64) -> f64 {
    let lambda = Complex64::new(rate, freq);
    let z = Complex64::from_polar(amp, phase) * lambda.powu(k as u32) * (lambda * t).exp();
    z.im
}

fn rotation(rate: f64, freq: f64, amp: f64, phase: f64) -> (Mat, RowDVector<f64>, DVector<f64>) {
    if freq == 0.0 {
        // degenerates to a real exponential
        return (
            Mat::from_element(1, 1, rate),
            RowDVector::from_element(1, 1.0),
            DVector::from_element(1, amp * phase.sin()),
        );
    }
    // w = [a e^{st} sin(ft+p), a e^{st} cos(ft+p)]
    let s = Mat::from_row_slice(2, 2, &[rate, freq, -freq, rate]);
    let q = RowDVector::from_row_slice(&[1.0, 0.0]);
    let w0 = DVector::from_row_slice(&[amp * phase.sin(), amp * phase.cos()]);
    (s, q, w0)
}

/// Per-output sums of Bohl terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub outputs: Vec<Vec<BohlTerm>>,
}

impl TrajectorySpec {
    pub fn new(outputs: Vec<Vec<BohlTerm>>) -> Result<Self> {
        let spec = Self { outputs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outputs.is_empty() {
            return Err(Error::Validation("trajectory has no outputs".into()));
        }
        for (k, terms) in self.outputs.iter().enumerate() {
            if terms.is_empty() {
                return Err(Error::Validation(format!("output {} has no terms", k + 1)));
            }
            for term in terms {
                if let BohlTerm::Poly { coeffs } = term {
                    if coeffs.is_empty() {
                        return Err(Error::Validation(format!(
                            "output {}: polynomial term without coefficients",
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.outputs.len(),
            self.outputs
                .iter()
                .map(|terms| terms.iter().map(|term| term.derivative(0, t)).sum::<f64>()),
        )
    }
}

/// Reference values and derivatives per output: `per_output[k][j] = y_d,k^(j)(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub per_output: Vec<Vec<f64>>,
}

impl DerivativeStack {
    /// Concatenation `[y_1, y_1', .., y_1^(d1), y_2, ..]`.
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.per_output.iter().map(Vec::len).sum(),
            self.per_output.iter().flatten().cloned(),
        )
    }

    pub fn orders(&self) -> Vec<usize> {
        self.per_output.iter().map(|v| v.len() - 1).collect()
    }
}

/// Block-diagonal exosystem reproducing `spec`, one block per output.
pub fn realize_bohl(spec: &TrajectorySpec) -> Result<Exosystem> {
    spec.validate()?;
    let mut blocks = Vec::with_capacity(spec.outputs.len());
    let mut omega0 = Vec::new();
    for terms in &spec.outputs {
        let mut s_parts = Vec::new();
        let mut q = Vec::new();
        for term in terms {
            let (s, qt, w0) = term.realize()?;
            s_parts.push(s);
            q.extend(qt.iter());
            omega0.extend(w0.iter());
        }
        blocks.push(ExoBlock::new(
            linalg::block_diag(&s_parts),
            RowDVector::from_vec(q),
        ));
    }
    Exosystem::assemble(blocks, DVector::from_vec(omega0))
}

pub fn eval_derivative_stack(
    spec: &TrajectorySpec,
    orders: &[usize],
    t: f64,
) -> Result<DerivativeStack> {
    check_orders(orders, spec.outputs.len())?;
    let per_output = spec
        .outputs
        .iter()
        .zip(orders)
        .map(|(terms, &order)| {
            (0..=order)
                .map(|j| terms.iter().map(|term| term.derivative(j, t)).sum())
                .collect()
        })
        .collect();
    Ok(DerivativeStack { per_output })
}

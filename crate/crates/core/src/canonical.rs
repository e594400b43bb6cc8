//! Controllability, Kronecker indices and the canonical forms built on them.
//!
//! The Luenberger controllable canonical form is obtained from the
//! input-wise column search `b_1..b_m, Ab_1..Ab_m, ...`; a further static
//! feedback `u = -K x~ + F u~` turns it into pure integrator chains
//! (Brunovsky form). The relative-degree transform stacks `C_k A^j` rows and
//! is completed to an invertible state transform.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::json;
use crate::linalg::{self, Mat, COND_LIMIT, STRUCTURE_TOL};
use crate::model::LinearSystem;

/// `[B, AB, ..., A^{n-1}B]` and whether it has full row rank.
pub fn controllability(sys: &LinearSystem) -> (bool, Mat) {
    let (n, m) = (sys.n(), sys.m());
    let mut ctrb = Mat::zeros(n, n * m);
    let mut block = sys.b().clone();
    for j in 0..n {
        ctrb.view_mut((0, j * m), (n, m)).copy_from(&block);
        block = sys.a() * block;
    }
    (linalg::rank(&ctrb) == n, ctrb)
}

/// Controllability indices from the input-wise search. A chain stops at its
/// first column that depends on the columns kept before it.
pub fn kronecker_indices(sys: &LinearSystem) -> Result<Vec<usize>> {
    let (n, m) = (sys.n(), sys.m());
    let mut kappa = vec![0usize; m];
    let mut active = vec![true; m];
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut powers: Vec<DVector<f64>> = (0..m).map(|i| sys.b().column(i).into_owned()).collect();
    for _ in 0..n {
        for i in 0..m {
            if !active[i] || kept.len() == n {
                continue;
            }
            let cand = &powers[i];
            let norm = cand.norm();
            let independent = norm > 0.0 && {
                let mut cols: Vec<DVector<f64>> = kept.clone();
                cols.push(cand / norm);
                linalg::rank(&Mat::from_columns(&cols)) == cols.len()
            };
            if independent {
                kept.push(cand / norm);
                kappa[i] += 1;
            } else {
                active[i] = false;
            }
        }
        for p in powers.iter_mut() {
            *p = sys.a() * &*p;
        }
    }
    if kept.len() < n {
        return Err(Error::Uncontrollable {
            rank: kept.len(),
            n,
        });
    }
    if let Some(i) = kappa.iter().position(|&k| k == 0) {
        return Err(Error::Validation(format!(
            "rank(B) < m: input {} adds no independent direction",
            i + 1
        )));
    }
    Ok(kappa)
}

/// Luenberger controllable canonical form `(T A T^-1, T B, C T^-1)`.
#[derive(Debug, Clone, Serialize)]
pub struct CanonicalDecomposition {
    #[serde(rename = "T", with = "json::matrix")]
    pub t: Mat,
    #[serde(skip)]
    pub t_inv: Mat,
    pub kappa: Vec<usize>,
    pub system: LinearSystem,
    /// 2-norm condition number of `T`.
    pub condition: f64,
    pub warnings: Vec<Warning>,
}

/// Integrator-chain form reached by `u = -K x~ + F u~` from the canonical form.
#[derive(Debug, Clone, Serialize)]
pub struct BrunovskyForm {
    /// State transform from the original coordinates, `x~ = T x`.
    #[serde(rename = "T", with = "json::matrix")]
    pub t: Mat,
    #[serde(skip)]
    pub t_inv: Mat,
    pub kappa: Vec<usize>,
    #[serde(rename = "K", with = "json::matrix")]
    pub k: Mat,
    #[serde(rename = "F", with = "json::matrix")]
    pub f: Mat,
    /// `(A', B', C~)`.
    pub system: LinearSystem,
}

impl BrunovskyForm {
    /// Maps `u~ = -K_b x~` back to `u = -K x` in the original coordinates.
    pub fn gain_to_original(&self, k_b: &Mat) -> Mat {
        (&self.k + &self.f * k_b) * &self.t
    }
}

/// Last row index (0-based) of each chain.
pub fn chain_ends(kappa: &[usize]) -> Vec<usize> {
    kappa
        .iter()
        .scan(0, |acc, &k| {
            *acc += k;
            Some(*acc - 1)
        })
        .collect()
}

pub fn to_controllable_canonical(sys: &LinearSystem) -> Result<CanonicalDecomposition> {
    let kappa = kronecker_indices(sys)?;
    let (n, m) = (sys.n(), sys.m());
    let mut cols = Vec::with_capacity(n);
    for (i, &k) in kappa.iter().enumerate() {
        let mut v = sys.b().column(i).into_owned();
        for _ in 0..k {
            cols.push(v.clone());
            v = sys.a() * v;
        }
    }
    let p = Mat::from_columns(&cols);
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("chain basis is singular".into()))?;

    let ends = chain_ends(&kappa);
    let mut t = Mat::zeros(n, n);
    let mut row = 0;
    for (i, &k) in kappa.iter().enumerate() {
        let mut q = p_inv.row(ends[i]).into_owned();
        for _ in 0..k {
            t.row_mut(row).copy_from(&q);
            q = &q * sys.a();
            row += 1;
        }
    }
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("canonical transform is singular".into()))?;
    let condition = linalg::condition(&t);
    let mut warnings = Vec::new();
    if condition > COND_LIMIT {
        warnings.push(Warning::new(
            Warning::ILL_CONDITIONED_TRANSFORM,
            format!("canonical transform condition number {condition:.3e}"),
        ));
    }

    let raw = sys.transformed(&t, &t_inv);
    let mut a = raw.a().clone();
    let mut b = raw.b().clone();
    snap_canonical(&mut a, &mut b, &kappa, m)?;
    let system = LinearSystem::new(a, b, raw.c().clone())?;
    Ok(CanonicalDecomposition {
        t,
        t_inv,
        kappa,
        system,
        condition,
        warnings,
    })
}

fn structure_tol(m: &Mat) -> f64 {
    STRUCTURE_TOL * (1.0 + m.amax())
}

fn snap(value: &mut f64, target: f64, tol: f64, what: &str, pos: (usize, usize)) -> Result<()> {
    if (*value - target).abs() > tol {
        return Err(Error::Numerical(format!(
            "{what}[{},{}] = {:e}, expected {target} (structure lost)",
            pos.0, pos.1, value
        )));
    }
    *value = target;
    Ok(())
}

/// Enforces the canonical sparsity pattern: shift rows inside each chain,
/// zero input rows except chain ends, unit upper-triangular pivots.
fn snap_canonical(a: &mut Mat, b: &mut Mat, kappa: &[usize], m: usize) -> Result<()> {
    let n = a.nrows();
    let (ta, tb) = (structure_tol(a), structure_tol(b));
    let ends = chain_ends(kappa);
    for (i, &end) in ends.iter().enumerate() {
        let start = end + 1 - kappa[i];
        for r in start..end {
            for c in 0..n {
                let target = if c == r + 1 { 1.0 } else { 0.0 };
                snap(&mut a[(r, c)], target, ta, "A~", (r, c))?;
            }
            for c in 0..m {
                snap(&mut b[(r, c)], 0.0, tb, "B~", (r, c))?;
            }
        }
        for c in 0..=i {
            let target = if c == i { 1.0 } else { 0.0 };
            snap(&mut b[(end, c)], target, tb, "B~", (end, c))?;
        }
    }
    Ok(())
}

pub fn brunovsky_normalize(dec: &CanonicalDecomposition) -> Result<BrunovskyForm> {
    let sys = &dec.system;
    let ends = chain_ends(&dec.kappa);
    let pivots = linalg::select_rows(sys.b(), &ends);
    let stars = linalg::select_rows(sys.a(), &ends);
    let f = linalg::inverse(&pivots, "input pivot matrix")?;
    let k = &f * stars;
    let mut a = sys.a() - sys.b() * &k;
    let mut b = sys.b() * &f;
    snap_brunovsky(&mut a, &mut b, &dec.kappa)?;
    Ok(BrunovskyForm {
        t: dec.t.clone(),
        t_inv: dec.t_inv.clone(),
        kappa: dec.kappa.clone(),
        k,
        f,
        system: LinearSystem::new(a, b, sys.c().clone())?,
    })
}

/// Pure shift blocks in `A`, unit chain-end columns in `B`.
pub(crate) fn snap_brunovsky(a: &mut Mat, b: &mut Mat, kappa: &[usize]) -> Result<()> {
    let (a_target, b_target) = brunovsky_pattern(kappa);
    let (ta, tb) = (structure_tol(a), structure_tol(b));
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            snap(&mut a[(r, c)], a_target[(r, c)], ta, "A'", (r, c))?;
        }
        for c in 0..b.ncols() {
            snap(&mut b[(r, c)], b_target[(r, c)], tb, "B'", (r, c))?;
        }
    }
    Ok(())
}

/// Integrator chains of the given lengths.
pub fn brunovsky_pattern(kappa: &[usize]) -> (Mat, Mat) {
    let n: usize = kappa.iter().sum();
    let m = kappa.len();
    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, m);
    for (i, &end) in chain_ends(kappa).iter().enumerate() {
        let start = end + 1 - kappa[i];
        for r in start..end {
            a[(r, r + 1)] = 1.0;
        }
        b[(end, i)] = 1.0;
    }
    (a, b)
}

/// 1-based chain heads `1, k1+1, ..., n-k_m+1`.
pub fn flat_output_indices(kappa: &[usize]) -> Vec<usize> {
    linalg::offsets(kappa).into_iter().map(|o| o + 1).collect()
}

/// `T = [C_1; C_1 A; ..; C_1 A^{d1-1}; ..; C_m A^{dm-1}]` and its completion `T_n`.
#[derive(Debug, Clone, Serialize)]
pub struct RelDegTransform {
    #[serde(rename = "T", with = "json::matrix")]
    pub t: Mat,
    #[serde(rename = "T_n", with = "json::matrix")]
    pub t_n: Mat,
    pub deltas: Vec<usize>,
}

pub fn reldeg_transform(sys: &LinearSystem, deltas: &[usize]) -> Result<RelDegTransform> {
    let n = sys.n();
    if deltas.len() != sys.m() {
        return Err(Error::Dimension(format!(
            "{} relative degrees for {} outputs",
            deltas.len(),
            sys.m()
        )));
    }
    let delta: usize = deltas.iter().sum();
    if delta > n || deltas.contains(&0) {
        return Err(Error::Precondition(format!(
            "relative degrees {deltas:?} inconsistent with n={n}"
        )));
    }
    let mut rows = Vec::with_capacity(delta);
    for (k, &d) in deltas.iter().enumerate() {
        let mut r = sys.c().row(k).into_owned();
        for _ in 0..d {
            rows.push(r.clone());
            r = &r * sys.a();
        }
    }
    let t = Mat::from_rows(&rows);
    let rank = linalg::rank(&t);
    if rank < delta {
        return Err(Error::Numerical(format!(
            "rank(T) = {rank} < delta = {delta}; relative degrees are inconsistent"
        )));
    }

    // Greedy completion: append the unit row that keeps T_n best conditioned.
    let mut used = vec![false; n];
    while rows.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| !used[j]) {
            let mut cand = rows.clone();
            let mut e = nalgebra::RowDVector::zeros(n);
            e[j] = 1.0;
            cand.push(e);
            let s = linalg::sigma_min(&Mat::from_rows(&cand));
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        let (j, _) = best.expect("a unit row remains while rows < n");
        used[j] = true;
        let mut e = nalgebra::RowDVector::zeros(n);
        e[j] = 1.0;
        rows.push(e);
    }
    let t_n = Mat::from_rows(&rows);
    let cond = linalg::condition(&t_n);
    if cond > COND_LIMIT {
        return Err(Error::Numerical(format!(
            "completed transform T_n is singular (condition {cond:.3e})"
        )));
    }
    Ok(RelDegTransform {
        t,
        t_n,
        deltas: deltas.to_vec(),
    })
}

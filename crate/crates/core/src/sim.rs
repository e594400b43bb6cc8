//! Fixed-step RK4 simulation of plant, controller and reference.

use std::io::{self, Write};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{eval_derivative_stack, Exosystem, LinearSystem, TrajectorySpec};
use crate::tracking::{stack_map, Feedforward, TrackingController};

/// States larger than this in magnitude stop the run.
pub const OVERFLOW_GUARD: f64 = 1e9;
/// Error norms below this are treated as zero by the decay fit.
pub const ERROR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Exo(&'a Exosystem),
    Trajectory(&'a TrajectorySpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub y_d: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub omega: Option<Vec<DVector<f64>>>,
    pub diverged: bool,
}

enum Source<'a> {
    /// `u_ff = F w` (stack feedforward already composed with `w -> derivatives`).
    Exo { f: Mat, exo: &'a Exosystem },
    Trajectory {
        f: Mat,
        orders: Vec<usize>,
        spec: &'a TrajectorySpec,
    },
}

struct Loop<'a> {
    sys: &'a LinearSystem,
    k: &'a Mat,
    source: Source<'a>,
}

impl Loop<'_> {
    fn input(&self, t: f64, x: &DVector<f64>, w: Option<&DVector<f64>>) -> DVector<f64> {
        let ff = match (&self.source, w) {
            (Source::Exo { f, .. }, Some(w)) => f * w,
            (Source::Trajectory { f, orders, spec }, _) => {
                let stack =
                    eval_derivative_stack(spec, orders, t).expect("orders checked against outputs");
                f * stack.flatten()
            }
            (Source::Exo { .. }, None) => unreachable!("exosystem runs carry w"),
        };
        ff - self.k * x
    }

    fn reference(&self, t: f64, w: Option<&DVector<f64>>) -> DVector<f64> {
        match (&self.source, w) {
            (Source::Exo { exo, .. }, Some(w)) => exo.output(w),
            (Source::Trajectory { spec, .. }, _) => spec.value(t),
            (Source::Exo { .. }, None) => unreachable!("exosystem runs carry w"),
        }
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, Option<DVector<f64>>) {
        let n = self.sys.n();
        let x = z.rows(0, n).into_owned();
        let w = match self.source {
            Source::Exo { .. } => Some(z.rows(n, z.len() - n).into_owned()),
            Source::Trajectory { .. } => None,
        };
        (x, w)
    }

    fn deriv(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        let (x, w) = self.split(z);
        let u = self.input(t, &x, w.as_ref());
        let dx = self.sys.a() * &x + self.sys.b() * u;
        match (&self.source, w) {
            (Source::Exo { exo, .. }, Some(w)) => {
                let dw = exo.s() * w;
                DVector::from_iterator(z.len(), dx.iter().chain(dw.iter()).cloned())
            }
            _ => dx,
        }
    }
}

fn rk4_step(lp: &Loop, t: f64, z: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = lp.deriv(t, z);
    let k2 = lp.deriv(t + dt / 2.0, &(z + &k1 * (dt / 2.0)));
    let k3 = lp.deriv(t + dt / 2.0, &(z + &k2 * (dt / 2.0)));
    let k4 = lp.deriv(t + dt, &(z + &k3 * dt));
    z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Integrates `x' = A x + B u`, `w' = S w` from `t = 0` to `horizon`.
/// Stops early, with `diverged` set, once a state exceeds the overflow guard.
pub fn simulate(
    sys: &LinearSystem,
    ctrl: &TrackingController,
    reference: Reference,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<SimTrace> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Validation(format!(
            "dt and horizon must be positive (dt = {dt}, horizon = {horizon})"
        )));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, plant has {} states",
            x0.len(),
            sys.n()
        )));
    }
    let exo_dim = match reference {
        Reference::Exo(exo) => {
            exo.check_outputs(sys.m())?;
            Some(exo.dim())
        }
        Reference::Trajectory(spec) => {
            spec.validate()?;
            if spec.outputs() != sys.m() {
                return Err(Error::Dimension(format!(
                    "trajectory has {} outputs, plant has {}",
                    spec.outputs(),
                    sys.m()
                )));
            }
            None
        }
    };
    ctrl.check_shapes(sys, exo_dim)?;
    let source = match (reference, &ctrl.feedforward) {
        (Reference::Exo(exo), Feedforward::Exo { f }) => Source::Exo { f: f.clone(), exo },
        (Reference::Exo(exo), Feedforward::Stack { f, orders }) => Source::Exo {
            f: f * stack_map(exo, orders),
            exo,
        },
        (Reference::Trajectory(spec), Feedforward::Stack { f, orders }) => Source::Trajectory {
            f: f.clone(),
            orders: orders.clone(),
            spec,
        },
        (Reference::Trajectory(_), Feedforward::Exo { .. }) => {
            return Err(Error::Precondition(
                "exosystem feedforward cannot follow an analytic trajectory".into(),
            ))
        }
    };
    let lp = Loop {
        sys,
        k: &ctrl.k,
        source,
    };

    let steps = (horizon / dt).round().max(1.0) as usize;
    let mut z = match reference {
        Reference::Exo(exo) => DVector::from_iterator(
            sys.n() + exo.dim(),
            x0.iter().chain(exo.omega0().iter()).cloned(),
        ),
        Reference::Trajectory(_) => x0.clone(),
    };
    let mut trace = SimTrace {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        y_d: Vec::with_capacity(steps + 1),
        e: Vec::with_capacity(steps + 1),
        omega: exo_dim.map(|_| Vec::with_capacity(steps + 1)),
        diverged: false,
    };
    for i in 0..=steps {
        let t = i as f64 * dt;
        let (x, w) = lp.split(&z);
        let u = lp.input(t, &x, w.as_ref());
        let y = sys.c() * &x;
        let yd = lp.reference(t, w.as_ref());
        trace.e.push(&y - &yd);
        trace.t.push(t);
        trace.u.push(u);
        trace.y.push(y);
        trace.y_d.push(yd);
        if let (Some(ws), Some(w)) = (trace.omega.as_mut(), w) {
            ws.push(w);
        }
        let blown = x.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD);
        trace.x.push(x);
        if blown {
            trace.diverged = true;
            break;
        }
        if i < steps {
            z = rk4_step(&lp, t, &z, dt);
        }
    }
    Ok(trace)
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn error_norms(&self) -> Vec<f64> {
        self.e.iter().map(|e| e.norm()).collect()
    }

    /// Header `t,x1..xn,u1..um,y1..ym,yd1..ydm,e1..em[,w1..wr]`, one row per step.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let Some(first) = self.x.first() else {
            return Ok(());
        };
        let (n, m) = (first.len(), self.u[0].len());
        let r = self
            .omega
            .as_ref()
            .and_then(|w| w.first())
            .map_or(0, |w| w.len());
        let mut header = vec!["t".to_string()];
        let groups: [(&str, usize); 6] =
            [("x", n), ("u", m), ("y", m), ("yd", m), ("e", m), ("w", r)];
        for (name, count) in groups {
            header.extend((1..=count).map(|i| format!("{name}{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![self.t[i].to_string()];
            let mut cols: Vec<&DVector<f64>> =
                vec![&self.x[i], &self.u[i], &self.y[i], &self.y_d[i], &self.e[i]];
            if let Some(ws) = &self.omega {
                cols.push(&ws[i]);
            }
            for v in cols {
                row.extend(v.iter().map(f64::to_string));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// Slope of `ln |e|` against `t`.
    Rate(f64),
    /// Error at or below the noise floor throughout the fit window.
    Exact,
}

impl Serialize for Decay {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Decay::Rate(r) => s.serialize_f64(*r),
            Decay::Exact => s.serialize_str("exact"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingMetrics {
    pub final_error: f64,
    pub max_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<Decay>,
    pub diverged: bool,
    pub final_time: f64,
    pub steps: usize,
}

/// Final and peak error, divergence flag and a least-squares fit of
/// `ln |e|` over the second half of the run.
pub fn metrics(trace: &SimTrace) -> Result<TrackingMetrics> {
    if trace.is_empty() {
        return Err(Error::Validation("empty trace".into()));
    }
    let norms = trace.error_norms();
    let final_error = *norms.last().expect("nonempty");
    let max_error = norms.iter().cloned().fold(0.0, f64::max);
    let decay_rate = if trace.diverged {
        None
    } else {
        let start = trace.len() / 2;
        let pts: Vec<(f64, f64)> = (start..trace.len())
            .filter(|&i| norms[i] > ERROR_FLOOR && norms[i].is_finite())
            .map(|i| (trace.t[i], norms[i].ln()))
            .collect();
        if pts.len() < 2 {
            if norms[start..].iter().all(|&e| e <= ERROR_FLOOR) {
                Some(Decay::Exact)
            } else {
                None
            }
        } else {
            Some(Decay::Rate(slope(&pts)))
        }
    };
    Ok(TrackingMetrics {
        final_error,
        max_error,
        decay_rate,
        diverged: trace.diverged,
        final_time: *trace.t.last().expect("nonempty"),
        steps: trace.len() - 1,
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mt, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
        (a + (t - mt) * (y - my), b + (t - mt) * (t - mt))
    });
    num / den
}

/// Eigenvalues of `A - B K`.
pub fn internal_spectrum(sys: &LinearSystem, ctrl: &TrackingController) -> Vec<Complex64> {
    linalg::eigenvalues(&sys.closed_loop(&ctrl.k))
}

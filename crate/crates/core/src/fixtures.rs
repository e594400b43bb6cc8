//! Seeded plant, exosystem and spec generators for tests and sweeps.

use nalgebra::{DVector, RowDVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis;
use crate::canonical;
use crate::linalg::{self, Mat};
use crate::model::{validate_system, ExoBlock, Exosystem, LinearSystem};
use crate::tracking::ErrorDynamicsSpec;

pub type FixtureRng = ChaCha8Rng;

pub fn rng(seed: u64) -> FixtureRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn m(r: usize, c: usize, d: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, d)
}

fn uniform(rng: &mut FixtureRng, r: usize, c: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(lo..hi))
}

pub fn double_integrator() -> LinearSystem {
    chain_plant(&[1.0, 0.0])
}

/// Single integrator chain with output `y = c_0 x_1 + c_1 x_2 + ..`,
/// i.e. transfer function `(c_0 + c_1 s + ..) / s^n`.
pub fn chain_plant(c: &[f64]) -> LinearSystem {
    let n = c.len();
    let (a, b) = canonical::brunovsky_pattern(&[n]);
    LinearSystem::new(a, b, m(1, n, c)).expect("valid chain plant")
}

pub fn sinusoid(freq: f64) -> Exosystem {
    Exosystem::assemble(
        vec![ExoBlock::new(
            m(2, 2, &[0.0, freq, -freq, 0.0]),
            RowDVector::from_row_slice(&[1.0, 0.0]),
        )],
        DVector::from_row_slice(&[0.0, 1.0]),
    )
    .expect("valid sinusoid")
}

pub fn step(value: f64) -> Exosystem {
    Exosystem::assemble(
        vec![ExoBlock::new(
            m(1, 1, &[0.0]),
            RowDVector::from_row_slice(&[1.0]),
        )],
        DVector::from_row_slice(&[value]),
    )
    .expect("valid step")
}

/// Random `T` with `cond(T) <= 50`, returned with its inverse.
pub fn random_similarity(rng: &mut FixtureRng, n: usize) -> (Mat, Mat) {
    loop {
        let t = Mat::identity(n, n) + uniform(rng, n, n, -0.7, 0.7);
        if linalg::condition(&t) <= 50.0 {
            let inv = t.clone().try_inverse().expect("well-conditioned");
            return (t, inv);
        }
    }
}

pub fn scramble(rng: &mut FixtureRng, sys: &LinearSystem) -> LinearSystem {
    let (t, t_inv) = random_similarity(rng, sys.n());
    sys.transformed(&t, &t_inv)
}

/// Dense random plant with entries scaled so the spectral radius stays near 1.
pub fn random_controllable(rng: &mut FixtureRng, n: usize, m: usize) -> LinearSystem {
    let scale = 1.0 / (n as f64).sqrt();
    loop {
        let a = uniform(rng, n, n, -1.0, 1.0) * (1.7 * scale);
        let b = uniform(rng, n, m, -1.0, 1.0);
        let c = uniform(rng, m, n, -1.0, 1.0);
        let sys = LinearSystem::new(a, b, c).expect("shapes are consistent");
        if validate_system(&sys).passed() && canonical::to_controllable_canonical(&sys).is_ok() {
            return sys;
        }
    }
}

/// One output's reference generator: step, sinusoid or sinusoid plus
/// offset, hidden behind a random similarity.
pub fn random_exo_block(rng: &mut FixtureRng) -> ExoBlock {
    let r = rng.gen_range(1..=3);
    let w = rng.gen_range(0.3..2.5);
    let s = match r {
        1 => m(1, 1, &[0.0]),
        2 => m(2, 2, &[0.0, w, -w, 0.0]),
        _ => m(3, 3, &[0.0, w, 0.0, -w, 0.0, 0.0, 0.0, 0.0, 0.0]),
    };
    let (p, p_inv) = random_similarity(rng, r);
    let q = uniform(rng, 1, r, 0.2, 1.0);
    ExoBlock::new(&p_inv * s * &p, (q * &p).row(0).into_owned())
}

pub fn random_exosystem(rng: &mut FixtureRng, outputs: usize) -> Exosystem {
    let blocks: Vec<ExoBlock> = (0..outputs).map(|_| random_exo_block(rng)).collect();
    let r: usize = blocks.iter().map(ExoBlock::dim).sum();
    let omega0 = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0));
    Exosystem::assemble(blocks, omega0).expect("consistent blocks")
}

/// Smallest distance between an exosystem eigenvalue and a point where the
/// Rosenbrock matrix drops rank, measured by `sigma_min(R(lambda))`.
pub fn solvability_margin(sys: &LinearSystem, exo: &Exosystem) -> f64 {
    exo.eigenvalues()
        .into_iter()
        .map(|z| {
            let sv = analysis::rosenbrock_matrix(sys, z)
                .svd(false, false)
                .singular_values;
            sv.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct RegulatorCase {
    pub sys: LinearSystem,
    pub exo: Exosystem,
}

/// Random plant and exosystem kept away from zero/eigenvalue coincidence.
pub fn random_regulator_case(rng: &mut FixtureRng, n: usize, m: usize) -> RegulatorCase {
    loop {
        let sys = random_controllable(rng, n, m);
        let exo = random_exosystem(rng, m);
        if solvability_margin(&sys, &exo) > 1e-2 {
            return RegulatorCase { sys, exo };
        }
    }
}

/// SISO plant with no finite zeros, in scrambled coordinates.
pub fn random_flat_siso(rng: &mut FixtureRng, n: usize) -> LinearSystem {
    let mut c = vec![0.0; n];
    c[0] = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut a = canonical::brunovsky_pattern(&[n]).0;
    for j in 0..n {
        a[(n - 1, j)] = rng.gen_range(-1.0..1.0);
    }
    let b = canonical::brunovsky_pattern(&[n]).1;
    let sys = LinearSystem::new(a, b, m(1, n, &c)).expect("valid companion plant");
    scramble(rng, &sys)
}

fn random_decoupling(rng: &mut FixtureRng, m: usize) -> Mat {
    loop {
        let d = Mat::identity(m, m) + uniform(rng, m, m, -0.6, 0.6);
        if linalg::condition(&d) <= 20.0 {
            return d;
        }
    }
}

/// Output chains of lengths `deltas` plus `n_eta` internal states whose
/// zero dynamics have the prescribed spectrum, in scrambled coordinates.
fn normal_form(rng: &mut FixtureRng, deltas: &[usize], zeros: &[Complex64]) -> LinearSystem {
    let d: usize = deltas.iter().sum();
    let n_eta = zeros.len();
    let n = d + n_eta;
    let mm = deltas.len();
    let (pa, pb) = canonical::brunovsky_pattern(deltas);
    let ends = canonical::chain_ends(deltas);
    let dstar = random_decoupling(rng, mm);

    let mut a = Mat::zeros(n, n);
    a.view_mut((0, 0), (d, d)).copy_from(&pa);
    let mut b = Mat::zeros(n, mm);
    b.view_mut((0, 0), (d, mm)).copy_from(&(pb * &dstar));
    for &e in &ends {
        for j in 0..n {
            a[(e, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    if n_eta > 0 {
        let a_delta_star = linalg::select_rows(&a, &ends)
            .columns(d, n_eta)
            .into_owned();
        let b_eta = uniform(rng, n_eta, mm, -1.0, 1.0);
        let target = real_matrix_with_spectrum(rng, zeros);
        let dinv = dstar.clone().try_inverse().expect("well-conditioned D*");
        let a_eta = target + &b_eta * dinv * a_delta_star;
        a.view_mut((d, d), (n_eta, n_eta)).copy_from(&a_eta);
        a.view_mut((d, 0), (n_eta, d))
            .copy_from(&uniform(rng, n_eta, d, -1.0, 1.0));
        b.view_mut((d, 0), (n_eta, mm)).copy_from(&b_eta);
    }
    let mut c = Mat::zeros(mm, n);
    for (k, off) in linalg::offsets(deltas).into_iter().enumerate() {
        c[(k, off)] = 1.0;
    }
    let sys = LinearSystem::new(a, b, c).expect("valid normal form");
    scramble(rng, &sys)
}

/// Real matrix with the given spectrum (conjugate pairs adjacent).
fn real_matrix_with_spectrum(rng: &mut FixtureRng, eigs: &[Complex64]) -> Mat {
    let k = eigs.len();
    let mut j = Mat::zeros(k, k);
    let mut i = 0;
    while i < k {
        let z = eigs[i];
        if z.im.abs() > 0.0 {
            j[(i, i)] = z.re;
            j[(i + 1, i + 1)] = z.re;
            j[(i, i + 1)] = z.im;
            j[(i + 1, i)] = -z.im;
            i += 2;
        } else {
            j[(i, i)] = z.re;
            i += 1;
        }
    }
    let (v, v_inv) = random_similarity(rng, k);
    v_inv * j * v
}

/// Distinct zeros in `[-3, 3]` (mixed signs), occasionally a complex pair.
pub fn random_zeros(rng: &mut FixtureRng, count: usize) -> Vec<Complex64> {
    loop {
        let mut zs = Vec::with_capacity(count);
        while zs.len() < count {
            if count - zs.len() >= 2 && rng.gen_bool(0.3) {
                let (re, im) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.5..2.0));
                zs.push(Complex64::new(re, im));
                zs.push(Complex64::new(re, -im));
            } else {
                zs.push(Complex64::new(rng.gen_range(-3.0..3.0), 0.0));
            }
        }
        let separated = zs
            .iter()
            .enumerate()
            .all(|(i, a)| zs[i + 1..].iter().all(|b| (a - b).norm() > 0.3));
        if separated {
            return zs;
        }
    }
}

/// Plant whose outputs have relative degrees `deltas` summing to `n`.
pub fn random_flat_mimo(rng: &mut FixtureRng, deltas: &[usize]) -> LinearSystem {
    normal_form(rng, deltas, &[])
}

/// Plant with relative degrees `deltas`, invertible decoupling matrix and
/// `n_eta` invariant zeros; returns the zeros too.
pub fn random_nonflat(
    rng: &mut FixtureRng,
    deltas: &[usize],
    n_eta: usize,
) -> (LinearSystem, Vec<Complex64>) {
    loop {
        let zeros = random_zeros(rng, n_eta);
        let sys = normal_form(rng, deltas, &zeros);
        if validate_system(&sys).passed() {
            return (sys, zeros);
        }
    }
}

/// Relative-degree splits of `n` into `m` positive parts, chosen at random.
pub fn random_deltas(rng: &mut FixtureRng, n: usize, m: usize) -> Vec<usize> {
    let mut d = vec![1; m];
    for _ in m..n {
        let i = rng.gen_range(0..m);
        d[i] += 1;
    }
    d
}

/// Hurwitz error dynamics with roots in `[-3, -0.5]`, some complex.
pub fn random_hurwitz_spec(rng: &mut FixtureRng, orders: &[usize]) -> ErrorDynamicsSpec {
    let coeffs = orders
        .iter()
        .map(|&d| {
            let mut roots = Vec::with_capacity(d);
            while roots.len() < d {
                if d - roots.len() >= 2 && rng.gen_bool(0.3) {
                    let (re, im) = (rng.gen_range(-2.5..-0.5), rng.gen_range(0.2..2.0));
                    roots.push(Complex64::new(re, im));
                    roots.push(Complex64::new(re, -im));
                } else {
                    roots.push(Complex64::new(rng.gen_range(-3.0..-0.5), 0.0));
                }
            }
            let mut c = linalg::poly_from_roots(&roots);
            c.pop();
            c
        })
        .collect();
    ErrorDynamicsSpec::new(coeffs).expect("roots are in the open left half-plane")
}

/// Integer unimodular `P` (det 1) with its integer inverse.
pub fn unimodular(n: usize) -> (Mat, Mat) {
    let l = Mat::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => ((i + 2 * j) % 3) as f64 - 1.0,
        std::cmp::Ordering::Less => 0.0,
    });
    let u = Mat::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Less => ((2 * i + j + 1) % 3) as f64 - 1.0,
        std::cmp::Ordering::Greater => 0.0,
    });
    let p = l * u;
    let inv = p.clone().try_inverse().expect("unimodular").map(f64::round);
    (p, inv)
}

/// Plant and exosystem with an eigenvalue exactly at an invariant zero,
/// plus a copy of the exosystem with that eigenvalue moved by `1e-2`.
#[derive(Debug, Clone)]
pub struct Coincidence {
    pub name: &'static str,
    pub sys: LinearSystem,
    pub exo: Exosystem,
    pub perturbed: Exosystem,
    pub zero: Complex64,
    /// Exosystem block carrying the coincident eigenvalue.
    pub block: usize,
}

fn exo_blocks(blocks: &[(Mat, &[f64])]) -> Exosystem {
    let bs: Vec<ExoBlock> = blocks
        .iter()
        .map(|(s, q)| ExoBlock::new(s.clone(), RowDVector::from_row_slice(q)))
        .collect();
    let r: usize = bs.iter().map(ExoBlock::dim).sum();
    Exosystem::assemble(bs, DVector::from_element(r, 1.0)).expect("consistent blocks")
}

fn rotation(w: f64) -> Mat {
    m(2, 2, &[0.0, w, -w, 0.0])
}

/// Integer-exact fixtures: chains with polynomial outputs, hidden by a
/// unimodular change of coordinates.
pub fn coincidence_fixtures() -> Vec<Coincidence> {
    let hide = |a: Mat, b: Mat, c: Mat| {
        let (p, p_inv) = unimodular(a.nrows());
        LinearSystem::new(a, b, c)
            .expect("valid fixture")
            .transformed(&p, &p_inv)
    };
    let chains = |kappa: &[usize], c: Mat| {
        let (a, b) = canonical::brunovsky_pattern(kappa);
        hide(a, b, c)
    };
    let re = |x: f64| Complex64::new(x, 0.0);
    vec![
        Coincidence {
            name: "siso real zero at 2",
            sys: chains(&[2], m(1, 2, &[-2.0, 1.0])),
            exo: exo_blocks(&[(m(1, 1, &[2.0]), &[1.0])]),
            perturbed: exo_blocks(&[(m(1, 1, &[2.01]), &[1.0])]),
            zero: re(2.0),
            block: 0,
        },
        Coincidence {
            name: "siso zeros at +-2i",
            sys: chains(&[3], m(1, 3, &[4.0, 0.0, 1.0])),
            exo: exo_blocks(&[(rotation(2.0), &[1.0, 0.0])]),
            perturbed: exo_blocks(&[(rotation(2.01), &[1.0, 0.0])]),
            zero: Complex64::new(0.0, 2.0),
            block: 0,
        },
        Coincidence {
            name: "mimo zeros at 1 and -3",
            sys: chains(&[2, 2], m(2, 4, &[-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 3.0, 1.0])),
            exo: exo_blocks(&[(m(1, 1, &[1.0]), &[1.0]), (rotation(1.0), &[1.0, 0.0])]),
            perturbed: exo_blocks(&[(m(1, 1, &[1.01]), &[1.0]), (rotation(1.0), &[1.0, 0.0])]),
            zero: re(1.0),
            block: 0,
        },
        Coincidence {
            name: "mimo zeros at +-2i on the second output",
            sys: chains(&[3, 1], m(2, 4, &[4.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0])),
            exo: exo_blocks(&[(m(1, 1, &[0.0]), &[1.0]), (rotation(2.0), &[1.0, 0.0])]),
            perturbed: exo_blocks(&[(m(1, 1, &[0.0]), &[1.0]), (rotation(2.01), &[1.0, 0.0])]),
            zero: Complex64::new(0.0, 2.0),
            block: 1,
        },
    ]
}

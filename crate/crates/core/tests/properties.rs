use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use regtrack::analysis;
use regtrack::canonical;
use regtrack::fixtures::{self, FixtureRng};
use regtrack::linalg::{self, CMat, Mat};
use regtrack::model::{self, BohlTerm, ExoBlock, TrajectorySpec};
use regtrack::regulator::{self, SolveMethod};
use regtrack::sim::{self, Decay, Reference};
use regtrack::tracking::{self, ErrorDynamicsSpec, Gain};
use regtrack::{Error, Exosystem, LinearSystem};

/// Canonical transforms up to this condition number keep absolute 1e-8 accuracy.
const WELL_CONDITIONED: f64 = 1e3;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3).prop_flat_map(|m| (m..=7).prop_map(move |n| (n, m)))
}

/// Pairs each element of `a` with its nearest unused element of `b`.
fn matched_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

fn nonflat(rng: &mut FixtureRng, m: usize) -> (LinearSystem, Vec<Complex64>) {
    let n = rng.gen_range((m + 1)..=7);
    let delta = rng.gen_range(m..n);
    let deltas = fixtures::random_deltas(rng, delta, m);
    fixtures::random_nonflat(rng, &deltas, n - delta)
}

fn random_term(rng: &mut FixtureRng) -> BohlTerm {
    match rng.gen_range(0..5) {
        0 => BohlTerm::Const {
            value: rng.gen_range(-2.0..2.0),
        },
        1 => BohlTerm::Poly {
            coeffs: (0..rng.gen_range(1..4))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        },
        2 => BohlTerm::Exp {
            rate: rng.gen_range(-1.0..0.5),
            amp: rng.gen_range(-2.0..2.0),
        },
        3 => BohlTerm::Sin {
            freq: rng.gen_range(0.3..3.0),
            amp: rng.gen_range(-2.0..2.0),
            phase: rng.gen_range(-3.0..3.0),
        },
        _ => BohlTerm::ExpSin {
            rate: rng.gen_range(-1.0..0.3),
            freq: rng.gen_range(0.3..3.0),
            amp: rng.gen_range(-2.0..2.0),
            phase: rng.gen_range(-3.0..3.0),
        },
    }
}

fn random_trajectory(rng: &mut FixtureRng, outputs: usize) -> TrajectorySpec {
    let per_output = (0..outputs)
        .map(|_| (0..rng.gen_range(1..4)).map(|_| random_term(rng)).collect())
        .collect();
    TrajectorySpec::new(per_output).unwrap()
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn kronecker_indices_sum_to_n_and_survive_similarity(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let sys = fixtures::random_controllable(&mut rng, n, m);
        let kappa = canonical::kronecker_indices(&sys).unwrap();
        prop_assert_eq!(kappa.iter().sum::<usize>(), n);
        let moved = fixtures::scramble(&mut rng, &sys);
        prop_assert_eq!(canonical::kronecker_indices(&moved).unwrap(), kappa);
    }

    #[test]
    fn canonical_transform_round_trips(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let sys = fixtures::random_controllable(&mut rng, n, m);
        let dec = canonical::to_controllable_canonical(&sys).unwrap();
        let back = &dec.t_inv * dec.system.a() * &dec.t;
        let err = (back - sys.a()).norm();
        let inv_err = (&dec.t_inv * &dec.t - Mat::identity(n, n)).norm();
        if dec.condition <= WELL_CONDITIONED {
            prop_assert!(err < 1e-8 * (1.0 + sys.a().norm()), "round trip {:e}", err);
            prop_assert!(inv_err < 1e-8);
        }
        // Forming A~ costs eps * cond * |A|; mapping back multiplies by cond again.
        let first_order = 64.0 * f64::EPSILON * dec.condition.powi(2) * (1.0 + sys.a().norm());
        prop_assert!(err < first_order && inv_err < first_order, "cond {:e}: {:e} {:e}", dec.condition, err, inv_err);

        let br = canonical::brunovsky_normalize(&dec).unwrap();
        let kmax = *br.kappa.iter().max().unwrap();
        prop_assert_eq!(linalg::mat_pow(br.system.a(), kmax).norm(), 0.0);
    }

    #[test]
    fn reldeg_transform_has_rank_delta(seed in any::<u64>(), m in 1usize..=3) {
        let mut rng = fixtures::rng(seed);
        let (sys, _) = nonflat(&mut rng, m);
        let rd = analysis::relative_degrees(&sys).unwrap();
        let tr = canonical::reldeg_transform(&sys, &rd.deltas).unwrap();
        prop_assert_eq!(linalg::rank(&tr.t), rd.total);
        prop_assert_eq!(linalg::rank(&tr.t_n), sys.n());
    }

    #[test]
    fn invariant_zeros_are_similarity_invariant(seed in any::<u64>(), m in 1usize..=3) {
        let mut rng = fixtures::rng(seed);
        let (sys, zeros) = nonflat(&mut rng, m);
        let here = analysis::invariant_zeros(&sys).unwrap().zeros;
        let there = analysis::invariant_zeros(&fixtures::scramble(&mut rng, &sys)).unwrap().zeros;
        prop_assert!(matched_distance(&here, &zeros) < 1e-6, "{:?} vs {:?}", here, zeros);
        prop_assert!(matched_distance(&here, &there) < 1e-6);
        if m == 1 {
            let rd = analysis::relative_degrees(&sys).unwrap();
            prop_assert_eq!(here.len(), sys.n() - rd.total);
        }
    }

    #[test]
    fn mk_singular_exactly_at_coincidence(seed in any::<u64>(), m in 1usize..=2, offset in prop_oneof![Just(0.0), 1e-2..1.0f64]) {
        let mut rng = fixtures::rng(seed);
        let (sys, zeros) = nonflat(&mut rng, m);
        prop_assume!(zeros.iter().all(|z| z.norm() > 0.1 + offset));
        let z = zeros[rng.gen_range(0..zeros.len())];
        let s0 = if z.im.abs() > 0.0 {
            Mat::from_row_slice(2, 2, &[z.re + offset, z.im.abs(), -z.im.abs(), z.re + offset])
        } else {
            Mat::from_element(1, 1, z.re + offset)
        };
        let k0 = rng.gen_range(0..m);
        let blocks: Vec<ExoBlock> = (0..m)
            .map(|k| {
                let s = if k == k0 { s0.clone() } else { Mat::zeros(1, 1) };
                let r = s.nrows();
                ExoBlock::new(s, nalgebra::RowDVector::from_element(r, 1.0))
            })
            .collect();
        let r: usize = blocks.iter().map(ExoBlock::dim).sum();
        let exo = Exosystem::assemble(blocks, DVector::from_element(r, 1.0)).unwrap();
        // The verdict is computed in canonical coordinates and only resolves
        // coincidence when the transform is well conditioned.
        let condition = canonical::to_controllable_canonical(&sys).map(|d| d.condition).unwrap_or(f64::INFINITY);
        let mks = if condition <= WELL_CONDITIONED { analysis::mk_matrices(&sys, &exo).unwrap() } else { Vec::new() };
        for (k, (mk, block)) in mks.iter().zip(exo.blocks()).enumerate() {
            let coincident = linalg::eigenvalues(&block.s)
                .iter()
                .any(|l| zeros.iter().any(|z| (l - z).norm() < 1e-6));
            prop_assert_eq!(mk.regular, !coincident, "block {} sigma_min {:e}", k, mk.sigma_min);
        }
        let solved = tracking::solve_with_fallback(&sys, &exo);
        prop_assert_eq!(solved.is_ok(), offset > 0.0);
        prop_assert_eq!(analysis::check_solvability(&sys, exo.s()).solvable, offset > 0.0);
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn regulator_solutions_are_sound_and_agree(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let case = fixtures::random_regulator_case(&mut rng, n, m);
        let (s, q) = (case.exo.s(), case.exo.q());
        let condition = canonical::to_controllable_canonical(&case.sys).unwrap().condition;
        let oracle = regulator::solve(&case.sys, &case.exo, SolveMethod::Oracle).unwrap();
        let (r1, r2) = regulator::residuals(&case.sys, s, q, &oracle.pi, &oracle.gamma);
        let scale = 1.0 + oracle.pi.norm();
        prop_assert!(r1 < regulator::RESIDUAL_TOL * scale && r2 < regulator::RESIDUAL_TOL * scale);

        let analytic = match regulator::solve(&case.sys, &case.exo, SolveMethod::Analytic) {
            Ok(sol) => sol,
            Err(Error::Numerical(msg)) => {
                prop_assert!(condition > WELL_CONDITIONED, "cond {:e}: {}", condition, msg);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let (r1, r2) = regulator::residuals(&case.sys, s, q, &analytic.pi, &analytic.gamma);
        let bound = regulator::BACKTRANSFORM_TOL * (1.0 + analytic.pi.norm());
        prop_assert!(r1 < bound && r2 < bound, "residuals {:e} {:e}", r1, r2);
        if condition <= WELL_CONDITIONED {
            prop_assert!((&analytic.pi - &oracle.pi).norm() < 1e-7 * scale);
            prop_assert!((&analytic.gamma - &oracle.gamma).norm() < 1e-7 * scale);
        }
    }

    #[test]
    fn fbt_gain_adds_spec_to_companion_row(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = fixtures::rng(seed);
        let sys = fixtures::random_flat_siso(&mut rng, n);
        let spec = fixtures::random_hurwitz_spec(&mut rng, &[n]);
        let ctrl = tracking::design_fbt(&sys, &spec).unwrap();
        let dec = canonical::to_controllable_canonical(&sys).unwrap();
        let k_can = &ctrl.k * &dec.t_inv;
        let b = dec.system.b()[(n - 1, 0)];
        for i in 0..n {
            let a = -dec.system.a()[(n - 1, i)];
            let p = spec.coeffs[0][i];
            prop_assert!((b * k_can[(0, i)] + a - p).abs() < 1e-8 * (1.0 + p.abs()), "i={}", i);
        }
    }

    #[test]
    fn ort_and_fbt_coincide_on_flat_plants(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let deltas = fixtures::random_deltas(&mut rng, n, m);
        let flat = fixtures::random_flat_mimo(&mut rng, &deltas);
        let sys = fixtures::scramble(&mut rng, &flat);
        let exo = fixtures::random_exosystem(&mut rng, m);
        let spec = fixtures::random_hurwitz_spec(&mut rng, &deltas);
        let report = tracking::verify_equivalence(&sys, &exo, &spec).unwrap();
        prop_assert!(report.equal(), "K gap {:e}, F gap {:e}", report.k_difference, report.feedforward_difference);
    }

    #[test]
    fn zero_cancellation_leaves_reduced_transfer(seed in any::<u64>()) {
        let mut rng = fixtures::rng(seed);
        let (sys, _) = nonflat(&mut rng, 1);
        let n = sys.n();
        let delta = analysis::relative_degrees(&sys).unwrap().total;
        let hat = fixtures::random_hurwitz_spec(&mut rng, &[delta]).coeffs[0].clone();
        let ctrl = match tracking::zero_cancel_siso(&sys, &hat) {
            Err(Error::Numerical(_)) => {
                prop_assume!(false, "canonical structure lost");
                unreachable!()
            }
            other => other.unwrap(),
        };
        let b_tau = (sys.c() * linalg::mat_pow(sys.a(), delta - 1) * sys.b())[(0, 0)];
        let mut den = hat.clone();
        den.push(1.0 / b_tau);
        // Points right of every closed-loop pole (zeros lie in |Re| <= 3).
        let a_cl = linalg::to_complex(&sys.closed_loop(&ctrl.k));
        let (b, c) = (linalg::to_complex(sys.b()), linalg::to_complex(sys.c()));
        for w in [0.0, 1.0, 3.0, 10.0] {
            let s = Complex64::new(5.0, w);
            let resolvent = (CMat::identity(n, n) * s - &a_cl).lu().solve(&b).unwrap();
            let got = (&c * resolvent)[(0, 0)];
            let want = Complex64::new(1.0, 0.0) / den.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &d| acc * s + d);
            prop_assert!((got - want).norm() < 1e-8 * want.norm(), "s = {}: {} vs {}", s, got, want);
        }
    }

    #[test]
    fn zero_compensation_exposes_invariant_zeros(seed in any::<u64>(), m in 1usize..=3) {
        let mut rng = fixtures::rng(seed);
        let (sys, zeros) = nonflat(&mut rng, m);
        let zc = tracking::zero_compensate_mimo(&sys).unwrap();
        prop_assert!(matched_distance(&zc.eta_spectrum, &zeros) < 1e-6);
    }

    #[test]
    fn ort_closed_loop_is_hurwitz_with_spec_poles(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let case = fixtures::random_regulator_case(&mut rng, n, m);
        let kappa = canonical::kronecker_indices(&case.sys).unwrap();
        let spec = fixtures::random_hurwitz_spec(&mut rng, &kappa);
        let ctrl = tracking::design_ort(&case.sys, &case.exo, Gain::Spec(spec.clone())).unwrap();
        let a_cl = case.sys.closed_loop(&ctrl.k);
        prop_assert!(linalg::is_hurwitz(&linalg::eigenvalues(&a_cl)));
        let scale = 1.0 + a_cl.norm();
        for k in 0..kappa.len() {
            for root in spec.roots(k) {
                let shifted = linalg::to_complex(&a_cl) - CMat::identity(n, n) * root;
                let backward = shifted.svd(false, false).singular_values.min();
                prop_assert!(backward < 1e-9 * scale, "root {} backward error {:e}", root, backward);
            }
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn error_vanishes_on_the_regulator_manifold(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let case = fixtures::random_regulator_case(&mut rng, n, m);
        let kappa = canonical::kronecker_indices(&case.sys).unwrap();
        let spec = fixtures::random_hurwitz_spec(&mut rng, &kappa);
        let ctrl = tracking::design_ort(&case.sys, &case.exo, Gain::Spec(spec)).unwrap();
        let sol = tracking::solve_with_fallback(&case.sys, &case.exo).unwrap();
        let x0 = &sol.pi * case.exo.omega0();
        let trace = sim::simulate(&case.sys, &ctrl, Reference::Exo(&case.exo), &x0, 3.0, 1e-2).unwrap();
        // Forming u = -K x + F w cancels terms of size |K| |x| at every step.
        let rounding = trace.len() as f64 * f64::EPSILON * (ctrl.k.norm() + ctrl.feedforward.matrix().norm());
        let scale = 1.0 + x0.norm() + case.exo.omega0().norm();
        let worst = trace.error_norms().into_iter().fold(0.0, f64::max);
        prop_assert!(worst < (1e-8 + rounding) * scale, "max error {:e}", worst);
    }

    #[test]
    fn error_decays_at_slowest_pole(seed in any::<u64>(), (n, m) in dims(), slowest in -1.5..-0.5f64) {
        let mut rng = fixtures::rng(seed);
        let case = fixtures::random_regulator_case(&mut rng, n, m);
        let kappa = canonical::kronecker_indices(&case.sys).unwrap();
        let mut poles: Vec<Vec<f64>> = kappa
            .iter()
            .map(|&k| (0..k).map(|_| slowest * rng.gen_range(3.0..5.0)).collect())
            .collect();
        poles[rng.gen_range(0..kappa.len())][0] = slowest;
        let spec = ErrorDynamicsSpec::from_real_poles(&poles).unwrap();
        let ctrl = tracking::design_ort(&case.sys, &case.exo, Gain::Spec(spec)).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let trace = sim::simulate(&case.sys, &ctrl, Reference::Exo(&case.exo), &x0, 24.0 / slowest.abs(), 1e-2).unwrap();
        let met = sim::metrics(&trace).unwrap();
        match met.decay_rate {
            Some(Decay::Rate(rate)) => prop_assert!((rate - slowest).abs() < 0.15 * slowest.abs(), "rate {} vs {}", rate, slowest),
            other => prop_assert!(false, "no decay rate: {:?}", other),
        }
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn bohl_realization_reproduces_signal(seed in any::<u64>(), outputs in 1usize..=3, t in 0.0..4.0f64) {
        let mut rng = fixtures::rng(seed);
        let spec = random_trajectory(&mut rng, outputs);
        let exo = model::realize_bohl(&spec).unwrap();
        let omega = (exo.s() * t).exp() * exo.omega0();
        let got = exo.output(&omega);
        let want = spec.value(t);
        prop_assert!((&got - &want).norm() < 1e-9 * (1.0 + want.norm()), "{} vs {}", got, want);
    }

    #[test]
    fn derivative_stack_matches_differences(seed in any::<u64>(), outputs in 1usize..=3, t in 0.5..3.0f64) {
        let mut rng = fixtures::rng(seed);
        let spec = random_trajectory(&mut rng, outputs);
        let orders: Vec<usize> = (0..outputs).map(|_| rng.gen_range(1..4)).collect();
        let h = 1e-4;
        let at = |t: f64| model::eval_derivative_stack(&spec, &orders, t).unwrap().per_output;
        let (mid, lo, hi) = (at(t), at(t - h), at(t + h));
        for k in 0..outputs {
            for j in 1..=orders[k] {
                let fd = (hi[k][j - 1] - lo[k][j - 1]) / (2.0 * h);
                prop_assert!((fd - mid[k][j]).abs() < 1e-5 * (1.0 + mid[k][j].abs()), "output {} order {}", k, j);
            }
        }
    }

    #[test]
    fn exosystem_blocks_round_trip(seed in any::<u64>(), m in 1usize..=4) {
        let mut rng = fixtures::rng(seed);
        let exo = fixtures::random_exosystem(&mut rng, m);
        let rebuilt = Exosystem::assemble(exo.extract_blocks(), exo.omega0().clone()).unwrap();
        prop_assert_eq!(exo.extract_blocks(), exo.blocks().to_vec());
        prop_assert_eq!(&rebuilt, &exo);
    }

    #[test]
    fn json_round_trips(seed in any::<u64>(), (n, m) in dims()) {
        let mut rng = fixtures::rng(seed);
        let case = fixtures::random_regulator_case(&mut rng, n, m);
        let sys: LinearSystem = serde_json::from_str(&serde_json::to_string(&case.sys).unwrap()).unwrap();
        prop_assert_eq!(&sys, &case.sys);
        let exo: Exosystem = serde_json::from_str(&serde_json::to_string(&case.exo).unwrap()).unwrap();
        prop_assert_eq!(&exo, &case.exo);

        let kappa = canonical::kronecker_indices(&case.sys).unwrap();
        let spec = fixtures::random_hurwitz_spec(&mut rng, &kappa);
        let back: ErrorDynamicsSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        prop_assert_eq!(&back, &spec);
        let ctrl = tracking::design_ort(&case.sys, &case.exo, Gain::Spec(spec)).unwrap();
        let back: tracking::TrackingController = serde_json::from_str(&serde_json::to_string(&ctrl).unwrap()).unwrap();
        prop_assert_eq!(&back, &ctrl);

        let traj = random_trajectory(&mut rng, m);
        let back: TrajectorySpec = serde_json::from_str(&serde_json::to_string(&traj).unwrap()).unwrap();
        prop_assert_eq!(&back, &traj);
    }
}

#[test]
fn matrix_exponential_agrees_with_rotation() {
    let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let e = (s * 0.7).exp();
    assert!((e[(0, 0)] - 0.7f64.cos()).abs() < 1e-14);
    assert!((e[(0, 1)] - 0.7f64.sin()).abs() < 1e-14);
}

use nalgebra::DMatrix;
use proptest::prelude::*;

use pfcontrol::closed_loop::combine_lyapunov;
use pfcontrol::controller::Controller;
use pfcontrol::gainpoly::{GainPoly, MonoKey};
use pfcontrol::gains::{bump_schedule, GainSignal};
use pfcontrol::lti::{canonical_transform, verify_canonical_structure, CanonicalData, PlantModel, DEFAULT_RANK_TOL};
use pfcontrol::pfilter::{adaptive_lambda_rhs, filter_rhs};
use pfcontrol::sim::{integrate, FnDynamics};

fn monomial() -> impl Strategy<Value = GainPoly> {
    (-3.0..3.0f64, prop::collection::vec(0u32..3, 0..3), 0u32..3, 0u32..2)
        .prop_map(|(c, g, r, l)| GainPoly::monomial(c, MonoKey::new(g, r, l)))
}

fn poly() -> impl Strategy<Value = GainPoly> {
    prop::collection::vec(monomial(), 1..4).prop_map(|ms| ms.iter().fold(GainPoly::zero(), |acc, m| acc.add(m)))
}

/// Random single- or two-block structure with coupling.
fn structure() -> impl Strategy<Value = CanonicalData> {
    (1usize..4, 0usize..3, prop::collection::vec(-2.0..2.0f64, 6), prop::collection::vec(-1.0..1.0f64, 3)).prop_map(
        |(r1, r2, a, b)| {
            if r2 == 0 {
                CanonicalData::from_structure(vec![r1], vec![a[..r1].to_vec()], vec![]).unwrap()
            } else {
                CanonicalData::from_structure(
                    vec![r1, r2],
                    vec![a[..r1].to_vec(), a[3..3 + r2].to_vec()],
                    vec![vec![vec![], b[..r1].to_vec()], vec![vec![], vec![]]],
                )
                .unwrap()
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn time_derivative_obeys_the_product_rule(a in poly(), b in poly(), k in prop::sample::select(vec![2u32, 4])) {
        let lhs = a.mul(&b).differentiate(k);
        let rhs = a.differentiate(k).mul(&b).add(&a.mul(&b.differentiate(k)));
        let g = [0.7, -0.4, 0.3, 1.1, -0.2];
        prop_assert!((lhs.eval(&g, 1.3, 2.1) - rhs.eval(&g, 1.3, 2.1)).abs() < 1e-9);
    }

    #[test]
    fn similar_plants_recover_their_structure(cd in structure(), noise in prop::collection::vec(-0.3..0.3f64, 25)) {
        let n = cd.n();
        let s = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |i, j| noise[i * 5 + j]);
        prop_assume!(s.clone().svd(false, false).singular_values.min() > 0.2);
        let si = s.clone().try_inverse().unwrap();
        let plant = PlantModel::new(&s * cd.structured_a_hat() * &si, &s * &cd.b_hat).unwrap();
        let got = canonical_transform(&plant, DEFAULT_RANK_TOL).unwrap();
        prop_assert!(verify_canonical_structure(&got, 1e-8).pass);
        prop_assert!(got.round_trip_error(plant.a()) < 1e-10);
        let mut want = cd.r.clone();
        want.sort_unstable();
        let mut have = got.r.clone();
        have.sort_unstable();
        prop_assert_eq!(have, want);
    }

    #[test]
    fn augmented_map_inverts(cd in structure(), t in 0.0..20.0f64, r in 0.1..5.0f64, z in prop::collection::vec(-2.0..2.0f64, 6)) {
        let gains = vec![GainSignal::sinusoid(0.3, 1.0, 1.1, 0.2); cd.m()];
        let ctrl = Controller::theorem1(cd.clone(), gains, 1.0).unwrap();
        let sig = ctrl.signals(t, &vec![r; cd.p()], &ctrl.config.lambdas).unwrap();
        let z = &z[..cd.n()];
        let back = ctrl.map.invert(ctrl.map.eval(z, &sig).as_slice(), &sig);
        for (a, b) in back.iter().zip(z) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn augmented_map_is_unit_lower_triangular(cd in structure(), t in 0.0..20.0f64, r in 0.1..5.0f64) {
        let gains = vec![GainSignal::sine(); cd.m()];
        let ctrl = Controller::theorem1(cd.clone(), gains, 1.0).unwrap();
        let sig = ctrl.signals(t, &vec![r; cd.p()], &ctrl.config.lambdas).unwrap();
        let m = ctrl.map.matrix(&sig);
        for i in 0..cd.n() {
            prop_assert_eq!(m[(i, i)], 1.0);
            for j in i + 1..cd.n() {
                prop_assert_eq!(m[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn filter_stays_positive(r0 in 1e-3..5.0f64, lambda in 0.1..10.0f64, amp in 0.0..3.0f64, w in 0.1..5.0f64) {
        let sys = FnDynamics::new(1, |t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = filter_rhs(x[0], amp * (w * t).sin(), lambda, 2);
        });
        let traj = integrate(&sys, &[r0], 0.0, 10.0, 1e-2).unwrap();
        prop_assert!(traj.component(0).iter().all(|r| *r > 0.0));
    }

    #[test]
    fn adaptive_rate_is_nonnegative(nu in 0.0..1.0f64, r in 0.0..5.0f64, om in prop::collection::vec(-10.0..10.0f64, 1..5)) {
        prop_assert!(adaptive_lambda_rhs(nu, r, &om) >= 0.0);
    }

    #[test]
    fn bump_gains_never_overlap(on1 in 0.2..2.0f64, gap in 0.0..1.0f64, on2 in 0.2..2.0f64, extra in 0.0..1.0f64, t in 0.0..50.0f64) {
        let (g1, g2) = bump_schedule(on1, gap, on2, on1 + gap + on2 + extra).unwrap();
        prop_assert_eq!(g1.eval(t, 0).unwrap() * g2.eval(t, 0).unwrap(), 0.0);
    }

    #[test]
    fn spline_interpolates_its_knots(vals in prop::collection::vec(-5.0..5.0f64, 3..10)) {
        let times: Vec<f64> = (0..vals.len()).map(|i| i as f64 * 0.5).collect();
        let g = GainSignal::tabulated(times.clone(), vals.clone()).unwrap();
        for (t, v) in times.iter().zip(&vals) {
            prop_assert!((g.eval(*t, 0).unwrap() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_lyapunov_dominates_its_terms(v in prop::collection::vec(0.0..10.0f64, 1..5), lo in 0.1..1.0f64, hi in 1.0..3.0f64) {
        let p = v.len();
        let total = combine_lyapunov(&v, &vec![lo; p], &vec![hi; p]);
        prop_assert!(total >= v[0]);
        prop_assert!(total >= v.iter().sum::<f64>() - 1e-12);
    }

    #[test]
    fn plant_text_round_trips((n, m) in (1usize..5).prop_flat_map(|n| (Just(n), 1..=n.min(2))), vals in prop::collection::vec(-1e3..1e3f64, 30)) {
        let a = DMatrix::from_fn(n, n, |i, j| vals[i * n + j]);
        let b = DMatrix::from_fn(n, m, |i, j| vals[25 + (i * m + j) % 5]);
        let plant = PlantModel::new(a, b).unwrap();
        prop_assert_eq!(PlantModel::from_text(&plant.to_text()).unwrap(), plant);
    }
}

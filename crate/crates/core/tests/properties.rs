mod common;

use std::sync::Arc;

use common::problems::{load_bundled, problem};
use linsoc::cli::{run_solve, SolveOptions};
use linsoc::model::*;
use linsoc::oracle::{rollout, RolloutSettings};
use linsoc::pde::DesirabilityPde;
use linsoc::poly::{binomial, monomial_basis, parse_polynomial, Monomial, Polynomial, VariableSpace};
use linsoc::sdp::svec;
use linsoc::sos::{gram_encode, ParamPolynomial, SosProgram};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn space(n: usize) -> Arc<VariableSpace> {
    VariableSpace::new(["x", "y", "z"].into_iter().take(n)).unwrap()
}

/// Integer-coefficient polynomial in `n` variables of total degree ≤ `deg`.
fn poly(n: usize, deg: u32) -> impl Strategy<Value = Polynomial> {
    let term = (prop::collection::vec(0..=deg, n), -10i32..=10);
    prop::collection::vec(term, 0..8).prop_map(move |terms| {
        let s = space(n);
        let terms = terms.into_iter().filter(|(e, _)| e.iter().sum::<u32>() <= deg).map(|(e, c)| (Monomial::from_exponents(&e), c as f64));
        Polynomial::from_terms(&s, terms)
    })
}

fn close(a: &Polynomial, b: &Polynomial) -> bool {
    a.max_coeff_diff(b).unwrap() <= 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn multiplication_distributes(p in poly(2, 4), q in poly(2, 4), r in poly(2, 4)) {
        let lhs = p.try_add(&q).unwrap().try_mul(&r).unwrap();
        let rhs = p.try_mul(&r).unwrap().try_add(&q.try_mul(&r).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs));
        prop_assert!(lhs.terms().all(|(_, c)| c != 0.0));
    }

    #[test]
    fn differentiation_is_linear(p in poly(3, 6), q in poly(3, 6), a in -5i32..=5, b in -5i32..=5, k in 0usize..3) {
        let (a, b) = (a as f64, b as f64);
        let lhs = p.scale(a).try_add(&q.scale(b)).unwrap().differentiate(k).unwrap();
        let rhs = p.differentiate(k).unwrap().scale(a).try_add(&q.differentiate(k).unwrap().scale(b)).unwrap();
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn derivative_matches_central_difference(p in poly(2, 8), x in -1.0f64..1.0, y in -1.0f64..1.0, k in 0usize..2) {
        let h = 1e-5;
        let mut plus = [x, y];
        let mut minus = [x, y];
        plus[k] += h;
        minus[k] -= h;
        let fd = (p.evaluate(&plus).unwrap() - p.evaluate(&minus).unwrap()) / (2.0 * h);
        let exact = p.differentiate(k).unwrap().evaluate(&[x, y]).unwrap();
        // Relative to the size of the terms, so cancellation near a root is not penalized.
        let scale = p.differentiate(k).unwrap().terms().map(|(_, c)| c.abs()).sum::<f64>().max(1.0);
        prop_assert!((fd - exact).abs() <= 1e-6 * scale, "fd {fd} vs {exact}");
    }

    #[test]
    fn canonical_text_round_trips(p in poly(3, 6)) {
        let again = parse_polynomial(&p.to_string(), p.space()).unwrap();
        prop_assert_eq!(again, p);
    }

    #[test]
    fn gram_matrix_satisfies_its_matching_equations(entries in prop::collection::vec(-5i32..=5, 21)) {
        let s = space(2);
        let basis = monomial_basis(2, 2);
        let n = basis.len();
        let mut q = DMatrix::zeros(n, n);
        let mut it = entries.into_iter();
        for i in 0..n {
            for j in i..n {
                let v = it.next().unwrap() as f64;
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
        let target = Polynomial::from_terms(&s, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (basis[i].mul(&basis[j]), q[(i, j)])));
        let mut program = SosProgram::new(&s);
        gram_encode(&ParamPolynomial::from_polynomial(&target), &basis, &mut program, "p").unwrap();
        let conic = program.compile();
        let x = svec(&q);
        let ax = conic.mul_a(&x);
        for (row, (lhs, rhs)) in ax.iter().zip(&conic.b).enumerate() {
            prop_assert!((lhs - rhs).abs() <= 1e-9, "row {row}: {lhs} vs {rhs}");
        }
        let (_, grams) = program.decode(&x);
        prop_assert!((&grams[0] - &q).amax() <= 1e-12);
    }
}

#[test]
fn basis_sizes_follow_the_binomial_formula() {
    for n in 1..=4 {
        for d in 0..=14 {
            assert_eq!(monomial_basis(n, d).len() as u64, binomial(n as u64 + d as u64, d as u64), "n={n} d={d}");
        }
    }
}

fn scalar_dynamics(gain: &str, noise: f64) -> Dynamics {
    let s = space(1);
    let g = parse_polynomial(gain, &s).unwrap();
    Dynamics {
        drift: vec![parse_polynomial("x^3 + x", &s).unwrap()],
        control_gain: vec![vec![g.clone()]],
        noise_gain: vec![vec![g]],
        noise_scale: DMatrix::from_element(1, 1, noise),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_scales_with_control_penalty(noise in 0.1f64..3.0, r in 0.1f64..5.0, alpha in 0.1f64..10.0) {
        let dynamics = scalar_dynamics("1 + x^2", noise);
        let base = validate_noise_assumption(&dynamics, &DMatrix::from_element(1, 1, r), 1e-9).unwrap();
        let scaled = validate_noise_assumption(&dynamics, &DMatrix::from_element(1, 1, alpha * r), 1e-9).unwrap();
        prop_assert!((scaled.lambda / base.lambda - alpha).abs() <= 1e-12 * alpha);
    }

    #[test]
    fn value_transform_inverts_desirability(v in 0.0f64..20.0, lambda in 1.0f64..10.0) {
        let psi = (-v / lambda).exp();
        let back = value_from_psi(psi, lambda);
        prop_assert!(!back.clamped);
        prop_assert!((back.value - v).abs() <= 1e-9);
        let constant = Polynomial::constant(&space(1), psi);
        prop_assert!((value_from_desirability(&constant, lambda, &[0.3]).unwrap().value - v).abs() <= 1e-9);
    }

    #[test]
    fn value_transform_reverses_order(a in 1e-12f64..10.0, b in 1e-12f64..10.0, lambda in 0.1f64..10.0) {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        prop_assume!(lo > EPS_CLAMP);
        prop_assert!(value_from_psi(hi, lambda).value <= value_from_psi(lo, lambda).value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn boundary_fit_is_one_sided(c in prop::collection::vec(-3i32..=3, 3), lambda in 0.5f64..2.0, degree in 4u32..=8, lower in any::<bool>()) {
        let s = space(2);
        let phi = Polynomial::from_terms(&s, (0..3).map(|k| (Monomial::from_exponents(&[0, k as u32]), c[k] as f64)));
        let piece = BoundaryPiece {
            name: "east".into(),
            face: SemialgebraicSet { inequalities: vec![], equalities: vec![parse_polynomial("x - 1", &s).unwrap()] },
            terminal_cost: phi,
        };
        let dir = if lower { BoundDirection::Lower } else { BoundDirection::Upper };
        let fit = desirability_boundary(&piece, lambda, degree, dir, &[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let f = fit.poly.compile();
        let phi = piece.terminal_cost.compile();
        for i in 0..10_000 {
            let p = [1.0, -1.0 + 2.0 * i as f64 / 9_999.0];
            let truth = (-phi.eval(&p) / lambda).exp();
            let v = f.eval(&p);
            if lower {
                prop_assert!(v <= truth + 1e-12, "{v} > {truth} at {p:?}");
            } else {
                prop_assert!(v >= truth - 1e-12, "{v} < {truth} at {p:?}");
            }
        }
    }
}

fn pde_problem() -> SocProblem {
    problem(&["x", "y"], &["x^2 - y", "x*y + 1"], "1 + x^2", 0.7, &["1 - x^2", "1 - y^2"], &[("x + 1", "0"), ("x - 1", "0"), ("y + 1", "0"), ("y - 1", "0")])
}

/// Fourth-order central second difference.
fn second_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_is_linear(p in poly(2, 6), q in poly(2, 6), a in -4i32..=4, b in -4i32..=4) {
        let pde = DesirabilityPde::new(&pde_problem());
        let (a, b) = (a as f64, b as f64);
        let combo = p.scale(a).try_add(&q.scale(b)).unwrap();
        let lhs = pde.residual(&combo).unwrap();
        let rhs = pde.residual(&p).unwrap().scale(a).try_add(&pde.residual(&q).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_coeff_diff(&rhs).unwrap() <= 1e-9 * lhs.max_abs_coeff().max(1.0));
    }

    #[test]
    fn generator_matches_numerical_differentiation(p in poly(2, 6), pts in prop::collection::vec((-0.95f64..0.95, -0.95f64..0.95), 100)) {
        let problem = pde_problem();
        let pde = DesirabilityPde::new(&problem);
        let l = pde.apply_l(&p).unwrap().compile();
        let f = p.compile();
        let drift: Vec<_> = problem.dynamics.drift.iter().map(Polynomial::compile).collect();
        let sigma: Vec<_> = (0..2).map(|k| problem.sigma_t[k][k].compile()).collect();
        prop_assert!(problem.sigma_t[0][1].is_zero());
        let scale = p.terms().map(|(_, c)| c.abs()).sum::<f64>().max(1.0) * 10.0;
        for (x, y) in pts {
            let h = 1e-4;
            let gx = (f.eval(&[x + h, y]) - f.eval(&[x - h, y])) / (2.0 * h);
            let gy = (f.eval(&[x, y + h]) - f.eval(&[x, y - h])) / (2.0 * h);
            let hxx = second_difference(|t| f.eval(&[t, y]), x, 1e-3);
            let hyy = second_difference(|t| f.eval(&[x, t]), y, 1e-3);
            let pt = [x, y];
            let fd = drift[0].eval(&pt) * gx + drift[1].eval(&pt) * gy + 0.5 * (hxx * sigma[0].eval(&pt) + hyy * sigma[1].eval(&pt));
            let exact = l.eval(&pt);
            prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(scale), "{fd} vs {exact} at {pt:?}");
        }
    }

    #[test]
    fn residual_degree_respects_the_bound(p in poly(2, 8)) {
        let pde = DesirabilityPde::new(&pde_problem());
        let r = pde.residual(&p).unwrap();
        prop_assert!(r.degree() <= pde.residual_degree_bound(p.degree()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn certified_gap_is_nonnegative(dp in prop::sample::select(vec![2u32, 4, 6]), dm in prop::sample::select(vec![2u32, 4, 6]), lower in any::<bool>()) {
        let (scalar, cfg) = load_bundled("scalar1d.json");
        let dir = if lower { BoundDirection::Lower } else { BoundDirection::Upper };
        let r = run_solve(&scalar, &cfg, dp, dm, dir, &SolveOptions::default()).unwrap();
        prop_assert!(r.gamma >= -1e-8, "gamma {}", r.gamma);
        prop_assert!(r.certificate.passed);
    }

    #[test]
    fn seeded_rollouts_repeat(seed in any::<u64>(), x0 in -0.9f64..0.9) {
        let (scalar, _) = load_bundled("scalar1d.json");
        let psi = parse_polynomial("2 - x^2", &scalar.space).unwrap();
        let settings = RolloutSettings::new(1e-3, 40, seed);
        let a = rollout(&scalar, &psi, &[x0], &settings).unwrap();
        let b = rollout(&scalar, &psi, &[x0], &settings).unwrap();
        prop_assert_eq!(a, b);
    }
}

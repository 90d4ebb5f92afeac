mod common;

use common::sdp::{complementary_instance, infeasible_programs};
use linsoc::sdp::{cone_margins, residuals, svec, svec_len, Cone, ConicProgram, ConicSolver, InteriorPointSolver, SolveStatus};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Strictly feasible primal and dual points by construction, so an optimum exists.
fn random_instance(seed: u64) -> ConicProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.gen_range(0..3);
    let nl = rng.gen_range(0..4);
    let dims: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(1..6)).collect();
    let mut cones = vec![];
    if nf > 0 {
        cones.push(Cone::Free(nf));
    }
    if nl > 0 {
        cones.push(Cone::Nonneg(nl));
    }
    cones.extend(dims.iter().map(|&d| Cone::Psd(d)));
    let n: usize = cones.iter().map(Cone::len).sum();
    let m = rng.gen_range(1..=(n - 1).max(1).min(12)) + nf;
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|_| {
            let mut row = vec![];
            for j in 0..n {
                if rng.gen_bool(0.6) {
                    row.push((j, rng.gen_range(-1.0..1.0)));
                }
            }
            row
        })
        .collect();
    let mut x0 = vec![0.0; n];
    let mut s0 = vec![0.0; n];
    let mut off = 0;
    for cone in &cones {
        match *cone {
            Cone::Free(k) => {
                for j in off..off + k {
                    x0[j] = rng.gen_range(-1.0..1.0);
                }
            }
            Cone::Nonneg(k) => {
                for j in off..off + k {
                    x0[j] = rng.gen_range(0.1..1.0);
                    s0[j] = rng.gen_range(0.1..1.0);
                }
            }
            Cone::Psd(d) => {
                x0[off..off + svec_len(d)].copy_from_slice(&svec(&random_pd(&mut rng, d)));
                s0[off..off + svec_len(d)].copy_from_slice(&svec(&random_pd(&mut rng, d)));
            }
        }
        off += cone.len();
    }
    let y0: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut prog = ConicProgram { c: vec![0.0; n], rows, b: vec![], cones };
    prog.b = prog.mul_a(&x0);
    let aty = prog.mul_at(&y0);
    prog.c = (0..n).map(|j| aty[j] + s0[j]).collect();
    // Free columns that no row touches would make the program unbounded.
    for (j, c) in prog.c.iter_mut().enumerate().take(nf) {
        if !prog.rows.iter().any(|r| r.iter().any(|e| e.0 == j)) {
            *c = 0.0;
        }
    }
    prog.validate().unwrap();
    prog
}

#[test]
fn hundred_random_sdps_converge() {
    let solver = InteriorPointSolver::default();
    for seed in 0..100 {
        let prog = random_instance(seed);
        let sol = solver.solve(&prog).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}: {sol:?}");
        let r = residuals(&prog, &sol);
        let nb = prog.b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let nc = prog.c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        assert!(r.primal / nb <= 1e-7, "seed {seed}: primal {}", r.primal);
        assert!(r.dual / nc <= 1e-7, "seed {seed}: dual {}", r.dual);
        let scale = sol.primal_objective.abs().max(sol.dual_objective.abs()).max(1.0);
        assert!(r.gap.abs() / scale <= 1e-7, "seed {seed}: gap {}", r.gap);
        for margin in cone_margins(&prog.cones, &sol.x).into_iter().chain(cone_margins(&prog.cones, &sol.s)) {
            assert!(margin >= -1e-8, "seed {seed}: cone violation {margin}");
        }
    }
}

#[test]
fn constructed_optimum_is_recovered() {
    let solver = InteriorPointSolver::default();
    for seed in 0..100 {
        let (prog, opt) = complementary_instance(1000 + seed, 10);
        let sol = solver.solve(&prog).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
        let err = (sol.primal_objective - opt).abs();
        assert!(err <= 1e-6 * opt.abs().max(1.0), "seed {seed}: objective {} vs {opt}", sol.primal_objective);
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let solver = InteriorPointSolver::default();
    for seed in [3, 17, 42] {
        let (prog, _) = complementary_instance(seed, 8);
        let a = solver.solve(&prog).unwrap();
        let b = solver.solve(&prog).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.x), bits(&b.x));
        assert_eq!(bits(&a.y), bits(&b.y));
        assert_eq!(bits(&a.s), bits(&b.s));
        assert_eq!(a.iterations, b.iterations);
    }
}

#[test]
fn scaling_the_objective_scales_the_value() {
    let solver = InteriorPointSolver::default();
    for seed in 0..10 {
        let (prog, _) = complementary_instance(500 + seed, 6);
        let base = solver.solve(&prog).unwrap();
        for alpha in [0.25, 3.7, 40.0] {
            let mut scaled = prog.clone();
            scaled.c.iter_mut().for_each(|c| *c *= alpha);
            let sol = solver.solve(&scaled).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let dx = sol.x.iter().zip(&base.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dx <= 1e-7, "seed {seed}, alpha {alpha}: optimizer moved by {dx}");
            let want = alpha * base.primal_objective;
            assert!((sol.primal_objective - want).abs() <= 1e-7 * want.abs().max(1.0), "seed {seed}, alpha {alpha}");
        }
    }
}

#[test]
fn farkas_systems_are_primal_infeasible() {
    let solver = InteriorPointSolver::default();
    for (name, prog) in infeasible_programs() {
        assert_eq!(solver.solve(&prog).unwrap().status, SolveStatus::PrimalInfeasible, "{name}");
    }
}

#[test]
fn unbounded_objective_is_dual_infeasible() {
    // min −x₁ with x₁ = x₂ ≥ 0.
    let prog =
        ConicProgram::new(vec![-1.0, 0.0], vec![vec![(0, 1.0), (1, -1.0)]], vec![0.0], vec![Cone::Nonneg(2)]).unwrap();
    assert_eq!(InteriorPointSolver::default().solve(&prog).unwrap().status, SolveStatus::DualInfeasible);
}

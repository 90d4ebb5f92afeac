//! Conic programs with known answers.

use linsoc::sdp::{svec, svec_len, Cone, ConicProgram};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Strictly complementary optimal pair by construction: `x*` and `s*` share an
/// eigenbasis per block with disjoint supports, so `cᵀx* − bᵀy* = x*ᵀs* = 0`
/// and the optimal value is known exactly.
pub fn complementary_instance(seed: u64, max_psd: usize) -> (ConicProgram, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nl = rng.gen_range(0..5);
    let dims: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..=max_psd)).collect();
    let mut cones = vec![];
    if nl > 0 {
        cones.push(Cone::Nonneg(nl));
    }
    cones.extend(dims.iter().map(|&d| Cone::Psd(d)));
    let n: usize = cones.iter().map(Cone::len).sum();
    let mut x0 = vec![0.0; n];
    let mut s0 = vec![0.0; n];
    let (mut face_x, mut face_s) = (0, 0);
    let mut off = 0;
    for cone in &cones {
        match *cone {
            Cone::Nonneg(k) => {
                for j in off..off + k {
                    if rng.gen_bool(0.5) {
                        x0[j] = rng.gen_range(0.5..2.0);
                        face_x += 1;
                    } else {
                        s0[j] = rng.gen_range(0.5..2.0);
                        face_s += 1;
                    }
                }
            }
            Cone::Psd(d) => {
                let q = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
                let rank = rng.gen_range(0..=d);
                face_x += svec_len(rank);
                face_s += svec_len(d - rank);
                let mut lx = DMatrix::zeros(d, d);
                let mut ls = DMatrix::zeros(d, d);
                for i in 0..d {
                    if i < rank {
                        lx[(i, i)] = rng.gen_range(0.5..2.0);
                    } else {
                        ls[(i, i)] = rng.gen_range(0.5..2.0);
                    }
                }
                x0[off..off + svec_len(d)].copy_from_slice(&svec(&(&q * lx * q.transpose())));
                s0[off..off + svec_len(d)].copy_from_slice(&svec(&(&q * ls * q.transpose())));
            }
            Cone::Free(_) => unreachable!(),
        }
        off += cone.len();
    }
    // Between the two face dimensions a generic A makes both optima unique.
    let (lo, hi) = (face_x.max(1), (n - face_s).max(face_x.max(1)));
    let m = rng.gen_range(lo..=hi);
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|_| (0..n).filter_map(|j| rng.gen_bool(0.7).then(|| (j, rng.gen_range(-1.0..1.0)))).collect())
        .collect();
    let y0: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut prog = ConicProgram { c: vec![0.0; n], rows, b: vec![], cones };
    prog.b = prog.mul_a(&x0);
    let aty = prog.mul_at(&y0);
    prog.c = (0..n).map(|j| aty[j] + s0[j]).collect();
    prog.validate().unwrap();
    let opt = prog.c.iter().zip(&x0).map(|(c, x)| c * x).sum();
    (prog, opt)
}

/// Small programs whose constraints admit no feasible point.
pub fn infeasible_programs() -> Vec<(&'static str, ConicProgram)> {
    vec![
        // x − s₁ = 1, x + s₂ = 0 over x, s₁, s₂ ≥ 0.
        (
            "lp",
            ConicProgram::new(
                vec![1.0, 0.0, 0.0],
                vec![vec![(0, 1.0), (1, -1.0)], vec![(0, 1.0), (2, 1.0)]],
                vec![1.0, 0.0],
                vec![Cone::Nonneg(3)],
            )
            .unwrap(),
        ),
        // X ⪰ 0 with X₁₁ = −1.
        ("negative diagonal", ConicProgram::new(vec![1.0, 0.0, 1.0], vec![vec![(0, 1.0)]], vec![-1.0], vec![Cone::Psd(2)]).unwrap()),
        // trace X = 1 and X₁₁ + X₂₂ = 3/2 cannot both hold.
        (
            "trace clash",
            ConicProgram::new(vec![0.0; 3], vec![vec![(0, 1.0), (2, 1.0)], vec![(0, 2.0), (2, 2.0)]], vec![1.0, 3.0], vec![Cone::Psd(2)]).unwrap(),
        ),
    ]
}

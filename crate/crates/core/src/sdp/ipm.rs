//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling
//! and a Mehrotra predictor-corrector.
//!
//! The embedding solves for `(x, y, s, τ, κ)` with
//!
//! ```text
//! A x − b τ = 0,    Aᵀy + s − c τ = 0,    cᵀx − bᵀy + κ = 0
//! ```
//!
//! so that `τ > 0` at the limit yields an optimal pair `(x/τ, y/τ, s/τ)` and
//! `κ > 0` yields a Farkas certificate.

use nalgebra::{DMatrix, DVector};

use super::face::restrict_to_face;
use super::presolve::select_rows;
use super::{smat, svec, svec_coords, svec_len, Cone, ConicProgram, ConicSolution, ConicSolver, SdpError, SolveStatus, SolverSettings};

const MAX_FACE_STEPS: usize = 4;
/// Refinement passes on each Newton system.
const NEWTON_REFINE: usize = 8;
const KKT_REG: f64 = 1e-14;
const KKT_REFINE: usize = 3;

#[derive(Debug, Clone, Default)]
pub struct InteriorPointSolver {
    pub settings: SolverSettings,
}

impl InteriorPointSolver {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }
}

impl ConicSolver for InteriorPointSolver {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution, SdpError> {
        self.settings.validate()?;
        prog.validate()?;
        Ok(self.solve_on_faces(prog, MAX_FACE_STEPS))
    }
}

impl InteriorPointSolver {
    /// Solves, and on a stall re-solves on the face exposed by the diverging
    /// dual slack, up to `depth` nested times.
    fn solve_on_faces(&self, prog: &ConicProgram, depth: usize) -> ConicSolution {
        let first = self.solve_presolved(prog);
        if depth == 0 || !matches!(first.status, SolveStatus::NumericalFailure | SolveStatus::MaxIter) {
            return first;
        }
        let Some(face) = restrict_to_face(prog, &first.s) else {
            return first;
        };
        let inner = self.solve_on_faces(&face.program, depth - 1);
        if inner.status != SolveStatus::Optimal {
            return first;
        }
        let x = face.lift_x(&inner.x);
        let aty = prog.mul_at(&inner.y);
        let s = prog.c.iter().zip(&aty).map(|(c, a)| c - a).collect();
        let mut sol = ConicSolution { x, s, iterations: first.iterations + inner.iterations, face_reduced: true, dropped_rows: vec![], ..inner };
        fill_metrics(prog, &mut sol);
        if sol.primal_residual <= self.settings.tol_feas && sol.relative_gap <= self.settings.tol_gap {
            sol
        } else {
            first
        }
    }

    fn solve_presolved(&self, prog: &ConicProgram) -> ConicSolution {
        let sel = select_rows(prog);
        if sel.inconsistent {
            let mut sol = empty_solution(prog, SolveStatus::PrimalInfeasible);
            sol.dropped_rows = sel.dropped;
            return sol;
        }
        let reduced = if sel.dropped.is_empty() {
            None
        } else {
            Some(ConicProgram {
                c: prog.c.clone(),
                rows: sel.keep.iter().map(|&i| prog.rows[i].clone()).collect(),
                b: sel.keep.iter().map(|&i| prog.b[i]).collect(),
                cones: prog.cones.clone(),
            })
        };
        let work = reduced.as_ref().unwrap_or(prog);
        // The engine sees c/‖c‖∞, so rescaling the objective leaves its path unchanged.
        let c_scale = prog.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let c_scale = if c_scale > 0.0 { c_scale } else { 1.0 };
        let normalized = ConicProgram { c: work.c.iter().map(|v| v / c_scale).collect(), ..work.clone() };
        let mut sol = Engine::new(&normalized, &self.settings).run();
        if !matches!(sol.status, SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible) {
            sol.y.iter_mut().chain(sol.s.iter_mut()).for_each(|v| *v *= c_scale);
        }
        if reduced.is_some() {
            let mut y = vec![0.0; prog.num_rows()];
            for (k, &i) in sel.keep.iter().enumerate() {
                y[i] = sol.y[k];
            }
            sol.y = y;
        }
        sol.dropped_rows = sel.dropped;
        fill_metrics(prog, &mut sol);
        sol
    }
}

fn empty_solution(prog: &ConicProgram, status: SolveStatus) -> ConicSolution {
    let n = prog.num_vars();
    ConicSolution {
        status,
        x: vec![0.0; n],
        y: vec![0.0; prog.num_rows()],
        s: vec![0.0; n],
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        relative_gap: f64::NAN,
        iterations: 0,
        dropped_rows: vec![],
        face_reduced: false,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖c‖₂`, or 1 for a zero objective.
fn c_norm(c: &[f64]) -> f64 {
    let n = norm(c);
    if n > 0.0 {
        n
    } else {
        1.0
    }
}

fn fill_metrics(prog: &ConicProgram, sol: &mut ConicSolution) {
    if matches!(sol.status, SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible) {
        return;
    }
    let r = super::residuals(prog, sol);
    let pobj = dot(&prog.c, &sol.x);
    let dobj = dot(&prog.b, &sol.y);
    sol.primal_objective = pobj;
    sol.dual_objective = dobj;
    sol.primal_residual = r.primal / norm(&prog.b).max(1.0);
    sol.dual_residual = r.dual / c_norm(&prog.c);
    let floor = prog.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = if floor > 0.0 { floor } else { 1.0 };
    sol.relative_gap = (pobj - dobj).abs() / floor.max(pobj.abs()).max(dobj.abs());
}

/// Vector in the scaled (λ) space: nonnegative entries and one symmetric
/// matrix per PSD block.
#[derive(Debug, Clone)]
struct ConeVec {
    nn: Vec<f64>,
    psd: Vec<DMatrix<f64>>,
}

impl ConeVec {
    fn jordan(&self, o: &ConeVec) -> ConeVec {
        ConeVec {
            nn: self.nn.iter().zip(&o.nn).map(|(a, b)| a * b).collect(),
            psd: self
                .psd
                .iter()
                .zip(&o.psd)
                .map(|(a, b)| {
                    let ab = a * b;
                    (&ab + ab.transpose()) * 0.5
                })
                .collect(),
        }
    }

    fn axpy(&mut self, alpha: f64, o: &ConeVec) {
        for (a, b) in self.nn.iter_mut().zip(&o.nn) {
            *a += alpha * b;
        }
        for (a, b) in self.psd.iter_mut().zip(&o.psd) {
            *a += b * alpha;
        }
    }

    fn scale(mut self, alpha: f64) -> ConeVec {
        self.nn.iter_mut().for_each(|a| *a *= alpha);
        self.psd.iter_mut().for_each(|a| *a *= alpha);
        self
    }
}

struct PsdBlock {
    offset: usize,
    dim: usize,
    /// Rows touching the block with their matrix-form entries `(r, c, v)`,
    /// `r >= c`, meaning `A[r,c] = A[c,r] = v`.
    rows: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

struct Scaling {
    /// `sqrt(x/s)` for nonnegative entries.
    w: Vec<f64>,
    lam_nn: Vec<f64>,
    lam_psd: Vec<DVector<f64>>,
    r: Vec<DMatrix<f64>>,
    rinv: Vec<DMatrix<f64>>,
    p: Vec<DMatrix<f64>>,
}

struct Direction {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Engine<'a> {
    prog: &'a ConicProgram,
    set: &'a SolverSettings,
    n: usize,
    m: usize,
    free: Vec<usize>,
    nonneg: Vec<usize>,
    nn_cols: Vec<Vec<(usize, f64)>>,
    psd: Vec<PsdBlock>,
    af: DMatrix<f64>,
    nu: f64,
    norm_b: f64,
    norm_c: f64,
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl<'a> Engine<'a> {
    fn new(prog: &'a ConicProgram, set: &'a SolverSettings) -> Self {
        let n = prog.num_vars();
        let m = prog.num_rows();
        let mut free = Vec::new();
        let mut nonneg = Vec::new();
        let mut psd = Vec::new();
        // var -> (kind, local index); kind 0 free, 1 nonneg, 2 psd block
        let mut owner = vec![(0u8, 0usize); n];
        let mut off = 0;
        for cone in &prog.cones {
            match *cone {
                Cone::Free(k) => {
                    for j in off..off + k {
                        owner[j] = (0, free.len());
                        free.push(j);
                    }
                }
                Cone::Nonneg(k) => {
                    for j in off..off + k {
                        owner[j] = (1, nonneg.len());
                        nonneg.push(j);
                    }
                }
                Cone::Psd(d) => {
                    for j in off..off + svec_len(d) {
                        owner[j] = (2, psd.len());
                    }
                    psd.push(PsdBlock { offset: off, dim: d, rows: Vec::new() });
                }
            }
            off += cone.len();
        }
        let mut af = DMatrix::zeros(m, free.len());
        let mut nn_cols = vec![Vec::new(); nonneg.len()];
        for (i, row) in prog.rows.iter().enumerate() {
            for &(j, v) in row {
                let (kind, local) = owner[j];
                match kind {
                    0 => af[(i, local)] = v,
                    1 => nn_cols[local].push((i, v)),
                    _ => {
                        let blk = &mut psd[local];
                        let (r, c) = svec_coords(blk.dim, j - blk.offset);
                        let mv = if r == c { v } else { v * INV_SQRT_2 };
                        match blk.rows.last_mut() {
                            Some((ri, entries)) if *ri == i => entries.push((r, c, mv)),
                            _ => blk.rows.push((i, vec![(r, c, mv)])),
                        }
                    }
                }
            }
        }
        let nu = prog.cones.iter().map(Cone::degree).sum::<usize>() as f64;
        Self {
            prog,
            set,
            n,
            m,
            free,
            nonneg,
            nn_cols,
            psd,
            af,
            nu,
            norm_b: norm(&prog.b).max(1.0),
            norm_c: c_norm(&prog.c),
        }
    }

    fn identity_point(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &j in &self.nonneg {
            v[j] = 1.0;
        }
        for blk in &self.psd {
            let mut k = blk.offset;
            for j in 0..blk.dim {
                v[k] = 1.0;
                k += blk.dim - j;
            }
        }
        v
    }

    fn cone_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc: f64 = self.nonneg.iter().map(|&j| a[j] * b[j]).sum();
        for blk in &self.psd {
            let r = blk.offset..blk.offset + svec_len(blk.dim);
            acc += dot(&a[r.clone()], &b[r]);
        }
        acc
    }

    fn scaling(&self, x: &[f64], s: &[f64]) -> Option<Scaling> {
        let mut sc = Scaling { w: Vec::new(), lam_nn: Vec::new(), lam_psd: Vec::new(), r: Vec::new(), rinv: Vec::new(), p: Vec::new() };
        for &j in &self.nonneg {
            if !(x[j] > 0.0 && s[j] > 0.0) {
                return None;
            }
            sc.w.push((x[j] / s[j]).sqrt());
            sc.lam_nn.push((x[j] * s[j]).sqrt());
        }
        for blk in &self.psd {
            let len = svec_len(blk.dim);
            let xm = smat(blk.dim, &x[blk.offset..blk.offset + len]);
            let sm = smat(blk.dim, &s[blk.offset..blk.offset + len]);
            let l1 = xm.cholesky()?.l();
            let l2 = sm.cholesky()?.l();
            let svd = (l2.transpose() * &l1).svd(true, true);
            let u = svd.u?;
            let vt = svd.v_t?;
            let lam = svd.singular_values;
            if lam.iter().any(|&v| !(v > 0.0)) {
                return None;
            }
            let isq = DMatrix::from_diagonal(&lam.map(|v| 1.0 / v.sqrt()));
            let r = &l1 * vt.transpose() * &isq;
            let rinv = &isq * u.transpose() * l2.transpose();
            sc.p.push(&r * r.transpose());
            sc.r.push(r);
            sc.rinv.push(rinv);
            sc.lam_psd.push(lam);
        }
        Some(sc)
    }

    fn lambda(&self, sc: &Scaling) -> ConeVec {
        ConeVec { nn: sc.lam_nn.clone(), psd: sc.lam_psd.iter().map(DMatrix::from_diagonal).collect() }
    }

    fn identity(&self) -> ConeVec {
        ConeVec { nn: vec![1.0; self.nonneg.len()], psd: self.psd.iter().map(|b| DMatrix::identity(b.dim, b.dim)).collect() }
    }

    /// `H⁻¹ v` on cone entries, zero on free entries.
    fn hinv(&self, sc: &Scaling, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &j) in self.nonneg.iter().enumerate() {
            out[j] = sc.w[k] * sc.w[k] * v[j];
        }
        for (b, blk) in self.psd.iter().enumerate() {
            let len = svec_len(blk.dim);
            let vm = smat(blk.dim, &v[blk.offset..blk.offset + len]);
            let res = &sc.p[b] * vm * &sc.p[b];
            out[blk.offset..blk.offset + len].copy_from_slice(&svec(&res));
        }
        out
    }

    /// `W⁻¹ u` into the original space.
    fn winv(&self, sc: &Scaling, u: &ConeVec) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &j) in self.nonneg.iter().enumerate() {
            out[j] = sc.w[k] * u.nn[k];
        }
        for (b, blk) in self.psd.iter().enumerate() {
            let res = &sc.r[b] * &u.psd[b] * sc.r[b].transpose();
            out[blk.offset..blk.offset + svec_len(blk.dim)].copy_from_slice(&svec(&res));
        }
        out
    }

    fn w(&self, sc: &Scaling, dx: &[f64]) -> ConeVec {
        ConeVec {
            nn: self.nonneg.iter().enumerate().map(|(k, &j)| dx[j] / sc.w[k]).collect(),
            psd: self
                .psd
                .iter()
                .enumerate()
                .map(|(b, blk)| {
                    let m = smat(blk.dim, &dx[blk.offset..blk.offset + svec_len(blk.dim)]);
                    &sc.rinv[b] * m * sc.rinv[b].transpose()
                })
                .collect(),
        }
    }

    fn wit(&self, sc: &Scaling, ds: &[f64]) -> ConeVec {
        ConeVec {
            nn: self.nonneg.iter().enumerate().map(|(k, &j)| ds[j] * sc.w[k]).collect(),
            psd: self
                .psd
                .iter()
                .enumerate()
                .map(|(b, blk)| {
                    let m = smat(blk.dim, &ds[blk.offset..blk.offset + svec_len(blk.dim)]);
                    sc.r[b].transpose() * m * &sc.r[b]
                })
                .collect(),
        }
    }

    /// Solves `λ ∘ z = d` for `z`.
    fn lam_solve(&self, sc: &Scaling, d: &ConeVec) -> ConeVec {
        ConeVec {
            nn: d.nn.iter().zip(&sc.lam_nn).map(|(a, l)| a / l).collect(),
            psd: d
                .psd
                .iter()
                .zip(&sc.lam_psd)
                .map(|(dm, lam)| DMatrix::from_fn(dm.nrows(), dm.ncols(), |i, j| 2.0 * dm[(i, j)] / (lam[i] + lam[j])))
                .collect(),
        }
    }

    /// Largest `α` with `λ + α d` in the cone.
    fn max_step(&self, sc: &Scaling, d: &ConeVec) -> f64 {
        let mut alpha = f64::INFINITY;
        for (l, v) in sc.lam_nn.iter().zip(&d.nn) {
            if *v < 0.0 {
                alpha = alpha.min(-l / v);
            }
        }
        for (lam, dm) in sc.lam_psd.iter().zip(&d.psd) {
            let k = dm.nrows();
            let scaled = DMatrix::from_fn(k, k, |i, j| dm[(i, j)] / (lam[i] * lam[j]).sqrt());
            let sym = (&scaled + scaled.transpose()) * 0.5;
            let emin = super::min_eigenvalue(&sym);
            if emin < 0.0 {
                alpha = alpha.min(-1.0 / emin);
            }
        }
        alpha
    }

    /// Reduced KKT matrix `[[A_c H⁻¹ A_cᵀ, A_f], [A_fᵀ, 0]]`.
    fn kkt(&self, sc: &Scaling) -> DMatrix<f64> {
        let m = self.m;
        let nf = self.free.len();
        let mut k = DMatrix::zeros(m + nf, m + nf);
        for (col, d) in self.nn_cols.iter().zip(sc.w.iter().map(|w| w * w)) {
            for &(i, a) in col {
                for &(j, b) in col {
                    k[(i, j)] += d * a * b;
                }
            }
        }
        for (bi, blk) in self.psd.iter().enumerate() {
            let p = &sc.p[bi];
            let dim = blk.dim;
            let mut t = DMatrix::zeros(dim, dim);
            for (jdx, (j, ej)) in blk.rows.iter().enumerate() {
                t.fill(0.0);
                for &(r, c, v) in ej {
                    let pr = p.column(r);
                    let pc = p.column(c);
                    if r == c {
                        t.ger(v, &pr, &pr, 1.0);
                    } else {
                        t.ger(v, &pr, &pc, 1.0);
                        t.ger(v, &pc, &pr, 1.0);
                    }
                }
                for (i, ei) in &blk.rows[..=jdx] {
                    let val: f64 = ei.iter().map(|&(r, c, v)| if r == c { v * t[(r, r)] } else { 2.0 * v * t[(r, c)] }).sum();
                    k[(*i, *j)] += val;
                    if i != j {
                        k[(*j, *i)] += val;
                    }
                }
            }
        }
        for (f, _) in self.free.iter().enumerate() {
            for i in 0..m {
                let a = self.af[(i, f)];
                k[(i, m + f)] = a;
                k[(m + f, i)] = a;
            }
        }
        k
    }

    fn run(&self) -> ConicSolution {
        let n = self.n;
        let m = self.m;
        let prog = self.prog;
        let mut x = self.identity_point();
        let mut s = self.identity_point();
        let mut y = vec![0.0; m];
        let mut tau = 1.0;
        let mut kappa = 1.0;
        let mut stalls = 0;

        for iter in 0..=self.set.max_iter {
            let ax = prog.mul_a(&x);
            let aty = prog.mul_at(&y);
            let f1: Vec<f64> = ax.iter().zip(&prog.b).map(|(a, b)| a - b * tau).collect();
            let f2: Vec<f64> = (0..n).map(|j| aty[j] + s[j] - prog.c[j] * tau).collect();
            let cx = dot(&prog.c, &x);
            let by = dot(&prog.b, &y);
            let f3 = cx - by + kappa;

            let pres = norm(&f1) / tau / self.norm_b;
            // c is normalised to ‖c‖∞ = 1 here, so these match the caller-unit
            // measures of `fill_metrics` exactly.
            let dres = norm(&f2) / tau / self.norm_c;
            let (pobj, dobj) = (cx / tau, by / tau);
            let gap = (pobj - dobj).abs() / 1f64.max(pobj.abs()).max(dobj.abs());
            if pres <= self.set.tol_feas && dres <= self.set.tol_feas && gap <= self.set.tol_gap {
                return self.finish(SolveStatus::Optimal, &x, &y, &s, tau, iter);
            }
            if by > 0.0 {
                let r: Vec<f64> = (0..n).map(|j| aty[j] + s[j]).collect();
                if norm(&r) / by <= self.set.tol_feas * self.norm_c.max(1.0) && tau < 1e-2 * kappa.max(1e-300) {
                    return self.certificate(SolveStatus::PrimalInfeasible, &x, &y, &s, by, iter);
                }
            }
            if cx < 0.0 && norm(&ax) / -cx <= self.set.tol_feas * self.norm_b.max(1.0) && tau < 1e-2 * kappa.max(1e-300) {
                return self.certificate(SolveStatus::DualInfeasible, &x, &y, &s, -cx, iter);
            }
            if iter == self.set.max_iter {
                return self.finish(SolveStatus::MaxIter, &x, &y, &s, tau, iter);
            }

            let Some(sc) = self.scaling(&x, &s) else {
                return self.finish(SolveStatus::NumericalFailure, &x, &y, &s, tau, iter);
            };
            let mu = (self.cone_dot(&x, &s) + tau * kappa) / (self.nu + 1.0);
            let kkt = self.kkt(&sc);
            let Some(solver) = KktSolver::new(kkt, m) else {
                return self.finish(SolveStatus::NumericalFailure, &x, &y, &s, tau, iter);
            };

            // Second right-hand side, shared by predictor and corrector.
            let hc = self.hinv(&sc, &prog.c);
            let mut rhs2 = prog.mul_a(&hc);
            for (r, b) in rhs2.iter_mut().zip(&prog.b) {
                *r += b;
            }
            rhs2.extend(self.free.iter().map(|&j| prog.c[j]));
            let sol2 = solver.solve(&rhs2);
            let dy2 = sol2[..m].to_vec();
            let mut dx2 = self.hinv(&sc, &prog.mul_at(&dy2));
            for (d, h) in dx2.iter_mut().zip(&hc) {
                *d -= h;
            }
            for (f, &j) in self.free.iter().enumerate() {
                dx2[j] = sol2[m + f];
            }
            let denom_base = dot(&prog.c, &dx2) - dot(&prog.b, &dy2);

            let lam = self.lambda(&sc);
            // One linearised solve: A dx − b dτ = r_p, Aᵀdy + ds − c dτ = r_d,
            // cᵀdx − bᵀdy + dκ = r_g, λ∘(W dx + W⁻ᵀ ds) = target, κ dτ + τ dκ = dk.
            let linear = |r_p: &[f64], r_d: &[f64], r_g: f64, ds_target: &ConeVec, dk: f64| -> Option<Direction> {
                let u = self.lam_solve(&sc, ds_target);
                let wu = self.winv(&sc, &u);
                let hr = self.hinv(&sc, r_d);
                let diff: Vec<f64> = hr.iter().zip(&wu).map(|(a, b)| a - b).collect();
                let mut rhs1 = prog.mul_a(&diff);
                for (r, p) in rhs1.iter_mut().zip(r_p) {
                    *r += p;
                }
                rhs1.extend(self.free.iter().map(|&j| r_d[j]));
                let sol1 = solver.solve(&rhs1);
                let dy1 = &sol1[..m];
                let mut dx1 = self.hinv(&sc, &prog.mul_at(dy1));
                for j in 0..n {
                    dx1[j] += wu[j] - hr[j];
                }
                for (f, &j) in self.free.iter().enumerate() {
                    dx1[j] = sol1[m + f];
                }
                let denom = denom_base - kappa / tau;
                if denom == 0.0 || !denom.is_finite() {
                    return None;
                }
                let dtau = (r_g - dot(&prog.c, &dx1) + dot(&prog.b, dy1) - dk / tau) / denom;
                let dy: Vec<f64> = (0..m).map(|i| dy1[i] + dtau * dy2[i]).collect();
                let dx: Vec<f64> = (0..n).map(|j| dx1[j] + dtau * dx2[j]).collect();
                let atdy = prog.mul_at(&dy);
                let mut ds: Vec<f64> = (0..n).map(|j| r_d[j] - atdy[j] + prog.c[j] * dtau).collect();
                for &j in &self.free {
                    ds[j] = 0.0;
                }
                let dkappa = (dk - kappa * dtau) / tau;
                let d = Direction { x: dx, y: dy, s: ds, tau: dtau, kappa: dkappa };
                if d.x.iter().chain(&d.y).chain(&d.s).all(|v| v.is_finite()) && d.tau.is_finite() {
                    Some(d)
                } else {
                    None
                }
            };
            // Solve plus refinement passes on the full linearised system.
            let newton = |scale: f64, ds_target: &ConeVec, dk: f64| -> Option<Direction> {
                let r_p: Vec<f64> = f1.iter().map(|v| -scale * v).collect();
                let r_d: Vec<f64> = f2.iter().map(|v| -scale * v).collect();
                let r_g = -scale * f3;
                let mut d = linear(&r_p, &r_d, r_g, ds_target, dk)?;
                for _ in 0..NEWTON_REFINE {
                    let adx = prog.mul_a(&d.x);
                    let e_p: Vec<f64> = (0..m).map(|i| r_p[i] - adx[i] + prog.b[i] * d.tau).collect();
                    let atdy = prog.mul_at(&d.y);
                    let e_d: Vec<f64> = (0..n).map(|j| r_d[j] - atdy[j] - d.s[j] + prog.c[j] * d.tau).collect();
                    let e_g = r_g - dot(&prog.c, &d.x) + dot(&prog.b, &d.y) - d.kappa;
                    let mut comp = self.w(&sc, &d.x);
                    comp.axpy(1.0, &self.wit(&sc, &d.s));
                    let mut e_c = ds_target.clone();
                    e_c.axpy(-1.0, &lam.jordan(&comp));
                    let e_k = dk - kappa * d.tau - tau * d.kappa;
                    let size = norm(&e_p).max(norm(&e_d));
                    if size <= 1e-15 * (1.0 + norm(&r_p).max(norm(&r_d))) {
                        break;
                    }
                    let c = linear(&e_p, &e_d, e_g, &e_c, e_k)?;
                    for j in 0..n {
                        d.x[j] += c.x[j];
                        d.s[j] += c.s[j];
                    }
                    for i in 0..m {
                        d.y[i] += c.y[i];
                    }
                    d.tau += c.tau;
                    d.kappa += c.kappa;
                }
                Some(d)
            };
            let step = |d: &Direction| -> f64 {
                let mut a = self.max_step(&sc, &self.w(&sc, &d.x)).min(self.max_step(&sc, &self.wit(&sc, &d.s)));
                if d.tau < 0.0 {
                    a = a.min(-tau / d.tau);
                }
                if d.kappa < 0.0 {
                    a = a.min(-kappa / d.kappa);
                }
                a
            };

            // Predictor.
            let lam_sq = lam.jordan(&lam);
            let aff_target = lam_sq.clone().scale(-1.0);
            let Some(aff) = newton(1.0, &aff_target, -tau * kappa) else {
                return self.finish(SolveStatus::NumericalFailure, &x, &y, &s, tau, iter);
            };
            let alpha_aff = step(&aff).min(1.0);
            let sigma = (1.0 - alpha_aff).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let mut target = self.w(&sc, &aff.x).jordan(&self.wit(&sc, &aff.s)).scale(-1.0);
            target.axpy(-1.0, &lam_sq);
            target.axpy(sigma * mu, &self.identity());
            let dk = -tau * kappa - aff.tau * aff.kappa + sigma * mu;
            let Some(dir) = newton(1.0 - sigma, &target, dk) else {
                return self.finish(SolveStatus::NumericalFailure, &x, &y, &s, tau, iter);
            };
            let alpha = (self.set.step_fraction * step(&dir)).min(1.0);
            if alpha < 1e-10 {
                stalls += 1;
                if stalls >= 3 {
                    return self.finish(SolveStatus::NumericalFailure, &x, &y, &s, tau, iter);
                }
            } else {
                stalls = 0;
            }
            for j in 0..n {
                x[j] += alpha * dir.x[j];
                s[j] += alpha * dir.s[j];
            }
            for i in 0..m {
                y[i] += alpha * dir.y[i];
            }
            tau += alpha * dir.tau;
            kappa += alpha * dir.kappa;
        }
        unreachable!("loop returns at max_iter")
    }

    fn finish(&self, status: SolveStatus, x: &[f64], y: &[f64], s: &[f64], tau: f64, iter: usize) -> ConicSolution {
        let inv = 1.0 / tau;
        ConicSolution {
            status,
            x: x.iter().map(|v| v * inv).collect(),
            y: y.iter().map(|v| v * inv).collect(),
            s: s.iter().map(|v| v * inv).collect(),
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            relative_gap: f64::NAN,
            iterations: iter,
            dropped_rows: vec![],
            face_reduced: false,
        }
    }

    fn certificate(&self, status: SolveStatus, x: &[f64], y: &[f64], s: &[f64], scale: f64, iter: usize) -> ConicSolution {
        let inv = 1.0 / scale;
        let (x, y, s) = match status {
            SolveStatus::PrimalInfeasible => (vec![0.0; self.n], y.iter().map(|v| v * inv).collect(), s.iter().map(|v| v * inv).collect()),
            _ => (x.iter().map(|v| v * inv).collect(), vec![0.0; self.m], vec![0.0; self.n]),
        };
        ConicSolution {
            status,
            x,
            y,
            s,
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            relative_gap: f64::NAN,
            iterations: iter,
            dropped_rows: vec![],
            face_reduced: false,
        }
    }
}

/// Dense LU of the symmetrically equilibrated, slightly regularised KKT
/// matrix with iterative refinement against the exact scaled one.
struct KktSolver {
    k: DMatrix<f64>,
    d: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KktSolver {
    fn new(mut k: DMatrix<f64>, m: usize) -> Option<Self> {
        let dim = k.nrows();
        // Unit diagonal on the Schur block, unit column norms on the free block.
        let mut d = vec![1.0; dim];
        for i in 0..m {
            let v = k[(i, i)];
            if v > 0.0 {
                d[i] = 1.0 / v.sqrt();
            }
        }
        for j in m..dim {
            let col = (0..m).fold(0.0f64, |a, i| a.max((d[i] * k[(i, j)]).abs()));
            if col > 0.0 {
                d[j] = 1.0 / col;
            }
        }
        for j in 0..dim {
            for i in 0..dim {
                k[(i, j)] *= d[i] * d[j];
            }
        }
        let mut reg = k.clone();
        for i in 0..dim {
            reg[(i, i)] += if i < m { KKT_REG } else { -KKT_REG };
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { k, d, lu })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_iterator(rhs.len(), rhs.iter().zip(&self.d).map(|(r, d)| r * d));
        let mut x = self.lu.solve(&b).unwrap_or_else(|| DVector::zeros(b.len()));
        for _ in 0..KKT_REFINE {
            let r = &b - &self.k * &x;
            if let Some(dx) = self.lu.solve(&r) {
                x += dx;
            }
        }
        x.iter().zip(&self.d).map(|(v, d)| v * d).collect()
    }
}

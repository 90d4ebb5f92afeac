//! Central-difference discretization of `(q/λ)Ψ = fᵀ∇Ψ + ½ Tr(Σ_t ∇²Ψ)` with
//! Dirichlet data `e^(−φ/λ)`.

use crate::model::{HorizonSpec, SocProblem};
use crate::poly::CompiledPolynomial;

use super::{GridAxis, GridSolution, OracleError};

/// Tolerance for matching a boundary node to a face and the domain.
const GEOM_TOL: f64 = 1e-9;

struct Coefficients {
    lambda: f64,
    q: CompiledPolynomial,
    drift: Vec<CompiledPolynomial>,
    sigma: Vec<Vec<CompiledPolynomial>>,
}

fn prepare(problem: &SocProblem, dim: usize) -> Result<Coefficients, OracleError> {
    if problem.states.len() != dim || problem.dim() != dim {
        return Err(OracleError::Dimension { expected: dim, got: problem.states.len() });
    }
    if problem.horizon != HorizonSpec::FirstExit {
        return Err(OracleError::Horizon("finite differences solve first-exit problems only".into()));
    }
    Ok(Coefficients {
        lambda: problem.lambda(),
        q: problem.cost.state_cost.compile(),
        drift: problem.dynamics.drift.iter().map(|p| p.compile()).collect(),
        sigma: problem.sigma_t.iter().map(|row| row.iter().map(|p| p.compile()).collect()).collect(),
    })
}

fn axes(problem: &SocProblem, counts: &[usize]) -> Result<Vec<GridAxis>, OracleError> {
    counts
        .iter()
        .zip(&problem.bounding_box)
        .zip(problem.space.names())
        .map(|((&n, &(lo, hi)), name)| {
            if n < 3 {
                return Err(OracleError::GridSize { min: 3, got: n });
            }
            Ok(GridAxis { name: name.clone(), lo, hi, n })
        })
        .collect()
}

fn dirichlet(problem: &SocProblem, lambda: f64, point: &[f64]) -> Result<f64, OracleError> {
    let piece = problem
        .boundary
        .iter()
        .find(|b| b.face.contains(point, GEOM_TOL))
        .ok_or_else(|| OracleError::Uncovered(point.to_vec()))?;
    Ok((-piece.terminal_cost.eval_unchecked(point) / lambda).exp())
}

/// Rejects nodes outside the domain, non-positive or mixed diffusion and cell
/// Péclet numbers of 2 or more.
fn check_node(problem: &SocProblem, c: &Coefficients, axes: &[GridAxis], p: &[f64], interior: bool) -> Result<(), OracleError> {
    if !problem.domain.contains(p, GEOM_TOL) {
        return Err(OracleError::NonRectangular(p.to_vec()));
    }
    if !interior {
        return Ok(());
    }
    for (k, axis) in axes.iter().enumerate() {
        let s = c.sigma[k][k].eval(p);
        if !(s > 0.0) {
            return Err(OracleError::Degenerate { axis: axis.name.clone(), point: p.to_vec() });
        }
        for l in 0..k {
            let m = c.sigma[k][l].eval(p);
            if m.abs() > 1e-12 * s {
                return Err(OracleError::MixedDiffusion(p.to_vec()));
            }
        }
    }
    Ok(())
}

/// Checks the cell Péclet number `|f_k| h_k / Σ_kk < 2` at interior nodes. The
/// suggested node count uses the largest ratio over all nodes, so it suffices.
fn check_peclet(c: &Coefficients, axes: &[GridAxis], nodes: impl Iterator<Item = (Vec<f64>, bool)>) -> Result<(), OracleError> {
    let mut worst = vec![0.0f64; axes.len()];
    let mut sup = vec![0.0f64; axes.len()];
    for (p, interior) in nodes {
        for k in 0..axes.len() {
            let ratio = c.drift[k].eval(&p).abs() / c.sigma[k][k].eval(&p).abs();
            sup[k] = sup[k].max(ratio);
            if interior {
                worst[k] = worst[k].max(ratio);
            }
        }
    }
    for ((axis, ratio), sup) in axes.iter().zip(worst).zip(sup) {
        let peclet = ratio * axis.step();
        if peclet >= 2.0 {
            let min_nodes = (sup * (axis.hi - axis.lo) / 2.0).floor() as usize + 2;
            return Err(OracleError::Peclet { axis: axis.name.clone(), peclet, min_nodes });
        }
    }
    Ok(())
}

/// Solves on `n` nodes (endpoints included) with the Thomas algorithm.
pub fn fd_solve_1d(problem: &SocProblem, n: usize) -> Result<GridSolution, OracleError> {
    let c = prepare(problem, 1)?;
    let axes = axes(problem, &[n])?;
    let ax = &axes[0];
    let h = ax.step();
    let nodes: Vec<f64> = (0..n).map(|i| ax.node(i)).collect();
    for (i, &x) in nodes.iter().enumerate() {
        check_node(problem, &c, &axes, &[x], i != 0 && i + 1 != n)?;
    }
    check_peclet(&c, &axes, nodes.iter().enumerate().map(|(i, &x)| (vec![x], i != 0 && i + 1 != n)))?;

    let left = dirichlet(problem, c.lambda, &[ax.lo])?;
    let right = dirichlet(problem, c.lambda, &[ax.hi])?;
    let m = n - 2;
    let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for r in 0..m {
        let x = [nodes[r + 1]];
        let (f, s) = (c.drift[0].eval(&x), c.sigma[0][0].eval(&x));
        sub[r] = -(s / (2.0 * h * h) - f / (2.0 * h));
        sup[r] = -(s / (2.0 * h * h) + f / (2.0 * h));
        diag[r] = s / (h * h) + c.q.eval(&x) / c.lambda;
    }
    rhs[0] -= sub[0] * left;
    rhs[m - 1] -= sup[m - 1] * right;
    let inner = thomas(&sub, &diag, &sup, &rhs)?;

    let mut values = Vec::with_capacity(n);
    values.push(left);
    values.extend(inner);
    values.push(right);
    Ok(GridSolution { axes, values, note: "central differences, O(h^2)".into(), error_estimate: None })
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>, OracleError> {
    let m = diag.len();
    let scale = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut cp, mut dp) = (vec![0.0; m], vec![0.0; m]);
    let mut prev = (0.0, 0.0);
    for i in 0..m {
        let piv = diag[i] - sub[i] * prev.0;
        if !(piv.abs() > f64::EPSILON * scale) {
            return Err(OracleError::Singular(i));
        }
        cp[i] = sup[i] / piv;
        dp[i] = (rhs[i] - sub[i] * prev.1) / piv;
        prev = (cp[i], dp[i]);
    }
    for i in (0..m.saturating_sub(1)).rev() {
        dp[i] -= cp[i] * dp[i + 1];
    }
    Ok(dp)
}

/// Solves on an `nx × ny` node grid with the 5-point stencil and a banded LU.
pub fn fd_solve_2d(problem: &SocProblem, nx: usize, ny: usize) -> Result<GridSolution, OracleError> {
    let c = prepare(problem, 2)?;
    let axes = axes(problem, &[nx, ny])?;
    let mut grid = GridSolution { axes, values: vec![0.0; nx * ny], note: "5-point central differences, O(h^2)".into(), error_estimate: None };
    let is_interior = |idx: &[usize]| idx[0] > 0 && idx[0] + 1 < nx && idx[1] > 0 && idx[1] + 1 < ny;
    for k in 0..grid.len() {
        let idx = grid.index(k);
        let p = grid.point(k);
        check_node(problem, &c, &grid.axes, &p, is_interior(&idx))?;
        if !is_interior(&idx) {
            grid.values[k] = dirichlet(problem, c.lambda, &p)?;
        }
    }
    check_peclet(&c, &grid.axes, (0..grid.len()).map(|k| (grid.point(k), is_interior(&grid.index(k)))))?;

    // Interior unknowns, numbered along the shorter axis first to narrow the band.
    let (mx, my) = (nx - 2, ny - 2);
    let fast = if mx <= my { 0 } else { 1 };
    let (mf, ms) = if fast == 0 { (mx, my) } else { (my, mx) };
    let unknown = |i: usize, j: usize| if fast == 0 { (j - 1) * mf + (i - 1) } else { (i - 1) * mf + (j - 1) };
    let mut a = Band::new(mf * ms, mf);
    let mut rhs = vec![0.0; mf * ms];
    let (hx, hy) = (grid.axes[0].step(), grid.axes[1].step());
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let p = [grid.axes[0].node(i), grid.axes[1].node(j)];
            let row = unknown(i, j);
            let (fx, fy) = (c.drift[0].eval(&p), c.drift[1].eval(&p));
            let (sx, sy) = (c.sigma[0][0].eval(&p), c.sigma[1][1].eval(&p));
            *a.at(row, row) = sx / (hx * hx) + sy / (hy * hy) + c.q.eval(&p) / c.lambda;
            let neighbours = [
                (i - 1, j, -(sx / (2.0 * hx * hx) - fx / (2.0 * hx))),
                (i + 1, j, -(sx / (2.0 * hx * hx) + fx / (2.0 * hx))),
                (i, j - 1, -(sy / (2.0 * hy * hy) - fy / (2.0 * hy))),
                (i, j + 1, -(sy / (2.0 * hy * hy) + fy / (2.0 * hy))),
            ];
            for (ni, nj, w) in neighbours {
                if is_interior(&[ni, nj]) {
                    *a.at(row, unknown(ni, nj)) = w;
                } else {
                    rhs[row] -= w * grid.values[grid.flat(&[ni, nj])];
                }
            }
        }
    }
    let sol = a.solve(rhs)?;
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = grid.flat(&[i, j]);
            grid.values[k] = sol[unknown(i, j)];
        }
    }
    Ok(grid)
}

/// Square band matrix stored row by row, `2·bw + 1` entries per row.
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j + self.bw >= i && j <= i + self.bw);
        let w = self.width();
        &mut self.data[i * w + j + self.bw - i]
    }

    /// LU without pivoting, which is stable for the diagonally dominant
    /// matrices the Péclet condition guarantees.
    fn solve(mut self, mut b: Vec<f64>) -> Result<Vec<f64>, OracleError> {
        let (n, bw, w) = (self.n, self.bw, self.width());
        let scale = (0..n).map(|i| self.data[i * w + bw].abs()).fold(0.0, f64::max);
        for k in 0..n {
            let piv = self.data[k * w + bw];
            if !(piv.abs() > f64::EPSILON * scale) {
                return Err(OracleError::Singular(k));
            }
            let end = (k + bw + 1).min(n);
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            // Row k, columns k+1..end.
            let pivot_row = &head[k * w + bw + 1..k * w + bw + (end - k)];
            for i in k + 1..end {
                let row = &mut tail[(i - k - 1) * w..(i - k) * w];
                let col_k = k + bw - i;
                let l = row[col_k] / piv;
                if l == 0.0 {
                    continue;
                }
                row[col_k] = l;
                for (dst, src) in row[col_k + 1..col_k + 1 + pivot_row.len()].iter_mut().zip(pivot_row) {
                    *dst -= l * src;
                }
                b[i] -= l * b[k];
            }
        }
        for k in (0..n).rev() {
            let end = (k + bw + 1).min(n);
            let row = &self.data[k * w..(k + 1) * w];
            let s: f64 = (k + 1..end).map(|j| row[j + bw - k] * b[j]).sum();
            b[k] = (b[k] - s) / row[bw];
        }
        Ok(b)
    }
}

fn check_odd(n: usize) -> Result<(), OracleError> {
    if n % 2 == 0 || n < 5 {
        return Err(OracleError::GridSize { min: 5, got: n });
    }
    Ok(())
}

/// A Péclet failure on the coarse companion grid, restated for the fine grid.
fn refine_hint(e: OracleError) -> OracleError {
    match e {
        OracleError::Peclet { axis, peclet, min_nodes } => OracleError::Peclet { axis, peclet, min_nodes: 2 * min_nodes - 1 },
        other => other,
    }
}

/// Solution on `n` nodes with a Richardson error estimate from the grid of
/// `(n + 1)/2` nodes. `n` must be odd.
pub fn fd_reference_1d(problem: &SocProblem, n: usize) -> Result<GridSolution, OracleError> {
    check_odd(n)?;
    let fine = fd_solve_1d(problem, n)?;
    let coarse = fd_solve_1d(problem, n.div_ceil(2)).map_err(refine_hint)?;
    Ok(fine.with_richardson(&coarse))
}

pub fn fd_reference_2d(problem: &SocProblem, nx: usize, ny: usize) -> Result<GridSolution, OracleError> {
    check_odd(nx)?;
    check_odd(ny)?;
    let fine = fd_solve_2d(problem, nx, ny)?;
    let coarse = fd_solve_2d(problem, nx.div_ceil(2), ny.div_ceil(2)).map_err(refine_hint)?;
    Ok(fine.with_richardson(&coarse))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solve() {
        let sub = [0.0, -1.0, -0.5, -2.0];
        let diag = [4.0, 5.0, 3.0, 6.0];
        let sup = [-1.0, -2.0, -0.5, 0.0];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = thomas(&sub, &diag, &sup, &rhs).unwrap();
        for i in 0..4 {
            let mut r = diag[i] * x[i];
            if i > 0 {
                r += sub[i] * x[i - 1];
            }
            if i < 3 {
                r += sup[i] * x[i + 1];
            }
            assert!((r - rhs[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let (n, bw) = (12, 3);
        let mut a = Band::new(n, bw);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                let v = if i == j { 10.0 } else { ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6 };
                *a.at(i, j) = v;
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 4.0).collect();
        let x = a.solve(b.clone()).unwrap();
        let r = &dense * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn singular_band_is_reported() {
        let mut a = Band::new(3, 1);
        *a.at(0, 0) = 1.0;
        *a.at(1, 1) = 1.0;
        assert_eq!(a.solve(vec![1.0; 3]).unwrap_err(), OracleError::Singular(2));
    }
}

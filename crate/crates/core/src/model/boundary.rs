//! One-sided polynomial fits of the boundary desirability `e^(−φ/λ)`.

use crate::poly::{Polynomial, VariableSpace};

use super::{BoundDirection, BoundaryPiece, ModelError};

use std::sync::Arc;

/// Dense sample count used to bound the fit remainder.
pub const FIT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFit {
    /// Shifted fit: below the data for lower bounds, above for upper.
    pub poly: Polynomial,
    /// Certified sup-norm bound on `|fit − e^(−φ/λ)|` before shifting.
    pub remainder: f64,
    /// Data was constant on the face; `poly` is exact.
    pub exact: bool,
    /// Axis-aligned face `x_var = value`, if the face equality is one.
    pub face: Option<(usize, f64)>,
}

/// Recognises `α·x_k + β` and returns `(k, −β/α)`.
pub fn axis_face(h: &Polynomial) -> Option<(usize, f64)> {
    if h.degree() != 1 {
        return None;
    }
    let mut var = None;
    let mut alpha = 0.0;
    for (m, c) in h.terms() {
        if m.is_one() {
            continue;
        }
        let k = m.exponents().iter().position(|&e| e == 1)?;
        if var.replace(k).is_some() {
            return None;
        }
        alpha = c;
    }
    var.map(|k| (k, -h.constant_term() / alpha))
}

/// Chebyshev interpolant of `e^(−φ/λ)` in the variables the face data
/// depends on, shifted by a sampled remainder bound plus a padding equal to
/// the largest error change between neighbouring samples.
pub fn desirability_boundary(
    piece: &BoundaryPiece,
    lambda: f64,
    fit_degree: u32,
    direction: BoundDirection,
    bounding_box: &[(f64, f64)],
) -> Result<BoundaryFit, ModelError> {
    let space = piece.terminal_cost.space().clone();
    let h = piece
        .face
        .equalities
        .first()
        .ok_or_else(|| ModelError::Domain(format!("boundary piece {:?} has no face equality", piece.name)))?;
    let face = axis_face(h);
    let phi = match face {
        Some((k, v)) => piece.terminal_cost.substitute(k, v),
        None => piece.terminal_cost.clone(),
    };
    if phi.is_constant() {
        let value = (-phi.constant_term() / lambda).exp();
        return Ok(BoundaryFit { poly: Polynomial::constant(&space, value), remainder: 0.0, exact: true, face });
    }
    let vars: Vec<usize> = (0..space.dim()).filter(|&i| phi.depends_on(i)).collect();
    let boxes: Vec<(f64, f64)> = vars.iter().map(|&i| bounding_box[i]).collect();
    let compiled = phi.compile();
    let mut base: Vec<f64> = bounding_box.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    if let Some((k, v)) = face {
        base[k] = v;
    }
    let data = |coords: &[f64]| {
        let mut p = base.clone();
        for (&i, &x) in vars.iter().zip(coords) {
            p[i] = x;
        }
        (-compiled.eval(&p) / lambda).exp()
    };

    let fit = chebyshev_fit(&space, &vars, &boxes, fit_degree, &data);
    let fit_c = fit.compile();
    let error = |coords: &[f64]| {
        let mut p = base.clone();
        for (&i, &x) in vars.iter().zip(coords) {
            p[i] = x;
        }
        fit_c.eval(&p) - data(coords)
    };
    let remainder = sampled_remainder(&boxes, &error);
    let shift = match direction {
        BoundDirection::Lower => -remainder,
        BoundDirection::Upper => remainder,
    };
    Ok(BoundaryFit { poly: fit.add_constant(shift), remainder, exact: false, face })
}

/// `max |e|` over a tensor grid of about [`FIT_SAMPLES`] points plus the
/// largest difference of `e` between grid neighbours.
fn sampled_remainder(boxes: &[(f64, f64)], error: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = boxes.len();
    let per_axis = ((FIT_SAMPLES as f64).powf(1.0 / d as f64).ceil() as usize).max(2);
    let total = per_axis.pow(d as u32);
    let mut values = vec![0.0; total];
    let mut coords = vec![0.0; d];
    for (flat, v) in values.iter_mut().enumerate() {
        let mut rem = flat;
        for (a, (lo, hi)) in boxes.iter().enumerate() {
            let idx = rem % per_axis;
            rem /= per_axis;
            coords[a] = lo + (hi - lo) * idx as f64 / (per_axis - 1) as f64;
        }
        *v = error(&coords);
    }
    let max_err = values.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
    let mut padding = 0.0f64;
    let mut stride = 1;
    for _ in 0..d {
        for flat in 0..total {
            if (flat / stride) % per_axis + 1 < per_axis {
                padding = padding.max((values[flat + stride] - values[flat]).abs());
            }
        }
        stride *= per_axis;
    }
    max_err + padding
}

/// Tensor Chebyshev interpolation at first-kind nodes, truncated to total
/// degree `degree`, returned in the monomial basis.
fn chebyshev_fit(
    space: &Arc<VariableSpace>,
    vars: &[usize],
    boxes: &[(f64, f64)],
    degree: u32,
    f: &dyn Fn(&[f64]) -> f64,
) -> Polynomial {
    let d = vars.len();
    let k = degree as usize + 1;
    let nodes: Vec<f64> = (0..k).map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / k as f64).cos()).collect();
    let total = k.pow(d as u32);
    // Function values on the tensor grid, axis 0 fastest.
    let mut coeffs: Vec<f64> = (0..total)
        .map(|flat| {
            let mut rem = flat;
            let coords: Vec<f64> = boxes
                .iter()
                .map(|(lo, hi)| {
                    let t = nodes[rem % k];
                    rem /= k;
                    0.5 * (lo + hi) + 0.5 * (hi - lo) * t
                })
                .collect();
            f(&coords)
        })
        .collect();
    // Discrete Chebyshev transform along each axis.
    let mut stride = 1;
    for _ in 0..d {
        let mut out = vec![0.0; total];
        for flat in 0..total {
            let i = (flat / stride) % k;
            let base = flat - i * stride;
            let mut acc = 0.0;
            for (j, node) in nodes.iter().enumerate() {
                acc += coeffs[base + j * stride] * (i as f64 * node.acos()).cos();
            }
            out[flat] = acc * if i == 0 { 1.0 } else { 2.0 } / k as f64;
        }
        coeffs = out;
        stride *= k;
    }
    // T_i(u(x)) for each axis, u mapping the box onto [−1, 1].
    let cheb: Vec<Vec<Polynomial>> = vars
        .iter()
        .zip(boxes)
        .map(|(&v, (lo, hi))| {
            let u = Polynomial::var(space, v).scale(2.0 / (hi - lo)).add_constant(-(hi + lo) / (hi - lo));
            let mut ts = vec![Polynomial::constant(space, 1.0), u.clone()];
            while ts.len() < k {
                let n = ts.len();
                let next = u.try_mul(&ts[n - 1]).expect("same space").scale(2.0).try_sub(&ts[n - 2]).expect("same space");
                ts.push(next);
            }
            ts.truncate(k);
            ts
        })
        .collect();
    let mut out = Polynomial::zero(space);
    for (flat, c) in coeffs.iter().enumerate() {
        let mut rem = flat;
        let idx: Vec<usize> = (0..d)
            .map(|_| {
                let i = rem % k;
                rem /= k;
                i
            })
            .collect();
        if idx.iter().sum::<usize>() > degree as usize || *c == 0.0 {
            continue;
        }
        let mut term = Polynomial::constant(space, *c);
        for (a, &i) in idx.iter().enumerate() {
            term = term.try_mul(&cheb[a][i]).expect("same space");
        }
        out = out.try_add(&term).expect("same space");
    }
    out
}

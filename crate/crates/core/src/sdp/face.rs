//! Restriction of a program to the face exposed by a stalled iterate.
//!
//! Programs without a strictly feasible point (common for SOS programs whose
//! identities pin a Gram diagonal to zero) drive `τ → 0` and stall at a
//! residual far above tolerance. The diverging dual slack of the stalled run
//! exposes the face: each PSD block is replaced by `V R Vᵀ` with `V` spanning
//! the complement of the slack's large eigenvectors, and nonnegative entries
//! with large slack are fixed at zero. The restricted program usually has an
//! interior and solves to full accuracy.

use nalgebra::DMatrix;

use super::{smat, svec, svec_coords, svec_len, Cone, ConicProgram, SparseRow};

/// A dual slack this many times larger than `max(1, ‖c‖∞)` is read as a ray.
/// Eigenvalues above the geometric mean of the two scales form its support.
pub(crate) const RAY_RATIO: f64 = 1e2;
pub(crate) const SNAP_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
enum BlockMap {
    Keep,
    Drop,
    Range(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub(crate) struct FaceRestriction {
    pub program: ConicProgram,
    /// Per original cone.
    maps: Vec<Vec<BlockMap>>,
    /// Original cones.
    cones: Vec<Cone>,
}

/// Without a primal interior the dual slack of a stalled run diverges along
/// some `z ∈ K*` with `⟨z, x⟩ = 0` for every feasible `x`. Restricts each
/// block to the orthogonal complement of the support of that ray. Returns
/// `None` when `s` shows no ray.
pub(crate) fn restrict_to_face(prog: &ConicProgram, s: &[f64]) -> Option<FaceRestriction> {
    let offsets = prog.block_offsets();
    let c_scale = prog.c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut eigs = Vec::new();
    let mut top = 0.0f64;
    for (cone, &off) in prog.cones.iter().zip(&offsets) {
        match *cone {
            Cone::Free(_) => eigs.push(None),
            Cone::Nonneg(n) => {
                top = s[off..off + n].iter().fold(top, |a, &v| a.max(v));
                eigs.push(None);
            }
            Cone::Psd(k) => {
                let e = smat(k, &s[off..off + svec_len(k)]).symmetric_eigen();
                top = e.eigenvalues.iter().fold(top, |a, &v| a.max(v));
                eigs.push(Some(e));
            }
        }
    }
    if !(top > RAY_RATIO * c_scale) {
        return None;
    }
    let cut = (top * c_scale).sqrt();
    let mut maps = Vec::with_capacity(prog.cones.len());
    let mut cones = Vec::new();
    let mut changed = false;
    for ((cone, &off), eig) in prog.cones.iter().zip(&offsets).zip(eigs) {
        match *cone {
            Cone::Free(n) => {
                maps.push(vec![BlockMap::Keep; n]);
                cones.push(Cone::Free(n));
            }
            Cone::Nonneg(n) => {
                let m: Vec<BlockMap> = s[off..off + n].iter().map(|&v| if v < cut { BlockMap::Keep } else { BlockMap::Drop }).collect();
                let kept = m.iter().filter(|b| matches!(b, BlockMap::Keep)).count();
                changed |= kept < n;
                if kept > 0 {
                    cones.push(Cone::Nonneg(kept));
                }
                maps.push(m);
            }
            Cone::Psd(k) => {
                let eig = eig.expect("psd block");
                let keep: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] < cut).collect();
                let map = if keep.len() == k {
                    BlockMap::Keep
                } else if keep.is_empty() {
                    changed = true;
                    BlockMap::Drop
                } else {
                    changed = true;
                    let v = DMatrix::from_fn(k, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
                    BlockMap::Range(snap_to_coordinates(v))
                };
                match &map {
                    BlockMap::Keep => cones.push(Cone::Psd(k)),
                    BlockMap::Range(v) => cones.push(Cone::Psd(v.ncols())),
                    BlockMap::Drop => {}
                }
                maps.push(vec![map]);
            }
        }
    }
    if !changed {
        return None;
    }
    let mut out = FaceRestriction {
        program: ConicProgram { c: vec![], rows: vec![], b: prog.b.clone(), cones },
        maps,
        cones: prog.cones.clone(),
    };
    let c_sparse: SparseRow = prog.c.iter().copied().enumerate().filter(|e| e.1 != 0.0).collect();
    let mut c = vec![0.0; out.program.num_vars()];
    for (j, v) in out.map_row(&c_sparse, &offsets) {
        c[j] = v;
    }
    out.program.c = c;
    out.program.rows = prog.rows.iter().map(|r| out.map_row(r, &offsets)).collect();
    Some(out)
}

/// Replaces a range basis by exact unit vectors when its projector is within
/// [`SNAP_TOL`] of a coordinate projector. Faces of SOS programs usually drop
/// whole basis monomials, and the exact face avoids an inconsistent
/// restricted system.
fn snap_to_coordinates(v: DMatrix<f64>) -> DMatrix<f64> {
    let k = v.nrows();
    let proj = &v * v.transpose();
    let mut kept = Vec::new();
    for i in 0..k {
        let p = proj[(i, i)];
        if p > 1.0 - SNAP_TOL {
            kept.push(i);
        } else if p > SNAP_TOL {
            return v;
        }
    }
    if kept.len() != v.ncols() {
        return v;
    }
    DMatrix::from_fn(k, kept.len(), |r, c| if r == kept[c] { 1.0 } else { 0.0 })
}

impl FaceRestriction {
    /// Expresses `⟨a, x⟩` in the restricted coordinates.
    fn map_row(&self, entries: &[(usize, f64)], offsets: &[usize]) -> SparseRow {
        let mut out = Vec::new();
        let mut new_off = 0;
        let mut cursor = 0;
        for (ci, (cone, &off)) in self.cones.iter().zip(offsets).enumerate() {
            let len = cone.len();
            while cursor < entries.len() && entries[cursor].0 < off {
                cursor += 1;
            }
            let start = cursor;
            while cursor < entries.len() && entries[cursor].0 < off + len {
                cursor += 1;
            }
            let local = &entries[start..cursor];
            match cone {
                Cone::Free(_) | Cone::Nonneg(_) => {
                    let mut pos = Vec::with_capacity(len);
                    let mut k = 0;
                    for m in &self.maps[ci] {
                        pos.push(if matches!(m, BlockMap::Keep) {
                            k += 1;
                            Some(k - 1)
                        } else {
                            None
                        });
                    }
                    for &(j, v) in local {
                        if let Some(p) = pos[j - off] {
                            out.push((new_off + p, v));
                        }
                    }
                    new_off += k;
                }
                Cone::Psd(k) => match &self.maps[ci][0] {
                    BlockMap::Keep => {
                        out.extend(local.iter().map(|&(j, v)| (new_off + j - off, v)));
                        new_off += len;
                    }
                    BlockMap::Drop => {}
                    BlockMap::Range(v) => {
                        let mut a = DMatrix::zeros(*k, *k);
                        for &(j, val) in local {
                            let (r, c) = svec_coords(*k, j - off);
                            if r == c {
                                a[(r, r)] = val;
                            } else {
                                a[(r, c)] = val / std::f64::consts::SQRT_2;
                                a[(c, r)] = val / std::f64::consts::SQRT_2;
                            }
                        }
                        if !local.is_empty() {
                            let reduced = v.transpose() * a * v;
                            let sv = svec(&reduced);
                            let big = sv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                            out.extend(sv.iter().enumerate().filter(|(_, x)| x.abs() > 1e-14 * big).map(|(j, &x)| (new_off + j, x)));
                        }
                        new_off += svec_len(v.ncols());
                    }
                },
            }
        }
        out
    }

    /// Maps a restricted primal point back to the original coordinates.
    pub fn lift_x(&self, xr: &[f64]) -> Vec<f64> {
        let mut x = Vec::new();
        let mut pos = 0;
        for (ci, cone) in self.cones.iter().enumerate() {
            match cone {
                Cone::Free(_) | Cone::Nonneg(_) => {
                    for m in &self.maps[ci] {
                        if matches!(m, BlockMap::Keep) {
                            x.push(xr[pos]);
                            pos += 1;
                        } else {
                            x.push(0.0);
                        }
                    }
                }
                Cone::Psd(k) => match &self.maps[ci][0] {
                    BlockMap::Keep => {
                        x.extend_from_slice(&xr[pos..pos + svec_len(*k)]);
                        pos += svec_len(*k);
                    }
                    BlockMap::Drop => x.extend(std::iter::repeat(0.0).take(svec_len(*k))),
                    BlockMap::Range(v) => {
                        let r = v.ncols();
                        let inner = smat(r, &xr[pos..pos + svec_len(r)]);
                        x.extend(svec(&(v * inner * v.transpose())));
                        pos += svec_len(r);
                    }
                },
            }
        }
        x
    }
}

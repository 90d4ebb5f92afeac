//! Removal of linearly dependent equality rows.

use super::ConicProgram;

pub(crate) const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RowSelection {
    pub keep: Vec<usize>,
    pub dropped: Vec<usize>,
    /// A dropped row whose right-hand side disagrees with the kept rows.
    pub inconsistent: bool,
}

/// Rows that touch a column no later row touches are independent of the
/// rest, so they are peeled off first; only the leftover core goes through
/// pivoted Gram-Schmidt (equivalent to column-pivoted QR of the core's
/// transpose).
pub(crate) fn select_rows(prog: &ConicProgram) -> RowSelection {
    let m = prog.num_rows();
    let n = prog.num_vars();
    let mut count = vec![0usize; n];
    for row in &prog.rows {
        for &(j, v) in row {
            if v != 0.0 {
                count[j] += 1;
            }
        }
    }
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in prog.rows.iter().enumerate() {
        for &(j, v) in row {
            if v != 0.0 {
                cols[j].push(i);
            }
        }
    }
    let mut peeled = vec![false; m];
    let mut stack: Vec<usize> = (0..m).collect();
    while let Some(i) = stack.pop() {
        if peeled[i] {
            continue;
        }
        if prog.rows[i].iter().any(|&(j, v)| v != 0.0 && count[j] == 1) {
            peeled[i] = true;
            for &(j, v) in &prog.rows[i] {
                if v != 0.0 {
                    count[j] -= 1;
                    if count[j] == 1 {
                        stack.extend(cols[j].iter().copied().filter(|&r| !peeled[r]));
                    }
                }
            }
        }
    }
    let core: Vec<usize> = (0..m).filter(|&i| !peeled[i]).collect();
    if core.is_empty() {
        return RowSelection { keep: (0..m).collect(), dropped: vec![], inconsistent: false };
    }
    let (core_keep, dropped, inconsistent) = pivoted_gram_schmidt(prog, &core);
    let mut keep: Vec<usize> = (0..m).filter(|&i| peeled[i]).chain(core_keep).collect();
    keep.sort_unstable();
    RowSelection { keep, dropped, inconsistent }
}

fn pivoted_gram_schmidt(prog: &ConicProgram, core: &[usize]) -> (Vec<usize>, Vec<usize>, bool) {
    // Compress the columns touched by the core rows.
    let mut col_map = std::collections::HashMap::new();
    for &i in core {
        for &(j, _) in &prog.rows[i] {
            let next = col_map.len();
            col_map.entry(j).or_insert(next);
        }
    }
    let width = col_map.len();
    let k = core.len();
    let mut rows: Vec<Vec<f64>> = core
        .iter()
        .map(|&i| {
            let mut r = vec![0.0; width];
            for &(j, v) in &prog.rows[i] {
                r[col_map[&j]] = v;
            }
            r
        })
        .collect();
    let mut rhs: Vec<f64> = core.iter().map(|&i| prog.b[i]).collect();
    let initial: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    let scale = initial.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let b_scale = rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));

    let mut remaining: Vec<usize> = (0..k).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| norm(&rows[*a.1]).total_cmp(&norm(&rows[*b.1])))
            .unwrap();
        let nb = norm(&rows[best]);
        if nb <= PIVOT_TOL * scale {
            break;
        }
        remaining.swap_remove(pos);
        keep.push(best);
        let q: Vec<f64> = rows[best].iter().map(|v| v / nb).collect();
        let bq = rhs[best] / nb;
        rows[best] = q.clone();
        rhs[best] = bq;
        // Two passes of projection keep the residual rows orthogonal.
        for _ in 0..2 {
            for &r in &remaining {
                let d: f64 = rows[r].iter().zip(&q).map(|(a, b)| a * b).sum();
                for (a, b) in rows[r].iter_mut().zip(&q) {
                    *a -= d * b;
                }
                rhs[r] -= d * bq;
            }
        }
    }
    let inconsistent = remaining.iter().any(|&r| rhs[r].abs() > 1e-8 * b_scale);
    let mut dropped: Vec<usize> = remaining.iter().map(|&r| core[r]).collect();
    dropped.sort_unstable();
    (keep.into_iter().map(|r| core[r]).collect(), dropped, inconsistent)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

//! Plain-text sparse dump of a conic program.
//!
//! ```text
//! * comment lines start with '*'
//! <rows> <vars>
//! <cones, e.g. "f3 l2 s4">
//! k blk i j v
//! ```
//!
//! One line per nonzero. `k = 0` is the objective, `k ≥ 1` the k-th equality
//! row. Blocks are numbered from 1 in cone order; block 0 carries the
//! right-hand side as `k 0 1 1 b_k`. Free and nonnegative entries are written
//! on the diagonal (`i = j`). PSD entries are written as plain matrix entries of
//! the upper triangle (`i ≤ j`), so the √2 factor of the internal vectorization
//! never appears in the file. Indices are 1-based.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{svec_coords, svec_index, Cone, ConicProgram, SdpError};

/// `(block, i, j, factor)` of each decision coordinate; `value_in_file = factor·v`.
fn coordinates(cones: &[Cone]) -> Vec<(usize, usize, usize, f64)> {
    let mut out = Vec::new();
    for (b, cone) in cones.iter().enumerate() {
        match *cone {
            Cone::Free(n) | Cone::Nonneg(n) => out.extend((0..n).map(|i| (b + 1, i + 1, i + 1, 1.0))),
            Cone::Psd(n) => out.extend((0..cone.len()).map(|k| {
                let (i, j) = svec_coords(n, k);
                (b + 1, j + 1, i + 1, if i == j { 1.0 } else { 1.0 / SQRT_2 })
            })),
        }
    }
    out
}

pub fn write_dump(prog: &ConicProgram, mut out: impl Write) -> Result<(), SdpError> {
    let coords = coordinates(&prog.cones);
    let mut text = String::new();
    let _ = writeln!(text, "* linsoc conic program");
    let _ = writeln!(text, "{} {}", prog.num_rows(), prog.num_vars());
    let cones: Vec<String> = prog
        .cones
        .iter()
        .map(|c| match *c {
            Cone::Free(n) => format!("f{n}"),
            Cone::Nonneg(n) => format!("l{n}"),
            Cone::Psd(n) => format!("s{n}"),
        })
        .collect();
    let _ = writeln!(text, "{}", cones.join(" "));
    let mut entry = |k: usize, var: usize, v: f64| {
        let (b, i, j, f) = coords[var];
        let _ = writeln!(text, "{k} {b} {i} {j} {:?}", f * v);
    };
    for (var, &v) in prog.c.iter().enumerate() {
        if v != 0.0 {
            entry(0, var, v);
        }
    }
    for (k, row) in prog.rows.iter().enumerate() {
        for &(var, v) in row {
            entry(k + 1, var, v);
        }
    }
    for (k, &v) in prog.b.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(text, "{} 0 1 1 {v:?}", k + 1);
        }
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_dump(input: impl BufRead) -> Result<ConicProgram, SdpError> {
    let bad = |line: usize, msg: &str| SdpError::Malformed(format!("dump line {line}: {msg}"));
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| r.as_ref().map_or(true, |(_, l)| !l.trim().is_empty() && !l.starts_with('*')));

    let (ln, header) = lines.next().ok_or_else(|| bad(0, "missing header"))??;
    let dims: Vec<usize> = header.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(ln, "bad sizes"))?;
    let [m, n] = dims[..] else { return Err(bad(ln, "expected '<rows> <vars>'")) };

    let (ln, cone_line) = lines.next().ok_or_else(|| bad(ln, "missing cone line"))??;
    let mut cones = Vec::new();
    for tok in cone_line.split_whitespace() {
        let (kind, size) = tok.split_at(1);
        let size: usize = size.parse().map_err(|_| bad(ln, "bad cone size"))?;
        cones.push(match kind {
            "f" => Cone::Free(size),
            "l" => Cone::Nonneg(size),
            "s" => Cone::Psd(size),
            _ => return Err(bad(ln, "unknown cone kind")),
        });
    }
    let offsets: Vec<usize> = cones.iter().scan(0, |o, c| Some(std::mem::replace(o, *o + c.len()))).collect();
    if cones.iter().map(Cone::len).sum::<usize>() != n {
        return Err(bad(ln, "cone sizes do not sum to the variable count"));
    }

    let mut c = vec![0.0; n];
    let mut b = vec![0.0; m];
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for item in lines {
        let (ln, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [k, blk, i, j, v] = fields[..] else { return Err(bad(ln, "expected 'k blk i j v'")) };
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, "bad index"));
        let (k, blk, i, j) = (int(k)?, int(blk)?, int(i)?, int(j)?);
        let v: f64 = v.parse().map_err(|_| bad(ln, "bad value"))?;
        if k > m {
            return Err(bad(ln, "row index out of range"));
        }
        if blk == 0 {
            if k == 0 {
                return Err(bad(ln, "objective has no right-hand side"));
            }
            b[k - 1] = v;
            continue;
        }
        let cone = *cones.get(blk - 1).ok_or_else(|| bad(ln, "block index out of range"))?;
        let (var, value) = match cone {
            Cone::Free(s) | Cone::Nonneg(s) if i == j && (1..=s).contains(&i) => (i - 1, v),
            Cone::Psd(s) if (1..=s).contains(&i) && (1..=s).contains(&j) => {
                (svec_index(s, i - 1, j - 1), if i == j { v } else { v * SQRT_2 })
            }
            _ => return Err(bad(ln, "entry outside its block")),
        };
        let var = offsets[blk - 1] + var;
        if k == 0 {
            c[var] = value;
        } else {
            rows[k - 1].push((var, value));
        }
    }
    for row in &mut rows {
        row.sort_by_key(|e| e.0);
    }
    ConicProgram::new(c, rows, b, cones)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ConicProgram {
        ConicProgram::new(
            vec![1.0, 0.0, 0.1, 0.0, 0.0, 1.0 / 3.0],
            vec![vec![(0, 1.0), (2, -2.5), (4, 0.7)], vec![(3, 1.0), (5, 1e-17)]],
            vec![1.0, 0.0],
            vec![Cone::Free(1), Cone::Nonneg(2), Cone::Psd(2)],
        )
        .unwrap()
    }

    #[test]
    fn dump_round_trips() {
        let prog = sample();
        let mut buf = Vec::new();
        write_dump(&prog, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "f1 l2 s2");
        let back = read_dump(&buf[..]).unwrap();
        assert_eq!((&back.b, &back.cones), (&prog.b, &prog.cones));
        let close = |a: &[(usize, f64)], b: &[(usize, f64)]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-15 * x.1.abs().max(1.0))
        };
        assert!(back.c.iter().zip(&prog.c).all(|(a, b)| (a - b).abs() <= 1e-15));
        assert!(back.rows.iter().zip(&prog.rows).all(|(a, b)| close(a, b)));
    }

    #[test]
    fn off_diagonal_entries_are_unscaled() {
        let mut buf = Vec::new();
        write_dump(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // svec coordinate 4 is the (0,1) entry of the 2x2 block, stored as 0.7 = √2·a.
        let line = text.lines().find(|l| l.starts_with("1 3 1 2 ")).unwrap();
        let v: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
        assert!((v - 0.7 / SQRT_2).abs() < 1e-15);
        assert!(text.lines().any(|l| l == "1 0 1 1 1.0"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_dump(&b"1 1\nf1\n2 1 1 1 1.0\n"[..]).is_err());
        assert!(read_dump(&b"1 1\nq1\n"[..]).is_err());
        assert!(read_dump(&b"1\n"[..]).is_err());
        assert!(read_dump(&b"1 1\nl1\n1 1 1 2 1.0\n"[..]).is_err());
        assert!(read_dump(&b"1 1\nl1\n0 0 1 1 1.0\n"[..]).is_err());
    }
}

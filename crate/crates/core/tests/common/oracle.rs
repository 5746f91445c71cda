//! Independent solution of the four-variable fixture.
//!
//! The two equality rows eliminate `x1 = 2 - x2^2 - x3^2` and
//! `x4 = 4 - x2^4 - x3^4`, leaving a problem in `(x2, x3)` with the
//! constraints `x1 >= 0`, `x4 >= 0` and `4 x2 + 2 x3 >= 0`. Its minimum is
//! found on a fine grid refined by Nelder-Mead restarts for the interior, and
//! by one-dimensional searches along each boundary curve. Nothing here uses
//! the solver or the derivative engine.

use nalgebra::{DMatrix, DVector};

pub fn full_point(x2: f64, x3: f64) -> [f64; 4] {
    [2.0 - x2 * x2 - x3 * x3, x2, x3, 4.0 - x2.powi(4) - x3.powi(4)]
}

pub fn objective(x: &[f64; 4]) -> f64 {
    3.0 * x[0] + (x[0] + x[1] + x[2]).powi(2) + 5.0 * x[3]
}

fn feasible(x: &[f64; 4], tol: f64) -> bool {
    x[0] >= -tol && x[3] >= -tol && 4.0 * x[1] + 2.0 * x[2] >= -tol
}

fn reduced(x2: f64, x3: f64) -> Option<f64> {
    let x = full_point(x2, x3);
    feasible(&x, 0.0).then(|| objective(&x))
}

fn nelder_mead(f: impl Fn(&[f64; 2]) -> f64, start: [f64; 2], size: f64) -> [f64; 2] {
    let mut s = [start, [start[0] + size, start[1]], [start[0], start[1] + size]];
    let mut v = s.map(|p| f(&p));
    for _ in 0..20_000 {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let (b, m, w) = (idx[0], idx[1], idx[2]);
        let spread = (0..2).map(|k| (s[w][k] - s[b][k]).abs().max((s[m][k] - s[b][k]).abs())).fold(0.0, f64::max);
        if spread < 1e-13 {
            break;
        }
        let c = [(s[b][0] + s[m][0]) / 2.0, (s[b][1] + s[m][1]) / 2.0];
        let at = |t: f64| [c[0] + t * (s[w][0] - c[0]), c[1] + t * (s[w][1] - c[1])];
        let r = at(-1.0);
        let fr = f(&r);
        if fr < v[b] {
            let e = at(-2.0);
            let fe = f(&e);
            if fe < fr {
                (s[w], v[w]) = (e, fe);
            } else {
                (s[w], v[w]) = (r, fr);
            }
        } else if fr < v[m] {
            (s[w], v[w]) = (r, fr);
        } else {
            let k = at(0.5);
            let fk = f(&k);
            if fk < v[w] {
                (s[w], v[w]) = (k, fk);
            } else {
                for i in [m, w] {
                    s[i] = [(s[i][0] + s[b][0]) / 2.0, (s[i][1] + s[b][1]) / 2.0];
                    v[i] = f(&s[i]);
                }
            }
        }
    }
    let b = (0..3).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    s[b]
}

/// Local minima of `phi` on `[a, b]`: a grid scan, then bisection on the
/// central-difference derivative inside each bracketing cell.
fn minima_1d(phi: &dyn Fn(f64) -> Option<f64>, a: f64, b: f64, cells: usize) -> Vec<f64> {
    let h = (b - a) / cells as f64;
    let vals: Vec<Option<f64>> = (0..=cells).map(|k| phi(a + k as f64 * h)).collect();
    let mut out = Vec::new();
    for k in 0..=cells {
        let Some(vk) = vals[k] else { continue };
        let left = if k == 0 { None } else { vals[k - 1] };
        let right = if k == cells { None } else { vals[k + 1] };
        if left.is_some_and(|l| l < vk) || right.is_some_and(|r| r < vk) {
            continue;
        }
        let t = a + k as f64 * h;
        let (mut lo, mut hi) = (t - h, t + h);
        let eps = 1e-5;
        let slope = |s: f64| -> Option<f64> { Some((phi(s + eps)? - phi(s - eps)?) / (2.0 * eps)) };
        let (Some(sl), Some(sh)) = (slope(lo), slope(hi)) else {
            // Minimum sits at the end of the feasible arc.
            out.push(t);
            continue;
        };
        if !(sl < 0.0 && sh > 0.0) {
            out.push(t);
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            match slope(mid) {
                Some(s) if s < 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => break,
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

#[derive(Debug, Clone)]
pub struct FixtureOracle {
    pub f_star: f64,
    /// Every global minimizer found, as full `(x1, x2, x3, x4)` points.
    pub minimizers: Vec<[f64; 4]>,
}

impl FixtureOracle {
    pub fn nearest(&self, x: &[f64]) -> [f64; 4] {
        let dist = |m: &[f64; 4]| (0..4).map(|k| (m[k] - x[k]).abs()).fold(0.0, f64::max);
        *self
            .minimizers
            .iter()
            .min_by(|a, b| dist(a).total_cmp(&dist(b)))
            .expect("at least one minimizer")
    }
}

pub fn solve_fixture() -> FixtureOracle {
    let mut candidates: Vec<[f64; 2]> = Vec::new();

    // Interior: fine grid, then Nelder-Mead from the best cells.
    let step = 0.002;
    let mut grid: Vec<(f64, [f64; 2])> = Vec::new();
    let cells = (3.0 / step) as i32;
    for a in 0..=cells {
        for b in 0..=cells {
            let (x2, x3) = (-1.5 + a as f64 * step, -1.5 + b as f64 * step);
            if let Some(v) = reduced(x2, x3) {
                grid.push((v, [x2, x3]));
            }
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let penalized = |p: &[f64; 2]| reduced(p[0], p[1]).unwrap_or(f64::INFINITY);
    for (_, p) in grid.iter().take(20) {
        candidates.push(nelder_mead(penalized, *p, 4.0 * step));
    }

    // x1 = 0: the circle x2^2 + x3^2 = 2.
    let r = 2.0_f64.sqrt();
    let circle_ok = |t: f64| {
        let x = [0.0, r * t.cos(), r * t.sin(), 4.0 - (r * t.cos()).powi(4) - (r * t.sin()).powi(4)];
        feasible(&x, 0.0).then(|| objective(&x))
    };
    for t in minima_1d(&circle_ok, 0.0, std::f64::consts::TAU, 20_000) {
        candidates.push([r * t.cos(), r * t.sin()]);
    }

    // x4 = 0: the curve x2^4 + x3^4 = 4.
    let quartic = |t: f64| {
        let (c, s) = (t.cos(), t.sin());
        let rad = (4.0 / (c.powi(4) + s.powi(4))).powf(0.25);
        (rad * c, rad * s)
    };
    let quartic_ok = |t: f64| {
        let (x2, x3) = quartic(t);
        let x = [2.0 - x2 * x2 - x3 * x3, x2, x3, 0.0];
        feasible(&x, 1e-12).then(|| objective(&x))
    };
    for t in minima_1d(&quartic_ok, 0.0, std::f64::consts::TAU, 20_000) {
        let (x2, x3) = quartic(t);
        candidates.push([x2, x3]);
    }

    // 4 x2 + 2 x3 = 0.
    let line_ok = |t: f64| {
        let x = full_point(t, -2.0 * t);
        feasible(&x, 1e-12).then(|| objective(&x))
    };
    for t in minima_1d(&line_ok, -2.0, 2.0, 20_000) {
        candidates.push([t, -2.0 * t]);
    }

    let mut scored: Vec<([f64; 4], f64)> = candidates
        .iter()
        .map(|p| {
            let mut x = full_point(p[0], p[1]);
            // Snap boundary round-off so that active bounds hold exactly.
            for k in [0, 3] {
                if x[k].abs() < 1e-12 {
                    x[k] = 0.0;
                }
            }
            (x, objective(&x))
        })
        .filter(|(x, _)| feasible(x, 1e-10))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    let f_star = scored[0].1;
    let mut minimizers: Vec<[f64; 4]> = Vec::new();
    for (x, v) in &scored {
        if *v <= f_star + 1e-9
            && !minimizers
                .iter()
                .any(|m| (0..4).all(|k| (m[k] - x[k]).abs() < 1e-5))
        {
            minimizers.push(*x);
        }
    }
    FixtureOracle { f_star, minimizers }
}

/// Least-squares multipliers at a fixture point: `grad f = J' Fmul + mu`,
/// using the rows and bounds active within `tol`. Returns `Fmul` (objective
/// entry 0).
pub fn fixture_multipliers(x: &[f64; 4], tol: f64) -> Vec<f64> {
    let s = x[0] + x[1] + x[2];
    let grad = [3.0 + 2.0 * s, 2.0 * s, 2.0 * s, 5.0];
    let rows: [[f64; 4]; 3] = [
        [0.0, 4.0, 2.0, 0.0],
        [1.0, 2.0 * x[1], 2.0 * x[2], 0.0],
        [0.0, 4.0 * x[1].powi(3), 4.0 * x[2].powi(3), 1.0],
    ];
    let mut cols: Vec<[f64; 4]> = Vec::new();
    let mut owner: Vec<Option<usize>> = Vec::new();
    if 4.0 * x[1] + 2.0 * x[2] <= tol {
        cols.push(rows[0]);
        owner.push(Some(1));
    }
    cols.push(rows[1]);
    owner.push(Some(2));
    cols.push(rows[2]);
    owner.push(Some(3));
    for (j, &v) in x.iter().enumerate() {
        if (j == 0 || j == 3) && v.abs() <= tol {
            let mut e = [0.0; 4];
            e[j] = 1.0;
            cols.push(e);
            owner.push(None);
        }
    }
    let a = DMatrix::from_fn(4, cols.len(), |r, c| cols[c][r]);
    let g = DVector::from_column_slice(&grad);
    let sol = a.svd(true, true).solve(&g, 1e-12).expect("least squares");
    let mut fmul = vec![0.0; 4];
    for (c, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            fmul[*i] = sol[c];
        }
    }
    fmul
}

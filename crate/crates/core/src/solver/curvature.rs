//! Second-order check at a first-order point.
//!
//! BFGS never sees negative curvature, and a symmetric start can keep every
//! iterate on a symmetric saddle. Once the KKT test passes, the Lagrangian
//! Hessian is probed on the null space of the active constraints by
//! differencing exact gradients. A clearly negative eigenvalue gives a
//! direction of descent for the merit function once the curved constraints
//! are followed, so the point is moved along it and restored to the active
//! constraints by minimum-norm Newton corrections.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{clamp_step, Exit, Point, Sqp, Stop};
use crate::functions::ProblemFunctions;
use crate::scalar::EvalFault;

/// Curvature below `-NEG_CURVATURE * max(1, |reduced Hessian|)` is a saddle.
const NEG_CURVATURE: f64 = 1e-6;
/// Gauss-Newton corrections per trial length.
const CORRECTIONS: usize = 8;
const HALVINGS: usize = 30;

/// An escape step from a saddle.
pub(super) struct Escape {
    pub point: Point,
    pub length: f64,
}

/// One active constraint: a row of `F` held at `target`, or a variable fixed
/// at a bound.
enum Active {
    Row(usize, f64),
    Var(usize),
}

impl<'a, P: ProblemFunctions + ?Sized> Sqp<'a, P> {
    fn active_set(&self, p: &Point) -> Vec<Active> {
        let spec = self.spec;
        let tol = self.opts.feas_tol;
        let mut out = Vec::new();
        for &i in &self.rows {
            let f = p.f[i];
            if spec.flow[i].is_finite() && (f - spec.flow[i]).abs() <= tol * (1.0 + spec.flow[i].abs()) {
                out.push(Active::Row(i, spec.flow[i]));
            } else if spec.fupp[i].is_finite() && (f - spec.fupp[i]).abs() <= tol * (1.0 + spec.fupp[i].abs()) {
                out.push(Active::Row(i, spec.fupp[i]));
            }
        }
        for j in 0..spec.n {
            let x = p.x[j];
            let near = |b: f64| b.is_finite() && (x - b).abs() <= tol * (1.0 + b.abs());
            if near(spec.xlow[j]) || near(spec.xupp[j]) {
                out.push(Active::Var(j));
            }
        }
        out
    }

    fn active_matrix(&self, p: &Point, active: &[Active]) -> DMatrix<f64> {
        let n = self.spec.n;
        let mut a = DMatrix::zeros(active.len(), n);
        for (k, c) in active.iter().enumerate() {
            match *c {
                Active::Row(i, _) => a.row_mut(k).copy_from(&p.jd.row(i)),
                Active::Var(j) => a[(k, j)] = 1.0,
            }
        }
        a
    }

    fn lagrangian_gradient(&self, p: &Point, lambda: &DVector<f64>) -> DVector<f64> {
        &p.grad - p.jd.tr_mul(lambda)
    }

    fn eval_or_stop(&self, x: &[f64]) -> Result<Option<Point>, Stop> {
        match self.evaluate(x) {
            Ok(p) => Ok(Some(p)),
            Err(EvalFault::Abort(code)) => {
                Err(Stop::Exit(Exit::UserAbort, EvalFault::Abort(code).to_string()))
            }
            Err(_) => Ok(None),
        }
    }

    /// Most negative curvature direction of the reduced Lagrangian Hessian, if
    /// any, with its curvature.
    fn negative_curvature(&self, p: &Point, lambda: &[f64], active: &[Active]) -> Result<Option<(DVector<f64>, f64)>, Stop> {
        let n = self.spec.n;
        let a = self.active_matrix(p, active);
        let ata = a.tr_mul(&a);
        let eig = SymmetricEigen::new(ata);
        let top = eig.eigenvalues.amax().max(1.0);
        let null: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] <= 1e-10 * top).collect();
        if null.is_empty() {
            return Ok(None);
        }
        let z = DMatrix::from_fn(n, null.len(), |r, c| eig.eigenvectors[(r, null[c])]);

        let lam = DVector::from_column_slice(lambda);
        let g0 = self.lagrangian_gradient(p, &lam);
        let xnorm = p.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let eps = 1e-5 * xnorm.max(1.0);
        let mut hz = DMatrix::zeros(n, null.len());
        for c in 0..null.len() {
            let dir = z.column(c);
            let fwd = clamp_step(self.spec, &p.x, dir.as_slice(), eps);
            let bwd = clamp_step(self.spec, &p.x, dir.as_slice(), -eps);
            let moved = |y: &[f64], s: f64| (0..n).all(|j| (y[j] - (p.x[j] + s * dir[j])).abs() <= 1e-15 * (1.0 + xnorm));
            let col = match (moved(&fwd, eps), moved(&bwd, -eps)) {
                (true, true) => {
                    let (Some(pf), Some(pb)) = (self.eval_or_stop(&fwd)?, self.eval_or_stop(&bwd)?) else {
                        return Ok(None);
                    };
                    (self.lagrangian_gradient(&pf, &lam) - self.lagrangian_gradient(&pb, &lam)) / (2.0 * eps)
                }
                (true, false) => {
                    let Some(pf) = self.eval_or_stop(&fwd)? else { return Ok(None) };
                    (self.lagrangian_gradient(&pf, &lam) - &g0) / eps
                }
                (false, true) => {
                    let Some(pb) = self.eval_or_stop(&bwd)? else { return Ok(None) };
                    (&g0 - self.lagrangian_gradient(&pb, &lam)) / eps
                }
                (false, false) => return Ok(None),
            };
            hz.set_column(c, &col);
        }
        let reduced = z.tr_mul(&hz);
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let eig = SymmetricEigen::new(reduced);
        let scale = eig.eigenvalues.amax().max(1.0);
        let (k, &mu) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("null space is nonempty");
        if mu >= -NEG_CURVATURE * scale {
            return Ok(None);
        }
        let mut d = &z * eig.eigenvectors.column(k);
        let big = d.amax();
        d /= big;
        // Deterministic sign: the first largest component is positive.
        let lead = (0..n).find(|&j| d[j].abs() >= 1.0 - 1e-12).unwrap_or(0);
        if d[lead] < 0.0 {
            d = -d;
        }
        Ok(Some((d, mu)))
    }

    /// Pull `y` back onto the active rows with minimum-norm steps that leave
    /// fixed variables alone.
    fn restore(&self, mut p: Point, active: &[Active]) -> Result<Option<Point>, Stop> {
        let n = self.spec.n;
        let fixed: Vec<usize> = active
            .iter()
            .filter_map(|c| if let Active::Var(j) = *c { Some(j) } else { None })
            .collect();
        let rows: Vec<(usize, f64)> = active
            .iter()
            .filter_map(|c| if let Active::Row(i, t) = *c { Some((i, t)) } else { None })
            .collect();
        if rows.is_empty() {
            return Ok(Some(p));
        }
        for _ in 0..CORRECTIONS {
            let r = DVector::from_iterator(rows.len(), rows.iter().map(|&(i, t)| t - p.f[i]));
            if r.amax() <= 0.1 * self.opts.feas_tol {
                return Ok(Some(p));
            }
            let mut a = DMatrix::zeros(rows.len(), n);
            for (k, &(i, _)) in rows.iter().enumerate() {
                a.row_mut(k).copy_from(&p.jd.row(i));
            }
            for &j in &fixed {
                a.column_mut(j).fill(0.0);
            }
            let Ok(pinv) = a.pseudo_inverse(1e-12) else {
                return Ok(None);
            };
            let w = pinv * r;
            let y = clamp_step(self.spec, &p.x, w.as_slice(), 1.0);
            match self.eval_or_stop(&y)? {
                Some(q) => p = q,
                None => return Ok(None),
            }
        }
        let r = rows.iter().fold(0.0_f64, |m, &(i, t)| m.max((t - p.f[i]).abs()));
        Ok((r <= self.opts.feas_tol).then_some(p))
    }

    /// Leave a saddle point. `None` when the reduced Hessian shows no clearly
    /// negative curvature or no trial length lowers the merit function.
    pub(super) fn escape_saddle(&self, cur: &Point, lambda: &[f64], rho: f64) -> Result<Option<Escape>, Stop> {
        if self.spec.is_feasibility() {
            return Ok(None);
        }
        let active = self.active_set(cur);
        let Some((d, mu)) = self.negative_curvature(cur, lambda, &active)? else {
            return Ok(None);
        };
        let phi0 = self.merit(&cur.f, rho);
        let xnorm = cur.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut alpha = xnorm.max(1.0);
        for _ in 0..HALVINGS {
            let y = clamp_step(self.spec, &cur.x, d.as_slice(), alpha);
            if let Some(p) = self.eval_or_stop(&y)? {
                if let Some(q) = self.restore(p, &active)? {
                    let linear_ok = self.linear.is_empty()
                        || self.linear.violation(self.spec, &q.x) <= 0.1 * self.opts.feas_tol;
                    if linear_ok && self.merit(&q.f, rho) < phi0 + 0.5 * super::ARMIJO * alpha * alpha * mu {
                        return Ok(Some(Escape { point: q, length: alpha }));
                    }
                }
            }
            alpha *= 0.5;
        }
        Ok(None)
    }
}

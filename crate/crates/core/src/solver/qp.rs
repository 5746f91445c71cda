//! Dense strictly convex quadratic programs.
//!
//! ```text
//! minimize    1/2 x'Gx + g'x
//! subject to  a_e'x  = b_e   (equalities)
//!             a_i'x >= b_i   (inequalities)
//! ```
//!
//! Solved by the dual active-set method of Goldfarb and Idnani: start from the
//! unconstrained minimizer and add violated constraints one at a time while
//! keeping the active set dual feasible. `G` must be positive definite.
//!
//! The factorization kept is `J = L^{-T} Q` with `N* = Q [R; 0]`, where `N*`
//! holds `L^{-1}` times the active normals. Additions update `J` and `R` by
//! Givens rotations; removals refactor from the remaining active set.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearConstraint {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        LinearConstraint { a, b }
    }

    fn residual(&self, x: &DVector<f64>) -> f64 {
        dot(&self.a, x.as_slice()) - self.b
    }

    fn tolerance(&self, x: &DVector<f64>) -> f64 {
        let amax = self.a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        1e-11 * (1.0 + self.b.abs() + amax * x.amax())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub equalities: Vec<LinearConstraint>,
    pub inequalities: Vec<LinearConstraint>,
}

/// Optimal point with multipliers satisfying
/// `Gx + g = sum eq_mult[e] a_e + sum ineq_mult[i] a_i`, `ineq_mult >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QpError {
    #[error("QP Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("QP constraints are infeasible")]
    Infeasible,
    #[error("QP equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("QP active-set iteration limit reached")]
    IterationLimit,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const DEPENDENCE_RTOL: f64 = 1e-12;

struct Factor {
    /// `L^{-T}` from the Cholesky factor of `G`.
    base: DMatrix<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    iq: usize,
}

impl Factor {
    fn new(base: DMatrix<f64>) -> Self {
        let n = base.nrows();
        Factor {
            j: base.clone(),
            base,
            r: DMatrix::zeros(n, n),
            iq: 0,
        }
    }

    fn reset(&mut self) {
        self.j.copy_from(&self.base);
        self.r.fill(0.0);
        self.iq = 0;
    }

    /// `d = J' a`.
    fn transform(&self, a: &[f64]) -> DVector<f64> {
        self.j.tr_mul(&DVector::from_column_slice(a))
    }

    /// Primal direction `z = J2 d2` and dual direction `r = R^{-1} d1`.
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, Vec<f64>, f64) {
        let n = d.len();
        let iq = self.iq;
        let mut z = DVector::zeros(n);
        for k in iq..n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        let mut r = vec![0.0; iq];
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in i + 1..iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        let d2 = d.rows(iq, n - iq).norm();
        (z, r, d2)
    }

    /// Append the constraint whose transformed normal is `d`. Returns false
    /// when it is dependent on the active ones.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        let n = d.len();
        let iq = self.iq;
        if iq >= n {
            return false;
        }
        let dnorm = d.norm();
        for jj in (iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            cc /= h;
            ss /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = t1 * cc + t2 * ss;
                self.j[(k, jj)] = xny * (t1 + self.j[(k, jj - 1)]) - t2;
            }
        }
        if d[iq].abs() <= DEPENDENCE_RTOL * dnorm.max(f64::MIN_POSITIVE) {
            return false;
        }
        for k in 0..=iq {
            self.r[(k, iq)] = d[k];
        }
        self.iq += 1;
        true
    }
}

/// Solve a strictly convex QP.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution, QpError> {
    let n = qp.gradient.len();
    let meq = qp.equalities.len();
    let mi = qp.inequalities.len();
    let constraint = |k: usize| -> &LinearConstraint {
        if k < meq {
            &qp.equalities[k]
        } else {
            &qp.inequalities[k - meq]
        }
    };

    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite)?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut fac = Factor::new(linv.transpose());
    let mut x = -chol.solve(&qp.gradient);

    // `active[k]` is a constraint id (equalities first); `u[k]` its multiplier.
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n);

    for e in 0..meq {
        let c = &qp.equalities[e];
        let d = fac.transform(&c.a);
        let (z, r, d2) = fac.directions(&d);
        if d2 <= DEPENDENCE_RTOL * d.norm().max(f64::MIN_POSITIVE) {
            if c.residual(&x).abs() <= c.tolerance(&x) {
                // Consistent but redundant: the row adds no information.
                continue;
            }
            return Err(QpError::DependentEqualities);
        }
        let t = -c.residual(&x) / z.dot(&DVector::from_column_slice(&c.a));
        x.axpy(t, &z, 1.0);
        for (uk, rk) in u.iter_mut().zip(&r) {
            *uk -= t * rk;
        }
        u.push(t);
        active.push(e);
        let added = fac.add(d);
        debug_assert!(added);
    }
    let n_eq_active = active.len();

    let refactor = |fac: &mut Factor, active: &[usize]| {
        fac.reset();
        for &k in active {
            let d = fac.transform(&constraint(k).a);
            fac.add(d);
        }
    };

    let mut excluded = vec![false; mi];
    let limit = 20 * (n + meq + mi) + 100;
    let mut iterations = 0;
    'outer: loop {
        // Most violated inequality, relative to its normal's size.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..mi {
            let k = meq + i;
            if excluded[i] || active.contains(&k) {
                continue;
            }
            let c = &qp.inequalities[i];
            let s = c.residual(&x);
            if s < -c.tolerance(&x) {
                let scaled = s / (1.0 + c.a.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
                if worst.is_none_or(|(_, w)| scaled < w) {
                    worst = Some((i, scaled));
                }
            }
        }
        let Some((ip, _)) = worst else { break };
        let p = meq + ip;
        let cp = &qp.inequalities[ip];
        let np = DVector::from_column_slice(&cp.a);
        let (x_old, u_old, active_old) = (x.clone(), u.clone(), active.clone());
        let mut u_plus = 0.0;
        let mut s_p = cp.residual(&x);

        loop {
            iterations += 1;
            if iterations > limit {
                return Err(QpError::IterationLimit);
            }
            let d = fac.transform(&cp.a);
            let (z, r, d2) = fac.directions(&d);

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in n_eq_active..active.len() {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if d2 > DEPENDENCE_RTOL * d.norm().max(f64::MIN_POSITIVE) && zn > 0.0 {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_plus += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }

            if t2 <= t1 {
                active.push(p);
                u.push(u_plus);
                if !fac.add(d) {
                    // Numerically dependent despite a finite step: back out and
                    // never consider this constraint again.
                    x = x_old;
                    u = u_old;
                    active = active_old;
                    refactor(&mut fac, &active);
                    excluded[ip] = true;
                }
                continue 'outer;
            }
            let k = drop_at.expect("finite partial step has a blocking constraint");
            active.remove(k);
            u.remove(k);
            refactor(&mut fac, &active);
            s_p = cp.residual(&x);
        }
    }

    for c in qp.inequalities.iter() {
        if c.residual(&x) < -1e3 * c.tolerance(&x) {
            return Err(QpError::Infeasible);
        }
    }
    for c in qp.equalities.iter() {
        if c.residual(&x).abs() > 1e3 * c.tolerance(&x) {
            return Err(QpError::Infeasible);
        }
    }

    let mut eq_multipliers = vec![0.0; meq];
    let mut ineq_multipliers = vec![0.0; mi];
    for (&k, &uk) in active.iter().zip(&u) {
        if k < meq {
            eq_multipliers[k] = uk;
        } else {
            ineq_multipliers[k - meq] = uk.max(0.0);
        }
    }
    let objective = 0.5 * x.dot(&(&qp.hessian * &x)) + qp.gradient.dot(&x);
    Ok(QpSolution {
        x,
        objective,
        eq_multipliers,
        ineq_multipliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qp(g: &[&[f64]], c: &[f64], eq: &[(&[f64], f64)], ineq: &[(&[f64], f64)]) -> QuadraticProgram {
        let n = c.len();
        QuadraticProgram {
            hessian: DMatrix::from_fn(n, n, |i, j| g[i][j]),
            gradient: DVector::from_column_slice(c),
            equalities: eq.iter().map(|(a, b)| LinearConstraint::new(a.to_vec(), *b)).collect(),
            inequalities: ineq.iter().map(|(a, b)| LinearConstraint::new(a.to_vec(), *b)).collect(),
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn unconstrained() {
        let s = solve_qp(&qp(&[&[2.0, 0.0], &[0.0, 4.0]], &[-2.0, -4.0], &[], &[])).unwrap();
        assert!(close(s.x.as_slice(), &[1.0, 1.0], 1e-14));
    }

    #[test]
    fn quadprog_reference_problem() {
        // min -d'x + 1/2 x'x with A'x >= b, the classic quadprog example.
        let s = solve_qp(&qp(
            &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
            &[0.0, -5.0, 0.0],
            &[],
            &[(&[-4.0, -3.0, 0.0], -8.0), (&[2.0, 1.0, 0.0], 2.0), (&[0.0, -2.0, 1.0], 0.0)],
        ))
        .unwrap();
        assert!(close(s.x.as_slice(), &[0.4761905, 1.0476190, 2.0952381], 1e-6));
        assert!((s.objective + 2.380952).abs() < 1e-6);
        assert!(close(&s.ineq_multipliers, &[0.0, 0.2380952, 2.0952381], 1e-6));
    }

    #[test]
    fn equality_and_bound() {
        // min x^2 + y^2 s.t. x + y = 1, x >= 0.75
        let s = solve_qp(&qp(
            &[&[2.0, 0.0], &[0.0, 2.0]],
            &[0.0, 0.0],
            &[(&[1.0, 1.0], 1.0)],
            &[(&[1.0, 0.0], 0.75)],
        ))
        .unwrap();
        assert!(close(s.x.as_slice(), &[0.75, 0.25], 1e-12));
        // Stationarity: 2x = l + m, 2y = l.
        assert!((s.eq_multipliers[0] - 0.5).abs() < 1e-12);
        assert!((s.ineq_multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_box() {
        let r = solve_qp(&qp(
            &[&[1.0]],
            &[0.0],
            &[],
            &[(&[1.0], 1.0), (&[-1.0], 1.0)],
        ));
        assert_eq!(r, Err(QpError::Infeasible));
    }

    #[test]
    fn redundant_constraints() {
        let s = solve_qp(&qp(
            &[&[1.0, 0.0], &[0.0, 1.0]],
            &[1.0, 1.0],
            &[(&[1.0, 1.0], 2.0), (&[2.0, 2.0], 4.0)],
            &[(&[1.0, 1.0], 2.0), (&[1.0, 0.0], 0.0)],
        ))
        .unwrap();
        assert!(close(s.x.as_slice(), &[1.0, 1.0], 1e-12));
    }

    #[test]
    fn degenerate_vertex() {
        // Three constraints through the optimum in two dimensions.
        let s = solve_qp(&qp(
            &[&[1.0, 0.0], &[0.0, 1.0]],
            &[-3.0, -3.0],
            &[],
            &[(&[-1.0, 0.0], -1.0), (&[0.0, -1.0], -1.0), (&[-1.0, -1.0], -2.0)],
        ))
        .unwrap();
        assert!(close(s.x.as_slice(), &[1.0, 1.0], 1e-12));
        let g = [s.x[0] - 3.0, s.x[1] - 3.0];
        let m = &s.ineq_multipliers;
        assert!((g[0] + m[0] + m[2]).abs() < 1e-12);
        assert!((g[1] + m[1] + m[2]).abs() < 1e-12);
    }
}

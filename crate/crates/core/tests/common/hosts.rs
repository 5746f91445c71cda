//! Host-side evaluators: a recording wrapper with scripted faults, and the
//! piecewise trap fixture whose local structure differs from what probes see.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nlpad::functions::{ProblemFunctions, Status};
use nlpad::scalar::{EvalFault, Scalar};

type Rule = Box<dyn Fn(usize, &[f64]) -> Option<EvalFault> + Send + Sync>;

/// Wraps a function set, recording every call's status code and point.
/// `rule(call, x)` may inject a fault; `call` counts from 1.
pub struct Recording<P> {
    pub inner: P,
    calls: AtomicUsize,
    pub statuses: Mutex<Vec<i32>>,
    pub points: Mutex<Vec<Vec<f64>>>,
    rule: Option<Rule>,
}

impl<P: ProblemFunctions> Recording<P> {
    pub fn new(inner: P) -> Self {
        Recording {
            inner,
            calls: AtomicUsize::new(0),
            statuses: Mutex::new(Vec::new()),
            points: Mutex::new(Vec::new()),
            rule: None,
        }
    }

    pub fn with_rule(inner: P, rule: impl Fn(usize, &[f64]) -> Option<EvalFault> + Send + Sync + 'static) -> Self {
        Recording {
            rule: Some(Box::new(rule)),
            ..Recording::new(inner)
        }
    }

    pub fn statuses(&self) -> Vec<i32> {
        self.statuses.lock().unwrap().clone()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.points.lock().unwrap().clone()
    }

    pub fn count(&self, code: i32) -> usize {
        self.statuses().iter().filter(|&&c| c == code).count()
    }
}

impl<P: ProblemFunctions> ProblemFunctions for Recording<P> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }

    fn num_funcs(&self) -> usize {
        self.inner.num_funcs()
    }

    fn eval<S: Scalar>(&self, status: Status, x: &[S]) -> Result<Vec<S>, EvalFault> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let plain: Vec<f64> = x.iter().map(Scalar::value).collect();
        self.statuses.lock().unwrap().push(status.code());
        self.points.lock().unwrap().push(plain.clone());
        if status != Status::Final {
            if let Some(fault) = self.rule.as_ref().and_then(|r| r(call, &plain)) {
                return Err(fault);
            }
        }
        self.inner.eval(status, x)
    }
}

/// Half-width of the trap's inner region.
pub const TRAP_RADIUS: f64 = 0.02;

/// `g(t) = t + t (r^2 - t^2)^2 / r^4` for `|t| < r`, else `t`. It is `C^1`
/// with slope 2 at the origin and slope 1 outside the inner region.
pub fn trap_g<S: Scalar>(t: S) -> S {
    let r2 = TRAP_RADIUS * TRAP_RADIUS;
    if t.value().abs() < TRAP_RADIUS {
        let w = S::from_f64(r2) - t.clone() * t.clone();
        t.clone() + t * w.clone() * w.scale(1.0 / (r2 * r2))
    } else {
        t
    }
}

/// `F1 = x1^2 + x2^2`, `F2 = g(x1) + x2`. Probes from the origin land
/// outside the inner region and see `dF2/dx1 = 1` as a constant.
pub struct Trap;

impl ProblemFunctions for Trap {
    fn num_vars(&self) -> usize {
        2
    }

    fn num_funcs(&self) -> usize {
        2
    }

    fn eval<S: Scalar>(&self, _status: Status, x: &[S]) -> Result<Vec<S>, EvalFault> {
        let (a, b) = (x[0].clone(), x[1].clone());
        Ok(vec![a.clone() * a.clone() + b.clone() * b.clone(), trap_g(a) + b])
    }
}

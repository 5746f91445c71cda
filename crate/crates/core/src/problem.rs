//! Problem statement: dimensions, bounds, objective row, defaults.
//!
//! A problem has the form
//!
//! ```text
//! minimize (or maximize)  F_obj(x)
//! subject to              xlow <= x <= xupp,   Flow <= F(x) <= Fupp
//! ```
//!
//! where `F_obj` is row `obj_row` of `F` (1-based; 0 means "find a feasible
//! point"). Bounds whose magnitude reaches `Options::inf_bound` are absent.

use std::fmt;

/// Solver and pipeline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    /// Bounds with magnitude at or above this are treated as infinite.
    pub inf_bound: f64,
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub major_iter_limit: usize,
    /// Relative central-difference step used by the derivative check.
    pub fd_step: f64,
    /// Relative perturbation size for structure probing.
    pub probe_scale: f64,
    pub rng_seed: u64,
    /// Relative tolerance of the derivative check.
    pub check_tol: f64,
    /// How many times a rejected point is halved back toward the last iterate.
    pub retry_budget: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            inf_bound: 1.0e20,
            feas_tol: 1.0e-6,
            opt_tol: 1.0e-6,
            major_iter_limit: 200,
            fd_step: 1.0e-6,
            probe_scale: 0.5,
            rng_seed: 0x5eed_1234,
            check_tol: 1.0e-5,
            retry_budget: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Multiplier that turns the objective into a quantity to minimize.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    Free,
    LowerOnly,
    UpperOnly,
    Range,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("problem needs at least one variable and one function (got n={n}, neF={ne_f})")]
    Dimension { n: usize, ne_f: usize },
    #[error("inconsistent bounds: lower {lo} exceeds upper {hi}")]
    InconsistentBound { lo: f64, hi: f64 },
    #[error("invalid problem:\n{}", render_issues(.0))]
    Invalid(Vec<ValidationIssue>),
}

fn render_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One failed check from [`validate_spec`]. `index` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub field: &'static str,
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}({}): {}", self.field, i + 1, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    pub ne_f: usize,
    /// 1-based objective row; 0 for a feasibility problem.
    pub obj_row: usize,
    /// Added to the reported objective only.
    pub obj_add: f64,
    pub sense: Sense,
    pub x0: Vec<f64>,
    pub xlow: Vec<f64>,
    pub xupp: Vec<f64>,
    pub flow: Vec<f64>,
    pub fupp: Vec<f64>,
    pub xstate: Vec<i32>,
    /// Initial multiplier estimates for the rows of `F`.
    pub fmul0: Vec<f64>,
    pub var_names: Option<Vec<String>>,
    pub fun_names: Option<Vec<String>>,
}

/// Number of name characters kept in reports.
pub const NAME_LEN: usize = 8;

/// A problem with every field at its documented default.
pub fn default_spec(n: usize, ne_f: usize, program_name: &str) -> Result<ProblemSpec, SpecError> {
    if n == 0 || ne_f == 0 {
        return Err(SpecError::Dimension { n, ne_f });
    }
    Ok(ProblemSpec {
        name: program_name.chars().take(NAME_LEN).collect(),
        n,
        ne_f,
        obj_row: 1,
        obj_add: 0.0,
        sense: Sense::Minimize,
        x0: vec![0.0; n],
        xlow: vec![f64::NEG_INFINITY; n],
        xupp: vec![f64::INFINITY; n],
        flow: vec![f64::NEG_INFINITY; ne_f],
        fupp: vec![f64::INFINITY; ne_f],
        xstate: vec![0; n],
        fmul0: vec![0.0; ne_f],
        var_names: None,
        fun_names: None,
    })
}

fn canonical_lower(v: f64, inf_bound: f64) -> f64 {
    if v <= -inf_bound {
        f64::NEG_INFINITY
    } else if v >= inf_bound {
        f64::INFINITY
    } else {
        v
    }
}

fn canonical_upper(v: f64, inf_bound: f64) -> f64 {
    if v >= inf_bound {
        f64::INFINITY
    } else if v <= -inf_bound {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Classify a bound pair after treating magnitudes `>= inf_bound` as absent.
pub fn classify_bound(lo: f64, hi: f64, inf_bound: f64) -> Result<BoundKind, SpecError> {
    let lo_inf = lo <= -inf_bound;
    let hi_inf = hi >= inf_bound;
    if lo.is_nan() || hi.is_nan() || lo >= inf_bound || hi <= -inf_bound {
        return Err(SpecError::InconsistentBound { lo, hi });
    }
    Ok(match (lo_inf, hi_inf) {
        (true, true) => BoundKind::Free,
        (false, true) => BoundKind::LowerOnly,
        (true, false) => BoundKind::UpperOnly,
        (false, false) if lo > hi => return Err(SpecError::InconsistentBound { lo, hi }),
        (false, false) if lo == hi => BoundKind::Fixed,
        (false, false) => BoundKind::Range,
    })
}

/// The quantity the solver minimizes: `sign * F[obj_row]`, or 0 for a
/// feasibility problem. `obj_add` is not included.
pub fn effective_objective(f: &[f64], spec: &ProblemSpec) -> f64 {
    match spec.objective_index() {
        Some(i) => spec.sense.sign() * f[i],
        None => 0.0,
    }
}

/// Check every structural invariant of `spec` and `opts`.
pub fn validate_spec(spec: &ProblemSpec, opts: &Options) -> Vec<ValidationIssue> {
    let mut out = Vec::new();
    macro_rules! push {
        ($field:expr, $index:expr, $message:expr $(,)?) => {
            out.push(ValidationIssue { field: $field, index: $index, message: $message })
        };
    }

    if !(opts.inf_bound > 0.0) {
        push!("Infinite bound", None, "must be positive".into());
    }
    for (name, v) in [
        ("Feasibility tolerance", opts.feas_tol),
        ("Optimality tolerance", opts.opt_tol),
        ("Difference interval", opts.fd_step),
        ("Probe scale", opts.probe_scale),
        ("Check tolerance", opts.check_tol),
    ] {
        if !(v > 0.0) {
            push!(name, None, format!("must be positive (got {v})"));
        }
    }

    if spec.n == 0 || spec.ne_f == 0 {
        push!("n", None, format!("need n >= 1 and neF >= 1 (got {} and {})", spec.n, spec.ne_f));
        return out;
    }
    for (field, len, want) in [
        ("x", spec.x0.len(), spec.n),
        ("xlow", spec.xlow.len(), spec.n),
        ("xupp", spec.xupp.len(), spec.n),
        ("xstate", spec.xstate.len(), spec.n),
        ("Flow", spec.flow.len(), spec.ne_f),
        ("Fupp", spec.fupp.len(), spec.ne_f),
        ("Fmul", spec.fmul0.len(), spec.ne_f),
    ] {
        if len != want {
            push!(field, None, format!("has length {len}, expected {want}"));
        }
    }
    if let Some(names) = &spec.var_names {
        if names.len() != spec.n {
            push!("Names", None, format!("has length {}, expected {}", names.len(), spec.n));
        }
    }
    if let Some(names) = &spec.fun_names {
        if names.len() != spec.ne_f {
            push!("FNames", None, format!("has length {}, expected {}", names.len(), spec.ne_f));
        }
    }
    if !out.is_empty() {
        return out;
    }

    if spec.obj_row > spec.ne_f {
        push!(
            "ObjRow",
            None,
            format!("{} is outside 0..={}", spec.obj_row, spec.ne_f),
        );
    }
    if !spec.obj_add.is_finite() {
        push!("ObjAdd", None, "must be finite".into());
    }
    for j in 0..spec.n {
        if !spec.x0[j].is_finite() {
            push!("x", Some(j), "start value must be finite".into());
        }
        if classify_bound(spec.xlow[j], spec.xupp[j], opts.inf_bound).is_err() {
            push!(
                "xlow",
                Some(j),
                format!("inconsistent bounds {} > {}", spec.xlow[j], spec.xupp[j]),
            );
        }
        if !matches!(spec.xstate[j], 0 | 4 | 5) {
            push!(
                "xstate",
                Some(j),
                format!("{} is not one of 0, 4, 5", spec.xstate[j]),
            );
        }
    }
    for i in 0..spec.ne_f {
        if spec.objective_index() == Some(i) {
            continue;
        }
        if classify_bound(spec.flow[i], spec.fupp[i], opts.inf_bound).is_err() {
            push!(
                "Flow",
                Some(i),
                format!("inconsistent bounds {} > {}", spec.flow[i], spec.fupp[i]),
            );
        }
        if !spec.fmul0[i].is_finite() {
            push!("Fmul", Some(i), "must be finite".into());
        }
    }
    out
}

impl ProblemSpec {
    /// 0-based objective row, if any.
    pub fn objective_index(&self) -> Option<usize> {
        self.obj_row.checked_sub(1)
    }

    pub fn is_feasibility(&self) -> bool {
        self.obj_row == 0
    }

    /// Name as shown in reports.
    pub fn report_name(&self) -> String {
        self.name.chars().take(NAME_LEN).collect()
    }

    /// Validate, replace out-of-range bounds by `±inf` and free the
    /// objective row.
    pub fn finalize(mut self, opts: &Options) -> Result<ProblemSpec, SpecError> {
        let issues = validate_spec(&self, opts);
        if !issues.is_empty() {
            return Err(SpecError::Invalid(issues));
        }
        let inf = opts.inf_bound;
        for v in &mut self.xlow {
            *v = canonical_lower(*v, inf);
        }
        for v in &mut self.xupp {
            *v = canonical_upper(*v, inf);
        }
        for v in &mut self.flow {
            *v = canonical_lower(*v, inf);
        }
        for v in &mut self.fupp {
            *v = canonical_upper(*v, inf);
        }
        match self.objective_index() {
            Some(i) => {
                self.flow[i] = f64::NEG_INFINITY;
                self.fupp[i] = f64::INFINITY;
                self.fmul0[i] = 0.0;
            }
            // Without an objective the sense means nothing.
            None => self.sense = Sense::Minimize,
        }
        Ok(self)
    }

    /// Objective as reported to the user: un-flipped and including `obj_add`.
    pub fn reported_objective(&self, f: &[f64]) -> Option<f64> {
        self.objective_index().map(|i| f[i] + self.obj_add)
    }

    /// The point the solve starts from: `x0`, with `xstate` 4/5 hints moved to
    /// the corresponding finite bound, clipped into `[xlow, xupp]`.
    pub fn start_point(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let (lo, hi) = (self.xlow[j], self.xupp[j]);
                let v = match self.xstate[j] {
                    4 if lo.is_finite() => lo,
                    5 if hi.is_finite() => hi,
                    _ => self.x0[j],
                };
                v.max(lo).min(hi)
            })
            .collect()
    }

    pub fn var_name(&self, j: usize) -> String {
        self.var_names
            .as_ref()
            .and_then(|v| v.get(j).cloned())
            .unwrap_or_else(|| format!("x{}", j + 1))
    }

    pub fn fun_name(&self, i: usize) -> String {
        self.fun_names
            .as_ref()
            .and_then(|v| v.get(i).cloned())
            .unwrap_or_else(|| format!("F{}", i + 1))
    }
}

//! Sparsity and linearity detection by random probing.
//!
//! The Jacobian is evaluated at two random perturbations of the start point.
//! An entry that is zero at both points is taken to be identically zero; one
//! that agrees at both points is taken to be constant; anything else is
//! nonlinear. The derivative check later re-tests these claims at the start
//! point itself.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{full_jacobian, DenseMatrix};
use crate::functions::ProblemFunctions;
use crate::par;
use crate::problem::Options;
use crate::scalar::EvalFault;

/// Relative classification tolerance; scaled by the largest probe entry.
pub const CLASSIFY_RTOL: f64 = 1.0e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryClass {
    Zero,
    Constant(f64),
    Nonlinear,
}

impl EntryClass {
    pub fn is_zero(&self) -> bool {
        matches!(self, EntryClass::Zero)
    }

    /// Order used by reclassification: entries only ever move up.
    pub fn rank(&self) -> u8 {
        match self {
            EntryClass::Zero => 0,
            EntryClass::Constant(_) => 1,
            EntryClass::Nonlinear => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EntryClass::Zero => "ZERO",
            EntryClass::Constant(_) => "CONSTANT",
            EntryClass::Nonlinear => "NONLINEAR",
        }
    }
}

/// Per-entry classification of the Jacobian plus derived index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct StructurePattern {
    ne_f: usize,
    n: usize,
    classes: Vec<EntryClass>,
    linear_rows: Vec<usize>,
    nonlinear_vars: Vec<usize>,
    nnz: usize,
    /// Classification tolerance in absolute terms.
    pub tolerance: f64,
    pub probe_points: [Vec<f64>; 2],
    /// Jacobians observed at the probe points.
    pub probe_jacobians: [DenseMatrix; 2],
}

impl StructurePattern {
    /// Build from explicit classes (row-major). Probe data is left empty.
    pub fn from_classes(ne_f: usize, n: usize, classes: Vec<EntryClass>, tolerance: f64) -> Self {
        assert_eq!(classes.len(), ne_f * n, "class grid has the wrong size");
        let mut p = StructurePattern {
            ne_f,
            n,
            classes,
            linear_rows: Vec::new(),
            nonlinear_vars: Vec::new(),
            nnz: 0,
            tolerance,
            probe_points: [Vec::new(), Vec::new()],
            probe_jacobians: [DenseMatrix::zeros(0, 0), DenseMatrix::zeros(0, 0)],
        };
        p.refresh();
        p
    }

    fn refresh(&mut self) {
        let mut nonlinear_vars = BTreeSet::new();
        let mut linear_rows = Vec::new();
        let mut nnz = 0;
        for i in 0..self.ne_f {
            let mut linear = true;
            for j in 0..self.n {
                match self.classes[i * self.n + j] {
                    EntryClass::Zero => {}
                    EntryClass::Constant(_) => nnz += 1,
                    EntryClass::Nonlinear => {
                        nnz += 1;
                        linear = false;
                        nonlinear_vars.insert(j);
                    }
                }
            }
            if linear {
                linear_rows.push(i);
            }
        }
        self.linear_rows = linear_rows;
        self.nonlinear_vars = nonlinear_vars.into_iter().collect();
        self.nnz = nnz;
    }

    pub fn num_funcs(&self) -> usize {
        self.ne_f
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn class(&self, i: usize, j: usize) -> EntryClass {
        self.classes[i * self.n + j]
    }

    /// Overwrite one entry and recompute the derived sets.
    pub fn set_class(&mut self, i: usize, j: usize, class: EntryClass) {
        self.classes[i * self.n + j] = class;
        self.refresh();
    }

    /// Rows without a nonlinear entry (ascending).
    pub fn linear_rows(&self) -> &[usize] {
        &self.linear_rows
    }

    /// Columns with at least one nonlinear entry (ascending).
    pub fn nonlinear_vars(&self) -> &[usize] {
        &self.nonlinear_vars
    }

    /// Number of entries that are not identically zero.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn count_constant(&self) -> usize {
        self.classes.iter().filter(|c| matches!(c, EntryClass::Constant(_))).count()
    }

    pub fn count_nonlinear(&self) -> usize {
        self.classes.iter().filter(|c| matches!(c, EntryClass::Nonlinear)).count()
    }

    pub fn count_zero(&self) -> usize {
        self.classes.iter().filter(|c| c.is_zero()).count()
    }

    /// Structural nonzeros in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, EntryClass)> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(move |(k, c)| (k / self.n, k % self.n, *c))
    }

    /// One line per structural nonzero: `i j CLASS [value]`, 1-based, row-major.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, j, c) in self.entries() {
            match c {
                EntryClass::Constant(v) => writeln!(out, "{} {} CONSTANT {v:?}", i + 1, j + 1),
                _ => writeln!(out, "{} {} {}", i + 1, j + 1, c.label()),
            }
            .expect("writing to a String");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("evaluation failed at probe point {point:?}: {fault}; try a smaller Probe scale")]
    Eval { point: Vec<f64>, fault: EvalFault },
}

/// Offsets for the probe pair `pair` (0 for the first draw, 1 for the resample).
fn probe_offsets(x0: &[f64], pair: u64, opts: &Options) -> [Vec<f64>; 2] {
    let seed = opts.rng_seed ^ pair.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::with_capacity(x0.len());
    let mut second = Vec::with_capacity(x0.len());
    for &v in x0 {
        let w = opts.probe_scale * v.abs().max(1.0);
        let a = loop {
            let d: f64 = rng.random_range(-w..=w);
            if d.abs() >= 0.05 * w {
                break d;
            }
        };
        let b = loop {
            let d: f64 = rng.random_range(-w..=w);
            if d.abs() >= 0.05 * w && (d - a).abs() >= 0.1 * w {
                break d;
            }
        };
        first.push(a);
        second.push(b);
    }
    [first, second]
}

/// Probe point `k` (1-based). Draws 1 and 2 form the first pair; 3 and 4 the
/// resample pair. Deterministic in `opts.rng_seed`.
pub fn perturb(x0: &[f64], k: usize, opts: &Options) -> Vec<f64> {
    assert!(k >= 1, "probe draws are numbered from 1");
    let pair = ((k - 1) / 2) as u64;
    let offsets = probe_offsets(x0, pair, opts);
    let d = &offsets[(k - 1) % 2];
    x0.iter().zip(d).map(|(x, d)| x + d).collect()
}

/// Reflect a probe coordinate back through the start point when it leaves the
/// box, clamping as a last resort.
fn fold_into(point: &mut [f64], x0: &[f64], lo: &[f64], hi: &[f64]) {
    for j in 0..point.len() {
        if point[j] < lo[j] || point[j] > hi[j] {
            point[j] = 2.0 * x0[j] - point[j];
        }
        point[j] = point[j].max(lo[j]).min(hi[j]);
    }
}

/// Classify every Jacobian entry from two random probes around `x0`.
pub fn probe_structure<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x0: &[f64],
    opts: &Options,
) -> Result<StructurePattern, ProbeError> {
    probe_structure_within(funcs, x0, None, opts)
}

/// As [`probe_structure`], but keeps probe points inside `bounds = (lo, hi)`.
pub fn probe_structure_within<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x0: &[f64],
    bounds: Option<(&[f64], &[f64])>,
    opts: &Options,
) -> Result<StructurePattern, ProbeError> {
    let mut last_err = None;
    for pair in 0..2u64 {
        let points = [1, 2].map(|w| {
            let mut p = perturb(x0, (2 * pair as usize) + w, opts);
            if let Some((lo, hi)) = bounds {
                fold_into(&mut p, x0, lo, hi);
            }
            p
        });
        let (a, b) = par::join(|| full_jacobian(funcs, &points[0]), || full_jacobian(funcs, &points[1]));
        match (a, b) {
            (Ok(ja), Ok(jb)) => return Ok(classify(points, [ja.product, jb.product])),
            (a, b) => {
                let (point, fault) = match (a, b) {
                    (Err(e), _) => (points[0].clone(), e),
                    (_, Err(e)) => (points[1].clone(), e),
                    _ => unreachable!(),
                };
                let stop = !fault.is_retryable();
                last_err = Some(ProbeError::Eval { point, fault });
                if stop {
                    break;
                }
            }
        }
    }
    Err(last_err.expect("loop records an error before falling through"))
}

fn classify(points: [Vec<f64>; 2], jac: [DenseMatrix; 2]) -> StructurePattern {
    let (m, n) = (jac[0].rows, jac[0].cols);
    let scale = jac[0].max_abs().max(jac[1].max_abs()).max(1.0);
    let tau = CLASSIFY_RTOL * scale;
    let classes = (0..m * n)
        .map(|k| {
            let (a, b) = (jac[0].data[k], jac[1].data[k]);
            if a.abs() <= tau && b.abs() <= tau {
                EntryClass::Zero
            } else if (a - b).abs() <= tau * a.abs().max(1.0) {
                EntryClass::Constant(a)
            } else {
                EntryClass::Nonlinear
            }
        })
        .collect();
    let mut p = StructurePattern::from_classes(m, n, classes, tau);
    p.probe_points = points;
    p.probe_jacobians = jac;
    p
}

/// Row and column index sets implied by a pattern. Every entry outside
/// `nonlinear_rows x nonlinear_vars` is constant or zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub nonlinear_rows: Vec<usize>,
    pub linear_rows: Vec<usize>,
    pub nonlinear_vars: Vec<usize>,
    pub linear_vars: Vec<usize>,
}

pub fn block_partition(p: &StructurePattern) -> BlockPartition {
    let linear_rows = p.linear_rows().to_vec();
    let nonlinear_vars = p.nonlinear_vars().to_vec();
    BlockPartition {
        nonlinear_rows: (0..p.num_funcs()).filter(|i| !linear_rows.contains(i)).collect(),
        linear_vars: (0..p.num_vars()).filter(|j| !nonlinear_vars.contains(j)).collect(),
        linear_rows,
        nonlinear_vars,
    }
}

//! Sparse Jacobian assembly with cached constant entries.
//!
//! Constant entries are stored once. Each assembly seeds only the columns that
//! carry a nonlinear entry, so one forward sweep carries `|nonlinear_vars|`
//! derivative components rather than `n`.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::ad::{jacobian_times_seed_with_status, SeedMatrix};
use crate::functions::{ProblemFunctions, Status};
use crate::scalar::EvalFault;
use crate::structure::{EntryClass, StructurePattern};

/// `(row, col, value)` for every constant entry of a pattern, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantCache {
    triplets: Vec<(usize, usize, f64)>,
}

impl ConstantCache {
    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.triplets
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(i, j)))
            .ok()
            .map(|k| self.triplets[k].2)
    }

    /// Overwrite a cached value. Only meant for fault-injection tests.
    #[doc(hidden)]
    pub fn corrupt(&mut self, i: usize, j: usize, v: f64) -> bool {
        match self.triplets.binary_search_by(|&(r, c, _)| (r, c).cmp(&(i, j))) {
            Ok(k) => {
                self.triplets[k].2 = v;
                true
            }
            Err(_) => false,
        }
    }
}

/// Triplet-form Jacobian, sorted row-major without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    pub ne_f: usize,
    pub n: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseJacobian {
    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.ne_f];
        for &(i, j, v) in &self.triplets {
            out[i][j] = v;
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.triplets
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(i, j)))
            .map_or(0.0, |k| self.triplets[k].2)
    }

    /// Dense copy of row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let start = self.triplets.partition_point(|&(r, _, _)| r < i);
        for &(r, j, v) in &self.triplets[start..] {
            if r != i {
                break;
            }
            out[j] = v;
        }
        out
    }
}

/// One unit column per nonlinear variable, in ascending order.
pub fn build_seed(p: &StructurePattern) -> SeedMatrix {
    SeedMatrix::unit_columns(p.num_vars(), p.nonlinear_vars().to_vec())
}

pub fn init_cache(p: &StructurePattern) -> ConstantCache {
    ConstantCache {
        triplets: p
            .entries()
            .filter_map(|(i, j, c)| match c {
                EntryClass::Constant(v) => Some((i, j, v)),
                _ => None,
            })
            .collect(),
    }
}

/// Call counters for the assembler.
#[derive(Debug, Default)]
pub struct AssemblyStats {
    pub assemblies: AtomicUsize,
    pub ad_sweeps: AtomicUsize,
    /// Sum over sweeps of derivative components carried.
    pub components: AtomicUsize,
    pub plain_evals: AtomicUsize,
}

impl AssemblyStats {
    pub fn snapshot(&self) -> (usize, usize, usize, usize) {
        (
            self.assemblies.load(Ordering::Relaxed),
            self.ad_sweeps.load(Ordering::Relaxed),
            self.components.load(Ordering::Relaxed),
            self.plain_evals.load(Ordering::Relaxed),
        )
    }
}

/// Pattern, seed and cache bundled for repeated assembly.
#[derive(Debug)]
pub struct JacobianAssembler {
    pattern: StructurePattern,
    seed: SeedMatrix,
    cache: ConstantCache,
    /// Column of the seed for each variable, if it has one.
    seed_col: Vec<Option<usize>>,
    pub stats: AssemblyStats,
}

impl JacobianAssembler {
    pub fn new(pattern: StructurePattern) -> Self {
        let cache = init_cache(&pattern);
        Self::with_cache(pattern, cache)
    }

    /// Use an explicit cache (normally `init_cache(&pattern)`).
    pub fn with_cache(pattern: StructurePattern, cache: ConstantCache) -> Self {
        let seed = build_seed(&pattern);
        let mut seed_col = vec![None; pattern.num_vars()];
        for (k, &j) in pattern.nonlinear_vars().iter().enumerate() {
            seed_col[j] = Some(k);
        }
        JacobianAssembler {
            pattern,
            seed,
            cache,
            seed_col,
            stats: AssemblyStats::default(),
        }
    }

    pub fn pattern(&self) -> &StructurePattern {
        &self.pattern
    }

    pub fn seed(&self) -> &SeedMatrix {
        &self.seed
    }

    pub fn cache(&self) -> &ConstantCache {
        &self.cache
    }

    pub fn into_parts(self) -> (StructurePattern, ConstantCache) {
        (self.pattern, self.cache)
    }

    pub fn assemble<P: ProblemFunctions + ?Sized>(
        &self,
        funcs: &P,
        x: &[f64],
    ) -> Result<(Vec<f64>, SparseJacobian), EvalFault> {
        self.assemble_with_status(funcs, Status::Normal, x)
    }

    /// Evaluate `F(x)` and assemble `J(x)`. Constant entries come from the
    /// cache; nonlinear entries from one seeded forward sweep.
    pub fn assemble_with_status<P: ProblemFunctions + ?Sized>(
        &self,
        funcs: &P,
        status: Status,
        x: &[f64],
    ) -> Result<(Vec<f64>, SparseJacobian), EvalFault> {
        self.stats.assemblies.fetch_add(1, Ordering::Relaxed);
        let p = self.seed.cols();
        let (values, product) = if p == 0 {
            self.stats.plain_evals.fetch_add(1, Ordering::Relaxed);
            (funcs.eval(status, x)?, None)
        } else {
            self.stats.ad_sweeps.fetch_add(1, Ordering::Relaxed);
            self.stats.components.fetch_add(p, Ordering::Relaxed);
            let r = jacobian_times_seed_with_status(funcs, status, x, &self.seed)?;
            (r.values, Some(r.product))
        };
        let mut triplets = Vec::with_capacity(self.pattern.nnz());
        let mut cached = self.cache.triplets.iter().peekable();
        for (i, j, class) in self.pattern.entries() {
            let v = match class {
                EntryClass::Constant(_) => {
                    let &(ci, cj, v) = cached.next().expect("cache covers every constant entry");
                    debug_assert_eq!((ci, cj), (i, j));
                    v
                }
                EntryClass::Nonlinear => {
                    let k = self.seed_col[j].expect("nonlinear column is seeded");
                    product.as_ref().expect("seeded sweep ran").get(i, k)
                }
                EntryClass::Zero => unreachable!("entries() skips zeros"),
            };
            triplets.push((i, j, v));
        }
        Ok((
            values,
            SparseJacobian {
                ne_f: self.pattern.num_funcs(),
                n: self.pattern.num_vars(),
                triplets,
            },
        ))
    }
}

/// Free-function form: assemble with an explicit pattern, cache and seed.
pub fn assemble<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x: &[f64],
    pattern: &StructurePattern,
    cache: &ConstantCache,
    seed: &SeedMatrix,
) -> Result<(Vec<f64>, SparseJacobian), EvalFault> {
    debug_assert_eq!(seed, &build_seed(pattern));
    JacobianAssembler::with_cache(pattern.clone(), cache.clone()).assemble(funcs, x)
}

//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::redundant_guards)]

pub mod corpus;
pub mod hosts;
pub mod oracle;
pub mod symbolic;

use std::collections::HashMap;
use std::path::PathBuf;

use nlpad::expr::{parse_function, FunctionSet};
use nlpad::problem::{default_spec, ProblemSpec};

pub fn symbols(n: usize) -> HashMap<String, usize> {
    (1..=n).map(|i| (format!("x{i}"), i - 1)).collect()
}

pub fn function_set(n: usize, rows: &[&str]) -> FunctionSet {
    let s = symbols(n);
    FunctionSet::new(n, rows.iter().map(|r| parse_function(r, &s).unwrap()).collect()).unwrap()
}

pub const FIXTURE_ROWS: [&str; 4] = [
    "3*x1 + (x1 + x2 + x3)^2 + 5*x4",
    "4*x2 + 2*x3",
    "x1 + x2^2 + x3^2",
    "x2^4 + x3^4 + x4",
];

pub fn fixture_functions() -> FunctionSet {
    function_set(4, &FIXTURE_ROWS)
}

pub fn fixture_spec() -> ProblemSpec {
    let mut s = default_spec(4, 4, "toy").unwrap();
    s.obj_row = 1;
    s.x0 = vec![1.0; 4];
    s.xlow = vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0];
    s.flow = vec![f64::NEG_INFINITY, 0.0, 2.0, 4.0];
    s.fupp = vec![f64::INFINITY, f64::INFINITY, 2.0, 4.0];
    s
}

/// The fixture as a problem file, as shipped in `tests/data`.
pub fn fixture_file() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy.nlp")
}

pub fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// The trap problem: minimize `x1^2 + x2^2` subject to `g(x1) + x2 = 0.5`
/// from the origin. Its solution is `(0.25, 0.25)`.
pub fn trap_spec() -> ProblemSpec {
    let mut s = default_spec(2, 2, "trap").unwrap();
    s.x0 = vec![0.0, 0.0];
    s.flow[1] = 0.5;
    s.fupp[1] = 0.5;
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|a - b| / max(1, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

// NaN must fail bound checks, so `!(a <= b)` is deliberate; index loops walk
// several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ad;
pub mod assemble;
pub mod check;
pub mod expr;
pub mod functions;
pub mod io;
pub mod par;
pub mod problem;
pub mod scalar;
pub mod solver;
pub mod structure;

//! Print and summary output.
//!
//! The print file has fixed sections in a fixed order: header, structure,
//! derivative check, iterations, solution. Numbers use fixed formats so that
//! identical runs produce identical bytes.

use std::io::{self, Write};

use crate::check::CheckReport;
use crate::problem::{ProblemSpec, Sense};
use crate::solver::{IterRecord, Solution};
use crate::structure::StructurePattern;

fn heading(out: &mut dyn Write, title: &str) -> io::Result<()> {
    writeln!(out)?;
    writeln!(out, "{title}")?;
    writeln!(out, "{}", "-".repeat(title.len()))
}

/// `nnz=.. constant=.. nonlinear=.. zero=..`
pub fn structure_counts(p: &StructurePattern) -> String {
    format!(
        "nnz={} constant={} nonlinear={} zero={}",
        p.nnz(),
        p.count_constant(),
        p.count_nonlinear(),
        p.count_zero()
    )
}

fn one_based(ix: &[usize]) -> String {
    if ix.is_empty() {
        "none".to_string()
    } else {
        ix.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
    }
}

pub fn write_header(out: &mut dyn Write, spec: &ProblemSpec) -> io::Result<()> {
    writeln!(out, "nlpad print file")?;
    writeln!(out)?;
    writeln!(out, "Problem    {}", spec.report_name())?;
    writeln!(out, "Variables  {}", spec.n)?;
    writeln!(out, "Functions  {}", spec.ne_f)?;
    match (spec.obj_row, spec.sense) {
        (0, _) => writeln!(out, "ObjRow     0 (feasible point only)"),
        (i, Sense::Minimize) => writeln!(out, "ObjRow     {i} (minimize)"),
        (i, Sense::Maximize) => writeln!(out, "ObjRow     {i} (maximize)"),
    }
}

pub fn write_structure(out: &mut dyn Write, pattern: &StructurePattern) -> io::Result<()> {
    heading(out, "Structure")?;
    writeln!(out, "{}", structure_counts(pattern))?;
    writeln!(out, "linear rows          {}", one_based(pattern.linear_rows()))?;
    writeln!(out, "nonlinear variables  {}", one_based(pattern.nonlinear_vars()))?;
    writeln!(out, "probe tolerance      {:.3e}", pattern.tolerance)
}

pub fn write_check(out: &mut dyn Write, report: &CheckReport) -> io::Result<()> {
    heading(out, "Derivative check")?;
    match report.worst_entry {
        Some((i, j)) => writeln!(
            out,
            "max relative error   {:.3e} at ({}, {})",
            report.max_rel_error,
            i + 1,
            j + 1
        )?,
        None => writeln!(out, "max relative error   {:.3e}", report.max_rel_error)?,
    }
    for m in &report.pattern_mismatches {
        writeln!(
            out,
            "mismatch ({}, {}) {}: {}",
            m.row + 1,
            m.col + 1,
            m.expected.label(),
            m.evidence
        )?;
    }
    for w in &report.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(out, "{}", if report.passed { "passed" } else { "FAILED" })
}

pub fn write_trace(out: &mut dyn Write, trace: &[IterRecord]) -> io::Result<()> {
    heading(out, "Iterations")?;
    writeln!(
        out,
        "{:>5} {:>14} {:>10} {:>10} {:>10} {:>10}",
        "itn", "merit", "feasible", "optimal", "step", "penalty"
    )?;
    for r in trace {
        writeln!(
            out,
            "{:>5} {:>14.6e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}{}",
            r.iter,
            r.merit,
            r.feasibility,
            r.optimality,
            r.step,
            r.penalty,
            if r.relaxed { " r" } else { "" }
        )?;
    }
    Ok(())
}

pub fn write_solution(out: &mut dyn Write, spec: &ProblemSpec, s: &Solution) -> io::Result<()> {
    heading(out, "Solution")?;
    writeln!(out, "exit         {}", s.exit)?;
    if let Some(msg) = &s.message {
        writeln!(out, "reason       {msg}")?;
    }
    writeln!(out, "majors       {}", s.majors)?;
    writeln!(out, "evaluations  {}", s.evals)?;
    if let Some(obj) = s.objective {
        writeln!(out, "objective    {obj:.12e}")?;
    }
    writeln!(out, "feasibility  {:.3e}", s.feasibility)?;
    writeln!(out, "optimality   {:.3e}", s.optimality)?;
    writeln!(out)?;
    writeln!(out, "{:>5} {:<8} {:>20}", "j", "name", "x")?;
    for j in 0..spec.n {
        writeln!(out, "{:>5} {:<8} {:>20.12e}", j + 1, truncate(&spec.var_name(j)), s.x[j])?;
    }
    writeln!(out)?;
    writeln!(out, "{:>5} {:<8} {:>20} {:>20}", "i", "name", "F", "Fmul")?;
    for i in 0..spec.ne_f {
        writeln!(
            out,
            "{:>5} {:<8} {:>20.12e} {:>20.12e}",
            i + 1,
            truncate(&spec.fun_name(i)),
            s.f[i],
            s.fmul[i]
        )?;
    }
    Ok(())
}

fn truncate(name: &str) -> String {
    name.chars().take(crate::problem::NAME_LEN).collect()
}

/// Everything the print file can hold; absent parts are skipped.
pub struct PrintContents<'a> {
    pub spec: &'a ProblemSpec,
    pub pattern: Option<&'a StructurePattern>,
    pub check: Option<&'a CheckReport>,
    pub trace: &'a [IterRecord],
    pub solution: Option<&'a Solution>,
}

pub fn write_print_file(out: &mut dyn Write, c: &PrintContents<'_>) -> io::Result<()> {
    write_header(out, c.spec)?;
    if let Some(p) = c.pattern {
        write_structure(out, p)?;
    }
    if let Some(r) = c.check {
        write_check(out, r)?;
    }
    if c.solution.is_some() {
        write_trace(out, c.trace)?;
    }
    if let Some(s) = c.solution {
        write_solution(out, c.spec, s)?;
    }
    Ok(())
}

/// A few lines for the terminal.
pub fn write_summary(out: &mut dyn Write, c: &PrintContents<'_>) -> io::Result<()> {
    writeln!(
        out,
        "nlpad  {}  n={} neF={}",
        c.spec.report_name(),
        c.spec.n,
        c.spec.ne_f
    )?;
    if let Some(p) = c.pattern {
        writeln!(out, "structure  {}", structure_counts(p))?;
    }
    if let Some(r) = c.check {
        writeln!(
            out,
            "derivative check {} (max relative error {:.2e}, {} repair(s))",
            if r.passed { "passed" } else { "FAILED" },
            r.max_rel_error,
            r.repairs.len()
        )?;
        for w in &r.warnings {
            writeln!(out, "warning: {w}")?;
        }
    }
    if let Some(s) = c.solution {
        writeln!(
            out,
            "exit {} after {} major iterations, {} evaluations",
            s.exit, s.majors, s.evals
        )?;
        if let Some(msg) = &s.message {
            writeln!(out, "reason: {msg}")?;
        }
        if let Some(obj) = s.objective {
            writeln!(out, "final objective {obj:.12e}")?;
        }
        writeln!(out, "max violation {:.3e}  kkt residual {:.3e}", s.feasibility, s.optimality)?;
    }
    Ok(())
}

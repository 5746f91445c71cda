//! Line-oriented problem files.
//!
//! ```text
//! # comment
//! problem   NAME
//! variables x1 x2 x3 x4
//! minimize  1                  # or: maximize ROW, feasibility
//! F 1 = 3*x1 + (x1+x2+x3)^2 + 5*x4
//! bound     x1 0 inf
//! rowbound  3 2 2
//! start     x1 1
//! objadd    0
//! state     x1 4               # start x1 at its lower bound
//! multiplier 3 0.5             # initial multiplier estimate
//! ```
//!
//! Variables must be declared before they are used. Every row `1..neF` is
//! defined by exactly one `F` line; `neF` is the largest index. `inf` and
//! `-inf` are accepted wherever a number is.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::expr::{parse_function_at, Expr, Func, FunctionSet};
use crate::problem::{default_spec, ProblemSpec, Sense};

/// Name used when the file has no `problem` line.
pub const DEFAULT_NAME: &str = "nlpad";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ProblemFileError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ProblemFileError> {
    Err(ProblemFileError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    Row(Sense, usize),
    Feasibility,
}

#[derive(Default)]
struct Draft {
    name: Option<String>,
    vars: Vec<String>,
    index: HashMap<String, usize>,
    objective: Option<(usize, Objective)>,
    rows: HashMap<usize, (usize, Expr)>,
    bounds: Vec<(usize, usize, f64, f64)>,
    row_bounds: Vec<(usize, usize, f64, f64)>,
    starts: Vec<(usize, f64)>,
    states: Vec<(usize, usize, i32)>,
    multipliers: Vec<(usize, usize, f64)>,
    obj_add: Option<f64>,
}

fn number(line: usize, word: &str) -> Result<f64, ProblemFileError> {
    match word.parse::<f64>() {
        Ok(v) if !v.is_nan() => Ok(v),
        _ => err(line, format!("expected a number, found '{word}'")),
    }
}

fn row_index(line: usize, word: &str) -> Result<usize, ProblemFileError> {
    match word.parse::<usize>() {
        Ok(i) if i >= 1 => Ok(i),
        _ => err(line, format!("expected a row number (1, 2, ...), found '{word}'")),
    }
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && Func::from_name(name).is_none()
}

impl Draft {
    fn var(&self, line: usize, name: &str) -> Result<usize, ProblemFileError> {
        match self.index.get(name) {
            Some(&j) => Ok(j),
            None if self.vars.is_empty() => err(line, format!("'{name}' used before any 'variables' line")),
            None => err(line, format!("unknown variable '{name}'")),
        }
    }

    fn statement(&mut self, line: usize, raw: &str) -> Result<(), ProblemFileError> {
        let text = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = text.split_whitespace().collect();
        let Some(&keyword) = words.first() else {
            return Ok(());
        };
        let args = &words[1..];
        let arity = |n: usize| -> Result<(), ProblemFileError> {
            if args.len() == n {
                Ok(())
            } else {
                err(line, format!("'{keyword}' takes {n} argument(s), found {}", args.len()))
            }
        };
        match keyword {
            "problem" => {
                arity(1)?;
                self.name = Some(args[0].to_string());
            }
            "variables" => {
                if args.is_empty() {
                    return err(line, "'variables' needs at least one name");
                }
                for &name in args {
                    if !valid_name(name) {
                        return err(line, format!("'{name}' is not a valid variable name"));
                    }
                    if self.index.insert(name.to_string(), self.vars.len()).is_some() {
                        return err(line, format!("variable '{name}' declared twice"));
                    }
                    self.vars.push(name.to_string());
                }
            }
            "minimize" | "maximize" | "feasibility" => {
                if let Some((first, _)) = self.objective {
                    return err(line, format!("objective already given on line {first}"));
                }
                let obj = if keyword == "feasibility" {
                    arity(0)?;
                    Objective::Feasibility
                } else {
                    arity(1)?;
                    let sense = if keyword == "minimize" { Sense::Minimize } else { Sense::Maximize };
                    Objective::Row(sense, row_index(line, args[0])?)
                };
                self.objective = Some((line, obj));
            }
            "F" => {
                let body = text.trim_start()[1..].trim_start();
                let Some((index, expr)) = body.split_once('=') else {
                    return err(line, "expected 'F i = EXPRESSION'");
                };
                let i = row_index(line, index.trim())?;
                if let Some((first, _)) = self.rows.get(&i) {
                    return err(line, format!("row {i} already defined on line {first}"));
                }
                let offset = expr.as_ptr() as usize - raw.as_ptr() as usize;
                let symbols = |name: &str| self.index.get(name).copied();
                let e = parse_function_at(expr, &symbols, line, raw[..offset].chars().count())
                    .map_err(|e| ProblemFileError {
                        line,
                        message: format!("column {}: {}", e.column, e.message),
                    })?;
                self.rows.insert(i, (line, e));
            }
            "bound" => {
                arity(3)?;
                let j = self.var(line, args[0])?;
                self.bounds.push((line, j, number(line, args[1])?, number(line, args[2])?));
            }
            "rowbound" => {
                arity(3)?;
                let i = row_index(line, args[0])?;
                self.row_bounds.push((line, i, number(line, args[1])?, number(line, args[2])?));
            }
            "start" => {
                arity(2)?;
                let j = self.var(line, args[0])?;
                self.starts.push((j, number(line, args[1])?));
            }
            "objadd" => {
                arity(1)?;
                self.obj_add = Some(number(line, args[0])?);
            }
            "state" => {
                arity(2)?;
                let j = self.var(line, args[0])?;
                let Ok(k) = args[1].parse::<i32>() else {
                    return err(line, format!("expected an integer state, found '{}'", args[1]));
                };
                self.states.push((line, j, k));
            }
            "multiplier" => {
                arity(2)?;
                let i = row_index(line, args[0])?;
                self.multipliers.push((line, i, number(line, args[1])?));
            }
            other => return err(line, format!("unknown statement '{other}'")),
        }
        Ok(())
    }

    fn finish(self, last_line: usize) -> Result<(ProblemSpec, FunctionSet), ProblemFileError> {
        if self.vars.is_empty() {
            return err(last_line, "no 'variables' line");
        }
        let ne_f = self.rows.keys().copied().max().unwrap_or(0);
        if ne_f == 0 {
            return err(last_line, "no 'F' rows");
        }
        if let Some(i) = (1..=ne_f).find(|i| !self.rows.contains_key(i)) {
            return err(last_line, format!("row {i} is never defined (rows run 1..{ne_f})"));
        }
        let n = self.vars.len();
        let mut spec = default_spec(n, ne_f, DEFAULT_NAME).expect("dimensions are positive");
        if let Some(name) = self.name {
            spec.name = name;
        }
        match self.objective {
            None => return err(last_line, "missing objective: add 'minimize ROW', 'maximize ROW' or 'feasibility'"),
            Some((_, Objective::Feasibility)) => spec.obj_row = 0,
            Some((line, Objective::Row(sense, i))) => {
                if i > ne_f {
                    return err(line, format!("objective row {i} does not exist (rows run 1..{ne_f})"));
                }
                spec.obj_row = i;
                spec.sense = sense;
            }
        }
        let check_row = |line: usize, i: usize| {
            if i > ne_f {
                err(line, format!("row {i} does not exist (rows run 1..{ne_f})"))
            } else {
                Ok(i - 1)
            }
        };
        for (_, j, lo, hi) in self.bounds {
            spec.xlow[j] = lo;
            spec.xupp[j] = hi;
        }
        for (line, i, lo, hi) in self.row_bounds {
            let i = check_row(line, i)?;
            spec.flow[i] = lo;
            spec.fupp[i] = hi;
        }
        for (j, v) in self.starts {
            spec.x0[j] = v;
        }
        for (_, j, k) in self.states {
            spec.xstate[j] = k;
        }
        for (line, i, v) in self.multipliers {
            let i = check_row(line, i)?;
            spec.fmul0[i] = v;
        }
        if let Some(v) = self.obj_add {
            spec.obj_add = v;
        }
        spec.var_names = Some(self.vars);

        let mut rows: Vec<(usize, (usize, Expr))> = self.rows.into_iter().collect();
        rows.sort_by_key(|(i, _)| *i);
        let exprs = rows.into_iter().map(|(_, (_, e))| Arc::new(e)).collect();
        let funcs = FunctionSet::from_shared(n, exprs).map_err(|e| ProblemFileError {
            line: last_line,
            message: e.to_string(),
        })?;
        Ok((spec, funcs))
    }
}

/// Parse a problem file into a (not yet finalized) problem and its functions.
pub fn parse_problem_file(text: &str) -> Result<(ProblemSpec, FunctionSet), ProblemFileError> {
    let mut draft = Draft::default();
    let mut last = 1;
    for (k, raw) in text.lines().enumerate() {
        last = k + 1;
        draft.statement(k + 1, raw)?;
    }
    draft.finish(last)
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Render a problem in the file format. Fields at their defaults are left out.
pub fn render_problem_file(spec: &ProblemSpec, funcs: &FunctionSet) -> String {
    let names: Vec<String> = (0..spec.n).map(|j| spec.var_name(j)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "problem {}", spec.name);
    let _ = writeln!(out, "variables {}", names.join(" "));
    match (spec.obj_row, spec.sense) {
        (0, _) => out.push_str("feasibility\n"),
        (i, Sense::Minimize) => {
            let _ = writeln!(out, "minimize {i}");
        }
        (i, Sense::Maximize) => {
            let _ = writeln!(out, "maximize {i}");
        }
    }
    if spec.obj_add != 0.0 {
        let _ = writeln!(out, "objadd {}", fmt_num(spec.obj_add));
    }
    for (i, row) in funcs.rows().iter().enumerate() {
        let _ = writeln!(out, "F {} = {}", i + 1, row.display_with(&names));
    }
    for j in 0..spec.n {
        if spec.xlow[j] != f64::NEG_INFINITY || spec.xupp[j] != f64::INFINITY {
            let _ = writeln!(out, "bound {} {} {}", names[j], fmt_num(spec.xlow[j]), fmt_num(spec.xupp[j]));
        }
    }
    for i in 0..spec.ne_f {
        if spec.flow[i] != f64::NEG_INFINITY || spec.fupp[i] != f64::INFINITY {
            let _ = writeln!(out, "rowbound {} {} {}", i + 1, fmt_num(spec.flow[i]), fmt_num(spec.fupp[i]));
        }
    }
    for j in 0..spec.n {
        if spec.x0[j] != 0.0 {
            let _ = writeln!(out, "start {} {}", names[j], fmt_num(spec.x0[j]));
        }
        if spec.xstate[j] != 0 {
            let _ = writeln!(out, "state {} {}", names[j], spec.xstate[j]);
        }
    }
    for i in 0..spec.ne_f {
        if spec.fmul0[i] != 0.0 {
            let _ = writeln!(out, "multiplier {} {}", i + 1, fmt_num(spec.fmul0[i]));
        }
    }
    out
}

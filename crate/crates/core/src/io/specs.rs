//! Options ("specs") files: one `KEYPHRASE value` per line.
//!
//! Keyphrases are case-insensitive and may be separated by any whitespace.
//! `Begin` and `End` lines and comments (`*` or `#`) are ignored. Unknown
//! keyphrases are reported and skipped; a recognized keyphrase with a bad
//! value is an error.

use crate::problem::Options;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKey {
    InfiniteBound,
    FeasibilityTolerance,
    OptimalityTolerance,
    MajorIterations,
    ProbeScale,
    RandomSeed,
    DifferenceInterval,
    CheckTolerance,
}

impl SpecKey {
    fn from_phrase(phrase: &str) -> Option<SpecKey> {
        Some(match phrase {
            "infinite bound" => SpecKey::InfiniteBound,
            "feasibility tolerance" => SpecKey::FeasibilityTolerance,
            "optimality tolerance" => SpecKey::OptimalityTolerance,
            "major iterations" | "major iterations limit" => SpecKey::MajorIterations,
            "probe scale" => SpecKey::ProbeScale,
            "random seed" => SpecKey::RandomSeed,
            "difference interval" => SpecKey::DifferenceInterval,
            "check tolerance" => SpecKey::CheckTolerance,
            _ => return None,
        })
    }

    pub fn phrase(self) -> &'static str {
        match self {
            SpecKey::InfiniteBound => "Infinite bound",
            SpecKey::FeasibilityTolerance => "Feasibility tolerance",
            SpecKey::OptimalityTolerance => "Optimality tolerance",
            SpecKey::MajorIterations => "Major iterations",
            SpecKey::ProbeScale => "Probe scale",
            SpecKey::RandomSeed => "Random seed",
            SpecKey::DifferenceInterval => "Difference interval",
            SpecKey::CheckTolerance => "Check tolerance",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SpecKey::MajorIterations | SpecKey::RandomSeed)
    }
}

/// A recognized option line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionDelta {
    pub line: usize,
    pub key: SpecKey,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpecsFile {
    pub deltas: Vec<OptionDelta>,
    /// `(line, message)` for every skipped line.
    pub warnings: Vec<(usize, String)>,
}

impl SpecsFile {
    /// Apply the deltas in file order; later lines win.
    pub fn apply(&self, opts: &mut Options) {
        for d in &self.deltas {
            match d.key {
                SpecKey::InfiniteBound => opts.inf_bound = d.value,
                SpecKey::FeasibilityTolerance => opts.feas_tol = d.value,
                SpecKey::OptimalityTolerance => opts.opt_tol = d.value,
                SpecKey::MajorIterations => opts.major_iter_limit = d.value as usize,
                SpecKey::ProbeScale => opts.probe_scale = d.value,
                SpecKey::RandomSeed => opts.rng_seed = d.value as u64,
                SpecKey::DifferenceInterval => opts.fd_step = d.value,
                SpecKey::CheckTolerance => opts.check_tol = d.value,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct SpecsError {
    pub line: usize,
    pub message: String,
}

pub fn parse_specs_file(text: &str) -> Result<SpecsFile, SpecsError> {
    let mut out = SpecsFile::default();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') || trimmed.starts_with('#') {
            continue;
        }
        let words: Vec<String> = trimmed.split_whitespace().map(str::to_lowercase).collect();
        if matches!(words[0].as_str(), "begin" | "end") {
            continue;
        }
        let (phrase, value) = match words.split_last() {
            Some((last, rest)) if !rest.is_empty() => (rest.join(" "), last.as_str()),
            _ => (words.join(" "), ""),
        };
        if let Some(key) = SpecKey::from_phrase(&words.join(" ")) {
            return Err(SpecsError {
                line,
                message: format!("{} needs a value", key.phrase()),
            });
        }
        let Some(key) = SpecKey::from_phrase(&phrase) else {
            out.warnings.push((line, format!("unknown option '{trimmed}' skipped")));
            continue;
        };
        let bad = |what: &str| SpecsError {
            line,
            message: format!("{} needs {what}, found '{value}'", key.phrase()),
        };
        let v: f64 = value.parse().map_err(|_| bad("a number"))?;
        if key.is_count() {
            if !(v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64) {
                return Err(bad("a nonnegative integer"));
            }
        } else if !(v > 0.0) {
            return Err(bad("a positive number"));
        }
        out.deltas.push(OptionDelta { line, key, value: v });
    }
    Ok(out)
}

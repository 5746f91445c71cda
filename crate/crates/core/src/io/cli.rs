//! The `nlpad` command.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::check::CheckError;
use crate::io::problem_file::parse_problem_file;
use crate::io::report::{write_print_file, write_summary, PrintContents};
use crate::io::specs::parse_specs_file;
use crate::problem::Options;
use crate::solver::{analyze, solve_with_report, Exit, SolveError};

/// Exit status for usage, input and output errors.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PROBE: i32 = 8;
pub const EXIT_CHECK: i32 = 9;

/// Process exit status for a solver exit.
///
/// | exit        | code |
/// |-------------|------|
/// | optimal     | 0    |
/// | feasible    | 0    |
/// | infeasible  | 3    |
/// | iter limit  | 4    |
/// | user abort  | 5    |
/// | eval error  | 6    |
/// | no progress | 7    |
///
/// Usage and file errors give 2, a failed structure probe 8 and a failed
/// derivative check 9.
pub fn exit_code(exit: Exit) -> i32 {
    match exit {
        Exit::Optimal | Exit::Feasible => 0,
        Exit::Infeasible => 3,
        Exit::IterLimit => 4,
        Exit::UserAbort => 5,
        Exit::EvalError => 6,
        Exit::NoProgress => 7,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "nlpad",
    version,
    about = "Solve a nonlinear program given only its function values",
    after_help = "Exit status: 0 optimal or feasible, 2 usage or input error, 3 infeasible, \
                  4 iteration limit, 5 user abort, 6 evaluation error, 7 no progress, \
                  8 structure probe failed, 9 derivative check failed."
)]
struct Args {
    /// Problem file.
    problem: PathBuf,
    /// Options file of `KEYPHRASE value` lines.
    #[arg(long, value_name = "PATH")]
    specs: Option<PathBuf>,
    /// Write the full print file here.
    #[arg(long, value_name = "PATH")]
    print: Option<PathBuf>,
    /// Where the summary goes: `-` for standard output, a path, or `off`.
    #[arg(long, value_name = "-|PATH|off", default_value = "-")]
    summary: String,
    /// Dump the Jacobian classification (`i j CLASS [value]`) to standard output.
    #[arg(long)]
    print_structure: bool,
    /// Random seed for structure probing.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Stop after the derivative check.
    #[arg(long)]
    check_only: bool,
}

enum Sink {
    Stdout,
    File(fs::File),
    Off,
}

fn read_file(path: &Path, stderr: &mut dyn Write) -> Option<String> {
    match fs::read_to_string(path) {
        Ok(text) => Some(text),
        Err(e) => {
            let _ = writeln!(stderr, "Error while opening file  {}: {e}", path.display());
            None
        }
    }
}

fn create_file(path: &Path, stderr: &mut dyn Write) -> Option<fs::File> {
    match fs::File::create(path) {
        Ok(f) => Some(f),
        Err(e) => {
            let _ = writeln!(stderr, "Error while opening file  {}: {e}", path.display());
            None
        }
    }
}

/// Run the command with `args` (program name first). Returns the exit status.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                return EXIT_INPUT;
            }
            let _ = write!(stdout, "{text}");
            return 0;
        }
    };

    let mut opts = Options::default();
    if let Some(path) = &args.specs {
        let Some(text) = read_file(path, stderr) else {
            return EXIT_INPUT;
        };
        match parse_specs_file(&text) {
            Ok(specs) => {
                for (line, w) in &specs.warnings {
                    let _ = writeln!(stderr, "{}:{line}: {w}", path.display());
                }
                specs.apply(&mut opts);
            }
            Err(e) => {
                let _ = writeln!(stderr, "{}:{e}", path.display());
                return EXIT_INPUT;
            }
        }
    }
    if let Some(seed) = args.seed {
        opts.rng_seed = seed;
    }

    let Some(text) = read_file(&args.problem, stderr) else {
        return EXIT_INPUT;
    };
    let (spec, funcs) = match parse_problem_file(&text) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "{}:{e}", args.problem.display());
            return EXIT_INPUT;
        }
    };

    let mut summary = match args.summary.as_str() {
        "-" => Sink::Stdout,
        "off" => Sink::Off,
        path => match create_file(Path::new(path), stderr) {
            Some(f) => Sink::File(f),
            None => return EXIT_INPUT,
        },
    };
    let mut print = match &args.print {
        Some(path) => match create_file(path, stderr) {
            Some(f) => Some(f),
            None => return EXIT_INPUT,
        },
        None => None,
    };

    let mut emit = |c: &PrintContents<'_>, stdout: &mut dyn Write, stderr: &mut dyn Write| -> bool {
        let mut ok = true;
        let mut report = |r: io::Result<()>, what: &str| {
            if let Err(e) = r {
                let _ = writeln!(stderr, "error writing {what}: {e}");
                ok = false;
            }
        };
        match &mut summary {
            Sink::Stdout => report(write_summary(stdout, c), "summary"),
            Sink::File(f) => report(write_summary(f, c), "summary"),
            Sink::Off => {}
        }
        if let Some(f) = &mut print {
            report(write_print_file(f, c), "print file");
        }
        ok
    };

    if args.check_only {
        return match analyze(&spec, &funcs, &opts) {
            Ok(a) => {
                if args.print_structure {
                    let _ = write!(stdout, "{}", a.pattern.dump());
                }
                let c = PrintContents {
                    spec: &a.spec,
                    pattern: Some(&a.pattern),
                    check: Some(&a.check),
                    trace: &[],
                    solution: None,
                };
                let _ = crate::io::report::write_check(stdout, &a.check);
                if emit(&c, stdout, stderr) {
                    0
                } else {
                    EXIT_INPUT
                }
            }
            Err(e) => failure(&e, &spec, stdout, stderr, &mut emit),
        };
    }

    match solve_with_report(&spec, &funcs, &opts) {
        Ok(r) => {
            if args.print_structure {
                if let Some(p) = &r.pattern {
                    let _ = write!(stdout, "{}", p.dump());
                }
            }
            let c = PrintContents {
                spec: &r.spec,
                pattern: r.pattern.as_ref(),
                check: r.check.as_ref(),
                trace: &r.trace,
                solution: Some(&r.solution),
            };
            if emit(&c, stdout, stderr) {
                exit_code(r.solution.exit)
            } else {
                EXIT_INPUT
            }
        }
        Err(e) => failure(&e, &spec, stdout, stderr, &mut emit),
    }
}

fn failure(
    e: &SolveError,
    spec: &crate::problem::ProblemSpec,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
    emit: &mut dyn FnMut(&PrintContents<'_>, &mut dyn Write, &mut dyn Write) -> bool,
) -> i32 {
    let _ = writeln!(stderr, "{e}");
    match e {
        SolveError::Check(CheckError::Failed(report)) => {
            let c = PrintContents {
                spec,
                pattern: None,
                check: Some(report),
                trace: &[],
                solution: None,
            };
            emit(&c, stdout, stderr);
            EXIT_CHECK
        }
        SolveError::Check(_) => EXIT_CHECK,
        SolveError::Probe(_) => EXIT_PROBE,
        SolveError::Spec(_) | SolveError::Dimension { .. } => EXIT_INPUT,
    }
}

//! Command-line interface.
//!
//! Exit codes: 0 success (and `check-balanced` balanced / `compare` within
//! tolerance), 1 for an unbalanced network or an out-of-tolerance
//! comparison, 2 for a singular system, 3 for file or validation failures,
//! 64 for usage errors.

use crate::io;
use crate::perphase::{self, BALANCE_TOL_DEFAULT};
use crate::solver;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_SINGULAR: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(
    name = "phaseflow",
    version,
    about = "Three-phase network analysis with a per-phase fast path for balanced networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a network file for all terminal and internal quantities
    Solve {
        /// Network file (JSON)
        net: PathBuf,
        /// Write the solution here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solution path: full three-phase, per-phase, or automatic
        #[arg(long, value_enum, default_value_t = Mode::Auto)]
        mode: Mode,
    },
    /// Check whether a network is balanced; prints the report
    CheckBalanced {
        net: PathBuf,
        /// Relative balance tolerance
        #[arg(long, default_value_t = BALANCE_TOL_DEFAULT)]
        tol: f64,
    },
    /// Compare the terminal quantities of two solution files
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Maximum allowed relative difference
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Rewrite Δ-configured sources as their Y equivalents
    Delta2y {
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    PerPhase,
    Auto,
}

/// Run the CLI on the given argument list and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match cli.command {
        Command::Solve { net, out, mode } => cmd_solve(&net, out.as_deref(), mode),
        Command::CheckBalanced { net, tol } => cmd_check_balanced(&net, tol),
        Command::Compare { a, b, tol } => cmd_compare(&a, &b, tol),
        Command::Delta2y { net, out } => cmd_delta2y(&net, &out),
    }
}

fn cmd_solve(net_path: &std::path::Path, out: Option<&std::path::Path>, mode: Mode) -> i32 {
    let net = match io::load(net_path) {
        Ok(net) => net,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };

    let file = match mode {
        Mode::Full => match solver::solve(&net) {
            Ok(sol) => io::solution_to_file(&net, &sol, "full", None),
            Err(e) => return report_solve_error(e),
        },
        Mode::PerPhase => {
            let spec = match perphase::check_balanced(&net, BALANCE_TOL_DEFAULT) {
                Ok(spec) => spec,
                Err(report) => {
                    eprintln!("error: per-phase mode requires a balanced network:");
                    eprint!("{report}");
                    return EXIT_INVALID;
                }
            };
            if !spec.zero_sequence_free() {
                eprintln!(
                    "error: per-phase mode requires zero specified neutral and \
                     zero-sequence voltages (found nonzero gamma on a voltage \
                     source or Y impedance); use --mode full"
                );
                return EXIT_INVALID;
            }
            match per_phase_solution(&net, &spec) {
                Ok(file) => file,
                Err(code) => return code,
            }
        }
        Mode::Auto => match perphase::check_balanced(&net, BALANCE_TOL_DEFAULT) {
            Ok(spec) if spec.zero_sequence_free() => match per_phase_solution(&net, &spec) {
                Ok(file) => file,
                Err(code) => return code,
            },
            Ok(_) => match solver::solve(&net) {
                Ok(sol) => io::solution_to_file(&net, &sol, "full", None),
                Err(e) => return report_solve_error(e),
            },
            Err(report) => match solver::solve(&net) {
                Ok(sol) => io::solution_to_file(&net, &sol, "full", Some(&report)),
                Err(e) => return report_solve_error(e),
            },
        },
    };

    let text = io::to_json_17(&file);
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: {}: {e}", path.display());
                return EXIT_INVALID;
            }
        }
        None => print!("{text}"),
    }
    EXIT_OK
}

fn per_phase_solution(
    net: &crate::network::Network,
    spec: &perphase::BalancedSpec,
) -> Result<io::SolutionFile, i32> {
    let model = perphase::build_per_phase(spec);
    let pp = match perphase::solve_per_phase(&model, spec) {
        Ok(pp) => pp,
        Err(perphase::PerPhaseError::SingularReducedSystem { rcond }) => {
            eprintln!("error: reduced per-phase system is singular (rcond = {rcond:.3e})");
            return Err(EXIT_SINGULAR);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return Err(EXIT_INVALID);
        }
    };
    let sol = perphase::lift(&pp, spec, true).expect("plain lift needs no zero-sequence data");
    Ok(io::solution_to_file(net, &sol, "per-phase", None))
}

fn report_solve_error(e: solver::SolveError) -> i32 {
    eprintln!("error: {e}");
    match e {
        solver::SolveError::SingularSystem { .. } => EXIT_SINGULAR,
        _ => EXIT_INVALID,
    }
}

fn cmd_check_balanced(net_path: &std::path::Path, tol: f64) -> i32 {
    let net = match io::load(net_path) {
        Ok(net) => net,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match perphase::check_balanced(&net, tol) {
        Ok(_) => {
            println!("balanced");
            EXIT_OK
        }
        Err(report) => {
            println!("not balanced:");
            print!("{report}");
            EXIT_FAIL
        }
    }
}

fn cmd_compare(a: &std::path::Path, b: &std::path::Path, tol: f64) -> i32 {
    let sa = match io::read_solution(a) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let sb = match io::read_solution(b) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match io::compare_solutions(&sa, &sb) {
        Ok(diff) => {
            println!("max relative difference: {diff:.3e}");
            if diff <= tol {
                EXIT_OK
            } else {
                EXIT_FAIL
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
    }
}

fn cmd_delta2y(net_path: &std::path::Path, out: &std::path::Path) -> i32 {
    let net = match io::load(net_path) {
        Ok(net) => net,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let buses = net
        .buses()
        .iter()
        .map(|bus| {
            let mut bus = bus.clone();
            if matches!(
                bus.device,
                crate::devices::DeviceSpec::VoltageSourceDelta { .. }
                    | crate::devices::DeviceSpec::CurrentSourceDelta { .. }
            ) {
                bus.device = crate::devices::delta_to_y(&bus.device)
                    .expect("delta sources always convert");
            }
            bus
        })
        .collect();
    let rewritten = match crate::network::Network::new(buses, net.lines().to_vec()) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Err(e) = io::save_network(out, &rewritten) {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    EXIT_OK
}

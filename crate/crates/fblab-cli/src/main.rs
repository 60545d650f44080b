//! Scenario runner for the free-boundary laboratory.
//!
//! Subcommands:
//! ```text
//!   run    --config <path|builtin> --out <dir> [--threads N] [--grid-h H]
//!   report --runs <dir>...
//!   field  cat <path>
//! ```
//!
//! `FBLAB_THREADS` supplies the worker count when `--threads` is absent.
//! Exit codes: 0 success (and all enabled checks pass), 1 checks failed,
//! 2 config error, 3 domain/solver/I/O error.

mod config;
mod report;
mod runner;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "usage:
  fblab run --config <path|builtin> --out <dir> [--threads N] [--grid-h H]
  fblab report --runs <dir>...
  fblab field cat <path>

builtin scenarios: linear_field, one_phase_planar, two_phase_acf";

const BUILTINS: &[(&str, &str)] = &[
    ("linear_field", include_str!("../scenarios/linear_field.cfg")),
    ("one_phase_planar", include_str!("../scenarios/one_phase_planar.cfg")),
    ("two_phase_acf", include_str!("../scenarios/two_phase_acf.cfg")),
];

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("fblab: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("run") => cmd_run(&args[1..]),
        Some("report") => cmd_report(&args[1..]),
        Some("field") => cmd_field(&args[1..]),
        Some("--help") | Some("-h") | Some("help") => {
            println!("{USAGE}");
            ExitCode::SUCCESS
        }
        _ => fail(2, USAGE),
    }
}

fn take_value(args: &[String], i: &mut usize, flag: &str) -> Result<String, String> {
    *i += 1;
    args.get(*i)
        .cloned()
        .ok_or_else(|| format!("{flag} needs a value"))
}

fn cmd_run(args: &[String]) -> ExitCode {
    let mut config_arg = None;
    let mut out_dir = None;
    let mut threads = None;
    let mut grid_h = None;
    let mut i = 0;
    while i < args.len() {
        let res: Result<(), String> = match args[i].as_str() {
            "--config" => take_value(args, &mut i, "--config").map(|v| config_arg = Some(v)),
            "--out" => take_value(args, &mut i, "--out").map(|v| out_dir = Some(v)),
            "--threads" => take_value(args, &mut i, "--threads").and_then(|v| {
                v.parse::<usize>()
                    .map(|n| threads = Some(n))
                    .map_err(|e| format!("--threads: {e}"))
            }),
            "--grid-h" => take_value(args, &mut i, "--grid-h").and_then(|v| {
                v.parse::<f64>()
                    .map(|h| grid_h = Some(h))
                    .map_err(|e| format!("--grid-h: {e}"))
            }),
            other => Err(format!("unknown flag {other}")),
        };
        if let Err(msg) = res {
            return fail(2, &msg);
        }
        i += 1;
    }
    let (Some(config_arg), Some(out_dir)) = (config_arg, out_dir) else {
        return fail(2, "run needs --config and --out");
    };

    // Resolve the config: a readable file path, else a builtin name.
    let text = if std::path::Path::new(&config_arg).is_file() {
        match std::fs::read_to_string(&config_arg) {
            Ok(t) => t,
            Err(e) => return fail(2, &format!("cannot read {config_arg}: {e}")),
        }
    } else if let Some((_, t)) = BUILTINS.iter().find(|(name, _)| *name == config_arg) {
        t.to_string()
    } else {
        return fail(2, &format!("config {config_arg:?} is neither a file nor a builtin"));
    };

    // Parse and build fully before touching the output directory, so a
    // malformed config leaves no partial outputs behind.
    let cfg = match config::parse(&text) {
        Ok(c) => c,
        Err(e) => return fail(2, &e.to_string()),
    };
    let sc = match scenario::build(&cfg, grid_h) {
        Ok(s) => s,
        Err(e) => {
            // Recipe/validation problems are config errors; solver failures
            // during candidate construction are numeric.
            if e.starts_with("minimize:") || e.starts_with("seed:") {
                return fail(3, &e);
            }
            return fail(2, &e);
        }
    };

    let workers = fblab::parallel::worker_count(threads);
    let out = PathBuf::from(out_dir);
    match runner::run(&cfg, &sc, &out, workers) {
        Ok(outcome) => {
            println!(
                "run {}: h={} n={} -> {} ({})",
                sc.name,
                sc.h,
                sc.n,
                out.display(),
                if outcome.all_pass { "all checks pass" } else { "CHECKS FAILED" }
            );
            if outcome.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => fail(3, &e.to_string()),
    }
}

fn cmd_report(args: &[String]) -> ExitCode {
    let mut dirs = Vec::new();
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--runs" => {
                i += 1;
                while i < args.len() && !args[i].starts_with("--") {
                    dirs.push(PathBuf::from(&args[i]));
                    i += 1;
                }
                continue;
            }
            other => return fail(2, &format!("unknown flag {other}")),
        }
    }
    match report::report(&dirs) {
        Ok(table) => {
            print!("{table}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(1, &e),
    }
}

fn cmd_field(args: &[String]) -> ExitCode {
    match args {
        [cat, path] if cat == "cat" => match fblab::checkpoint::load_header(std::path::Path::new(path)) {
            Ok(h) => {
                println!("magic: {}", fblab::checkpoint::MAGIC);
                println!("n: {}", h.n);
                println!(
                    "shape: {}",
                    h.shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
                );
                println!(
                    "origin: {}",
                    h.origin.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
                );
                println!("h: {}", h.h);
                println!("nodes: {}", h.node_count());
                ExitCode::SUCCESS
            }
            Err(e) => fail(3, &e.to_string()),
        },
        _ => fail(2, "usage: fblab field cat <path>"),
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use reglock::diag::Diagnostic;
use reglock::interp::{
    explore, run_seeded, ExploreOptions, NoObserver, RunOptions, Runtime, Terminal, Trace, DEFAULT_MAX_STATES,
    DEFAULT_MAX_STEPS, DEFAULT_MAX_THREADS,
};
use reglock::metatheory::Harness;
use reglock::parser::parse;
use reglock::typeck::{typecheck_program, TypedProgram};

/// Checks and runs programs with hierarchical regions and locks.
///
/// Exit codes: 0 success, 1 rejected program, 2 unreadable input,
/// 3 deadlock, 4 stuck thread or metatheory violation, 5 budget exceeded.
#[derive(Parser)]
#[command(name = "reglock", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program.
    Check {
        file: PathBuf,
        /// Print the effect after each line.
        #[arg(long)]
        emit_effects: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a program under a seeded random scheduler.
    Run {
        file: PathBuf,
        #[arg(long, env = "REGLOCK_SEED", default_value_t = 0)]
        seed: u64,
        /// Check the soundness invariants after every step.
        #[arg(long)]
        metatheory: bool,
        #[arg(long, value_enum, default_value_t = TraceFormat::Text)]
        trace: TraceFormat,
        /// Include store snapshots in JSON traces.
        #[arg(long)]
        snapshots: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: usize,
        /// Skip type checking.
        #[arg(long, hide = true)]
        unchecked: bool,
    },
    /// Explore every interleaving up to a step bound.
    Explore {
        file: PathBuf,
        #[arg(long, default_value_t = 2000)]
        max_steps: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_THREADS)]
        max_threads: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
        #[arg(long)]
        metatheory: bool,
        #[arg(long, hide = true)]
        unchecked: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Text,
    Json,
}

enum Loaded {
    Checked(TypedProgram),
    Unchecked(reglock::parser::Program),
}

fn load(path: &Path, unchecked: bool) -> Result<Loaded, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        2
    })?;
    let program = parse(&text).map_err(|e| {
        eprintln!("{}: {}", path.display(), Diagnostic::from(e));
        1
    })?;
    if unchecked {
        return Ok(Loaded::Unchecked(program));
    }
    typecheck_program(&program).map(Loaded::Checked).map_err(|ds| {
        for d in ds {
            eprintln!("{}: {d}", path.display());
        }
        1
    })
}

fn cmd_check(path: &Path, emit_effects: bool, json: bool) -> u8 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return 2;
        }
    };
    let result = parse(&text).map_err(|e| vec![Diagnostic::from(e)]).and_then(|p| typecheck_program(&p));
    match result {
        Ok(t) if json => {
            let types: serde_json::Map<String, serde_json::Value> =
                t.defs.iter().map(|d| (d.name.clone(), t.types[&d.name].to_string().into())).collect();
            let effects: Vec<serde_json::Value> = t
                .effects_by_line()
                .into_iter()
                .map(|(def, line, e)| serde_json::json!({ "def": def, "line": line, "effect": e.to_string() }))
                .collect();
            let out = serde_json::json!({ "ok": true, "types": types, "effects": effects });
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
            0
        }
        Ok(t) => {
            for d in &t.defs {
                println!("{} : {}", d.name, t.types[&d.name]);
            }
            if emit_effects {
                for (def, line, e) in t.effects_by_line() {
                    println!("{def}:{line}: {e}");
                }
            }
            0
        }
        Err(ds) if json => {
            let diags: Vec<serde_json::Value> = ds.iter().map(Diagnostic::to_json).collect();
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "ok": false, "diagnostics": diags })).unwrap());
            1
        }
        Err(ds) => {
            for d in ds {
                eprintln!("{}:{d}", path.display());
            }
            1
        }
    }
}

fn print_trace(trace: &Trace, format: TraceFormat, metatheory: bool) {
    match format {
        TraceFormat::Text => print!("{}", trace.to_text()),
        TraceFormat::Json => println!("{}", serde_json::to_string_pretty(trace).unwrap()),
    }
    if metatheory {
        let n = usize::from(matches!(trace.terminal, Terminal::Violation { .. }));
        println!("metatheory: {n} violations");
    }
}

fn terminal_code(t: &Terminal) -> u8 {
    t.exit_code() as u8
}

fn cmd_run(path: &Path, seed: u64, metatheory: bool, format: TraceFormat, snapshots: bool, max_steps: usize, unchecked: bool) -> u8 {
    let loaded = match load(path, unchecked) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let opts = RunOptions { seed, max_steps, snapshots };
    let trace = match &loaded {
        Loaded::Checked(t) if metatheory => run_seeded(&Runtime::from_typed(t), opts, &mut Harness::new(t)),
        Loaded::Checked(t) => run_seeded(&Runtime::from_typed(t), opts, &mut NoObserver),
        Loaded::Unchecked(p) => {
            if metatheory {
                eprintln!("--metatheory needs a checked program");
                return 2;
            }
            run_seeded(&Runtime::from_program(p), opts, &mut NoObserver)
        }
    };
    print_trace(&trace, format, metatheory);
    terminal_code(&trace.terminal)
}

fn cmd_explore(path: &Path, opts: ExploreOptions, metatheory: bool, unchecked: bool) -> u8 {
    let loaded = match load(path, unchecked) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let report = match &loaded {
        Loaded::Checked(t) if metatheory => explore(&Runtime::from_typed(t), opts, Harness::new(t)),
        Loaded::Checked(t) => explore(&Runtime::from_typed(t), opts, NoObserver),
        Loaded::Unchecked(p) => explore(&Runtime::from_program(p), opts, NoObserver),
    };
    println!("states: {}", report.states);
    println!("terminals: {}", report.terminals);
    println!("  all done: {}", report.all_done);
    println!("  deadlock: {}", report.deadlocks);
    println!("  stuck: {}", report.stuck);
    for (code, n) in &report.stuck_by_fault {
        println!("    {code}: {n}");
    }
    println!("  other: {}", report.other);
    println!("deepest schedule: {}", report.deepest);
    for (t, schedule) in &report.examples {
        if !matches!(t, Terminal::AllDone) {
            let names: Vec<String> = schedule.iter().map(|s| s.to_string()).collect();
            println!("{t} after [{}]", names.join(" "));
        }
    }
    if report.too_many_threads {
        println!("refused: more than {} threads alive at once (raise with --max-threads)", opts.max_threads);
    }
    if report.budget_exceeded {
        println!("budget exceeded: results are partial");
    }
    report.exit_code() as u8
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check { file, emit_effects, json } => cmd_check(&file, emit_effects, json),
        Command::Run { file, seed, metatheory, trace, snapshots, max_steps, unchecked } => {
            cmd_run(&file, seed, metatheory, trace, snapshots, max_steps, unchecked)
        }
        Command::Explore { file, max_steps, max_threads, max_states, metatheory, unchecked } => {
            cmd_explore(&file, ExploreOptions { max_steps, max_threads, max_states }, metatheory, unchecked)
        }
    };
    ExitCode::from(code)
}

//! Command-line front end: trace replay with snapshot dumps, and the
//! randomized benchmark / mode comparison.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 invariant violation.

use std::collections::HashMap;
use std::fs;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use headfit::allocator::{AllocStatus, Allocator, AllocatorConfig, Mode};
use headfit::arena::{Arena, InitLayout};
use headfit::bench::{
    self, bench_csv_row, comparison_csv, WorkloadConfig, BENCH_CSV_HEADER,
};
use headfit::inspector;

#[derive(Parser)]
#[command(name = "headfit", about = "Simulated best-fit heap allocator with a head-first mode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "head-first")]
    HeadFirst,
    #[value(name = "non-head-first")]
    NonHeadFirst,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::HeadFirst => Mode::HeadFirst,
            ModeArg::NonHeadFirst => Mode::NonHeadFirst,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Single,
    #[value(name = "two-block")]
    TwoBlock,
}

impl From<LayoutArg> for InitLayout {
    fn from(l: LayoutArg) -> InitLayout {
        match l {
            LayoutArg::Single => InitLayout::SingleBlock,
            LayoutArg::TwoBlock => InitLayout::TwoBlock,
        }
    }
}

#[derive(Args)]
struct ArenaArgs {
    /// Arena capacity, e.g. 64, 512KiB, 16MiB
    #[arg(long, default_value = "16MiB", value_parser = parse_size)]
    arena_size: usize,

    #[arg(long, value_enum, default_value = "single")]
    layout: LayoutArg,

    /// Simulated base address (hex, e.g. 0x143000000)
    #[arg(long, default_value = "0x0", value_parser = parse_hex)]
    base: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a trace file against a fresh or snapshot-loaded arena
    Replay {
        trace_file: String,

        #[arg(long, value_enum, default_value = "non-head-first")]
        mode: ModeArg,

        #[command(flatten)]
        arena: ArenaArgs,
    },
    /// Run the randomized concurrent workload, optionally comparing modes
    Bench {
        #[arg(long, value_enum, default_value = "non-head-first")]
        mode: ModeArg,

        /// Run both modes per request count and report t_imp
        #[arg(long)]
        compare: bool,

        /// Comma-separated request counts
        #[arg(long, default_value = "10000", value_delimiter = ',')]
        requests: Vec<usize>,

        #[arg(long, default_value_t = 1024)]
        max_alloc: usize,

        #[arg(long, default_value_t = 0.5)]
        alloc_prob: f64,

        #[arg(long, default_value_t = 4)]
        workers: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long, default_value_t = 5)]
        reps: usize,

        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,

        #[command(flatten)]
        arena: ArenaArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
}

fn parse_size(s: &str) -> Result<usize, String> {
    let (num, mult) = if let Some(n) = s.strip_suffix("MiB") {
        (n, 1024 * 1024)
    } else if let Some(n) = s.strip_suffix("KiB") {
        (n, 1024)
    } else {
        (s, 1)
    };
    num.trim()
        .parse::<usize>()
        .map(|v| v * mult)
        .map_err(|_| format!("invalid size {s:?} (want N, NKiB, or NMiB)"))
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|_| format!("invalid hex address {s:?}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match cli.command {
        Command::Replay { trace_file, mode, arena } => run_replay(&trace_file, mode.into(), &arena),
        Command::Bench {
            mode,
            compare,
            requests,
            max_alloc,
            alloc_prob,
            workers,
            seed,
            reps,
            format,
            arena,
        } => run_bench(
            mode.into(),
            compare,
            &requests,
            max_alloc,
            alloc_prob,
            workers,
            seed,
            reps,
            format,
            &arena,
        ),
    }
}

// ---------------------------------------------------------------------------
// replay

enum TraceCommand {
    Alloc { tag: String, size: usize, owner: u32 },
    Free { tag: Option<String>, owner: u32, forced: bool },
    Load { file: String, base: u64, capacity: usize },
    Dump,
    Check,
}

fn parse_trace(text: &str) -> Result<Vec<TraceCommand>, String> {
    let mut commands = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| format!("line {lineno}: {msg}");
        let cmd = match tokens[0] {
            "alloc" => {
                if tokens.len() != 4 {
                    return Err(err("alloc wants: alloc <tag> <size> <owner>"));
                }
                TraceCommand::Alloc {
                    tag: tokens[1].to_string(),
                    size: tokens[2].parse().map_err(|_| err("bad size"))?,
                    owner: tokens[3].parse().map_err(|_| err("bad owner"))?,
                }
            }
            "free" => {
                if tokens.len() < 3 || tokens.len() > 4 {
                    return Err(err("free wants: free <tag>|null <owner> [force]"));
                }
                let forced = match tokens.get(3) {
                    None => false,
                    Some(&"force") => true,
                    Some(other) => return Err(err(&format!("unknown flag {other:?}"))),
                };
                TraceCommand::Free {
                    tag: if tokens[1] == "null" { None } else { Some(tokens[1].to_string()) },
                    owner: tokens[2].parse().map_err(|_| err("bad owner"))?,
                    forced,
                }
            }
            "load" => {
                if tokens.len() != 4 {
                    return Err(err("load wants: load <snapshot-file> <base-hex> <capacity>"));
                }
                TraceCommand::Load {
                    file: tokens[1].to_string(),
                    base: parse_hex(tokens[2]).map_err(|e| err(&e))?,
                    capacity: tokens[3].parse().map_err(|_| err("bad capacity"))?,
                }
            }
            "dump" => TraceCommand::Dump,
            "check" => TraceCommand::Check,
            other => return Err(err(&format!("unknown command {other:?}"))),
        };
        commands.push(cmd);
    }
    Ok(commands)
}

fn run_replay(trace_file: &str, mode: Mode, arena_args: &ArenaArgs) -> ExitCode {
    let text = match fs::read_to_string(trace_file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {trace_file}: {e}");
            return ExitCode::from(1);
        }
    };
    let commands = match parse_trace(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {trace_file}: {e}");
            return ExitCode::from(1);
        }
    };

    let config = AllocatorConfig {
        mode,
        capacity: arena_args.arena_size,
        layout: arena_args.layout.into(),
        base_address: arena_args.base,
        ..AllocatorConfig::default()
    };
    let mut allocator = match Allocator::new(config) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    // tag -> user address; a failed allocation records None so a later free
    // of that tag becomes a null free, not a hard error
    let mut tags: HashMap<String, Option<u64>> = HashMap::new();
    let mut violated = false;

    for cmd in commands {
        match cmd {
            TraceCommand::Load { file, base, capacity } => {
                let loaded: Result<Arena, String> = fs::read_to_string(&file)
                    .map_err(|e| format!("cannot read {file}: {e}"))
                    .and_then(|text| {
                        inspector::parse_snapshot_csv(&text).map_err(|e| e.to_string())
                    })
                    .and_then(|rows| {
                        inspector::load_snapshot(&rows, base, capacity, 1).map_err(|e| e.to_string())
                    });
                match loaded {
                    Ok(arena) => {
                        allocator = Allocator::from_arena(mode, arena);
                        tags.clear();
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                }
            }
            TraceCommand::Alloc { tag, size, owner } => {
                if tags.get(&tag).is_some_and(|a| a.is_some()) {
                    eprintln!("error: tag {tag:?} is already live");
                    return ExitCode::from(1);
                }
                let r = allocator.create(size, owner);
                match r.status {
                    AllocStatus::Ok => {
                        eprintln!("alloc {tag}: ok {:#x}", r.user_addr.unwrap());
                        tags.insert(tag, r.user_addr);
                    }
                    AllocStatus::OutOfMemory => {
                        eprintln!("alloc {tag}: out-of-memory");
                        tags.insert(tag, None);
                    }
                    AllocStatus::InvalidRequest => {
                        eprintln!("alloc {tag}: invalid-request");
                        tags.insert(tag, None);
                    }
                }
            }
            TraceCommand::Free { tag, owner, forced } => {
                let (label, addr) = match &tag {
                    None => ("null".to_string(), None),
                    Some(t) => match tags.get(t) {
                        None => {
                            eprintln!("error: unknown tag {t:?}");
                            return ExitCode::from(1);
                        }
                        Some(addr) => (t.clone(), *addr),
                    },
                };
                let status = allocator.free(addr, owner, forced);
                eprintln!("free {label}: {status}");
                if status == headfit::allocator::FreeStatus::Freed {
                    if let Some(t) = tag {
                        tags.insert(t, None);
                    }
                }
            }
            TraceCommand::Dump => {
                let arena = allocator.arena();
                match inspector::snapshot(&arena) {
                    Ok(rows) => print!("{}", inspector::write_snapshot_csv(&rows)),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                }
            }
            TraceCommand::Check => {
                let arena = allocator.arena();
                let report = inspector::check_invariants(&arena);
                if !report.is_ok() {
                    for v in &report.violations {
                        eprintln!("violation: {v}");
                    }
                    violated = true;
                }
            }
        }
    }

    if violated {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

// ---------------------------------------------------------------------------
// bench

#[allow(clippy::too_many_arguments)]
fn run_bench(
    mode: Mode,
    compare: bool,
    requests: &[usize],
    max_alloc: usize,
    alloc_prob: f64,
    workers: usize,
    seed: u64,
    reps: usize,
    format: FormatArg,
    arena_args: &ArenaArgs,
) -> ExitCode {
    if requests.is_empty() {
        eprintln!("error: --requests needs at least one count");
        return ExitCode::from(1);
    }
    let config = WorkloadConfig {
        requests: requests[0],
        max_alloc_bytes: max_alloc,
        alloc_probability: alloc_prob,
        workers,
        seed,
        repetitions: reps,
        arena: AllocatorConfig {
            mode,
            capacity: arena_args.arena_size,
            layout: arena_args.layout.into(),
            base_address: arena_args.base,
            ..AllocatorConfig::default()
        },
    };

    if compare {
        match bench::compare_modes(&config, requests) {
            Ok(report) => {
                match format {
                    FormatArg::Csv => print!("{}", comparison_csv(&report)),
                    FormatArg::Table => print_comparison_table(&report),
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        }
    } else {
        let mut rows = Vec::new();
        for &n in requests {
            let cfg = WorkloadConfig { requests: n, ..config.clone() };
            match bench::run_workload(mode, &cfg) {
                Ok(report) => rows.push(report),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
        }
        match format {
            FormatArg::Csv => {
                println!("{BENCH_CSV_HEADER}");
                for r in &rows {
                    println!("{}", bench_csv_row(r));
                }
            }
            FormatArg::Table => {
                println!(
                    "{:<16} {:>8} {:>10} {:>8} {:>8} {:>12}",
                    "mode", "requests", "t_sec", "malloc%", "free%", "ext_frag"
                );
                for r in &rows {
                    println!(
                        "{:<16} {:>8} {:>10.6} {:>8.2} {:>8.2} {:>12.2}",
                        r.mode.to_string(),
                        r.requests,
                        r.wall_time_seconds,
                        r.malloc_success_pct,
                        r.free_success_pct,
                        r.external_fragmentation_bytes
                    );
                }
            }
        }
        ExitCode::SUCCESS
    }
}

fn print_comparison_table(report: &bench::ComparisonReport) {
    println!(
        "{:>8} {:>12} {:>12} {:>8} | nhf/hf malloc% free% ext_frag",
        "requests", "t_nhf", "t_hf", "t_imp%"
    );
    for row in &report.rows {
        println!(
            "{:>8} {:>12.6} {:>12.6} {:>8.2} | {:.2}/{:.2} {:.2}/{:.2} {:.2}/{:.2}",
            row.requests,
            row.non_head_first.wall_time_seconds,
            row.head_first.wall_time_seconds,
            row.t_imp_pct,
            row.non_head_first.malloc_success_pct,
            row.head_first.malloc_success_pct,
            row.non_head_first.free_success_pct,
            row.head_first.free_success_pct,
            row.non_head_first.external_fragmentation_bytes,
            row.head_first.external_fragmentation_bytes,
        );
    }
    println!(
        "mean t_imp: {:.2}%   total-time improvement: {:.2}%",
        report.mean_t_imp_pct, report.total_time_ratio_pct
    );
}

//! `epitrace` — trace-driven epidemic risk ranking and quarantine policy
//! evaluation from the command line.

use epitrace_core::config::KvFile;
use epitrace_core::error::{Error, ErrorCategory};
use epitrace_core::experiment::{
    load_trace, run_experiment, write_synthetic_trace, AppConfig, ExperimentConfig,
};
use epitrace_core::intervention::PolicyKind;
use epitrace_core::risk::{rank_users, RegionState};
use epitrace_core::time::TimeWindow;
use epitrace_core::trace::{build_profiles, read_profiles_csv, write_profiles_csv, UserId};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
epitrace -- mobility-trace epidemic simulation and contagion risk ranking

USAGE:
  epitrace <SUBCOMMAND> --config PATH [FLAGS]

SUBCOMMANDS:
  synth      Write the configured synthetic trace to <out>/traces.csv
  profile    Learn per-user time-allocation profiles; write <out>/profiles.csv
  rank       Score profiles against a region-state CSV; write <out>/ranking.csv
  simulate   Run the configured ensemble experiment into <out>/

FLAGS:
  --config PATH     Config file (key = value lines; see README)
  --out DIR         Output directory (default: .)
  --seed U64        Override base_seed from the config
  --runs N          Override ensemble size (simulate)
  --policy NAME     Override policy list; repeatable: none | random | risk
  --strict          Treat malformed trace rows as fatal
  --help            Show this help

EXIT CODES:
  0 success    1 usage or config error    2 data error    3 runtime failure
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    runs: Option<u32>,
    policies: Vec<PolicyKind>,
    strict: bool,
}

fn parse_args() -> Result<Args, String> {
    let mut argv = std::env::args().skip(1);
    let command = match argv.next() {
        Some(c) if c == "--help" || c == "-h" => {
            print!("{USAGE}");
            std::process::exit(0);
        }
        Some(c) => c,
        None => return Err("missing subcommand".to_string()),
    };
    if !matches!(command.as_str(), "synth" | "profile" | "rank" | "simulate") {
        return Err(format!("unknown subcommand `{command}`"));
    }
    let mut args = Args {
        command,
        config: None,
        out: PathBuf::from("."),
        seed: None,
        runs: None,
        policies: Vec::new(),
        strict: false,
    };
    while let Some(flag) = argv.next() {
        match flag.as_str() {
            "--help" | "-h" => {
                print!("{USAGE}");
                std::process::exit(0);
            }
            "--config" => {
                let v = argv.next().ok_or("missing value for --config")?;
                args.config = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = argv.next().ok_or("missing value for --out")?;
                args.out = PathBuf::from(v);
            }
            "--seed" => {
                let v = argv.next().ok_or("missing value for --seed")?;
                args.seed = Some(v.parse().map_err(|_| format!("invalid --seed `{v}`"))?);
            }
            "--runs" => {
                let v = argv.next().ok_or("missing value for --runs")?;
                let runs: u32 = v.parse().map_err(|_| format!("invalid --runs `{v}`"))?;
                if runs == 0 {
                    return Err("--runs must be >= 1".to_string());
                }
                args.runs = Some(runs);
            }
            "--policy" => {
                let v = argv.next().ok_or("missing value for --policy")?;
                let kind = PolicyKind::parse(&v)
                    .ok_or_else(|| format!("invalid --policy `{v}` (none | random | risk)"))?;
                if args.policies.contains(&kind) {
                    return Err(format!("duplicate --policy `{v}`"));
                }
                args.policies.push(kind);
            }
            "--strict" => args.strict = true,
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(args)
}

fn apply_overrides(config: &mut ExperimentConfig, args: &Args) {
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if !args.policies.is_empty() {
        config.policies = args.policies.clone();
    }
}

fn ensure_out_dir(args: &Args) -> Result<(), Error> {
    fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("creating {}", args.out.display()), e))
}

fn cmd_synth(config: &AppConfig, args: &Args) -> Result<(), Error> {
    let mut cfg = config.require_experiment()?.clone();
    apply_overrides(&mut cfg, args);
    cfg.validate()?;
    ensure_out_dir(args)?;
    let path = args.out.join("traces.csv");
    write_synthetic_trace(&cfg, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_profile(config: &AppConfig, args: &Args) -> Result<(), Error> {
    let mut cfg = config.require_experiment()?.clone();
    apply_overrides(&mut cfg, args);
    cfg.validate()?;
    ensure_out_dir(args)?;
    let (trace, report) = load_trace(&cfg, &args.out, args.strict, None)?;
    eprintln!(
        "trace: {} rows, {} accepted, {} rejected ({} malformed, {} unknown region, {} out of span); {} users, {} regions",
        report.rows,
        report.accepted,
        report.rejected(),
        report.malformed,
        report.unknown_region,
        report.out_of_span,
        trace.n_users(),
        trace.n_regions()
    );
    let anchor = trace.day_anchor().expect("non-empty trace");
    let window = TimeWindow::days(anchor, 0, cfg.learning_days)?;
    let profiles = build_profiles(&trace, window)?;
    eprintln!(
        "profiles: {} users profiled, {} excluded (no usable events in the learning window)",
        profiles.n_profiled(),
        profiles.excluded().len()
    );
    let path = args.out.join("profiles.csv");
    let file = fs::File::create(&path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    write_profiles_csv(&mut w, &trace, &profiles)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_rank(config: &AppConfig, args: &Args) -> Result<(), Error> {
    let inputs = config.require_rank()?;
    ensure_out_dir(args)?;

    let state_file = fs::File::open(&inputs.state)
        .map_err(|e| Error::io(format!("opening {}", inputs.state.display()), e))?;
    let (region_names, state) = RegionState::read_csv(BufReader::new(state_file), 0)?;

    let profiles_file = fs::File::open(&inputs.profiles)
        .map_err(|e| Error::io(format!("opening {}", inputs.profiles.display()), e))?;
    let region_of = |name: &str| {
        region_names
            .iter()
            .position(|r| r == name)
            .map(|i| i as u32)
    };
    let (user_names, profiles) = read_profiles_csv(
        BufReader::new(profiles_file),
        region_of,
        region_names.len(),
    )?;

    let eligible: Vec<UserId> = (0..user_names.len() as u32).map(UserId).collect();
    let ranking = rank_users(|u| profiles.get(u.index()), &state, &eligible)?;
    let path = args.out.join("ranking.csv");
    let file = fs::File::create(&path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    ranking.write_csv(&mut w, |u| user_names[u.index()].clone())?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    eprintln!("ranked {} users; wrote {}", ranking.len(), path.display());
    Ok(())
}

fn cmd_simulate(config: &AppConfig, args: &Args) -> Result<(), Error> {
    let mut cfg = config.require_experiment()?.clone();
    apply_overrides(&mut cfg, args);
    cfg.validate()?;
    let summary = run_experiment(&cfg, &args.out, args.strict)?;
    eprintln!(
        "trace: {} rows accepted, {} rejected; {} users profiled, {} excluded",
        summary.parse_report.accepted,
        summary.parse_report.rejected(),
        summary.profiled_users,
        summary.excluded_users
    );
    if summary.seed_clamped_runs > 0 {
        eprintln!(
            "warning: outbreak seeding clamped to the region population in {} run(s)",
            summary.seed_clamped_runs
        );
    }
    let mut report = String::new();
    for p in &summary.policies {
        report.push_str(&format!(
            "policy {:>6}: mean cumulative infections at day {} = {:.1} (sd {:.1}), mean quarantined = {:.1}\n",
            p.policy.to_string(),
            summary.horizon,
            p.mean_cum_infected_at_horizon,
            p.stddev_cum_infected_at_horizon,
            p.mean_quarantined_total
        ));
        if let Some(m) = p.median_delay_days {
            report.push_str(&format!(
                "               median inter-region delay = {m} day(s), {} censored run(s)\n",
                p.censored_delays.unwrap_or(0)
            ));
        }
    }
    for r in &summary.reductions {
        report.push_str(&format!(
            "reduction {} vs {}: mean {:.1}%\n",
            r.treated, r.baseline, r.mean_pct
        ));
    }
    print!("{report}");
    eprintln!("wrote {}", args.out.join("summary.txt").display());
    Ok(())
}

fn run() -> Result<(), Error> {
    let args = parse_args().map_err(Error::Config)?;
    let config_path = args
        .config
        .clone()
        .ok_or_else(|| Error::Config("missing --config".to_string()))?;
    let text = fs::read_to_string(&config_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let config = AppConfig::from_kv(&KvFile::parse(&text)?)?;
    match args.command.as_str() {
        "synth" => cmd_synth(&config, &args),
        "profile" => cmd_profile(&config, &args),
        "rank" => cmd_rank(&config, &args),
        "simulate" => cmd_simulate(&config, &args),
        _ => unreachable!("validated in parse_args"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e.category() {
                ErrorCategory::Usage => {
                    eprintln!("\n{USAGE}");
                    ExitCode::from(1)
                }
                ErrorCategory::Data => ExitCode::from(2),
                ErrorCategory::Runtime => ExitCode::from(3),
            }
        }
    }
}

//! `hotspot-forge`: batch front end for the verification pipeline.
//!
//! Exit status is 0 on success, 1 on an operational error and 2 when a
//! verification check fails (`report.json` is written first).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command as Cli};
use hotspot_core::par;
use hotspot_core::pipeline::{self, Command, RunConfig, CONFIG_KEYS};

const THREADS_ENV: &str = "HOTSPOT_FORGE_THREADS";

const SUBCOMMANDS: [(&str, Command, &str); 8] = [
    ("domain", Command::Domain, "Write the exact domain description (domain.json)"),
    ("mesh", Command::Mesh, "Mesh the domain and write its topology report (mesh.json)"),
    ("solve", Command::Solve, "Solve the Neumann eigenproblem (eigen.csv, mesh.vtk)"),
    ("analyze", Command::Analyze, "Solve and run every check for one epsilon (report.json)"),
    ("sweep", Command::Sweep, "Analyse each epsilon of the sweep (sweep.csv)"),
    ("rbm", Command::Rbm, "Estimate reflected Brownian motion hitting probabilities (rbm.csv)"),
    ("all", Command::All, "Run every stage and write the full report"),
    ("export", Command::Export, "Derive contour and nodal CSVs from a finished run"),
];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn config_args() -> Vec<Arg> {
    let mut args: Vec<Arg> = CONFIG_KEYS
        .iter()
        .map(|&key| {
            Arg::new(key)
                .long(flag_name(key))
                .value_name("VALUE")
                .global(true)
                .help(format!("Override configuration key `{key}`"))
        })
        .collect();
    args.push(
        Arg::new("epsilons")
            .long("epsilons")
            .value_name("LIST")
            .global(true)
            .help("Alias for --sweep.epsilons"),
    );
    args.push(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .global(true)
            .help("Flat key = value configuration file; flags take precedence"),
    );
    args
}

fn cli() -> Cli {
    let mut app = Cli::new("hotspot-forge")
        .about("Verification laboratory for the three-bridge hot-spots counterexample domain")
        .disable_version_flag(true)
        .arg(
            Arg::new("version")
                .short('V')
                .long("version")
                .action(ArgAction::SetTrue)
                .global(true)
                .help("Print version, configuration echo and the fixed constants"),
        )
        .args(config_args());
    for (name, _, about) in SUBCOMMANDS {
        app = app.subcommand(Cli::new(name).about(about));
    }
    app
}

fn build_config(m: &ArgMatches) -> hotspot_core::Result<(RunConfig, Option<usize>)> {
    let mut cfg = RunConfig::default();
    let mut threads = std::env::var(THREADS_ENV).ok();
    if let Some(path) = m.get_one::<String>("config") {
        let path = PathBuf::from(path);
        let text = std::fs::read_to_string(&path).map_err(|e| hotspot_core::Error::io(&path, e))?;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == "threads" {
                    threads = Some(v.trim().to_string());
                }
            }
        }
        cfg.apply_kv_text(&text)?;
    }
    for key in CONFIG_KEYS.iter().chain(["epsilons"].iter()) {
        if let Some(v) = m.get_one::<String>(key) {
            if *key == "threads" {
                threads = Some(v.clone());
            } else {
                cfg.set(key, v)?;
            }
        }
    }
    let threads = match threads {
        Some(t) => Some(
            t.trim()
                .parse()
                .map_err(|_| hotspot_core::Error::param(format!("cannot parse thread count {t:?}")))?,
        ),
        None => None,
    };
    Ok((cfg, threads))
}

fn version_report(cfg: &RunConfig) -> String {
    let mut out = format!("hotspot-forge {}\n\n[config]\n{}\n[constants]\n", env!("CARGO_PKG_VERSION"), cfg.echo());
    for (name, value) in pipeline::constants() {
        out.push_str(&format!("{name}: {value}\n"));
    }
    out
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cfg, threads) = match build_config(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if matches.get_flag("version") {
        print!("{}", version_report(&cfg));
        return ExitCode::SUCCESS;
    }
    let Some((name, _)) = matches.subcommand() else {
        eprintln!("error: a subcommand is required\n\n{}", cli().render_usage());
        return ExitCode::from(1);
    };
    let command = SUBCOMMANDS.iter().find(|(n, _, _)| *n == name).map(|(_, c, _)| *c).expect("registered subcommand");
    par::init_threads(threads);

    if command != Command::Export {
        if let Err(e) = std::fs::create_dir_all(&cfg.out_dir) {
            eprintln!("error: cannot create {}: {e}", cfg.out_dir.display());
            return ExitCode::from(1);
        }
    }
    let outcome = match pipeline::run(command, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for f in &outcome.files {
        println!("{}", f.display());
    }
    match outcome.report {
        Some(report) if !report.all_pass => {
            for c in report.failed() {
                eprintln!(
                    "check failed: {} (measured {:e}, threshold {:e})",
                    c.name, c.measured, c.threshold
                );
            }
            ExitCode::from(2)
        }
        _ => ExitCode::SUCCESS,
    }
}

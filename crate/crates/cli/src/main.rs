use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pfcontrol_cli::builtins;
use pfcontrol_cli::config::Config;
use pfcontrol_cli::output;
use pfcontrol_cli::scenario::{self, Failure};
use pfcontrol_cli::sweep::{self, Sweep};

#[derive(Parser)]
#[command(name = "pfctl", version, about = "Run persistence-filter control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        /// Path to a scenario file, or the name of a built-in scenario.
        scenario: String,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key:start..end:count` or `key:v1,v2,..`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// List built-in scenarios and plants.
    List,
}

fn load(scenario: &str) -> Result<(Config, PathBuf), Failure> {
    let path = Path::new(scenario);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        return Ok((Config::parse(&text)?, base));
    }
    match builtins::scenario(scenario) {
        Some(text) => Ok((Config::parse(text).expect("built-in scenarios parse"), PathBuf::from("."))),
        None => Err(Failure::Io(format!("`{scenario}` is neither a file nor a built-in scenario (see `pfctl list`)"))),
    }
}

fn run(args: Command) -> Result<(), Failure> {
    let Command::Run { scenario: name, out, dt, horizon, seed, sweep } = args else {
        print!("{}", builtins::listing());
        return Ok(());
    };
    let (mut cfg, base) = load(&name)?;
    if let Some(v) = dt {
        cfg.set("dt", &v.to_string());
    }
    if let Some(v) = horizon {
        cfg.set("horizon", &v.to_string());
    }
    if let Some(v) = seed {
        cfg.set("seed", &v.to_string());
    }
    if let Some(spec) = sweep {
        let sw = Sweep::parse(&spec)?;
        let outcomes = sweep::run(&cfg, &base, &out, &sw)?;
        let mut worst: Option<Failure> = None;
        for o in outcomes {
            match o.result {
                Ok(f) if f.is_empty() => println!("{} = {}: ok", sw.key, o.value),
                Ok(f) => {
                    println!("{} = {}: assertion failed: {}", sw.key, o.value, f.join("; "));
                    worst.get_or_insert(Failure::Assertion(f));
                }
                Err(e) => {
                    println!("{} = {}: {e}", sw.key, o.value);
                    if worst.as_ref().is_none_or(|w| w.exit_code() == 4) {
                        worst = Some(e);
                    }
                }
            }
        }
        println!("wrote {}", out.join("sweep.csv").display());
        return worst.map_or(Ok(()), Err);
    }
    let res = scenario::run(&cfg, &base)?;
    output::write_run(&out, &cfg, &res)?;
    print!("{}", output::summary_text(&res));
    println!("wrote {}", out.display());
    let failed = res.failed_checks();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(failed))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pfctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Parameter sweeps: one run per value, executed on scoped threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{parse_list, Config, ConfigError};
use crate::output;
use crate::scenario::{self, Failure};

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

impl Sweep {
    /// `key:start..end:count` (inclusive, evenly spaced) or `key:v1,v2,..`.
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        let bad = |msg: &str| ConfigError::new(None, format!("sweep `{spec}`: {msg}"));
        let (key, rest) = spec.split_once(':').ok_or_else(|| bad("expected `key:values`"))?;
        if key.is_empty() {
            return Err(bad("empty key"));
        }
        let values = if let Some((range, count)) = rest.split_once(':') {
            let (a, b) = range.split_once("..").ok_or_else(|| bad("expected `start..end`"))?;
            let a: f64 = a.trim().parse().map_err(|_| bad("start is not a number"))?;
            let b: f64 = b.trim().parse().map_err(|_| bad("end is not a number"))?;
            let n: usize = count.trim().parse().map_err(|_| bad("count is not an integer"))?;
            match n {
                0 => return Err(bad("count must be at least 1")),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            }
        } else {
            parse_list(rest).map_err(|e| bad(&e))?
        };
        if values.is_empty() {
            return Err(bad("no values"));
        }
        Ok(Self { key: key.to_string(), values })
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub value: f64,
    pub dir: PathBuf,
    pub result: Result<Vec<String>, Failure>,
}

/// Runs every point of the sweep in parallel and writes `sweep.csv`.
/// Each point's result holds its failed checks.
pub fn run(cfg: &Config, base: &Path, out: &Path, sweep: &Sweep) -> Result<Vec<SweepOutcome>, Failure> {
    let jobs: Vec<(f64, PathBuf, Config)> = sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = cfg.clone();
            c.set(&sweep.key, &v.to_string());
            (v, out.join(format!("sweep-{i:03}")), c)
        })
        .collect();
    let outcomes: Vec<SweepOutcome> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(value, dir, c)| {
                s.spawn(move || {
                    let result = scenario::run(&c, base).and_then(|res| {
                        output::write_run(&dir, &c, &res)?;
                        Ok(res.failed_checks())
                    });
                    SweepOutcome { value, dir, result }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut index = format!("index,{},status,detail\n", sweep.key);
    for (i, o) in outcomes.iter().enumerate() {
        let (status, detail) = match &o.result {
            Ok(f) if f.is_empty() => ("ok", String::new()),
            Ok(f) => ("assertion", f.join("; ")),
            Err(e) => ("error", e.to_string()),
        };
        let _ = writeln!(index, "{i},{},{status},\"{}\"", o.value, detail.replace('"', "'"));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.csv"), index)?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_list_forms() {
        let s = Sweep::parse("controller.slack:1..3:5").unwrap();
        assert_eq!(s.key, "controller.slack");
        assert_eq!(s.values, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(Sweep::parse("dt:0.01,0.005").unwrap().values, vec![0.01, 0.005]);
        assert!(Sweep::parse("dt").is_err());
        assert!(Sweep::parse("dt:1..2:0").is_err());
    }
}

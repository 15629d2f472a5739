use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::RunMetrics;
use crate::error::{Error, Result};

pub const MSE_REPEATS_HEADER: &str = "seed,strategy,round,mse,gain";
pub const QUERY_LOG_HEADER: &str =
    "seed,strategy,round,location_id,chainage,score,runner_up,train_size,forgetting_ratio";
pub const GAIN_HEADER: &str = "round";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub mse_table: PathBuf,
    pub gain_table: PathBuf,
    pub mse_repeats: PathBuf,
    pub query_log: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub timings: Option<PathBuf>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

/// Writes the report tables into `dir`, creating it if needed.
///
/// `mse_table.csv` holds seed-averaged MSE per round (columns are the
/// strategies), `gain_table.csv` the gains of those averages for rounds
/// 1.. . Numbers use the shortest round-trip formatting.
pub fn emit_report(metrics: &RunMetrics, dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir)?;
    let strategies = metrics.strategies();
    let header: String = std::iter::once("round".to_string())
        .chain(strategies.iter().map(|s| s.code().to_string()))
        .collect::<Vec<_>>()
        .join(",");

    let curves: Vec<Vec<f64>> = strategies.iter().map(|&s| metrics.mean_mse(s)).collect();
    let gains: Vec<Vec<f64>> = strategies
        .iter()
        .map(|&s| metrics.mean_gain(s))
        .collect::<Result<_>>()?;
    let rows = curves.iter().map(Vec::len).max().unwrap_or(0);

    let mut mse = format!("{header}\n");
    let mut gain = format!("{header}\n");
    for t in 0..rows {
        let _ = write!(mse, "{t}");
        for c in &curves {
            let _ = write!(mse, ",{}", opt(c.get(t).copied()));
        }
        mse.push('\n');
        if t >= 1 {
            let _ = write!(gain, "{t}");
            for g in &gains {
                let _ = write!(gain, ",{}", opt(g.get(t - 1).copied()));
            }
            gain.push('\n');
        }
    }

    let mut repeats = format!("{MSE_REPEATS_HEADER}\n");
    let mut log = format!("{QUERY_LOG_HEADER}\n");
    for r in &metrics.repeats {
        for s in &strategies {
            let _ = writeln!(repeats, "{},{s},0,{},", r.seed, r.mse0);
            let Some(run) = r.run(*s) else { continue };
            for q in &run.rounds {
                let _ = writeln!(repeats, "{},{s},{},{},{}", r.seed, q.round, q.mse, q.gain);
                let _ = writeln!(
                    log,
                    "{},{s},{},{},{},{},{},{},{}",
                    r.seed,
                    q.round,
                    q.location_id,
                    q.chainage,
                    opt(q.score),
                    opt(q.runner_up),
                    q.train_size,
                    q.forgetting_ratio
                );
            }
        }
    }

    let files = ReportFiles {
        mse_table: dir.join("mse_table.csv"),
        gain_table: dir.join("gain_table.csv"),
        mse_repeats: dir.join("mse_repeats.csv"),
        query_log: dir.join("query_log.csv"),
        config: dir.join("config.toml"),
        metrics: dir.join("metrics.json"),
        timings: (!metrics.timings.is_empty()).then(|| dir.join("timings.csv")),
    };
    write(&files.mse_table, &mse)?;
    write(&files.gain_table, &gain)?;
    write(&files.mse_repeats, &repeats)?;
    write(&files.query_log, &log)?;
    write(&files.config, &metrics.config.to_toml()?)?;
    write(&files.metrics, &(serde_json::to_string_pretty(metrics)? + "\n"))?;
    if let Some(path) = &files.timings {
        let mut t = String::from("seed,strategy,round,stage,seconds\n");
        for x in &metrics.timings {
            let k = x.strategy.map(|s| s.code()).unwrap_or("");
            let _ = writeln!(t, "{},{k},{},{},{}", x.seed, x.round, x.stage, x.seconds);
        }
        write(path, &t)?;
    }
    Ok(files)
}

/// Loads a `metrics.json` written by [`emit_report`].
pub fn read_metrics(path: &Path) -> Result<RunMetrics> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

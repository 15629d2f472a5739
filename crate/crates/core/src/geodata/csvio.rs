//! Versioned CSV and JSON files for records, labels and profiles.
//!
//! Every CSV starts with a `# aligan-<kind> v1` line followed by a header.
//! Floats are written in shortest round-trip decimal form, so a save/load
//! cycle reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    check_fractions, DrillLocation, FreshnessTag, GeologyProfile, LabelTable, LabeledSample, LocationRole,
    OperationalRecord, Oracle, Survey,
};
use crate::error::{Error, Result};

pub const RECORDS_TAG: &str = "# aligan-records v1";
pub const LABELS_TAG: &str = "# aligan-labels v1";
pub const LOCATIONS_TAG: &str = "# aligan-locations v1";
const PROFILE_FORMAT: &str = "aligan-profile";

/// One row of `labels.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub chainage: f64,
    pub location_id: u32,
    pub round: u32,
    pub tau: FreshnessTag,
    pub label: Vec<f64>,
}

impl From<&LabeledSample> for LabelRow {
    fn from(s: &LabeledSample) -> Self {
        Self {
            chainage: s.chainage,
            location_id: s.location_id,
            round: s.round,
            tau: s.tau,
            label: s.label.clone(),
        }
    }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(fs::File::create(path)?)
}

fn write_table(path: &Path, tag: &str, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut file = std::io::BufWriter::new(create(path)?);
    writeln!(file, "{tag}")?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

type NumberedRows = Vec<(u64, Vec<String>)>;

/// Reads a tagged table; rows come back with their 1-based file line.
fn read_table(path: &Path, tag: &str) -> Result<(Vec<String>, NumberedRows)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Context {
        context: format!("reading {}", path.display()),
        source: Box::new(e.into()),
    })?;
    let schema = |msg: String| Error::Schema {
        path: path.to_path_buf(),
        msg,
    };
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim_end() != tag {
        return Err(schema(format!(
            "expected first line `{tag}`, found `{}`",
            first.trim_end()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(rest.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() + 1),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        if rec.len() != header.len() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, column: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse `{s}` in column `{column}`"),
    })
}

fn parse_f64(path: &Path, line: u64, column: &str, s: &str) -> Result<f64> {
    let v: f64 = parse(path, line, column, s)?;
    if !v.is_finite() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line,
            msg: format!("non-finite value in column `{column}`"),
        });
    }
    Ok(v)
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

fn expect_header(path: &Path, got: &[String], fixed: &[&str], prefix: &str) -> Result<usize> {
    let n = got.len().saturating_sub(fixed.len());
    let mut want: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    want.extend(numbered(prefix, n));
    if n == 0 || got != want.as_slice() {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            msg: format!(
                "header must be {}{prefix}1..{prefix}N, found {}",
                fixed.join(","),
                got.join(",")
            ),
        });
    }
    Ok(n)
}

pub fn write_records(path: &Path, records: &[OperationalRecord]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.features.len());
    let mut header = vec!["chainage".to_string()];
    header.extend(numbered("f", d));
    write_table(
        path,
        RECORDS_TAG,
        header,
        records.iter().map(|r| {
            std::iter::once(r.chainage)
                .chain(r.features.iter().copied())
                .map(|v| v.to_string())
                .collect()
        }),
    )
}

/// Reads records, which must be strictly increasing in chainage.
pub fn read_records(path: &Path) -> Result<Vec<OperationalRecord>> {
    let (header, rows) = read_table(path, RECORDS_TAG)?;
    let d = expect_header(path, &header, &["chainage"], "f")?;
    let mut out: Vec<OperationalRecord> = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let chainage = parse_f64(path, line, "chainage", &row[0])?;
        let features = (0..d)
            .map(|j| parse_f64(path, line, &header[j + 1], &row[j + 1]))
            .collect::<Result<Vec<_>>>()?;
        if out.last().is_some_and(|p| p.chainage >= chainage) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line,
                msg: "chainage must be strictly increasing".into(),
            });
        }
        out.push(OperationalRecord { chainage, features });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("records.csv"));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.label.len());
    let mut header: Vec<String> = ["chainage", "location_id", "round", "tau"].map(String::from).to_vec();
    header.extend(numbered("y", d));
    write_table(
        path,
        LABELS_TAG,
        header,
        rows.iter().map(|r| {
            let mut v = vec![
                r.chainage.to_string(),
                r.location_id.to_string(),
                r.round.to_string(),
                r.tau.flag().to_string(),
            ];
            v.extend(r.label.iter().map(|x| x.to_string()));
            v
        }),
    )
}

/// Reads labels; every label vector must sum to 1 within 1e-6.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let (header, rows) = read_table(path, LABELS_TAG)?;
    let d = expect_header(path, &header, &["chainage", "location_id", "round", "tau"], "y")?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let chainage = parse_f64(path, line, "chainage", &row[0])?;
        let location_id = parse(path, line, "location_id", &row[1])?;
        let round = parse(path, line, "round", &row[2])?;
        let flag: u8 = parse(path, line, "tau", &row[3])?;
        let tau = FreshnessTag::from_flag(flag).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg: format!("tau must be 0 or 1, found {flag}"),
        })?;
        let label = (0..d)
            .map(|j| parse_f64(path, line, &header[j + 4], &row[j + 4]))
            .collect::<Result<Vec<_>>>()?;
        check_fractions(&label, 1e-6).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        out.push(LabelRow {
            chainage,
            location_id,
            round,
            tau,
            label,
        });
    }
    Ok(out)
}

pub fn write_locations(path: &Path, locations: &[DrillLocation]) -> Result<()> {
    write_table(
        path,
        LOCATIONS_TAG,
        ["id", "chainage", "role"].map(String::from).to_vec(),
        locations.iter().map(|l| {
            let role = match l.role {
                LocationRole::Train => "train",
                LocationRole::Pool => "pool",
            };
            vec![l.id.to_string(), l.chainage.to_string(), role.to_string()]
        }),
    )
}

pub fn read_locations(path: &Path) -> Result<Vec<DrillLocation>> {
    let (header, rows) = read_table(path, LOCATIONS_TAG)?;
    if header != ["id", "chainage", "role"] {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            msg: format!("header must be id,chainage,role, found {}", header.join(",")),
        });
    }
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let role = match row[2].as_str() {
            "train" => LocationRole::Train,
            "pool" => LocationRole::Pool,
            other => {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("role must be train or pool, found `{other}`"),
                })
            }
        };
        out.push(DrillLocation {
            id: parse(path, line, "id", &row[0])?,
            chainage: parse_f64(path, line, "chainage", &row[1])?,
            role,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    format: String,
    version: u32,
    profile: GeologyProfile,
}

pub fn write_profile(path: &Path, profile: &GeologyProfile) -> Result<()> {
    let file = ProfileFile {
        format: PROFILE_FORMAT.into(),
        version: 1,
        profile: profile.clone(),
    };
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, &file)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_profile(path: &Path) -> Result<GeologyProfile> {
    let text = fs::read_to_string(path)?;
    let file: ProfileFile = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if file.format != PROFILE_FORMAT || file.version != 1 {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            msg: format!("unsupported profile {} v{}", file.format, file.version),
        });
    }
    Ok(file.profile)
}

/// Paths written by [`save_survey`].
#[derive(Debug, Clone)]
pub struct SurveyFiles {
    pub records: PathBuf,
    pub labels: PathBuf,
    pub locations: PathBuf,
    pub profile: Option<PathBuf>,
}

/// Writes records, the labeled windows of every drill location, the
/// location table and, for synthetic surveys, the profile.
pub fn save_survey(dir: &Path, survey: &Survey) -> Result<SurveyFiles> {
    fs::create_dir_all(dir)?;
    let files = SurveyFiles {
        records: dir.join("records.csv"),
        labels: dir.join("labels.csv"),
        locations: dir.join("locations.csv"),
        profile: matches!(survey.oracle, Oracle::Synthetic(_)).then(|| dir.join("profile.json")),
    };
    write_records(&files.records, &survey.records)?;
    let mut rows = Vec::new();
    for loc in &survey.locations {
        rows.extend(
            survey
                .label_location(loc.id, 0, FreshnessTag::Original)?
                .iter()
                .map(LabelRow::from),
        );
    }
    write_labels(&files.labels, &rows)?;
    write_locations(&files.locations, &survey.locations)?;
    if let (Oracle::Synthetic(p), Some(path)) = (&survey.oracle, &files.profile) {
        write_profile(path, p)?;
    }
    Ok(files)
}

/// Builds a survey from files. Each location sits at the middle row of its
/// labels. Roles come from `locations` when given, otherwise every id in
/// `pool_ids` becomes a pool location.
pub fn load_survey(
    records: &Path,
    labels: &Path,
    locations: Option<&Path>,
    pool_ids: &[u32],
    window: f64,
) -> Result<Survey> {
    let records = read_records(records)?;
    let rows = read_labels(labels)?;
    let d_y = rows.first().map_or(0, |r| r.label.len());
    if rows.iter().any(|r| r.label.len() != d_y) {
        return Err(Error::Data("labels have inconsistent widths".into()));
    }
    let mut by_loc: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_loc.entry(r.location_id).or_default().push(r.chainage);
    }
    let mut locs: Vec<DrillLocation> = match locations {
        Some(path) => read_locations(path)?,
        None => {
            for id in pool_ids {
                if !by_loc.contains_key(id) {
                    return Err(Error::Data(format!("pool location {id} has no labels")));
                }
            }
            by_loc
                .iter()
                .map(|(&id, cs)| {
                    let mut cs = cs.clone();
                    cs.sort_by(f64::total_cmp);
                    DrillLocation {
                        id,
                        chainage: cs[cs.len() / 2],
                        role: if pool_ids.contains(&id) {
                            LocationRole::Pool
                        } else {
                            LocationRole::Train
                        },
                    }
                })
                .collect()
        }
    };
    locs.sort_by(|a, b| a.chainage.total_cmp(&b.chainage));
    let table = LabelTable::new(rows.into_iter().map(|r| (r.chainage, r.label)).collect())?;
    Ok(Survey {
        records,
        locations: locs,
        oracle: Oracle::Table(table),
        window,
    })
}

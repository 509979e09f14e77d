//! Line-delimited trajectory files and diff-based densification of code
//! histories.
//!
//! A trace file holds one JSON object per line. The first line is the header
//! (`"record": "header"`) with the schema version, the config summary and the
//! outcome; every following line is one step (`"record": "step"`). Fields
//! added by a newer minor schema version are kept on load and written back
//! on save.

mod breakdown;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::session::{ConfigSummary, TraceStep, Trajectory, SCHEMA_VERSION};

pub use breakdown::{breakdown_trace, normalize_states, BlankLineStyle, BreakdownConfig, RECOMMENDED_LEVELS};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema version {found} is not readable by this build (supports {supported}.x)")]
    Schema {
        line: usize,
        found: String,
        supported: String,
    },
    #[error("trace is empty")]
    Empty,
    #[error("header announces {expected} steps but {found} were read; the file looks truncated")]
    StepCount { expected: usize, found: usize },
    #[error("invalid breakdown config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: String,
    config: ConfigSummary,
    step_count: usize,
    solved: bool,
    solve_step: Option<u32>,
    #[serde(default)]
    truncated: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
enum Record {
    Header(Header),
    Step(TraceStep),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum RecordRef<'a> {
    Header(&'a Header),
    Step(&'a TraceStep),
}

fn major(version: &str) -> &str {
    version.split('.').next().unwrap_or(version)
}

/// Write a trajectory as JSONL.
pub fn write_trace<W: Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    let header = Header {
        schema_version: traj.schema_version.clone(),
        config: traj.config.clone(),
        step_count: traj.steps.len(),
        solved: traj.solved,
        solve_step: traj.solve_step,
        truncated: traj.truncated.clone(),
        extra: traj.extra.clone(),
    };
    serde_json::to_writer(&mut w, &RecordRef::Header(&header))?;
    w.write_all(b"\n")?;
    for step in &traj.steps {
        serde_json::to_writer(&mut w, &RecordRef::Step(step))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Read a JSONL trajectory. Blank lines are ignored.
pub fn read_trace<R: BufRead>(r: R) -> Result<Trajectory, TraceError> {
    let mut header: Option<Header> = None;
    let mut steps = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TraceError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            // Check the version before the full parse so a newer major
            // version reports that instead of a field error.
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if value.get("record").and_then(|v| v.as_str()) != Some("header") {
                return Err(TraceError::Parse {
                    line: line_no,
                    message: "first record must be the header".into(),
                });
            }
            let found = value
                .get("schema_version")
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_string();
            if major(&found) != major(SCHEMA_VERSION) {
                return Err(TraceError::Schema {
                    line: line_no,
                    found,
                    supported: major(SCHEMA_VERSION).to_string(),
                });
            }
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match (rec, header.is_some()) {
            (Record::Header(h), false) => header = Some(h),
            (Record::Header(_), true) => {
                return Err(TraceError::Parse {
                    line: line_no,
                    message: "second header record".into(),
                })
            }
            (Record::Step(s), _) => steps.push(s),
        }
    }
    let h = header.ok_or(TraceError::Empty)?;
    if h.step_count != steps.len() {
        return Err(TraceError::StepCount {
            expected: h.step_count,
            found: steps.len(),
        });
    }
    Ok(Trajectory {
        schema_version: h.schema_version,
        config: h.config,
        steps,
        solved: h.solved,
        solve_step: h.solve_step,
        truncated: h.truncated,
        extra: h.extra,
    })
}

pub fn save_trace(traj: &Trajectory, path: &Path) -> Result<(), TraceError> {
    let io = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let f = File::create(path).map_err(io)?;
    write_trace(traj, BufWriter::new(f)).map_err(io)
}

pub fn load_trace(path: &Path) -> Result<Trajectory, TraceError> {
    let f = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trace(BufReader::new(f))
}

/// Trace files (`*.jsonl`) directly inside `dir`, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>, TraceError> {
    let entries = std::fs::read_dir(dir).map_err(|source| TraceError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    out.sort();
    Ok(out)
}

//! Line-delimited persistence for trajectories, belief groups, and reward
//! tables, plus the combined training-batch export.
//!
//! Every line is a standalone JSON object carrying `schema_version`, so a
//! file can be validated line by line and partial corruption is reported
//! with a line number. Raw model texts are stored verbatim — grading
//! regenerates beliefs from stored contexts, so storage must be lossless.

use crate::grading::BeliefGroup;
use crate::reward::{AdvantageGroup, RewardRecord};
use crate::rollout::Trajectory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Version stamped onto every persisted line.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: corrupt record: {detail}")]
    CorruptLine { path: PathBuf, line: usize, detail: String },
    #[error("{path}:{line}: schema version {found} is not supported (expected {expected})")]
    VersionMismatch { path: PathBuf, line: usize, found: u64, expected: u32 },
    #[error("training batch is not referentially complete: {0}")]
    Integrity(String),
    #[error("{path}: expected a header line, found {found}")]
    MissingHeader { path: PathBuf, found: String },
}

// ---------------------------------------------------------------------------
// Generic line-delimited records
// ---------------------------------------------------------------------------

fn open_error<'a>(
    action: &'static str,
    path: &'a Path,
) -> impl FnOnce(io::Error) -> StoreError + 'a {
    move |source| StoreError::Io { action, path: path.to_path_buf(), source }
}

fn write_lines<T: Serialize>(records: &[T], path: &Path) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(open_error("create", path))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let mut value = serde_json::to_value(record).expect("record serializes");
        value
            .as_object_mut()
            .expect("records serialize as objects")
            .insert("schema_version".to_string(), SCHEMA_VERSION.into());
        serde_json::to_writer(&mut writer, &value)
            .map_err(|e| open_error("write", path)(e.into()))?;
        writer.write_all(b"\n").map_err(open_error("write", path))?;
    }
    writer.flush().map_err(open_error("write", path))
}

fn parse_line<T: DeserializeOwned>(
    text: &str,
    path: &Path,
    line: usize,
) -> Result<T, StoreError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| StoreError::CorruptLine {
            path: path.to_path_buf(),
            line,
            detail: e.to_string(),
        })?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| StoreError::CorruptLine {
            path: path.to_path_buf(),
            line,
            detail: "missing schema_version".to_string(),
        })?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(StoreError::VersionMismatch {
            path: path.to_path_buf(),
            line,
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    value.as_object_mut().unwrap().remove("schema_version");
    serde_json::from_value(value).map_err(|e| StoreError::CorruptLine {
        path: path.to_path_buf(),
        line,
        detail: e.to_string(),
    })
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(open_error("open", path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(open_error("read", path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(&line, path, i + 1)?);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Typed save/load
// ---------------------------------------------------------------------------

pub fn save_trajectories(trajectories: &[Trajectory], path: &Path) -> Result<(), StoreError> {
    write_lines(trajectories, path)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, StoreError> {
    read_lines(path)
}

pub fn save_belief_groups(groups: &[BeliefGroup], path: &Path) -> Result<(), StoreError> {
    write_lines(groups, path)
}

pub fn load_belief_groups(path: &Path) -> Result<Vec<BeliefGroup>, StoreError> {
    read_lines(path)
}

pub fn save_reward_records(records: &[RewardRecord], path: &Path) -> Result<(), StoreError> {
    write_lines(records, path)
}

pub fn load_reward_records(path: &Path) -> Result<Vec<RewardRecord>, StoreError> {
    read_lines(path)
}

// ---------------------------------------------------------------------------
// Training-batch export
// ---------------------------------------------------------------------------

/// One line of the combined export consumed by an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExportLine {
    Header { trajectories: usize, advantage_groups: usize, belief_groups: usize },
    Trajectory(Trajectory),
    AdvantageGroup(AdvantageGroup),
    BeliefGroup(BeliefGroup),
}

/// The contents of a training-batch file, parsed and integrity-checked.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingBatch {
    pub trajectories: Vec<Trajectory>,
    pub advantage_groups: Vec<AdvantageGroup>,
    pub belief_groups: Vec<BeliefGroup>,
}

fn check_integrity(
    trajectories: &[Trajectory],
    advantage_groups: &[AdvantageGroup],
    belief_groups: &[BeliefGroup],
) -> Result<(), StoreError> {
    let ids: BTreeSet<&str> =
        trajectories.iter().map(|t| t.trajectory_id.as_str()).collect();
    for group in advantage_groups {
        for member in &group.members {
            if !ids.contains(member.trajectory_id.as_str()) {
                return Err(StoreError::Integrity(format!(
                    "advantage group '{}' references unknown trajectory '{}'",
                    group.task_key, member.trajectory_id
                )));
            }
        }
    }
    for group in belief_groups {
        if !ids.contains(group.trajectory_id.as_str()) {
            return Err(StoreError::Integrity(format!(
                "belief group at step {} references unknown trajectory '{}'",
                group.step_index, group.trajectory_id
            )));
        }
    }
    Ok(())
}

/// Writes one file interleaving everything a trainer needs: a header line
/// with counts, then trajectories, advantage groups, and belief groups.
/// Dangling references between the three collections are an error.
pub fn export_training_batch(
    trajectories: &[Trajectory],
    advantage_groups: &[AdvantageGroup],
    belief_groups: &[BeliefGroup],
    path: &Path,
) -> Result<(), StoreError> {
    check_integrity(trajectories, advantage_groups, belief_groups)?;
    let mut lines = Vec::with_capacity(
        1 + trajectories.len() + advantage_groups.len() + belief_groups.len(),
    );
    lines.push(ExportLine::Header {
        trajectories: trajectories.len(),
        advantage_groups: advantage_groups.len(),
        belief_groups: belief_groups.len(),
    });
    lines.extend(trajectories.iter().cloned().map(ExportLine::Trajectory));
    lines.extend(advantage_groups.iter().cloned().map(ExportLine::AdvantageGroup));
    lines.extend(belief_groups.iter().cloned().map(ExportLine::BeliefGroup));
    write_lines(&lines, path)
}

/// Reads a training batch back, validating the header counts and the
/// referential integrity of the contents.
pub fn load_training_batch(path: &Path) -> Result<TrainingBatch, StoreError> {
    let lines: Vec<ExportLine> = read_lines(path)?;
    let mut iter = lines.into_iter();
    let (t_count, a_count, b_count) = match iter.next() {
        Some(ExportLine::Header { trajectories, advantage_groups, belief_groups }) => {
            (trajectories, advantage_groups, belief_groups)
        }
        other => {
            return Err(StoreError::MissingHeader {
                path: path.to_path_buf(),
                found: other.map_or_else(|| "an empty file".to_string(), |l| {
                    format!("{:?}", std::mem::discriminant(&l))
                }),
            })
        }
    };
    let mut batch = TrainingBatch::default();
    for line in iter {
        match line {
            ExportLine::Header { .. } => {
                return Err(StoreError::Integrity("duplicate header line".to_string()))
            }
            ExportLine::Trajectory(t) => batch.trajectories.push(t),
            ExportLine::AdvantageGroup(g) => batch.advantage_groups.push(g),
            ExportLine::BeliefGroup(g) => batch.belief_groups.push(g),
        }
    }
    if batch.trajectories.len() != t_count
        || batch.advantage_groups.len() != a_count
        || batch.belief_groups.len() != b_count
    {
        return Err(StoreError::Integrity(format!(
            "header promises {t_count}/{a_count}/{b_count} records, file holds {}/{}/{}",
            batch.trajectories.len(),
            batch.advantage_groups.len(),
            batch.belief_groups.len()
        )));
    }
    check_integrity(&batch.trajectories, &batch.advantage_groups, &batch.belief_groups)?;
    Ok(batch)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

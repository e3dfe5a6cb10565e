//! Telemetry ingestion and preprocessing.
//!
//! The on-disk format is a 36-column CSV per trajectory:
//! `t,pos_1..pos_7,vel_1..vel_7,tau_1..tau_7,cur_1..cur_7,temp_1..temp_7`.
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write-then-read cycle reproduces every value bit for bit.
//!
//! Inputs and targets are z-scored per channel with population statistics;
//! the inverse transform `x = x_norm * sigma + mu` reconstructs temperatures
//! in degrees C after prediction.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::plant::{TemperatureTrace, TorqueTrace};
use crate::JOINT_COUNT;

/// Channels below this spread are treated as constant and their sigma is
/// clamped, so normalization maps them to zero instead of dividing by zero.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// One timestamped sample of the full joint state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointStateRecord {
    /// Seconds.
    pub timestamp: f64,
    /// Joint angles, rad.
    pub position: [f64; JOINT_COUNT],
    /// Joint rates, rad/s.
    pub velocity: [f64; JOINT_COUNT],
    /// Joint torques, N*m.
    pub torque: [f64; JOINT_COUNT],
    /// Motor currents, A.
    pub current: [f64; JOINT_COUNT],
    /// Motor temperatures, degrees C.
    pub temperature: [f64; JOINT_COUNT],
}

/// Input feature groups to feed the network. Column order is always
/// position, velocity, torque, current, each group in joint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub position: bool,
    pub velocity: bool,
    pub torque: bool,
    pub current: bool,
}

impl Default for FeatureSelection {
    /// Torque-only, the configuration that predicted best.
    fn default() -> Self {
        FeatureSelection { position: false, velocity: false, torque: true, current: false }
    }
}

impl FeatureSelection {
    pub fn all() -> Self {
        FeatureSelection { position: true, velocity: true, torque: true, current: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position || self.velocity || self.torque || self.current) {
            return Err(Error::config("feature selection must include at least one group"));
        }
        Ok(())
    }

    /// Input width: 7 columns per selected group.
    pub fn width(&self) -> usize {
        [self.position, self.velocity, self.torque, self.current]
            .iter()
            .filter(|&&on| on)
            .count()
            * JOINT_COUNT
    }

    /// Parses a comma-separated group list such as `"torque,current"`.
    pub fn parse_groups(spec: &str) -> Result<Self> {
        let mut sel =
            FeatureSelection { position: false, velocity: false, torque: false, current: false };
        for group in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match group {
                "position" => sel.position = true,
                "velocity" => sel.velocity = true,
                "torque" => sel.torque = true,
                "current" => sel.current = true,
                other => {
                    return Err(Error::config(format!("unknown feature group '{other}'")));
                }
            }
        }
        sel.validate()?;
        Ok(sel)
    }
}

impl std::fmt::Display for FeatureSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut groups = Vec::new();
        if self.position {
            groups.push("position");
        }
        if self.velocity {
            groups.push("velocity");
        }
        if self.torque {
            groups.push("torque");
        }
        if self.current {
            groups.push("current");
        }
        write!(f, "{}", groups.join(","))
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity transform of the given width (mu = 0, sigma = 1). Used when
    /// normalization is switched off so that the reconstruction step is a
    /// no-op instead of a special case.
    pub fn identity(width: usize) -> Self {
        NormStats { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::config(format!(
                "stats arrays disagree: {} means vs {} stds",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.mean.len() != cols {
            return Err(Error::config(format!(
                "stats cover {} channels but matrix has {}",
                self.mean.len(),
                cols
            )));
        }
        Ok(())
    }
}

/// Per-column population statistics of a time x feature matrix.
/// Constant columns get [`SIGMA_FLOOR`] instead of zero sigma.
pub fn compute_norm_stats(matrix: &Mat) -> Result<NormStats> {
    if matrix.rows() == 0 || matrix.cols() == 0 {
        return Err(Error::config("cannot compute statistics of an empty matrix"));
    }
    compute_norm_stats_pooled(std::slice::from_ref(matrix))
}

/// Statistics over the concatenated rows of several matrices (used to pool
/// all seen trajectories before training).
pub fn compute_norm_stats_pooled(matrices: &[Mat]) -> Result<NormStats> {
    let cols = matrices.first().map_or(0, Mat::cols);
    let total_rows: usize = matrices.iter().map(Mat::rows).sum();
    if cols == 0 || total_rows == 0 {
        return Err(Error::config("cannot compute statistics of an empty matrix"));
    }
    for m in matrices {
        if m.cols() != cols {
            return Err(Error::config("matrices disagree on channel count"));
        }
    }
    let n = total_rows as f64;
    let mut mean = vec![0.0; cols];
    for m in matrices {
        for row in m.rows_iter() {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut var = vec![0.0; cols];
    for m in matrices {
        for row in m.rows_iter() {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(SIGMA_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

/// Maps every element to `(x - mu) / sigma`.
pub fn normalize(matrix: &Mat, stats: &NormStats) -> Result<Mat> {
    stats.check_width(matrix.cols())?;
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for ((v, mu), sigma) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - mu) / sigma;
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`]: maps every element to `x * sigma + mu`.
pub fn denormalize(matrix: &Mat, stats: &NormStats) -> Result<Mat> {
    stats.check_width(matrix.cols())?;
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for ((v, mu), sigma) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = *v * sigma + mu;
        }
    }
    Ok(out)
}

/// Normalization state of a trained model: which features were selected and
/// the statistics for both sides of the mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub selection: FeatureSelection,
    /// Statistics of the selected input channels.
    pub input: NormStats,
    /// Statistics of the 7 target temperature channels.
    pub target: NormStats,
}

impl Normalization {
    pub fn identity(selection: FeatureSelection) -> Self {
        Normalization {
            selection,
            input: NormStats::identity(selection.width()),
            target: NormStats::identity(JOINT_COUNT),
        }
    }
}

/// On-disk form of [`Normalization`]; statistics are per channel, not pooled.
#[derive(Debug, Serialize, Deserialize)]
struct StatsFile {
    format: String,
    #[serde(flatten)]
    norm: Normalization,
}

const STATS_FORMAT: &str = "jointherm-stats-v1";

pub fn save_normalization(norm: &Normalization, path: &Path) -> Result<()> {
    let file = StatsFile { format: STATS_FORMAT.to_string(), norm: norm.clone() };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_normalization(path: &Path) -> Result<Normalization> {
    let text = std::fs::read_to_string(path)?;
    let file: StatsFile = serde_json::from_str(&text)?;
    if file.format != STATS_FORMAT {
        return Err(Error::data(format!(
            "unsupported stats format '{}', expected '{STATS_FORMAT}'",
            file.format
        )));
    }
    Ok(file.norm)
}

/// One trajectory after feature selection: aligned input and target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    /// time x feature matrix (raw units).
    pub inputs: Mat,
    /// time x 7 temperature matrix, degrees C.
    pub targets: Mat,
}

/// Partition label for generalization bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionTag {
    Seen,
    Unseen,
}

impl std::fmt::Display for PartitionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionTag::Seen => write!(f, "seen"),
            PartitionTag::Unseen => write!(f, "unseen"),
        }
    }
}

/// A set of sequences belonging to one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Sequence>,
    pub tag: PartitionTag,
}

impl SequenceDataset {
    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.inputs.cols())
    }
}

// ---------------------------------------------------------------------------
// CSV schema
// ---------------------------------------------------------------------------

const GROUP_PREFIXES: [&str; 5] = ["pos", "vel", "tau", "cur", "temp"];

fn csv_header() -> String {
    let mut h = String::from("t");
    for prefix in GROUP_PREFIXES {
        for j in 1..=JOINT_COUNT {
            let _ = write!(h, ",{prefix}_{j}");
        }
    }
    h
}

/// Reads one trajectory file. Rows must match the 36-column schema and
/// timestamps must strictly increase.
pub fn read_records(path: &Path) -> Result<Vec<JointStateRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_records(&text)
}

fn parse_records(text: &str) -> Result<Vec<JointStateRecord>> {
    let expected_header = csv_header();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == expected_header => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header '{}'", header.trim_end()),
            });
        }
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    }

    let width = 1 + 5 * JOINT_COUNT;
    let mut records = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {width} columns, found {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 1 + 5 * JOINT_COUNT];
        for (i, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("column {} is not a number: '{field}'", i + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("column {} is not finite: '{field}'", i + 1),
                });
            }
            values[i] = v;
        }
        let mut rec = JointStateRecord {
            timestamp: values[0],
            position: [0.0; JOINT_COUNT],
            velocity: [0.0; JOINT_COUNT],
            torque: [0.0; JOINT_COUNT],
            current: [0.0; JOINT_COUNT],
            temperature: [0.0; JOINT_COUNT],
        };
        for j in 0..JOINT_COUNT {
            rec.position[j] = values[1 + j];
            rec.velocity[j] = values[1 + JOINT_COUNT + j];
            rec.torque[j] = values[1 + 2 * JOINT_COUNT + j];
            rec.current[j] = values[1 + 3 * JOINT_COUNT + j];
            rec.temperature[j] = values[1 + 4 * JOINT_COUNT + j];
        }
        if rec.timestamp <= prev_t {
            return Err(Error::data(format!(
                "timestamps must strictly increase ({} after {} at line {line_no})",
                rec.timestamp, prev_t
            )));
        }
        prev_t = rec.timestamp;
        records.push(rec);
    }
    Ok(records)
}

/// Writes records in the exact schema [`read_records`] expects.
pub fn write_records(records: &[JointStateRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_records(records))?;
    Ok(())
}

fn format_records(records: &[JointStateRecord]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.timestamp);
        for group in [&r.position, &r.velocity, &r.torque, &r.current, &r.temperature] {
            for v in group {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

/// Stacks the selected channel groups into a time x feature matrix.
/// Group order is position, velocity, torque, current; joint order within.
pub fn select_features(records: &[JointStateRecord], selection: &FeatureSelection) -> Result<Mat> {
    selection.validate()?;
    let width = selection.width();
    let mut out = Mat::zeros(records.len(), width);
    for (i, rec) in records.iter().enumerate() {
        let row = out.row_mut(i);
        let mut c = 0;
        for (on, group) in [
            (selection.position, &rec.position),
            (selection.velocity, &rec.velocity),
            (selection.torque, &rec.torque),
            (selection.current, &rec.current),
        ] {
            if on {
                row[c..c + JOINT_COUNT].copy_from_slice(group);
                c += JOINT_COUNT;
            }
        }
    }
    Ok(out)
}

/// The 7 temperature channels as a time x 7 matrix.
pub fn target_matrix(records: &[JointStateRecord]) -> Mat {
    let mut out = Mat::zeros(records.len(), JOINT_COUNT);
    for (i, rec) in records.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&rec.temperature);
    }
    out
}

/// Cuts aligned overlapping windows out of one trajectory.
/// `window_len` equal to the full length reproduces the trajectory.
pub fn window_sequences(
    inputs: &Mat,
    targets: &Mat,
    window_len: usize,
    stride: usize,
) -> Result<Vec<(Mat, Mat)>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::config("window length and stride must be at least 1"));
    }
    if inputs.rows() != targets.rows() {
        return Err(Error::config(format!(
            "inputs have {} rows but targets {}",
            inputs.rows(),
            targets.rows()
        )));
    }
    if window_len > inputs.rows() {
        return Err(Error::config(format!(
            "window of {window_len} exceeds sequence length {}",
            inputs.rows()
        )));
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start + window_len <= inputs.rows() {
        let cut = |m: &Mat| {
            let rows: Vec<Vec<f64>> =
                (start..start + window_len).map(|r| m.row(r).to_vec()).collect();
            Mat::from_rows(&rows).expect("window rows are uniform")
        };
        windows.push((cut(inputs), cut(targets)));
        start += stride;
    }
    Ok(windows)
}

/// Splits trajectories into seen/unseen partitions at trajectory
/// granularity. Every id in `unseen_ids` must exist; the partitions are
/// disjoint and jointly exhaustive. An empty seen partition is legal (the
/// caller should warn).
pub fn split_seen_unseen(
    sequences: Vec<Sequence>,
    unseen_ids: &[String],
) -> Result<(SequenceDataset, SequenceDataset)> {
    {
        let mut ids: Vec<&str> = sequences.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("duplicate trajectory ids in dataset"));
        }
    }
    for id in unseen_ids {
        if !sequences.iter().any(|s| &s.id == id) {
            return Err(Error::config(format!("unknown trajectory id '{id}'")));
        }
    }
    let (unseen, seen): (Vec<Sequence>, Vec<Sequence>) =
        sequences.into_iter().partition(|s| unseen_ids.contains(&s.id));
    Ok((
        SequenceDataset { sequences: seen, tag: PartitionTag::Seen },
        SequenceDataset { sequences: unseen, tag: PartitionTag::Unseen },
    ))
}

/// Assembles full joint-state records from a simulated torque/temperature
/// pair. Currents follow torque through a motor constant; positions and
/// velocities are smooth seeded kinematic filler, since the synthetic plant
/// does not model them.
pub fn records_from_simulation(
    torques: &TorqueTrace,
    temps: &TemperatureTrace,
    aux_seed: u64,
) -> Result<Vec<JointStateRecord>> {
    if torques.len() != temps.len() || torques.joints() != JOINT_COUNT {
        return Err(Error::config(format!(
            "trace shapes disagree: {} x {} torques vs {} x {} temperatures",
            torques.len(),
            torques.joints(),
            temps.len(),
            temps.joints()
        )));
    }
    // Torque constant, N*m per A.
    const KT: f64 = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(aux_seed);
    let freqs: Vec<f64> = (0..JOINT_COUNT).map(|_| rng.random_range(0.005..0.05)).collect();
    let phases: Vec<f64> =
        (0..JOINT_COUNT).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let amps: Vec<f64> = (0..JOINT_COUNT).map(|_| rng.random_range(0.3..1.2)).collect();

    let dt = torques.dt;
    let mut position = [0.0f64; JOINT_COUNT];
    let mut records = Vec::with_capacity(torques.len());
    for (i, (tau, temp)) in torques.values.iter().zip(&temps.values).enumerate() {
        let t = i as f64 * dt;
        let mut rec = JointStateRecord {
            timestamp: t,
            position,
            velocity: [0.0; JOINT_COUNT],
            torque: [0.0; JOINT_COUNT],
            current: [0.0; JOINT_COUNT],
            temperature: [0.0; JOINT_COUNT],
        };
        for j in 0..JOINT_COUNT {
            let vel = amps[j] * (std::f64::consts::TAU * freqs[j] * t + phases[j]).sin();
            rec.velocity[j] = vel;
            rec.torque[j] = tau[j];
            rec.current[j] = tau[j] / KT;
            rec.temperature[j] = temp[j];
            position[j] += vel * dt;
        }
        records.push(rec);
    }
    Ok(records)
}

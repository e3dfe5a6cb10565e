//! Prediction quality metrics (per-joint RMSE and maximum absolute error)
//! and the prediction-vs-truth artifacts.
//!
//! Metrics are always computed on reconstructed temperatures in degrees C,
//! never on normalized values: scaling normalized metrics by sigma would
//! only agree when all joints share the same sigma.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{denormalize, normalize, Normalization, PartitionTag, SequenceDataset};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::network::{forward, Dropout, NetworkParams};
use crate::plot::{write_line_plot, Series};

/// Root mean squared error, degrees C.
pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::config(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            predictions.len(),
            truth.len()
        )));
    }
    let acc: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((acc / predictions.len() as f64).sqrt())
}

/// Largest absolute error, degrees C.
pub fn max_abs_error(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::config(format!(
            "max_abs_error needs equal non-empty lengths, got {} and {}",
            predictions.len(),
            truth.len()
        )));
    }
    Ok(predictions.iter().zip(truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max))
}

/// Metrics of one joint over one or more traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMetrics {
    /// 1-based joint index, matching the robot's motor numbering.
    pub joint: usize,
    pub rmse: f64,
    pub max_abs_error: f64,
    pub samples: usize,
}

/// Metrics of one evaluated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub joints: Vec<JointMetrics>,
}

/// Per-joint metrics for a whole partition, with per-sequence detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tag: PartitionTag,
    pub model_id: String,
    pub stats_id: String,
    /// Exactly one entry per joint, pooled across all sequences.
    pub aggregate: Vec<JointMetrics>,
    pub per_sequence: Vec<SequenceMetrics>,
}

impl EvaluationReport {
    /// Hard invariant from the metric definitions: the root mean square of
    /// the errors can never exceed their maximum magnitude.
    pub fn assert_metric_invariant(&self) -> Result<()> {
        for m in self.aggregate.iter().chain(self.per_sequence.iter().flat_map(|s| &s.joints)) {
            if m.rmse > m.max_abs_error + 1e-12 {
                return Err(Error::data(format!(
                    "joint {}: rmse {} exceeds max abs error {}",
                    m.joint, m.rmse, m.max_abs_error
                )));
            }
        }
        Ok(())
    }

    /// Table layout: one row per (motor, sequence) plus pooled `all` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("motor,sequence,rmse_degc,maxae_degc\n");
        for seq in &self.per_sequence {
            for m in &seq.joints {
                let _ = writeln!(out, "{},{},{},{}", m.joint, seq.id, m.rmse, m.max_abs_error);
            }
        }
        for m in &self.aggregate {
            let _ = writeln!(out, "{},all,{},{}", m.joint, m.rmse, m.max_abs_error);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "evaluation ({} data) model={} stats={}\n",
            self.tag, self.model_id, self.stats_id
        );
        let _ = writeln!(out, "{:>6} {:>12} {:>12} {:>8}", "motor", "RMSE[degC]", "MaxAE[degC]", "n");
        for m in &self.aggregate {
            let _ = writeln!(
                out,
                "{:>6} {:>12.4} {:>12.4} {:>8}",
                m.joint, m.rmse, m.max_abs_error, m.samples
            );
        }
        for seq in &self.per_sequence {
            let _ = writeln!(out, "  sequence {}", seq.id);
            for m in &seq.joints {
                let _ = writeln!(
                    out,
                    "{:>6} {:>12.4} {:>12.4} {:>8}",
                    m.joint, m.rmse, m.max_abs_error, m.samples
                );
            }
        }
        out
    }
}

/// Runs the model over a partition and reports per-joint metrics in
/// degrees C. Inputs are normalized with the stored statistics, the forward
/// pass runs with dropout off, and predictions are reconstructed via
/// `x = x_norm * sigma + mu` before any error is computed.
pub fn evaluate_model(
    params: &NetworkParams,
    norm: &Normalization,
    dataset: &SequenceDataset,
    model_id: &str,
    stats_id: &str,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(Error::config("evaluation dataset is empty"));
    }
    if dataset.feature_width() != params.input_size() {
        return Err(Error::config(format!(
            "dataset has {} features but the model expects {}",
            dataset.feature_width(),
            params.input_size()
        )));
    }
    let joints = params.output_size();

    let mut per_sequence = Vec::with_capacity(dataset.sequences.len());
    let mut pooled_sq = vec![0.0f64; joints];
    let mut pooled_max = vec![0.0f64; joints];
    let mut pooled_n = vec![0usize; joints];
    for seq in &dataset.sequences {
        if seq.targets.cols() != joints {
            return Err(Error::config(format!(
                "sequence '{}' has {} target channels, expected {joints}",
                seq.id,
                seq.targets.cols()
            )));
        }
        let inputs = normalize(&seq.inputs, &norm.input)?;
        let (pred_norm, _) = forward(params, &inputs, Dropout::Off)?;
        let pred = denormalize(&pred_norm, &norm.target)?;

        let mut joints_out = Vec::with_capacity(joints);
        for j in 0..joints {
            let p: Vec<f64> = (0..pred.rows()).map(|r| pred.get(r, j)).collect();
            let t: Vec<f64> = (0..seq.targets.rows()).map(|r| seq.targets.get(r, j)).collect();
            let sq: f64 = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum();
            pooled_sq[j] += sq;
            pooled_n[j] += p.len();
            let mx = max_abs_error(&p, &t)?;
            pooled_max[j] = pooled_max[j].max(mx);
            joints_out.push(JointMetrics {
                joint: j + 1,
                rmse: (sq / p.len() as f64).sqrt(),
                max_abs_error: mx,
                samples: p.len(),
            });
        }
        per_sequence.push(SequenceMetrics { id: seq.id.clone(), joints: joints_out });
    }

    let aggregate = (0..joints)
        .map(|j| JointMetrics {
            joint: j + 1,
            rmse: (pooled_sq[j] / pooled_n[j] as f64).sqrt(),
            max_abs_error: pooled_max[j],
            samples: pooled_n[j],
        })
        .collect();

    let report = EvaluationReport {
        tag: dataset.tag,
        model_id: model_id.to_string(),
        stats_id: stats_id.to_string(),
        aggregate,
        per_sequence,
    };
    report.assert_metric_invariant()?;
    Ok(report)
}

/// Writes `{prefix}.csv` with `t,truth_1..truth_J,pred_1..pred_J` rows and
/// one truth/prediction overlay SVG per joint. Returns the created paths.
/// Empty traces produce a header-only CSV and no plots.
pub fn emit_prediction_artifacts(
    timestamps: &[f64],
    truth: &Mat,
    predictions: &Mat,
    prefix: &Path,
) -> Result<Vec<PathBuf>> {
    if truth.rows() != predictions.rows()
        || truth.cols() != predictions.cols()
        || timestamps.len() != truth.rows()
    {
        return Err(Error::config(format!(
            "traces disagree: {} timestamps, {}x{} truth, {}x{} predictions",
            timestamps.len(),
            truth.rows(),
            truth.cols(),
            predictions.rows(),
            predictions.cols()
        )));
    }
    let joints = truth.cols();
    let mut created = Vec::new();

    let mut csv = String::from("t");
    for j in 1..=joints {
        let _ = write!(csv, ",truth_{j}");
    }
    for j in 1..=joints {
        let _ = write!(csv, ",pred_{j}");
    }
    csv.push('\n');
    for r in 0..truth.rows() {
        let _ = write!(csv, "{}", timestamps[r]);
        for v in truth.row(r) {
            let _ = write!(csv, ",{v}");
        }
        for v in predictions.row(r) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let csv_path = prefix.with_extension("csv");
    std::fs::write(&csv_path, csv)?;
    created.push(csv_path);

    if truth.rows() > 0 {
        for j in 0..joints {
            let series = vec![
                Series {
                    label: "truth".into(),
                    points: (0..truth.rows()).map(|r| (timestamps[r], truth.get(r, j))).collect(),
                },
                Series {
                    label: "prediction".into(),
                    points: (0..truth.rows())
                        .map(|r| (timestamps[r], predictions.get(r, j)))
                        .collect(),
                },
            ];
            let path = PathBuf::from(format!("{}_joint{}.svg", prefix.display(), j + 1));
            write_line_plot(
                &path,
                &format!("motor {} temperature", j + 1),
                "t [s]",
                "temperature [degC]",
                &series,
            )?;
            created.push(path);
        }
    }
    Ok(created)
}

/// Reads a file produced by [`emit_prediction_artifacts`] back into
/// (timestamps, truth, predictions).
pub fn read_prediction_csv(path: &Path) -> Result<(Vec<f64>, Mat, Mat)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let cols = header.split(',').count();
    if cols < 3 || (cols - 1) % 2 != 0 {
        return Err(Error::Parse { line: 1, msg: format!("unexpected header '{header}'") });
    }
    let joints = (cols - 1) / 2;

    let mut timestamps = Vec::new();
    let mut truth_rows = Vec::new();
    let mut pred_rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {cols} columns, found {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("not a number: '{s}'"),
            })
        };
        timestamps.push(parse(fields[0])?);
        let mut t_row = Vec::with_capacity(joints);
        let mut p_row = Vec::with_capacity(joints);
        for j in 0..joints {
            t_row.push(parse(fields[1 + j])?);
            p_row.push(parse(fields[1 + joints + j])?);
        }
        truth_rows.push(t_row);
        pred_rows.push(p_row);
    }
    Ok((timestamps, Mat::from_rows(&truth_rows)?, Mat::from_rows(&pred_rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSelection, Sequence};
    use crate::network::{init_params, NetworkConfig};
    use proptest::prelude::*;

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let v = rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap();
        assert!((v - 1.154_700_538_379_251_5).abs() < 1e-15);
        assert_eq!(rmse(&[4.5], &[2.0]).unwrap(), 2.5);
        assert!(matches!(rmse(&[], &[]), Err(Error::Config(_))));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Config(_))));
    }

    #[test]
    fn max_abs_error_cases() {
        assert_eq!(max_abs_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(max_abs_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap(), 2.0);
        assert!(matches!(max_abs_error(&[], &[]), Err(Error::Config(_))));
    }

    #[test]
    fn metrics_are_invariant_under_time_reversal() {
        let p = [1.0, 3.0, -0.5, 2.0];
        let t = [0.5, 3.5, 0.0, 1.0];
        let mut pr: Vec<f64> = p.to_vec();
        let mut tr: Vec<f64> = t.to_vec();
        pr.reverse();
        tr.reverse();
        assert_eq!(rmse(&p, &t).unwrap(), rmse(&pr, &tr).unwrap());
        assert_eq!(max_abs_error(&p, &t).unwrap(), max_abs_error(&pr, &tr).unwrap());
    }

    fn toy_dataset(rows: usize) -> (NetworkParams, Normalization, SequenceDataset) {
        let cfg = NetworkConfig {
            input_size: 7,
            lstm_hidden: 4,
            dense_widths: vec![4, 7],
            activations: vec![
                crate::network::Activation::Tanh,
                crate::network::Activation::Identity,
            ],
        };
        let params = init_params(&cfg, 3).unwrap();
        let norm = Normalization::identity(FeatureSelection::default());
        let sequences = vec![Sequence {
            id: "t0".into(),
            inputs: Mat::from_fn(rows, 7, |r, c| ((r + c) as f64 * 0.13).sin()),
            targets: Mat::from_fn(rows, 7, |r, c| 22.0 + ((r * c) as f64 * 0.07).cos()),
        }];
        (params, norm, SequenceDataset { sequences, tag: PartitionTag::Unseen })
    }

    #[test]
    fn evaluate_is_deterministic_and_satisfies_the_metric_invariant() {
        let (params, norm, dataset) = toy_dataset(40);
        let a = evaluate_model(&params, &norm, &dataset, "m", "s").unwrap();
        let b = evaluate_model(&params, &norm, &dataset, "m", "s").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.aggregate.len(), 7);
        for m in &a.aggregate {
            assert!(m.rmse <= m.max_abs_error + 1e-12);
        }
        a.assert_metric_invariant().unwrap();
    }

    #[test]
    fn single_sample_metrics_equal_the_absolute_error() {
        let (params, norm, dataset) = toy_dataset(1);
        let report = evaluate_model(&params, &norm, &dataset, "m", "s").unwrap();
        for m in &report.aggregate {
            assert!((m.rmse - m.max_abs_error).abs() < 1e-12);
            assert_eq!(m.samples, 1);
        }
    }

    #[test]
    fn evaluate_rejects_width_mismatch() {
        let (params, norm, mut dataset) = toy_dataset(10);
        dataset.sequences[0].inputs = Mat::zeros(10, 5);
        assert!(matches!(
            evaluate_model(&params, &norm, &dataset, "m", "s"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn report_csv_has_a_row_per_motor_and_sequence() {
        let (params, norm, dataset) = toy_dataset(10);
        let report = evaluate_model(&params, &norm, &dataset, "m", "s").unwrap();
        let csv = report.to_csv();
        // header + 7 per-sequence rows + 7 aggregate rows
        assert_eq!(csv.lines().count(), 1 + 7 + 7);
        assert!(csv.starts_with("motor,sequence,rmse_degc,maxae_degc"));
    }

    #[test]
    fn prediction_artifacts_round_trip_and_count_plots() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("run1");
        let truth = Mat::from_fn(25, 7, |r, c| 22.0 + (r as f64 * 0.3) + c as f64 * 0.01);
        let pred = Mat::from_fn(25, 7, |r, c| 22.1 + (r as f64 * 0.29) + c as f64 * 0.011);
        let ts: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let files = emit_prediction_artifacts(&ts, &truth, &pred, &prefix).unwrap();
        // 1 CSV + 7 SVGs.
        assert_eq!(files.len(), 8);
        assert_eq!(files.iter().filter(|f| f.extension().unwrap() == "svg").count(), 7);

        let (ts2, truth2, pred2) = read_prediction_csv(&files[0]).unwrap();
        assert_eq!(ts, ts2);
        assert_eq!(truth, truth2);
        assert_eq!(pred, pred2);
    }

    #[test]
    fn empty_traces_emit_header_only_csv_and_no_plots() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("empty");
        let truth = Mat::zeros(0, 7);
        let pred = Mat::zeros(0, 7);
        let files = emit_prediction_artifacts(&[], &truth, &pred, &prefix).unwrap();
        assert_eq!(files.len(), 1);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    proptest! {
        /// Norm inequality: sqrt(mean(e^2)) <= max|e| for any finite pair.
        #[test]
        fn rmse_never_exceeds_maxae(values in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..50)) {
            let p: Vec<f64> = values.iter().map(|v| v.0).collect();
            let t: Vec<f64> = values.iter().map(|v| v.1).collect();
            let r = rmse(&p, &t).unwrap();
            let m = max_abs_error(&p, &t).unwrap();
            prop_assert!(r <= m + 1e-9);
        }
    }
}

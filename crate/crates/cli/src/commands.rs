//! Subcommand implementations. Each command validates its options, delegates
//! to the core modules and writes artifacts; inputs are never mutated.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use jointherm_core::dataset::{
    denormalize, normalize, read_records, records_from_simulation, save_normalization,
    select_features, split_seen_unseen, target_matrix, FeatureSelection, PartitionTag, Sequence,
    SequenceDataset,
};
use jointherm_core::evaluation::{emit_prediction_artifacts, evaluate_model};
use jointherm_core::gauss2::{fit_gauss2 as run_gauss2_fit, eval_gauss2, Gauss2Coefficients};
use jointherm_core::network::{
    forward, load_model, save_model, Activation, Dropout, ModelFile, NetworkConfig,
};
use jointherm_core::plant::{
    generate_torque_profile, simulate_plant, ProfileKind, ThermalPlantParams,
};
use jointherm_core::plot::{write_line_plot, Series};
use jointherm_core::training::{train as run_training, StopReason, TrainingConfig, WindowPolicy};
use jointherm_core::verify::run_all;
use jointherm_core::JOINT_COUNT;

use crate::config::{pick, FileConfig};

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SimulateArgs {
    /// Output directory for trajectory CSVs and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; every trajectory derives its own sub-seeds from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    pub count: Option<usize>,
    /// How many trailing trajectories the manifest marks as unseen.
    #[arg(long)]
    pub unseen: Option<usize>,
    /// Trajectory duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Sampling interval in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Torque amplitude bound in N*m.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Profile kind: step, trapezoid, random-walk, sine-mix or composite.
    #[arg(long)]
    pub kind: Option<String>,
    /// Optional TOML configuration file ([simulate] section).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Everything needed to regenerate a simulated dataset byte for byte.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub kind: ProfileKind,
    pub duration: f64,
    pub dt: f64,
    pub amplitude: f64,
    pub initial_temperature: f64,
    pub plant: Vec<ThermalPlantParams>,
    pub trajectories: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub profile_seed: u64,
    pub aux_seed: u64,
    pub unseen: bool,
}

pub const MANIFEST_FORMAT: &str = "jointherm-manifest-v1";

pub fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let file = FileConfig::load(args.config.as_deref())?;
    let sec = file.section("simulate");
    let seed = pick(args.seed, sec.u64("seed")?, 0);
    let count = pick(args.count, sec.usize("count")?, 18);
    let unseen = pick(args.unseen, sec.usize("unseen")?, 2);
    let duration = pick(args.duration, sec.f64("duration")?, 600.0);
    let dt = pick(args.dt, sec.f64("dt")?, 1.0);
    let amplitude = pick(args.amplitude, sec.f64("amplitude")?, 2.0);
    let kind: ProfileKind =
        pick(args.kind, sec.string("kind")?, "composite".to_string()).parse()?;
    if count == 0 {
        bail!("--count must be at least 1");
    }
    if unseen >= count {
        bail!("--unseen ({unseen}) must leave at least one seen trajectory of {count}");
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let plant = ThermalPlantParams::default_joints();
    let ambient = plant[0].ambient_temperature;
    let initial = vec![ambient; JOINT_COUNT];

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let profile_seed: u64 = master.random();
        let aux_seed: u64 = master.random();
        let torques =
            generate_torque_profile(kind, profile_seed, duration, dt, amplitude, JOINT_COUNT)?;
        let temps = simulate_plant(&plant, &torques, &initial)?;
        let records = records_from_simulation(&torques, &temps, aux_seed)?;
        let id = format!("traj_{i:02}");
        let file_name = format!("{id}.csv");
        jointherm_core::dataset::write_records(&records, &args.out.join(&file_name))?;
        entries.push(ManifestEntry {
            id,
            file: file_name,
            profile_seed,
            aux_seed,
            unseen: i >= count - unseen,
        });
    }

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        seed,
        kind,
        duration,
        dt,
        amplitude,
        initial_temperature: ambient,
        plant,
        trajectories: entries,
    };
    let manifest_path = args.out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;

    println!(
        "wrote {count} trajectories ({} seen + {unseen} unseen) to {}",
        count - unseen,
        args.out.display()
    );
    println!("manifest: {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// fit-gauss2
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct FitGauss2Args {
    /// Two-column CSV of x,temperature samples.
    #[arg(long)]
    pub input: PathBuf,
    /// Output prefix: writes <out>_report.json and <out>_fit.svg.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional initial coefficients a1,b1,c1,a2,b2,c2 (default: heuristic).
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn read_xy_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let (a, b) = (it.next().unwrap_or(""), it.next().unwrap_or(""));
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(x), Ok(y)) => samples.push((x, y)),
            // A single non-numeric leading line is a header.
            _ if idx == 0 => continue,
            _ => bail!("line {} of {} is not 'x,y' numeric data", idx + 1, path.display()),
        }
    }
    Ok(samples)
}

pub fn fit_gauss2(args: FitGauss2Args) -> Result<ExitCode> {
    let samples = read_xy_csv(&args.input)?;
    let init = match &args.init {
        None => None,
        Some(spec) => {
            let vals: Vec<f64> = spec
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .context("--init expects six numbers a1,b1,c1,a2,b2,c2")?;
            if vals.len() != 6 {
                bail!("--init expects six numbers, got {}", vals.len());
            }
            Some(Gauss2Coefficients {
                a1: vals[0],
                b1: vals[1],
                c1: vals[2],
                a2: vals[3],
                b2: vals[4],
                c2: vals[5],
            })
        }
    };

    let report = run_gauss2_fit(&samples, init)?;
    let report_path = PathBuf::from(format!("{}_report.json", args.out.display()));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;

    let fitted: Vec<(f64, f64)> =
        samples.iter().map(|&(x, _)| (x, eval_gauss2(&report.coefficients, x))).collect();
    let plot_path = PathBuf::from(format!("{}_fit.svg", args.out.display()));
    write_line_plot(
        &plot_path,
        "two-term Gaussian profile fit",
        "sample index",
        "temperature [degC]",
        &[
            Series { label: "data".into(), points: samples },
            Series { label: "fit".into(), points: fitted },
        ],
    )?;

    println!(
        "fit: rmse {:.6} degC, R^2 {:.6}, {} iterations, converged: {}",
        report.rmse, report.r_squared, report.iterations, report.converged
    );
    println!("report: {}", report_path.display());
    println!("plot:   {}", plot_path.display());
    if !report.converged {
        eprintln!("warning: fit did not converge within the iteration budget");
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    /// Directory of trajectory CSVs (all *.csv, sorted by name).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Explicit trajectory CSV paths (alternative to --data).
    #[arg(long, value_delimiter = ',')]
    pub files: Vec<PathBuf>,
    /// Trajectory ids (file stems) to hold out from training.
    #[arg(long, value_delimiter = ',')]
    pub unseen: Vec<String>,
    /// Input feature groups, comma-separated from
    /// position,velocity,torque,current.
    #[arg(long)]
    pub features: Option<String>,
    /// LSTM hidden width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Dense widths including the 7-wide output, e.g. 32,24,16,12,8,7.
    #[arg(long, value_delimiter = ',')]
    pub dense_widths: Vec<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// z-score inputs and targets (true by default).
    #[arg(long)]
    pub normalize: Option<bool>,
    /// Stop early when the loss plateaus (true by default).
    #[arg(long)]
    pub early_stop: Option<bool>,
    /// Window training as LENGTH:STRIDE instead of full sequences.
    #[arg(long)]
    pub window: Option<String>,
    /// Progress line cadence in epochs (0 = silent).
    #[arg(long)]
    pub report_every: Option<usize>,
    /// Model output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss history CSV path (default: <out>.loss.csv).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Normalization stats path (default: <out>.stats.json).
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Collects trajectory CSVs from a directory (sorted) or an explicit list.
fn collect_files(data: Option<&Path>, files: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if let Some(dir) = data {
        if !files.is_empty() {
            bail!("--data and --files are mutually exclusive");
        }
        let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading directory {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        out.sort();
        if out.is_empty() {
            bail!("no .csv trajectories in {}", dir.display());
        }
        Ok(out)
    } else if files.is_empty() {
        bail!("provide --data DIR or --files a.csv,b.csv");
    } else {
        Ok(files.to_vec())
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_sequences(paths: &[PathBuf], selection: &FeatureSelection) -> Result<Vec<Sequence>> {
    let mut sequences = Vec::with_capacity(paths.len());
    for path in paths {
        let records =
            read_records(path).with_context(|| format!("loading {}", path.display()))?;
        sequences.push(Sequence {
            id: stem_of(path),
            inputs: select_features(&records, selection)?,
            targets: target_matrix(&records),
        });
    }
    Ok(sequences)
}

/// Hidden activations cycle tanh, elu, sigmoid; the output is identity.
/// For the default six-layer stack that yields tanh, elu, sigmoid, tanh,
/// elu, identity.
fn activation_order(layers: usize) -> Vec<Activation> {
    let cycle = [Activation::Tanh, Activation::Elu, Activation::Sigmoid];
    let mut out: Vec<Activation> =
        (0..layers.saturating_sub(1)).map(|i| cycle[i % 3]).collect();
    out.push(Activation::Identity);
    out
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let file = FileConfig::load(args.config.as_deref())?;
    let sec = file.section("train");

    let data = args.data.or(sec.string("data")?.map(PathBuf::from));
    let paths = collect_files(data.as_deref(), &args.files)?;
    let selection = FeatureSelection::parse_groups(&pick(
        args.features,
        sec.string("features")?,
        "torque".to_string(),
    ))?;

    let hidden = pick(args.hidden, sec.usize("hidden")?, 32);
    let dense_widths = if args.dense_widths.is_empty() {
        vec![32, 24, 16, 12, 8, 7]
    } else {
        args.dense_widths.clone()
    };
    let network = NetworkConfig {
        input_size: selection.width(),
        lstm_hidden: hidden,
        activations: activation_order(dense_widths.len()),
        dense_widths,
    };

    let window = match pick(args.window, sec.string("window")?, String::new()) {
        w if w.is_empty() => None,
        w => {
            let (len, stride) = w
                .split_once(':')
                .with_context(|| format!("--window expects LENGTH:STRIDE, got '{w}'"))?;
            Some(WindowPolicy { length: len.parse()?, stride: stride.parse()? })
        }
    };
    let config = TrainingConfig {
        epochs: pick(args.epochs, sec.usize("epochs")?, 300),
        learning_rate: pick(args.lr, sec.f64("lr")?, 1e-3),
        dropout: pick(args.dropout, sec.f64("dropout")?, 0.1),
        seed: pick(args.seed, sec.u64("seed")?, 0),
        normalize: pick(args.normalize, sec.bool("normalize")?, true),
        window,
        early_stop: pick(args.early_stop, sec.bool("early_stop")?, true),
        report_every: pick(args.report_every, sec.usize("report_every")?, 0),
    };

    let sequences = load_sequences(&paths, &selection)?;
    let unseen_ids = if !args.unseen.is_empty() {
        args.unseen.clone()
    } else {
        sec.string("unseen")?
            .map(|s| s.split(',').map(|v| v.trim().to_string()).collect())
            .unwrap_or_default()
    };
    let (seen, unseen) = split_seen_unseen(sequences, &unseen_ids)?;
    if seen.is_empty() {
        bail!("every trajectory is marked unseen; nothing to train on");
    }
    if !unseen.is_empty() {
        eprintln!("holding out {} unseen trajectories", unseen.sequences.len());
    }

    let out_path = pick(args.out, sec.string("out")?.map(PathBuf::from), PathBuf::from("model.json"));
    let loss_path = args
        .loss_csv
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out_path.display())));
    let stats_path = args
        .stats_out
        .unwrap_or_else(|| PathBuf::from(format!("{}.stats.json", out_path.display())));

    let result = run_training(&seen, selection, &network, &config)?;
    let model = ModelFile::new(network, config.dropout, result.params, result.normalization);
    save_model(&model, &out_path)?;
    save_normalization(&model.normalization, &stats_path)?;
    result.history.write_csv(&loss_path)?;

    let final_loss = result.history.loss.last().copied().unwrap_or(f64::NAN);
    println!("epochs run: {}", result.history.epochs());
    println!("final training loss: {final_loss:.6e}");
    println!("model: {}", out_path.display());
    println!("stats: {}", stats_path.display());
    println!("loss history: {}", loss_path.display());
    match &result.stop {
        StopReason::Completed => Ok(ExitCode::SUCCESS),
        StopReason::EarlyStop { epoch } => {
            println!("early stop at epoch {epoch} (loss plateau)");
            Ok(ExitCode::SUCCESS)
        }
        StopReason::Diverged { epoch, detail } => {
            eprintln!(
                "training diverged at epoch {epoch}: {detail}; saved the last finite state"
            );
            Ok(ExitCode::FAILURE)
        }
    }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Trajectory CSV in the dataset schema.
    #[arg(long)]
    pub input: PathBuf,
    /// Output prefix: writes <out>.csv and <out>_joint<J>.svg.
    #[arg(long)]
    pub out: PathBuf,
    /// Feature override; must match the width the model was trained with.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn predict(args: PredictArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let selection = match &args.features {
        None => model.normalization.selection,
        Some(spec) => {
            let sel = FeatureSelection::parse_groups(spec)?;
            if sel.width() != model.params.input_size() {
                bail!(
                    "model expects {} input features (groups: {}) but --features {spec} selects {}",
                    model.params.input_size(),
                    model.normalization.selection,
                    sel.width()
                );
            }
            sel
        }
    };

    let records = read_records(&args.input)?;
    let inputs_raw = select_features(&records, &selection)?;
    let inputs = normalize(&inputs_raw, &model.normalization.input)?;
    let (pred_norm, _) = forward(&model.params, &inputs, Dropout::Off)?;
    let predictions = denormalize(&pred_norm, &model.normalization.target)?;
    let truth = target_matrix(&records);
    let timestamps: Vec<f64> = records.iter().map(|r| r.timestamp).collect();

    let files = emit_prediction_artifacts(&timestamps, &truth, &predictions, &args.out)?;
    println!("wrote {} artifact files with prefix {}", files.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvaluateArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of trajectory CSVs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Explicit trajectory CSV paths.
    #[arg(long, value_delimiter = ',')]
    pub files: Vec<PathBuf>,
    /// Restrict to these trajectory ids.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    /// Partition label recorded in the report: seen or unseen.
    #[arg(long)]
    pub tag: Option<String>,
    /// Output prefix: writes <out>_report.txt and <out>_report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also emit per-sequence overlay CSVs and SVG plots.
    #[arg(long, default_value_t = false)]
    pub plots: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let paths = collect_files(args.data.as_deref(), &args.files)?;
    let mut sequences = load_sequences(&paths, &model.normalization.selection)?;
    if !args.ids.is_empty() {
        for id in &args.ids {
            if !sequences.iter().any(|s| &s.id == id) {
                bail!("unknown trajectory id '{id}'");
            }
        }
        sequences.retain(|s| args.ids.contains(&s.id));
    }
    let tag = match args.tag.as_deref().unwrap_or("unseen") {
        "seen" => PartitionTag::Seen,
        "unseen" => PartitionTag::Unseen,
        other => bail!("--tag must be 'seen' or 'unseen', got '{other}'"),
    };
    let dataset = SequenceDataset { sequences, tag };

    let report = evaluate_model(
        &model.params,
        &model.normalization,
        &dataset,
        &args.model.display().to_string(),
        "embedded",
    )?;
    print!("{}", report.to_text());

    if let Some(prefix) = &args.out {
        let txt = PathBuf::from(format!("{}_report.txt", prefix.display()));
        let csv = PathBuf::from(format!("{}_report.csv", prefix.display()));
        std::fs::write(&txt, report.to_text())?;
        std::fs::write(&csv, report.to_csv())?;
        println!("report: {} and {}", txt.display(), csv.display());

        if args.plots {
            for seq in &dataset.sequences {
                let inputs = normalize(&seq.inputs, &model.normalization.input)?;
                let (pred_norm, _) = forward(&model.params, &inputs, Dropout::Off)?;
                let predictions = denormalize(&pred_norm, &model.normalization.target)?;
                let timestamps: Vec<f64> =
                    (0..seq.targets.rows()).map(|r| r as f64).collect();
                let seq_prefix = PathBuf::from(format!("{}_{}", prefix.display(), seq.id));
                emit_prediction_artifacts(&timestamps, &seq.targets, &predictions, &seq_prefix)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn verify(_args: VerifyArgs) -> Result<ExitCode> {
    let results = run_all()?;
    let mut all_passed = true;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {}: {}", r.name, r.detail);
        all_passed &= r.passed;
    }
    if all_passed {
        println!("all {} suites passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verification failed");
        Ok(ExitCode::FAILURE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_order_matches_the_documented_default() {
        assert_eq!(
            activation_order(6),
            vec![
                Activation::Tanh,
                Activation::Elu,
                Activation::Sigmoid,
                Activation::Tanh,
                Activation::Elu,
                Activation::Identity
            ]
        );
        assert_eq!(activation_order(1), vec![Activation::Identity]);
    }

    #[test]
    fn xy_csv_accepts_optional_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("xy.csv");
        std::fs::write(&p, "x,temperature\n0,22.5\n1,23.0\n").unwrap();
        assert_eq!(read_xy_csv(&p).unwrap(), vec![(0.0, 22.5), (1.0, 23.0)]);

        std::fs::write(&p, "0,22.5\n1,23.0\n").unwrap();
        assert_eq!(read_xy_csv(&p).unwrap().len(), 2);

        std::fs::write(&p, "0,22.5\nbad,row\n").unwrap();
        assert!(read_xy_csv(&p).is_err());
    }
}

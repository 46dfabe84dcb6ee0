//! Command-line workflows: dataset generation, training, random search,
//! Pareto reporting, benchmarking, op counting, and inference.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, TrialPoint};
use crate::checkpoint;
use crate::data::{
    self, build_dataset, canonicalize, canonicalize_heights, load_split, WindField, DIRECTIONS,
    HEIGHT_SCALE, V_MAX,
};
use crate::error::{Error, Result};
use crate::model::{build_model, count_macs, count_params, ModelConfig};
use crate::search::{self, ParamSpace, SearchOptions};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "urbanwind", version, about = "Wind-field surrogate experiment harness")]
struct Cli {
    /// Worker budget for data generation and search. The current
    /// implementation always runs serially; 1 is the reproducible default.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene/wind dataset
    GenData(GenDataArgs),
    /// Train one configuration and write a checkpoint plus a loss CSV
    Train(TrainArgs),
    /// Random hyperparameter search for one architecture
    Search(SearchArgs),
    /// Extract the Pareto front from search result CSVs
    Pareto(ParetoArgs),
    /// Benchmark inference latency of a checkpoint
    Bench(BenchArgs),
    /// Print parameter and multiply-add counts for a config
    Count(CountArgs),
    /// Predict the wind field for one scene and direction
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of scenes (8 direction samples each)
    #[arg(long, default_value_t = 16)]
    scenes: usize,
    /// Grid resolution (cells per side, multiple of 64)
    #[arg(long, default_value_t = 128)]
    grid: usize,
    /// Physical domain extent in meters
    #[arg(long, default_value_t = 1100.0)]
    extent: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write PNG previews of heights and wind speed
    #[arg(long)]
    previews: bool,
    /// Escalate to the full-article protocol (1024x1024 grid)
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Model config JSON file
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory from gen-data
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path; the loss CSV lands next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Architecture name: U-Net, U-NeXt, Half-U-Net, Half-U-NeXt
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 16)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results CSV, appended to incrementally; rerun to resume
    #[arg(long)]
    out: PathBuf,
    /// Restrict widths to the smallest table row
    #[arg(long)]
    tiny: bool,
    /// Escalate to the full-article protocol (128 trials, 30 epochs)
    #[arg(long)]
    paper_scale: bool,
    /// Stop after N new trials (testing aid for the resume contract)
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct ParetoArgs {
    /// One or more search result CSVs to merge
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Writes <prefix>.csv and <prefix>.svg
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 128)]
    grid: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
}

#[derive(Args)]
struct CountArgs {
    /// Model config JSON file
    #[arg(long)]
    config: PathBuf,
    /// Input resolution for the multiply-add count
    #[arg(long, default_value_t = 128)]
    grid: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Scene directory containing height.f32
    #[arg(long)]
    scene: PathBuf,
    /// Wind direction index 0..8 (multiples of 45 degrees)
    #[arg(long, default_value_t = 0)]
    dir: usize,
    /// Output stem; writes <out>.u8 and <out>.png
    #[arg(long)]
    out: PathBuf,
}

/// Replay record written atomically next to each command's primary output.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
}

fn write_run_manifest(
    primary: &Path,
    command: &str,
    args: &[String],
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    started: DateTime<Utc>,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        args: args.to_vec(),
        seeds,
        outputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: Utc::now(),
    };
    let mut name = primary
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".to_string());
    name.push_str(".run.json");
    let path = primary.with_file_name(name);
    data::dataset::write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ModelConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument { .. } | Error::InvalidConfig(_) | Error::ShapeMismatch { .. } => 2,
        Error::Io { .. }
        | Error::BadFormat { .. }
        | Error::EmptyDataset(_)
        | Error::Json(_)
        | Error::Csv(_) => 3,
        Error::NonFinite(_) | Error::NoConvergence { .. } => 4,
    }
}

/// Parses and runs a full command line (first element is the program name)
/// and returns the process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator,
    I::Item: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let started = Utc::now();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a, &argv, started),
        Command::Train(a) => cmd_train(a, &argv, started),
        Command::Search(a) => cmd_search(a, &argv, started),
        Command::Pareto(a) => cmd_pareto(a, &argv, started),
        Command::Bench(a) => cmd_bench(a),
        Command::Count(a) => cmd_count(a),
        Command::Predict(a) => cmd_predict(a, &argv, started),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_gen_data(mut a: GenDataArgs, argv: &[String], started: DateTime<Utc>) -> Result<()> {
    if a.paper_scale {
        a.grid = 1024;
    }
    let manifest = build_dataset(&a.out, a.scenes, a.grid, a.seed, a.extent, a.previews)?;
    println!(
        "wrote {} scenes x {DIRECTIONS} directions = {} samples at {}x{} to {} (split {}/{}/{})",
        manifest.n_scenes,
        manifest.total_samples(),
        a.grid,
        a.grid,
        a.out.display(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
    );
    write_run_manifest(
        &a.out.join("manifest.json"),
        "gen-data",
        argv,
        vec![a.seed],
        vec![a.out.clone()],
        started,
    )
}

fn cmd_train(a: TrainArgs, argv: &[String], started: DateTime<Utc>) -> Result<()> {
    let config = read_config(&a.config)?;
    let train_set = load_split(&a.data, "train")?;
    let val_set = load_split(&a.data, "val")?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut model = build_model::<f32>(&config, a.seed)?;
    let history = train(&mut model, &train_set, &val_set, &cfg)?;
    checkpoint::save(&a.out, &model, None, a.epochs)?;

    let losses_path = a.out.with_extension("losses.csv");
    let mut bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for h in &history {
            w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&losses_path, e))?;
    }
    data::dataset::write_atomic(&losses_path, &bytes)?;
    let last = history.last().expect("epochs >= 1");
    println!(
        "trained {} for {} epochs: train {:.6}, val {:.6}; checkpoint {}",
        config.architecture(),
        a.epochs,
        last.train_loss,
        last.val_loss,
        a.out.display()
    );
    write_run_manifest(
        &a.out,
        "train",
        argv,
        vec![a.seed],
        vec![a.out.clone(), losses_path],
        started,
    )
}

fn cmd_search(a: SearchArgs, argv: &[String], started: DateTime<Utc>) -> Result<()> {
    let space = ParamSpace::for_architecture(&a.arch, a.tiny)?;
    let (trials, epochs) = if a.paper_scale { (128, 30) } else { (a.trials, a.epochs) };
    let train_set = load_split(&a.data, "train")?;
    let val_set = load_split(&a.data, "val")?;
    let options = SearchOptions {
        n_trials: trials,
        epochs,
        batch_size: a.batch_size,
        base_seed: a.seed,
        stop_after: a.stop_after,
        ..SearchOptions::default()
    };
    let results = search::run_search(&space, &train_set, &val_set, &options, &a.out)?;
    let failed = results.iter().filter(|r| r.failed()).count();
    println!(
        "{}: {} of {trials} trials recorded ({failed} failed) in {}",
        space.architecture,
        results.len(),
        a.out.display()
    );
    if let Some(best) = search::select_best(&results).first() {
        println!(
            "best trial {}: loss {:.6}, runtime {:.3} ms, {} params",
            best.trial, best.loss, best.runtime_ms, best.params
        );
    }
    write_run_manifest(&a.out, "search", argv, vec![a.seed], vec![a.out.clone()], started)
}

fn cmd_pareto(a: ParetoArgs, argv: &[String], started: DateTime<Utc>) -> Result<()> {
    let mut trials: Vec<TrialPoint> = Vec::new();
    for path in &a.inputs {
        for r in search::read_results(path)? {
            if r.failed() {
                continue;
            }
            trials.push(TrialPoint {
                label: format!("{}/{}", r.arch, r.trial),
                loss: r.loss,
                runtime_ms: r.runtime_ms,
                block_type: format!("{:?}", r.config.block_type),
                decoder_type: format!("{:?}", r.config.decoder_type),
                params: r.params,
                macs: r.macs,
            });
        }
    }
    let front = analysis::export_report(&trials, &a.out_prefix)?;
    println!(
        "{} trials in, {} on the front; wrote {}.csv and .svg",
        trials.len(),
        front.len(),
        a.out_prefix.display()
    );
    let csv_out = a.out_prefix.with_extension("csv");
    write_run_manifest(
        &csv_out,
        "pareto",
        argv,
        vec![],
        vec![csv_out.clone(), a.out_prefix.with_extension("svg")],
        started,
    )
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let loaded = checkpoint::load(&a.ckpt)?;
    let mut model = loaded.model;
    let report = analysis::bench_runtime(&mut model, a.grid, a.grid, a.warmup, a.repeats)?;
    println!(
        "{} at {}x{}: mean {:.3} ms, median {:.3} ms, min {:.3} ms, cv {:.3} ({} warmup, {} repeats)",
        model.config().architecture(),
        a.grid,
        a.grid,
        report.mean_ms,
        report.median_ms,
        report.min_ms,
        report.cv,
        report.warmup,
        report.repeats
    );
    Ok(())
}

fn cmd_count(a: CountArgs) -> Result<()> {
    let config = read_config(&a.config)?;
    let params = count_params(&config)?;
    let macs = count_macs(&config, a.grid, a.grid)?;
    println!(
        "{}: {} parameters, {} multiply-adds at {}x{}",
        config.architecture(),
        params,
        macs,
        a.grid,
        a.grid
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs, argv: &[String], started: DateTime<Utc>) -> Result<()> {
    if a.dir >= DIRECTIONS {
        return Err(Error::InvalidArgument {
            op: "predict",
            detail: format!("direction {} out of range 0..{DIRECTIONS}", a.dir),
        });
    }
    let height_path = a.scene.join("height.f32");
    let bytes = fs::read(&height_path).map_err(|e| Error::io(&height_path, e))?;
    let n = bytes.len() / 4;
    let grid = (n as f64).sqrt() as usize;
    if grid * grid * 4 != bytes.len() {
        return Err(Error::BadFormat {
            path: height_path,
            detail: format!("{} bytes is not a square f32 grid", bytes.len()),
        });
    }
    let heights: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let loaded = checkpoint::load(&a.ckpt)?;
    let mut model = loaded.model;
    let canon_h = canonicalize_heights(grid, &heights, a.dir);
    let input: Vec<f32> = canon_h.iter().map(|&h| (h / HEIGHT_SCALE) as f32).collect();
    let output = model.predict(&Tensor::from_vec([1, 1, grid, grid], input)?)?;

    // the model predicts in quantized [0,1] units in the canonical frame;
    // rotate back to the world frame before writing
    let plane = |k: usize| -> Vec<f64> {
        output.data()[k * grid * grid..(k + 1) * grid * grid]
            .iter()
            .map(|&v| (v as f64) * 2.0 * V_MAX - V_MAX)
            .collect()
    };
    let canon_field = WindField {
        grid,
        u: plane(0),
        v: plane(1),
        w: plane(2),
        interior_divergence: 0.0,
    };
    let inverse = (DIRECTIONS - a.dir) % DIRECTIONS;
    let (_, world) = canonicalize(grid, &canon_h, &canon_field, inverse);

    let mut raw = Vec::with_capacity(3 * grid * grid);
    for p in [&world.u, &world.v, &world.w] {
        raw.extend(p.iter().map(|&v| data::quantize(v)));
    }
    let u8_path = a.out.with_extension("u8");
    data::dataset::write_atomic(&u8_path, &raw)?;

    let png_path = a.out.with_extension("png");
    let pixels: Vec<u8> = (0..grid * grid)
        .map(|i| {
            let speed = (world.u[i].powi(2) + world.v[i].powi(2)).sqrt();
            (speed / V_MAX * 255.0).clamp(0.0, 255.0) as u8
        })
        .collect();
    image::GrayImage::from_raw(grid as u32, grid as u32, pixels)
        .expect("pixel count matches grid")
        .save(&png_path)
        .map_err(|e| Error::BadFormat {
            path: png_path.clone(),
            detail: e.to_string(),
        })?;
    println!(
        "predicted direction {} for {} -> {} and {}",
        a.dir,
        a.scene.display(),
        u8_path.display(),
        png_path.display()
    );
    write_run_manifest(&u8_path, "predict", argv, vec![], vec![u8_path.clone(), png_path], started)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockType, DecoderType};

    fn args(parts: &[&str]) -> Vec<String> {
        std::iter::once("urbanwind")
            .chain(parts.iter().copied())
            .map(String::from)
            .collect()
    }

    fn tiny_config_file(dir: &Path) -> PathBuf {
        let config = ModelConfig {
            block_type: BlockType::Unet,
            decoder_type: DecoderType::HalfUnet,
            encoder_channels: [4; 5],
            decoder_channels: [4; 5],
            encoder_blocks: [1; 5],
            decoder_blocks: [1; 5],
            output_blocks: 1,
            resmerge_blocks: 1,
            dropout: 0.1,
            input_channels: 1,
            output_channels: 3,
        };
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
        path
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert_eq!(run(args(&["count", "--bogus"])), 2);
        assert_eq!(run(args(&["no-such-command"])), 2);
        assert_eq!(run(args(&["--help"])), 0);
    }

    #[test]
    fn count_command_reports_library_values() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = tiny_config_file(dir.path());
        assert_eq!(run(args(&["count", "--config", config_path.to_str().unwrap(), "--grid", "64"])), 0);
        // malformed config file is a data error
        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{not json").unwrap();
        assert_eq!(run(args(&["count", "--config", bad.to_str().unwrap()])), 3);
        // invalid config contents are a usage error
        let invalid = dir.path().join("invalid.json");
        let text = fs::read_to_string(&config_path).unwrap().replace("\"dropout\":0.1", "\"dropout\":2.0");
        fs::write(&invalid, text).unwrap();
        assert_eq!(run(args(&["count", "--config", invalid.to_str().unwrap()])), 2);
    }

    #[test]
    fn full_pipeline_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let config_path = tiny_config_file(dir.path());
        assert_eq!(
            run(args(&["gen-data", "--scenes", "10", "--grid", "64", "--seed", "3", "--out", data.to_str().unwrap()])),
            0
        );
        assert!(data.join("manifest.json.run.json").exists());

        let ckpt = dir.path().join("model.ckpt");
        assert_eq!(
            run(args(&[
                "train", "--config", config_path.to_str().unwrap(), "--data", data.to_str().unwrap(),
                "--epochs", "1", "--out", ckpt.to_str().unwrap(),
            ])),
            0
        );
        assert!(ckpt.exists());
        assert!(ckpt.with_extension("losses.csv").exists());
        assert!(dir.path().join("model.ckpt.run.json").exists());

        let out = dir.path().join("pred");
        assert_eq!(
            run(args(&[
                "predict", "--ckpt", ckpt.to_str().unwrap(), "--scene", data.join("0").to_str().unwrap(),
                "--dir", "3", "--out", out.to_str().unwrap(),
            ])),
            0
        );
        let raw = fs::read(out.with_extension("u8")).unwrap();
        assert_eq!(raw.len(), 3 * 64 * 64);
        assert!(out.with_extension("png").exists());

        assert_eq!(
            run(args(&["bench", "--ckpt", ckpt.to_str().unwrap(), "--grid", "64", "--warmup", "1", "--repeats", "5"])),
            0
        );
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = tiny_config_file(dir.path());
        let code = run(args(&[
            "train", "--config", config_path.to_str().unwrap(),
            "--data", dir.path().join("nope").to_str().unwrap(),
            "--epochs", "1", "--out", dir.path().join("m.ckpt").to_str().unwrap(),
        ]));
        assert_eq!(code, 3);
    }
}

//! Random hyperparameter search over the per-architecture spaces, with
//! incremental CSV persistence and interrupt-safe resume.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::analysis::bench_runtime;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{
    build_model, count_macs, count_params, BlockType, DecoderType, ModelConfig,
};
use crate::rng;
use crate::train::{train, TrainConfig};

pub const ARCHITECTURES: [&str; 4] = ["U-Net", "U-NeXt", "Half-U-Net", "Half-U-NeXt"];

/// Resolves an architecture name (case- and punctuation-insensitive, e.g.
/// `half-u-next`) to its canonical form.
pub fn canonical_architecture(name: &str) -> Result<&'static str> {
    let key: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
    ARCHITECTURES
        .iter()
        .find(|a| {
            let canon: String = a.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
            canon == key
        })
        .copied()
        .ok_or_else(|| Error::InvalidArgument {
            op: "architecture",
            detail: format!("unknown architecture '{name}', expected one of {ARCHITECTURES:?}"),
        })
}

/// The finite categorical product space for one architecture.
#[derive(Clone, Debug)]
pub struct ParamSpace {
    pub architecture: &'static str,
    pub block_type: BlockType,
    pub decoder_type: DecoderType,
    pub channel_options: Vec<[usize; 5]>,
    pub block_options: [usize; 3],
    pub dropout_options: [f64; 3],
}

impl ParamSpace {
    /// The space for one architecture; `tiny` keeps only the smallest width
    /// row so desk-scale smoke runs stay cheap.
    pub fn for_architecture(name: &str, tiny: bool) -> Result<ParamSpace> {
        let architecture = canonical_architecture(name)?;
        let (decoder_type, block_type) = match architecture {
            "U-Net" => (DecoderType::Unet, BlockType::Unet),
            "U-NeXt" => (DecoderType::Unet, BlockType::Convnext),
            "Half-U-Net" => (DecoderType::HalfUnet, BlockType::Unet),
            _ => (DecoderType::HalfUnet, BlockType::Convnext),
        };
        let mut channel_options: Vec<[usize; 5]> = match decoder_type {
            DecoderType::Unet => vec![
                [32, 64, 128, 256, 512],
                [64, 128, 256, 512, 1024],
                [128, 256, 512, 1024, 2048],
            ],
            DecoderType::HalfUnet => vec![[32; 5], [64; 5], [128; 5]],
        };
        if tiny {
            channel_options.truncate(1);
        }
        Ok(ParamSpace {
            architecture,
            block_type,
            decoder_type,
            channel_options,
            block_options: [1, 2, 4],
            dropout_options: [0.1, 0.2, 0.3],
        })
    }

    pub fn all(tiny: bool) -> Vec<ParamSpace> {
        ARCHITECTURES
            .iter()
            .map(|a| ParamSpace::for_architecture(a, tiny).expect("fixed names"))
            .collect()
    }

    /// One independent uniform draw per axis; derived fields filled in.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ModelConfig {
        let encoder_channels = *self.channel_options.choose(rng).expect("non-empty");
        let decoder_channels = match self.decoder_type {
            DecoderType::Unet => {
                let mut c = encoder_channels;
                c.reverse();
                c
            }
            DecoderType::HalfUnet => encoder_channels,
        };
        let pick = |rng: &mut ChaCha8Rng| *self.block_options.choose(rng).unwrap();
        ModelConfig {
            block_type: self.block_type,
            decoder_type: self.decoder_type,
            encoder_channels,
            decoder_channels,
            encoder_blocks: [pick(rng); 5],
            decoder_blocks: [pick(rng); 5],
            output_blocks: pick(rng),
            resmerge_blocks: pick(rng),
            dropout: *self.dropout_options.choose(rng).unwrap(),
            input_channels: 1,
            output_channels: 3,
        }
    }

    /// Axis-wise membership check.
    pub fn contains(&self, config: &ModelConfig) -> bool {
        config.block_type == self.block_type
            && config.decoder_type == self.decoder_type
            && self.channel_options.contains(&config.encoder_channels)
            && config.encoder_blocks.iter().all(|&b| b == config.encoder_blocks[0])
            && config.decoder_blocks.iter().all(|&b| b == config.decoder_blocks[0])
            && self.block_options.contains(&config.encoder_blocks[0])
            && self.block_options.contains(&config.decoder_blocks[0])
            && self.block_options.contains(&config.output_blocks)
            && self.block_options.contains(&config.resmerge_blocks)
            && self.dropout_options.iter().any(|&d| d == config.dropout)
    }
}

/// One search sample. A failed trial (build rejection, non-finite loss)
/// carries `loss = NaN` and zero runtime.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub arch: String,
    pub loss: f64,
    pub runtime_ms: f64,
    pub params: u64,
    pub macs: u64,
    pub seed: u64,
    pub config: ModelConfig,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        !self.loss.is_finite()
    }
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub n_trials: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_seed: u64,
    pub bench_warmup: usize,
    pub bench_repeats: usize,
    /// Stop after running this many new trials; used to exercise the
    /// interrupt-and-resume contract.
    pub stop_after: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            n_trials: 16,
            epochs: 5,
            batch_size: 4,
            base_seed: 0,
            bench_warmup: 5,
            bench_repeats: 10,
            stop_after: None,
        }
    }
}

const CSV_HEADER: [&str; 8] = [
    "trial", "arch", "loss", "runtime_ms", "params", "macs", "seed", "config_json",
];

/// Reads a results CSV; missing file yields an empty list.
pub fn read_results(path: &Path) -> Result<Vec<TrialResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bad = |detail: String| Error::BadFormat {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        if r.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected {} columns, found {}", CSV_HEADER.len(), r.len())));
        }
        out.push(TrialResult {
            trial: r[0].parse().map_err(|_| bad(format!("bad trial id '{}'", &r[0])))?,
            arch: r[1].to_string(),
            loss: r[2].parse().map_err(|_| bad(format!("bad loss '{}'", &r[2])))?,
            runtime_ms: r[3].parse().map_err(|_| bad(format!("bad runtime '{}'", &r[3])))?,
            params: r[4].parse().map_err(|_| bad(format!("bad params '{}'", &r[4])))?,
            macs: r[5].parse().map_err(|_| bad(format!("bad macs '{}'", &r[5])))?,
            seed: r[6].parse().map_err(|_| bad(format!("bad seed '{}'", &r[6])))?,
            config: serde_json::from_str(&r[7])?,
        });
    }
    Ok(out)
}

fn append_result(path: &Path, result: &TrialResult, write_header: bool) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if write_header {
        w.write_record(CSV_HEADER)?;
    }
    w.write_record([
        result.trial.to_string(),
        result.arch.clone(),
        result.loss.to_string(),
        result.runtime_ms.to_string(),
        result.params.to_string(),
        result.macs.to_string(),
        result.seed.to_string(),
        serde_json::to_string(&result.config)?,
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn run_trial(
    space: &ParamSpace,
    trial: usize,
    train_set: &[Sample],
    val_set: &[Sample],
    options: &SearchOptions,
) -> TrialResult {
    let seed = rng::derive_seed(options.base_seed, "trial", trial as u64);
    let config = space.sample(&mut rng::stream(seed, "config", 0));
    let [_, _, h, w] = train_set[0].input.shape();
    let params = count_params(&config).unwrap_or(0);
    let macs = count_macs(&config, h, w).unwrap_or(0);
    let mut result = TrialResult {
        trial,
        arch: space.architecture.to_string(),
        loss: f64::NAN,
        runtime_ms: 0.0,
        params,
        macs,
        seed,
        config: config.clone(),
    };
    let attempt = || -> Result<(f64, f64)> {
        let mut model = build_model::<f32>(&config, seed)?;
        let cfg = TrainConfig {
            epochs: options.epochs,
            batch_size: options.batch_size,
            seed,
            ..TrainConfig::default()
        };
        let history = train(&mut model, train_set, val_set, &cfg)?;
        let loss = history.last().expect("epochs >= 1").val_loss;
        let bench = bench_runtime(&mut model, h, w, options.bench_warmup, options.bench_repeats)?;
        Ok((loss, bench.mean_ms))
    };
    match attempt() {
        Ok((loss, runtime_ms)) => {
            result.loss = loss;
            result.runtime_ms = runtime_ms;
        }
        Err(e) => {
            eprintln!("trial {trial} ({}) failed: {e}", space.architecture);
        }
    }
    result
}

/// Runs up to `n_trials` random-search trials for one architecture,
/// appending each result to `csv_path` as it completes. Trial ids already
/// present in the file (for this architecture) are skipped, so an
/// interrupted search resumes where it stopped. Returns all results for the
/// architecture sorted by trial id.
pub fn run_search(
    space: &ParamSpace,
    train_set: &[Sample],
    val_set: &[Sample],
    options: &SearchOptions,
    csv_path: &Path,
) -> Result<Vec<TrialResult>> {
    if options.n_trials < 1 {
        return Err(Error::InvalidArgument {
            op: "run_search",
            detail: "n_trials must be >= 1".into(),
        });
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset("search".into()));
    }
    let existing = read_results(csv_path)?;
    let done: HashSet<usize> = existing
        .iter()
        .filter(|r| r.arch == space.architecture)
        .map(|r| r.trial)
        .collect();
    let mut results: Vec<TrialResult> = existing
        .into_iter()
        .filter(|r| r.arch == space.architecture)
        .collect();

    let mut header_pending = !csv_path.exists();
    let mut ran = 0usize;
    for trial in 0..options.n_trials {
        if done.contains(&trial) {
            continue;
        }
        if let Some(limit) = options.stop_after {
            if ran >= limit {
                break;
            }
        }
        let result = run_trial(space, trial, train_set, val_set, options);
        append_result(csv_path, &result, header_pending)?;
        header_pending = false;
        results.push(result);
        ran += 1;
    }
    results.sort_by_key(|r| r.trial);
    Ok(results)
}

/// Minimum-loss successful trial per architecture, ties broken by lower
/// runtime then lower trial id. Architectures with no successful trial are
/// absent from the output.
pub fn select_best(results: &[TrialResult]) -> Vec<TrialResult> {
    let mut best: Vec<TrialResult> = Vec::new();
    for r in results.iter().filter(|r| !r.failed()) {
        match best.iter_mut().find(|b| b.arch == r.arch) {
            None => best.push(r.clone()),
            Some(b) => {
                let better = r
                    .loss
                    .total_cmp(&b.loss)
                    .then(r.runtime_ms.total_cmp(&b.runtime_ms))
                    .then(r.trial.cmp(&b.trial))
                    .is_lt();
                if better {
                    *b = r.clone();
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sampled_configs_stay_inside_their_space() {
        for space in ParamSpace::all(false) {
            let mut r = rng::stream(1, "space", 0);
            for _ in 0..50 {
                let config = space.sample(&mut r);
                config.validate().unwrap();
                assert!(space.contains(&config), "{}", space.architecture);
            }
        }
    }

    #[test]
    fn same_stream_state_gives_same_config() {
        let space = ParamSpace::for_architecture("U-NeXt", false).unwrap();
        let a = space.sample(&mut rng::stream(7, "cfg", 0));
        let b = space.sample(&mut rng::stream(7, "cfg", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn default_seed_sampling_covers_every_axis() {
        for space in ParamSpace::all(false) {
            let mut r = rng::stream(0, "coverage", 0);
            let configs: Vec<ModelConfig> = (0..128).map(|_| space.sample(&mut r)).collect();
            let distinct = |f: &dyn Fn(&ModelConfig) -> u64| {
                configs.iter().map(f).collect::<HashSet<u64>>().len()
            };
            assert!(distinct(&|c| c.encoder_channels[0] as u64) >= 2);
            assert!(distinct(&|c| c.encoder_blocks[0] as u64) >= 2);
            assert!(distinct(&|c| c.decoder_blocks[0] as u64) >= 2);
            assert!(distinct(&|c| c.output_blocks as u64) >= 2);
            assert!(distinct(&|c| c.resmerge_blocks as u64) >= 2);
            assert!(distinct(&|c| (c.dropout * 10.0) as u64) >= 2);
        }
    }

    #[test]
    fn tiny_space_keeps_only_smallest_widths() {
        let unet = ParamSpace::for_architecture("u-net", true).unwrap();
        assert_eq!(unet.channel_options, vec![[32, 64, 128, 256, 512]]);
        let half = ParamSpace::for_architecture("half-u-next", true).unwrap();
        assert_eq!(half.channel_options, vec![[32; 5]]);
    }

    #[test]
    fn architecture_names_resolve() {
        assert_eq!(canonical_architecture("half-u-next").unwrap(), "Half-U-NeXt");
        assert_eq!(canonical_architecture("U-Net").unwrap(), "U-Net");
        assert!(canonical_architecture("resnet").is_err());
    }

    fn toy_samples(n: usize) -> Vec<Sample> {
        use rand::Rng;
        let mut r = rng::stream(0, "search-toy", 0);
        (0..n)
            .map(|k| {
                let mut input = Tensor::zeros([1, 1, 64, 64]);
                for v in input.data_mut() {
                    *v = r.gen_range(0.0..1.0);
                }
                let mut target = Tensor::zeros([1, 3, 64, 64]);
                for v in target.data_mut() {
                    *v = r.gen_range(0.2..0.8);
                }
                Sample {
                    scene_id: k as u64,
                    direction: 0,
                    input,
                    target,
                }
            })
            .collect()
    }

    /// A width-4 space so the search loop itself can be tested quickly.
    fn micro_space() -> ParamSpace {
        ParamSpace {
            architecture: "Half-U-NeXt",
            block_type: BlockType::Convnext,
            decoder_type: DecoderType::HalfUnet,
            channel_options: vec![[4; 5]],
            block_options: [1, 1, 1],
            dropout_options: [0.1, 0.2, 0.3],
        }
    }

    fn micro_options(n_trials: usize) -> SearchOptions {
        SearchOptions {
            n_trials,
            epochs: 1,
            batch_size: 2,
            base_seed: 3,
            bench_warmup: 0,
            bench_repeats: 2,
            stop_after: None,
        }
    }

    #[test]
    fn single_trial_populates_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("results.csv");
        let samples = toy_samples(4);
        let results = run_search(&micro_space(), &samples, &samples, &micro_options(1), &csv).unwrap();
        assert_eq!(results.len(), 1);
        let r = &results[0];
        assert!(!r.failed());
        assert!(r.runtime_ms > 0.0);
        assert_eq!(r.params, count_params(&r.config).unwrap());
        assert_eq!(r.macs, count_macs(&r.config, 64, 64).unwrap());
        assert_eq!(r.seed, rng::derive_seed(3, "trial", 0));
    }

    #[test]
    fn interrupted_search_resumes_to_the_same_result_set() {
        let dir = tempfile::tempdir().unwrap();
        let samples = toy_samples(4);
        let space = micro_space();

        let full_csv = dir.path().join("full.csv");
        let full = run_search(&space, &samples, &samples, &micro_options(3), &full_csv).unwrap();

        let part_csv = dir.path().join("part.csv");
        let mut interrupted = micro_options(3);
        interrupted.stop_after = Some(1);
        let partial = run_search(&space, &samples, &samples, &interrupted, &part_csv).unwrap();
        assert_eq!(partial.len(), 1);
        let resumed = run_search(&space, &samples, &samples, &micro_options(3), &part_csv).unwrap();

        assert_eq!(resumed.len(), full.len());
        for (a, b) in resumed.iter().zip(&full) {
            assert_eq!(a.trial, b.trial);
            assert_eq!(a.loss, b.loss, "trial {}", a.trial);
            assert_eq!(a.config, b.config);
        }
    }

    #[test]
    fn results_survive_the_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("results.csv");
        let samples = toy_samples(2);
        let written = run_search(&micro_space(), &samples, &samples, &micro_options(2), &csv).unwrap();
        let read = read_results(&csv).unwrap();
        assert_eq!(read.len(), written.len());
        for (a, b) in read.iter().zip(&written) {
            assert_eq!(a.trial, b.trial);
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.config, b.config);
        }
    }

    #[test]
    fn best_selection_breaks_ties_by_runtime_then_trial() {
        let config = micro_space().sample(&mut rng::stream(0, "t", 0));
        let mk = |trial, arch: &str, loss, runtime_ms| TrialResult {
            trial,
            arch: arch.into(),
            loss,
            runtime_ms,
            params: 1,
            macs: 1,
            seed: 0,
            config: config.clone(),
        };
        let results = vec![
            mk(0, "U-Net", 0.5, 2.0),
            mk(1, "U-Net", 0.5, 1.0),
            mk(2, "U-Net", 0.5, 1.0),
            mk(0, "U-NeXt", f64::NAN, 0.0),
            mk(1, "U-NeXt", 0.4, 9.0),
            mk(0, "Half-U-Net", f64::NAN, 0.0),
        ];
        let best = select_best(&results);
        assert_eq!(best.len(), 2);
        let unet = best.iter().find(|b| b.arch == "U-Net").unwrap();
        assert_eq!((unet.trial, unet.runtime_ms), (1, 1.0));
        assert_eq!(best.iter().find(|b| b.arch == "U-NeXt").unwrap().trial, 1);
    }
}

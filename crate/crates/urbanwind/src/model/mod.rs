//! The configurable architecture: stem, U-Net encoder, U-Net or Half-U-Net
//! decoder, ResMerge, output head, assembled from a [`ModelConfig`].

mod blocks;
mod counting;

pub use counting::{count_macs, count_params};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Mode, Tape, Var};
use crate::params::ParamRegistry;
use crate::rng;
use crate::tensor::{Element, Tensor};

use blocks::{Decoder, OutputHead, ResMerge, Stage, Stem};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Unet,
    Convnext,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderType {
    Unet,
    HalfUnet,
}

fn default_input_channels() -> usize {
    1
}
fn default_output_channels() -> usize {
    3
}

/// Full architectural genotype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub block_type: BlockType,
    pub decoder_type: DecoderType,
    pub encoder_channels: [usize; 5],
    pub decoder_channels: [usize; 5],
    pub encoder_blocks: [usize; 5],
    pub decoder_blocks: [usize; 5],
    pub output_blocks: usize,
    pub resmerge_blocks: usize,
    pub dropout: f64,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_output_channels")]
    pub output_channels: usize,
}

impl ModelConfig {
    /// Checks every config invariant; the error names the violated rule.
    pub fn validate(&self) -> Result<()> {
        let fail = |rule: &str| Err(Error::InvalidConfig(rule.to_string()));
        match self.decoder_type {
            DecoderType::Unet => {
                let mut reversed = self.encoder_channels;
                reversed.reverse();
                if self.decoder_channels != reversed {
                    return fail("U-Net decoder requires decoder_channels == reverse(encoder_channels)");
                }
            }
            DecoderType::HalfUnet => {
                if self.decoder_channels != self.encoder_channels {
                    return fail("Half-U-Net decoder requires decoder_channels == encoder_channels");
                }
                if self.encoder_channels.iter().any(|&c| c != self.encoder_channels[0]) {
                    return fail("Half-U-Net decoder requires all encoder_channels equal");
                }
            }
        }
        if self
            .encoder_blocks
            .iter()
            .chain(self.decoder_blocks.iter())
            .chain([&self.output_blocks, &self.resmerge_blocks])
            .any(|&b| b < 1)
        {
            return fail("all block counts must be >= 1");
        }
        if self.encoder_channels[0] <= self.input_channels {
            return fail("encoder_channels[0] must exceed input_channels");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.input_channels < 1 || self.output_channels < 1 {
            return fail("input_channels and output_channels must be >= 1");
        }
        Ok(())
    }

    /// Table-style architecture name derived from decoder and block type.
    pub fn architecture(&self) -> &'static str {
        match (self.decoder_type, self.block_type) {
            (DecoderType::HalfUnet, BlockType::Convnext) => "Half-U-NeXt",
            (DecoderType::HalfUnet, BlockType::Unet) => "Half-U-Net",
            (DecoderType::Unet, BlockType::Convnext) => "U-NeXt",
            (DecoderType::Unet, BlockType::Unet) => "U-Net",
        }
    }
}

/// Weight initialization for a registered parameter.
#[derive(Copy, Clone, Debug)]
pub(crate) enum Init {
    KaimingUniform { fan_in: usize },
    Zeros,
    Ones,
    Constant(f64),
}

/// Receives parameter registrations during model construction. The real sink
/// allocates and initializes tensors; the spec sink only records shapes, so
/// huge configs can be enumerated without allocating their weights.
pub(crate) trait Sink {
    fn register(&mut self, name: String, shape: [usize; 4], decay: bool, init: Init) -> usize;
}

struct RealSink<'a, E: Element> {
    registry: &'a mut ParamRegistry<E>,
    rng: ChaCha8Rng,
}

impl<E: Element> Sink for RealSink<'_, E> {
    fn register(&mut self, name: String, shape: [usize; 4], decay: bool, init: Init) -> usize {
        let mut value = Tensor::zeros(shape);
        match init {
            Init::KaimingUniform { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                for v in value.data_mut() {
                    *v = E::from_f64(self.rng.gen_range(-bound..bound));
                }
            }
            Init::Zeros => {}
            Init::Ones => {
                for v in value.data_mut() {
                    *v = E::one();
                }
            }
            Init::Constant(c) => {
                for v in value.data_mut() {
                    *v = E::from_f64(c);
                }
            }
        }
        self.registry.register(name, value, decay).expect("unique param names")
    }
}

/// Shape/decay record of one parameter, without its data.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    pub decay: bool,
}

impl ParamSpec {
    pub fn len(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct SpecSink {
    specs: Vec<ParamSpec>,
}

impl Sink for SpecSink {
    fn register(&mut self, name: String, shape: [usize; 4], decay: bool, _init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, decay });
        self.specs.len() - 1
    }
}

/// Walks the construction path and returns every parameter's name and shape
/// without allocating weight data.
pub fn param_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let mut sink = SpecSink { specs: Vec::new() };
    let _parts = Parts::<f32>::build(config, &mut sink);
    Ok(sink.specs)
}

struct Parts<E: Element> {
    stem: Stem,
    encoder: Vec<Stage<E>>,
    decoder: Decoder<E>,
    resmerge: ResMerge<E>,
    head: OutputHead<E>,
}

impl<E: Element> Parts<E> {
    fn build(config: &ModelConfig, sink: &mut dyn Sink) -> Parts<E> {
        let stem = Stem::new(config, sink);
        let encoder = blocks::build_encoder(config, sink);
        let decoder = Decoder::new(config, sink);
        let resmerge = ResMerge::new(config, sink);
        let head = OutputHead::new(config, sink);
        Parts {
            stem,
            encoder,
            decoder,
            resmerge,
            head,
        }
    }
}

/// A built model: config, parameters, and the layer tree.
pub struct Model<E: Element> {
    config: ModelConfig,
    registry: ParamRegistry<E>,
    parts: Parts<E>,
    dropout_rng: ChaCha8Rng,
    seed: u64,
}

/// Vars produced by one forward pass: the prediction plus the leaf handles
/// needed to read gradients back out.
pub struct ForwardPass {
    pub output: Var,
    pub input_var: Var,
    pub param_vars: Vec<Var>,
}

/// Deterministic model construction from a validated config and a seed.
pub fn build_model<E: Element>(config: &ModelConfig, seed: u64) -> Result<Model<E>> {
    config.validate()?;
    let mut registry = ParamRegistry::new();
    let mut sink = RealSink {
        registry: &mut registry,
        rng: rng::stream(seed, "init", 0),
    };
    let parts = Parts::build(config, &mut sink);
    Ok(Model {
        config: config.clone(),
        registry,
        parts,
        dropout_rng: rng::stream(seed, "dropout", 0),
        seed,
    })
}

impl<E: Element> Model<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn registry(&self) -> &ParamRegistry<E> {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ParamRegistry<E> {
        &mut self.registry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Resets the dropout stream, replaying training stochasticity exactly.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = rng::stream(seed, "dropout", 0);
    }

    pub(crate) fn dropout_rng_state(&self) -> (u64, [u8; 32]) {
        (self.dropout_rng.get_word_pos() as u64, self.dropout_rng.get_seed())
    }

    pub(crate) fn restore_dropout_rng(&mut self, word_pos: u64, seed_bytes: [u8; 32]) {
        use rand_chacha::rand_core::SeedableRng;
        self.dropout_rng = ChaCha8Rng::from_seed(seed_bytes);
        self.dropout_rng.set_word_pos(word_pos as u128);
    }

    pub(crate) fn running_stats_tensors(&self) -> Vec<(String, Vec<E>)> {
        let mut out = Vec::new();
        for stage in &self.parts.encoder {
            stage.collect_stats(&mut out);
        }
        self.parts.decoder.collect_stats(&mut out);
        self.parts.resmerge.collect_stats(&mut out);
        self.parts.head.collect_stats(&mut out);
        out
    }

    pub(crate) fn set_running_stats(&mut self, stats: &std::collections::HashMap<String, Vec<E>>) {
        let mut apply = |slot: &mut Vec<E>, name: &str| {
            if let Some(v) = stats.get(name) {
                slot.clone_from(v);
            }
        };
        for stage in self.parts.encoder.iter_mut() {
            stage.restore_stats(&mut apply);
        }
        self.parts.decoder.restore_stats(&mut apply);
        self.parts.resmerge.restore_stats(&mut apply);
        self.parts.head.restore_stats(&mut apply);
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.config.input_channels {
            return Err(Error::ShapeMismatch {
                op: "model forward",
                detail: format!("input has {c} channels, config expects {}", self.config.input_channels),
            });
        }
        if h % 64 != 0 || w % 64 != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                op: "model forward",
                detail: format!("spatial extents {h}x{w} must be positive multiples of 64"),
            });
        }
        Ok(())
    }

    /// Forward pass over externally supplied parameter leaves (one [`Var`]
    /// per registry slot, in registry order).
    pub fn forward_leaves(
        &mut self,
        tape: &mut Tape<E>,
        param_vars: &[Var],
        input: Var,
        mode: Mode,
    ) -> Result<Var> {
        self.check_input(tape.value(input).shape())?;
        assert_eq!(param_vars.len(), self.registry.len());
        let rate = self.config.dropout;
        let parts = &mut self.parts;
        let rng = &mut self.dropout_rng;

        let stem_out = parts.stem.forward(tape, param_vars, input)?;
        let mut stages = Vec::with_capacity(5);
        let mut x = stem_out;
        for (i, stage) in parts.encoder.iter_mut().enumerate() {
            if i > 0 {
                x = tape.maxpool2d(x)?;
            }
            x = stage.forward(tape, param_vars, mode, rng, rate, x)?;
            stages.push(x);
        }
        let dec = parts.decoder.forward(tape, param_vars, mode, rng, rate, &stages)?;
        let merged = parts.resmerge.forward(tape, param_vars, mode, rng, dec, input)?;
        parts.head.forward(tape, param_vars, mode, rng, merged)
    }

    /// Forward pass from a raw input tensor; inserts all parameters as tape
    /// leaves and returns their handles alongside the prediction.
    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        input: &Tensor<E>,
        mode: Mode,
    ) -> Result<ForwardPass> {
        let param_vars: Vec<Var> = (0..self.registry.len())
            .map(|i| tape.leaf(self.registry.get(i).value.clone()))
            .collect();
        let input_var = tape.leaf(input.clone());
        let output = self.forward_leaves(tape, &param_vars, input_var, mode)?;
        Ok(ForwardPass {
            output,
            input_var,
            param_vars,
        })
    }

    /// Convenience inference: eval-mode forward returning the prediction.
    pub fn predict(&mut self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, input, Mode::Eval)?;
        Ok(tape.value(pass.output).clone())
    }
}

#[cfg(test)]
mod tests;

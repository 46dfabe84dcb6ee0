//! Layer tree: stem, compute blocks, encoder stages, the two decoder
//! variants, ResMerge and the output head. Layers hold indices into the
//! parameter registry; values flow through a [`Tape`].

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{Activation, Mode, RunningStats, Tape, Var};
use crate::tensor::Element;

use super::{BlockType, DecoderType, Init, ModelConfig, Sink};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LN_EPS: f64 = 1e-6;

pub(crate) struct Conv {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        sink: &mut dyn Sink,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Conv {
        let cg = cin / groups;
        let weight = sink.register(
            format!("{name}.weight"),
            [cout, cg, k, k],
            true,
            Init::KaimingUniform { fan_in: cg * k * k },
        );
        let bias = Some(sink.register(format!("{name}.bias"), [1, cout, 1, 1], false, Init::Zeros));
        Conv {
            weight,
            bias,
            stride,
            padding,
            groups,
        }
    }

    /// Final prediction conv: zero weight and mid-range bias, so a freshly
    /// built model predicts the normalized encoding of zero velocity (0.5)
    /// everywhere instead of spending early training steps on the offset.
    fn new_head(sink: &mut dyn Sink, name: &str, cin: usize, cout: usize) -> Conv {
        let weight = sink.register(format!("{name}.weight"), [cout, cin, 1, 1], true, Init::Zeros);
        let bias =
            Some(sink.register(format!("{name}.bias"), [1, cout, 1, 1], false, Init::Constant(0.5)));
        Conv {
            weight,
            bias,
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }

    fn forward<E: Element>(&self, tape: &mut Tape<E>, pvars: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            pvars[self.weight],
            self.bias.map(|b| pvars[b]),
            self.stride,
            self.padding,
            self.groups,
        )
    }
}

struct BatchNorm<E: Element> {
    scale: usize,
    shift: usize,
    stats: RunningStats<E>,
    name: String,
}

impl<E: Element> BatchNorm<E> {
    fn new(sink: &mut dyn Sink, name: &str, channels: usize) -> Self {
        let scale = sink.register(format!("{name}.scale"), [1, channels, 1, 1], false, Init::Ones);
        let shift = sink.register(format!("{name}.shift"), [1, channels, 1, 1], false, Init::Zeros);
        BatchNorm {
            scale,
            shift,
            stats: RunningStats::new(channels),
            name: name.to_string(),
        }
    }

    fn forward(&mut self, tape: &mut Tape<E>, pvars: &[Var], mode: Mode, x: Var) -> Result<Var> {
        tape.batchnorm2d(
            x,
            pvars[self.scale],
            pvars[self.shift],
            &mut self.stats,
            mode,
            E::from_f64(BN_EPS),
            E::from_f64(BN_MOMENTUM),
        )
    }
}

struct LayerNorm {
    scale: usize,
    shift: usize,
}

impl LayerNorm {
    fn new(sink: &mut dyn Sink, name: &str, channels: usize) -> Self {
        let scale = sink.register(format!("{name}.scale"), [1, channels, 1, 1], false, Init::Ones);
        let shift = sink.register(format!("{name}.shift"), [1, channels, 1, 1], false, Init::Zeros);
        LayerNorm { scale, shift }
    }

    fn forward<E: Element>(&self, tape: &mut Tape<E>, pvars: &[Var], x: Var) -> Result<Var> {
        tape.layernorm_channels(x, pvars[self.scale], pvars[self.shift], E::from_f64(LN_EPS))
    }
}

/// Two conv/batchnorm/relu sandwiches, the original U-Net compute block.
pub(crate) struct UnetBlock<E: Element> {
    conv1: Conv,
    bn1: BatchNorm<E>,
    conv2: Conv,
    bn2: BatchNorm<E>,
}

/// Depthwise 7x7, channel layer norm, 4x pointwise expansion with GELU,
/// pointwise contraction, residual add; a 1x1 projection aligns the input
/// when channel counts differ.
pub(crate) struct ConvnextBlock {
    proj: Option<Conv>,
    dw: Conv,
    ln: LayerNorm,
    pw1: Conv,
    pw2: Conv,
}

pub(crate) enum Block<E: Element> {
    Unet(UnetBlock<E>),
    Convnext(ConvnextBlock),
}

impl<E: Element> Block<E> {
    pub(crate) fn new(sink: &mut dyn Sink, name: &str, kind: BlockType, cin: usize, n: usize) -> Self {
        match kind {
            BlockType::Unet => Block::Unet(UnetBlock {
                conv1: Conv::new(sink, &format!("{name}.conv1"), cin, n, 3, 1, 1, 1),
                bn1: BatchNorm::new(sink, &format!("{name}.bn1"), n),
                conv2: Conv::new(sink, &format!("{name}.conv2"), n, n, 3, 1, 1, 1),
                bn2: BatchNorm::new(sink, &format!("{name}.bn2"), n),
            }),
            BlockType::Convnext => Block::Convnext(ConvnextBlock {
                proj: (cin != n).then(|| Conv::new(sink, &format!("{name}.proj"), cin, n, 1, 1, 0, 1)),
                dw: Conv::new(sink, &format!("{name}.dw"), n, n, 7, 1, 3, n),
                ln: LayerNorm::new(sink, &format!("{name}.ln"), n),
                pw1: Conv::new(sink, &format!("{name}.pw1"), n, 4 * n, 1, 1, 0, 1),
                pw2: Conv::new(sink, &format!("{name}.pw2"), 4 * n, n, 1, 1, 0, 1),
            }),
        }
    }

    pub(crate) fn forward(
        &mut self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        mode: Mode,
        x: Var,
    ) -> Result<Var> {
        match self {
            Block::Unet(b) => {
                let mut y = b.conv1.forward(tape, pvars, x)?;
                y = b.bn1.forward(tape, pvars, mode, y)?;
                y = tape.activation(y, Activation::Relu);
                y = b.conv2.forward(tape, pvars, y)?;
                y = b.bn2.forward(tape, pvars, mode, y)?;
                Ok(tape.activation(y, Activation::Relu))
            }
            Block::Convnext(b) => {
                let residual = match &b.proj {
                    Some(p) => p.forward(tape, pvars, x)?,
                    None => x,
                };
                let mut y = b.dw.forward(tape, pvars, residual)?;
                y = b.ln.forward(tape, pvars, y)?;
                y = b.pw1.forward(tape, pvars, y)?;
                y = tape.activation(y, Activation::Gelu);
                y = b.pw2.forward(tape, pvars, y)?;
                tape.add(y, residual)
            }
        }
    }

    fn collect_stats(&self, out: &mut Vec<(String, Vec<E>)>) {
        if let Block::Unet(b) = self {
            for bn in [&b.bn1, &b.bn2] {
                out.push((format!("{}.running_mean", bn.name), bn.stats.mean.clone()));
                out.push((format!("{}.running_var", bn.name), bn.stats.var.clone()));
            }
        }
    }

    fn restore_stats(&mut self, apply: &mut impl FnMut(&mut Vec<E>, &str)) {
        if let Block::Unet(b) = self {
            for bn in [&mut b.bn1, &mut b.bn2] {
                apply(&mut bn.stats.mean, &format!("{}.running_mean", bn.name));
                apply(&mut bn.stats.var, &format!("{}.running_var", bn.name));
            }
        }
    }
}

/// A run of compute blocks followed by one channelwise dropout.
pub(crate) struct Stage<E: Element> {
    blocks: Vec<Block<E>>,
}

impl<E: Element> Stage<E> {
    pub(crate) fn new(
        sink: &mut dyn Sink,
        name: &str,
        kind: BlockType,
        cin: usize,
        width: usize,
        count: usize,
    ) -> Self {
        let blocks = (0..count)
            .map(|j| {
                let block_cin = if j == 0 { cin } else { width };
                Block::new(sink, &format!("{name}.b{j}"), kind, block_cin, width)
            })
            .collect();
        Stage { blocks }
    }

    pub(crate) fn forward(
        &mut self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        mode: Mode,
        rng: &mut ChaCha8Rng,
        dropout: f64,
        mut x: Var,
    ) -> Result<Var> {
        for block in &mut self.blocks {
            x = block.forward(tape, pvars, mode, x)?;
        }
        tape.dropout2d(x, dropout, mode, rng)
    }

    fn forward_no_dropout(
        &mut self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        mode: Mode,
        mut x: Var,
    ) -> Result<Var> {
        for block in &mut self.blocks {
            x = block.forward(tape, pvars, mode, x)?;
        }
        Ok(x)
    }

    pub(crate) fn collect_stats(&self, out: &mut Vec<(String, Vec<E>)>) {
        for b in &self.blocks {
            b.collect_stats(out);
        }
    }

    pub(crate) fn restore_stats(&mut self, apply: &mut impl FnMut(&mut Vec<E>, &str)) {
        for b in &mut self.blocks {
            b.restore_stats(apply);
        }
    }
}

/// 4x4 stride-4 downscale, then parallel 7x7 and 1x1 branches concatenated
/// to the first encoder width.
pub(crate) struct Stem {
    down4: Conv,
    conv7: Conv,
    conv1: Conv,
}

impl Stem {
    pub(crate) fn new(config: &ModelConfig, sink: &mut dyn Sink) -> Stem {
        let cin = config.input_channels;
        let c0 = config.encoder_channels[0];
        Stem {
            down4: Conv::new(sink, "stem.down4", cin, cin, 4, 4, 0, 1),
            conv7: Conv::new(sink, "stem.conv7", cin, cin, 7, 1, 3, 1),
            conv1: Conv::new(sink, "stem.conv1", cin, c0 - cin, 1, 1, 0, 1),
        }
    }

    pub(crate) fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        input: Var,
    ) -> Result<Var> {
        let down = self.down4.forward(tape, pvars, input)?;
        let a = self.conv7.forward(tape, pvars, down)?;
        let b = self.conv1.forward(tape, pvars, down)?;
        tape.concat_channels(a, b)
    }
}

pub(crate) fn build_encoder<E: Element>(config: &ModelConfig, sink: &mut dyn Sink) -> Vec<Stage<E>> {
    (0..5)
        .map(|i| {
            let cin = if i == 0 {
                config.encoder_channels[0]
            } else {
                config.encoder_channels[i - 1]
            };
            Stage::new(
                sink,
                &format!("encoder.s{i}"),
                config.block_type,
                cin,
                config.encoder_channels[i],
                config.encoder_blocks[i],
            )
        })
        .collect()
}

pub(crate) enum Decoder<E: Element> {
    /// Four upsample+concat junctions mirroring the encoder.
    Unet { junctions: Vec<Stage<E>> },
    /// All scales upsampled to the stem resolution and fused by summation.
    Half { stage: Stage<E> },
}

impl<E: Element> Decoder<E> {
    pub(crate) fn new(config: &ModelConfig, sink: &mut dyn Sink) -> Self {
        match config.decoder_type {
            DecoderType::Unet => {
                let dc = config.decoder_channels;
                let ec = config.encoder_channels;
                let junctions = (0..4)
                    .map(|i| {
                        // junction i consumes concat(upsampled, skip from stage 3-i)
                        let cin = dc[i] + ec[3 - i];
                        Stage::new(
                            sink,
                            &format!("decoder.j{i}"),
                            config.block_type,
                            cin,
                            dc[i + 1],
                            config.decoder_blocks[i],
                        )
                    })
                    .collect();
                Decoder::Unet { junctions }
            }
            DecoderType::HalfUnet => {
                let width = config.decoder_channels[0];
                let total: usize = config.decoder_blocks.iter().sum();
                Decoder::Half {
                    stage: Stage::new(sink, "decoder.fused", config.block_type, width, width, total),
                }
            }
        }
    }

    /// Output channel width of the decoder.
    pub(crate) fn out_width(config: &ModelConfig) -> usize {
        match config.decoder_type {
            DecoderType::Unet => config.decoder_channels[4],
            DecoderType::HalfUnet => config.decoder_channels[0],
        }
    }

    pub(crate) fn forward(
        &mut self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        mode: Mode,
        rng: &mut ChaCha8Rng,
        dropout: f64,
        stages: &[Var],
    ) -> Result<Var> {
        match self {
            Decoder::Unet { junctions } => {
                let mut x = stages[4];
                for (i, junction) in junctions.iter_mut().enumerate() {
                    x = tape.upsample_nearest(x, 2)?;
                    x = tape.concat_channels(x, stages[3 - i])?;
                    x = junction.forward(tape, pvars, mode, rng, dropout, x)?;
                }
                Ok(x)
            }
            Decoder::Half { stage } => {
                let mut fused = stages[0];
                for (k, &deep) in stages.iter().enumerate().skip(1) {
                    let mut up = deep;
                    for _ in 0..k {
                        up = tape.upsample_nearest(up, 2)?;
                    }
                    fused = tape.add(fused, up)?;
                }
                stage.forward(tape, pvars, mode, rng, dropout, fused)
            }
        }
    }

    pub(crate) fn collect_stats(&self, out: &mut Vec<(String, Vec<E>)>) {
        match self {
            Decoder::Unet { junctions } => junctions.iter().for_each(|s| s.collect_stats(out)),
            Decoder::Half { stage } => stage.collect_stats(out),
        }
    }

    pub(crate) fn restore_stats(&mut self, apply: &mut impl FnMut(&mut Vec<E>, &str)) {
        match self {
            Decoder::Unet { junctions } => junctions.iter_mut().for_each(|s| s.restore_stats(apply)),
            Decoder::Half { stage } => stage.restore_stats(apply),
        }
    }
}

/// Restores full input resolution: upsampled decoder output plus an embedded
/// raw input, refined by a residual block stack.
pub(crate) struct ResMerge<E: Element> {
    embed: Conv,
    stack: Stage<E>,
}

impl<E: Element> ResMerge<E> {
    pub(crate) fn new(config: &ModelConfig, sink: &mut dyn Sink) -> Self {
        let width = Decoder::<E>::out_width(config);
        ResMerge {
            embed: Conv::new(sink, "resmerge.embed", config.input_channels, width, 3, 1, 1, 1),
            stack: Stage::new(
                sink,
                "resmerge",
                config.block_type,
                width,
                width,
                config.resmerge_blocks,
            ),
        }
    }

    pub(crate) fn forward(
        &mut self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        mode: Mode,
        _rng: &mut ChaCha8Rng,
        decoder_out: Var,
        raw_input: Var,
    ) -> Result<Var> {
        let up = tape.upsample_nearest(decoder_out, 4)?;
        let emb = self.embed.forward(tape, pvars, raw_input)?;
        let sum = tape.add(up, emb)?;
        let refined = self.stack.forward_no_dropout(tape, pvars, mode, sum)?;
        tape.add(refined, sum)
    }

    pub(crate) fn collect_stats(&self, out: &mut Vec<(String, Vec<E>)>) {
        self.stack.collect_stats(out);
    }

    pub(crate) fn restore_stats(&mut self, apply: &mut impl FnMut(&mut Vec<E>, &str)) {
        self.stack.restore_stats(apply);
    }
}

/// Compute blocks at full resolution, then a linear 1x1 conv to the output
/// channel count.
pub(crate) struct OutputHead<E: Element> {
    stack: Stage<E>,
    final_conv: Conv,
}

impl<E: Element> OutputHead<E> {
    pub(crate) fn new(config: &ModelConfig, sink: &mut dyn Sink) -> Self {
        let width = Decoder::<E>::out_width(config);
        OutputHead {
            stack: Stage::new(
                sink,
                "head",
                config.block_type,
                width,
                width,
                config.output_blocks,
            ),
            final_conv: Conv::new_head(sink, "head.final", width, config.output_channels),
        }
    }

    pub(crate) fn forward(
        &mut self,
        tape: &mut Tape<E>,
        pvars: &[Var],
        mode: Mode,
        _rng: &mut ChaCha8Rng,
        x: Var,
    ) -> Result<Var> {
        let y = self.stack.forward_no_dropout(tape, pvars, mode, x)?;
        self.final_conv.forward(tape, pvars, y)
    }

    pub(crate) fn collect_stats(&self, out: &mut Vec<(String, Vec<E>)>) {
        self.stack.collect_stats(out);
    }

    pub(crate) fn restore_stats(&mut self, apply: &mut impl FnMut(&mut Vec<E>, &str)) {
        self.stack.restore_stats(apply);
    }
}

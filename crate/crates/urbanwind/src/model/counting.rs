//! Closed-form parameter and multiply-accumulate counts, written as explicit
//! per-layer formulas rather than by walking the built layer tree.

use crate::error::{Error, Result};

use super::{BlockType, DecoderType, ModelConfig};

pub(crate) fn conv_params(cin: u64, cout: u64, k: u64, groups: u64) -> u64 {
    k * k * (cin / groups) * cout + cout
}

/// MACs of one conv over `p` output positions; multiplies only, bias adds
/// excluded.
pub(crate) fn conv_macs(cin: u64, cout: u64, k: u64, groups: u64, p: u64) -> u64 {
    k * k * (cin / groups) * cout * p
}

fn block_params(kind: BlockType, cin: u64, n: u64) -> u64 {
    match kind {
        BlockType::Unet => conv_params(cin, n, 3, 1) + 2 * n + conv_params(n, n, 3, 1) + 2 * n,
        BlockType::Convnext => {
            let proj = if cin != n { conv_params(cin, n, 1, 1) } else { 0 };
            proj + conv_params(n, n, 7, n)
                + 2 * n
                + conv_params(n, 4 * n, 1, 1)
                + conv_params(4 * n, n, 1, 1)
        }
    }
}

fn block_macs(kind: BlockType, cin: u64, n: u64, p: u64) -> u64 {
    match kind {
        BlockType::Unet => conv_macs(cin, n, 3, 1, p) + conv_macs(n, n, 3, 1, p),
        BlockType::Convnext => {
            let proj = if cin != n { conv_macs(cin, n, 1, 1, p) } else { 0 };
            proj + conv_macs(n, n, 7, n, p)
                + conv_macs(n, 4 * n, 1, 1, p)
                + conv_macs(4 * n, n, 1, 1, p)
        }
    }
}

fn stack_params(kind: BlockType, cin: u64, n: u64, count: u64) -> u64 {
    (0..count)
        .map(|j| block_params(kind, if j == 0 { cin } else { n }, n))
        .sum()
}

fn stack_macs(kind: BlockType, cin: u64, n: u64, count: u64, p: u64) -> u64 {
    (0..count)
        .map(|j| block_macs(kind, if j == 0 { cin } else { n }, n, p))
        .sum()
}

fn decoder_width(config: &ModelConfig) -> u64 {
    match config.decoder_type {
        DecoderType::Unet => config.decoder_channels[4] as u64,
        DecoderType::HalfUnet => config.decoder_channels[0] as u64,
    }
}

/// Total learnable scalar count for a config, batch norm statistics excluded.
pub fn count_params(config: &ModelConfig) -> Result<u64> {
    config.validate()?;
    let kind = config.block_type;
    let cin = config.input_channels as u64;
    let cout = config.output_channels as u64;
    let ec: Vec<u64> = config.encoder_channels.iter().map(|&c| c as u64).collect();
    let dc: Vec<u64> = config.decoder_channels.iter().map(|&c| c as u64).collect();

    let mut total = conv_params(cin, cin, 4, 1)
        + conv_params(cin, cin, 7, 1)
        + conv_params(cin, ec[0] - cin, 1, 1);

    for i in 0..5 {
        let stage_in = if i == 0 { ec[0] } else { ec[i - 1] };
        total += stack_params(kind, stage_in, ec[i], config.encoder_blocks[i] as u64);
    }

    match config.decoder_type {
        DecoderType::Unet => {
            for i in 0..4 {
                let junction_in = dc[i] + ec[3 - i];
                total += stack_params(kind, junction_in, dc[i + 1], config.decoder_blocks[i] as u64);
            }
        }
        DecoderType::HalfUnet => {
            let count: u64 = config.decoder_blocks.iter().map(|&b| b as u64).sum();
            total += stack_params(kind, dc[0], dc[0], count);
        }
    }

    let width = decoder_width(config);
    total += conv_params(cin, width, 3, 1);
    total += stack_params(kind, width, width, config.resmerge_blocks as u64);
    total += stack_params(kind, width, width, config.output_blocks as u64);
    total += conv_params(width, cout, 1, 1);
    Ok(total)
}

/// Multiply-accumulate count for one forward pass at batch 1 and the given
/// input resolution. Only convolutions contribute.
pub fn count_macs(config: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    config.validate()?;
    if h == 0 || w == 0 || h % 64 != 0 || w % 64 != 0 {
        return Err(Error::InvalidArgument {
            op: "count_macs",
            detail: format!("resolution {h}x{w} must be positive multiples of 64"),
        });
    }
    let kind = config.block_type;
    let cin = config.input_channels as u64;
    let cout = config.output_channels as u64;
    let ec: Vec<u64> = config.encoder_channels.iter().map(|&c| c as u64).collect();
    let dc: Vec<u64> = config.decoder_channels.iter().map(|&c| c as u64).collect();
    let full = (h * w) as u64;
    let stem_p = full / 16;

    let mut total = conv_macs(cin, cin, 4, 1, stem_p)
        + conv_macs(cin, cin, 7, 1, stem_p)
        + conv_macs(cin, ec[0] - cin, 1, 1, stem_p);

    for i in 0..5 {
        let stage_in = if i == 0 { ec[0] } else { ec[i - 1] };
        let p = stem_p >> (2 * i);
        total += stack_macs(kind, stage_in, ec[i], config.encoder_blocks[i] as u64, p);
    }

    match config.decoder_type {
        DecoderType::Unet => {
            for i in 0..4 {
                let junction_in = dc[i] + ec[3 - i];
                let p = stem_p >> (2 * (3 - i));
                total += stack_macs(kind, junction_in, dc[i + 1], config.decoder_blocks[i] as u64, p);
            }
        }
        DecoderType::HalfUnet => {
            let count: u64 = config.decoder_blocks.iter().map(|&b| b as u64).sum();
            total += stack_macs(kind, dc[0], dc[0], count, stem_p);
        }
    }

    let width = decoder_width(config);
    total += conv_macs(cin, width, 3, 1, full);
    total += stack_macs(kind, width, width, config.resmerge_blocks as u64, full);
    total += stack_macs(kind, width, width, config.output_blocks as u64, full);
    total += conv_macs(width, cout, 1, 1, full);
    Ok(total)
}

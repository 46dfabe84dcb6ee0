//! Parameter and multiply-add counting for the architecture family, without
//! allocating any weights.
//!
//! Run with: cargo run --release --example count_ops

use urbanwind::model::{count_macs, count_params, param_specs, BlockType, DecoderType, ModelConfig};

fn main() -> urbanwind::Result<()> {
    // the largest U-Net-decoder table row: far too big to instantiate, but
    // cheap to enumerate
    let big = ModelConfig {
        block_type: BlockType::Convnext,
        decoder_type: DecoderType::Unet,
        encoder_channels: [128, 256, 512, 1024, 2048],
        decoder_channels: [2048, 1024, 512, 256, 128],
        encoder_blocks: [4; 5],
        decoder_blocks: [4; 5],
        output_blocks: 4,
        resmerge_blocks: 4,
        dropout: 0.1,
        input_channels: 1,
        output_channels: 3,
    };
    let params = count_params(&big)?;
    let macs = count_macs(&big, 1024, 1024)?;
    println!("{} (widest table row) at 1024x1024:", big.architecture());
    println!("  parameters:     {params:>16}  ({:.2} G)", params as f64 / 1e9);
    println!("  multiply-adds:  {macs:>16}  ({:.2} T)", macs as f64 / 1e12);

    let small = ModelConfig {
        block_type: BlockType::Unet,
        decoder_type: DecoderType::HalfUnet,
        encoder_channels: [32; 5],
        decoder_channels: [32; 5],
        encoder_blocks: [1; 5],
        decoder_blocks: [1; 5],
        output_blocks: 1,
        resmerge_blocks: 1,
        dropout: 0.1,
        input_channels: 1,
        output_channels: 3,
    };
    println!(
        "\n{} (smallest table row) at 1024x1024: {} parameters, {} multiply-adds",
        small.architecture(),
        count_params(&small)?,
        count_macs(&small, 1024, 1024)?
    );

    // the per-parameter breakdown behind the totals
    let specs = param_specs(&small)?;
    println!("\nfirst parameters of the small config:");
    for spec in specs.iter().take(8) {
        println!(
            "  {:<24} {:?}  {:>8} values  decay={}",
            spec.name,
            spec.shape,
            spec.len(),
            spec.decay
        );
    }
    println!("  ... {} parameters total", specs.len());
    Ok(())
}

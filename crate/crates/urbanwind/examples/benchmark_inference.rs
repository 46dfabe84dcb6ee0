//! Benchmarks forward-pass latency for two widths of the same architecture
//! and relates the measurements to analytic multiply-add counts.
//!
//! Run with: cargo run --release --example benchmark_inference

use urbanwind::analysis::bench_runtime;
use urbanwind::model::{build_model, count_macs, count_params, BlockType, DecoderType, ModelConfig};

fn config(width: usize) -> ModelConfig {
    ModelConfig {
        block_type: BlockType::Unet,
        decoder_type: DecoderType::HalfUnet,
        encoder_channels: [width; 5],
        decoder_channels: [width; 5],
        encoder_blocks: [1; 5],
        decoder_blocks: [1; 5],
        output_blocks: 1,
        resmerge_blocks: 1,
        dropout: 0.1,
        input_channels: 1,
        output_channels: 3,
    }
}

fn main() -> urbanwind::Result<()> {
    for width in [8, 16] {
        let c = config(width);
        let mut model = build_model::<f32>(&c, 0)?;
        let report = bench_runtime(&mut model, 64, 64, 3, 10)?;
        println!(
            "{} width {width:>3} at 64x64: {:>10} params, {:>12} MACs | mean {:>8.3} ms, \
             median {:>8.3} ms, min {:>8.3} ms, cv {:.3}",
            c.architecture(),
            count_params(&c)?,
            count_macs(&c, 64, 64)?,
            report.mean_ms,
            report.median_ms,
            report.min_ms,
            report.cv
        );
    }
    println!("\ndoubling the spatial extent quadruples the MAC count:");
    let c = config(8);
    for hw in [64, 128, 256] {
        println!("  {hw:>4}x{hw:<4} -> {:>14} MACs", count_macs(&c, hw, hw)?);
    }
    Ok(())
}

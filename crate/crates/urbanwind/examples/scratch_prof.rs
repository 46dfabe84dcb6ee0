use std::time::Instant;

use urbanwind::model::{build_model, BlockType, DecoderType, ModelConfig};
use urbanwind::ops::{Mode, Tape};
use urbanwind::tensor::Tensor;

fn main() {
    let config = ModelConfig {
        block_type: BlockType::Unet,
        decoder_type: DecoderType::Unet,
        encoder_channels: [32, 64, 128, 256, 512],
        decoder_channels: [512, 256, 128, 64, 32],
        encoder_blocks: [2; 5],
        decoder_blocks: [2; 5],
        output_blocks: 1,
        resmerge_blocks: 1,
        dropout: 0.1,
        input_channels: 1,
        output_channels: 3,
    };
    let mut model = build_model::<f32>(&config, 0).unwrap();
    let input = Tensor::<f32>::full([4, 1, 64, 64], 0.1);
    let target = Tensor::<f32>::full([4, 3, 64, 64], 0.4);

    for _ in 0..2 {
        let t = Instant::now();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &input, Mode::Train).unwrap();
        let fwd = t.elapsed();
        let loss = tape.huber_loss(pass.output, &target, 1.0).unwrap();
        let t2 = Instant::now();
        let _g = tape.backward(loss);
        let bwd = t2.elapsed();
        println!("fwd {fwd:?} bwd {bwd:?}");
    }
}

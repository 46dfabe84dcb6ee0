use std::time::Instant;

use urbanwind::data::{build_dataset, load_split};
use urbanwind::model::{build_model, BlockType, DecoderType, ModelConfig};
use urbanwind::train::{constant_mean_baseline, train, TrainConfig};

fn main() -> urbanwind::Result<()> {
    let dir = std::env::temp_dir().join("uw-c4");
    let t0 = Instant::now();
    if !dir.join("manifest.json").exists() {
        build_dataset(&dir, 16, 128, 7, 1100.0, false)?;
    }
    println!("dataset: {:?}", t0.elapsed());
    let train_set = load_split(&dir, "train")?;
    let val_set = load_split(&dir, "val")?;
    let baseline = constant_mean_baseline(&val_set, 1.0)?;
    println!("baseline {baseline:.6}, target {:.6}", baseline * 0.5);

    let config = ModelConfig {
        block_type: BlockType::Convnext,
        decoder_type: DecoderType::HalfUnet,
        encoder_channels: [32; 5],
        decoder_channels: [32; 5],
        encoder_blocks: [1; 5],
        decoder_blocks: [1; 5],
        output_blocks: 1,
        resmerge_blocks: 1,
        dropout: 0.0,
        input_channels: 1,
        output_channels: 3,
    };
    let mut model = build_model::<f32>(&config, 0)?;
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 1,
        seed: 0,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    for h in train(&mut model, &train_set, &val_set, &cfg)? {
        println!(
            "epoch {}: train {:.6} val {:.6}  ({:?})",
            h.epoch,
            h.train_loss,
            h.val_loss,
            t1.elapsed()
        );
    }
    println!("total {:?}", t0.elapsed());
    Ok(())
}

//! Trains a small model on a freshly generated dataset, checkpoints it, and
//! shows that the reloaded model evaluates identically.
//!
//! Run with: cargo run --release --example train_model

use urbanwind::checkpoint;
use urbanwind::data::{build_dataset, load_split};
use urbanwind::model::{build_model, BlockType, DecoderType, ModelConfig};
use urbanwind::train::{constant_mean_baseline, evaluate, train, TrainConfig};

fn main() -> urbanwind::Result<()> {
    let dir = std::env::temp_dir().join("urbanwind-example-train");
    build_dataset(&dir, 10, 64, 1, 1100.0, false)?;
    let train_set = load_split(&dir, "train")?;
    let val_set = load_split(&dir, "val")?;

    let config = ModelConfig {
        block_type: BlockType::Convnext,
        decoder_type: DecoderType::HalfUnet,
        encoder_channels: [8; 5],
        decoder_channels: [8; 5],
        encoder_blocks: [1; 5],
        decoder_blocks: [1; 5],
        output_blocks: 1,
        resmerge_blocks: 1,
        dropout: 0.1,
        input_channels: 1,
        output_channels: 3,
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    println!(
        "training {} (width 8) on {} samples, validating on {}",
        config.architecture(),
        train_set.len(),
        val_set.len()
    );
    let baseline = constant_mean_baseline(&val_set, cfg.huber_delta)?;
    println!("constant-mean baseline val loss: {baseline:.6}");

    let mut model = build_model::<f32>(&config, 11)?;
    for h in train(&mut model, &train_set, &val_set, &cfg)? {
        println!(
            "epoch {:>2}: train {:.6}  val {:.6}",
            h.epoch, h.train_loss, h.val_loss
        );
    }

    let ckpt = dir.join("model.ckpt");
    checkpoint::save(&ckpt, &model, None, cfg.epochs)?;
    let mut reloaded = checkpoint::load(&ckpt)?;
    let before = evaluate(&mut model, &val_set, cfg.huber_delta)?;
    let after = evaluate(&mut reloaded.model, &val_set, cfg.huber_delta)?;
    println!("checkpoint round trip: val loss {before:.6} -> {after:.6} (identical: {})", before == after);
    Ok(())
}

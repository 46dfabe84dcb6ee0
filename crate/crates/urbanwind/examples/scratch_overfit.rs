use urbanwind::data::{canonicalize, generate_scene, quantize, wind_oracle, HEIGHT_SCALE};
use urbanwind::data::Sample;
use urbanwind::model::{build_model, BlockType, DecoderType, ModelConfig};
use urbanwind::tensor::Tensor;
use urbanwind::train::{train, TrainConfig};

fn oracle_sample(seed: u64) -> Sample {
    let scene = generate_scene(seed, 64, 1100.0).unwrap();
    let field = wind_oracle(&scene, 0).unwrap();
    let (h, f) = canonicalize(64, &scene.heights, &field, 0);
    let input: Vec<f32> = h.iter().map(|&x| (x / HEIGHT_SCALE) as f32).collect();
    let mut target = Vec::new();
    for plane in [&f.u, &f.v, &f.w] {
        target.extend(plane.iter().map(|&v| quantize(v) as f32 / 255.0));
    }
    Sample {
        scene_id: seed,
        direction: 0,
        input: Tensor::from_vec([1, 1, 64, 64], input).unwrap(),
        target: Tensor::from_vec([1, 3, 64, 64], target).unwrap(),
    }
}

fn main() {
    for (seed, width) in [(2u64, 16usize), (2, 32), (4, 16), (4, 32)] {
        let lr = 0.001;
        let samples = vec![oracle_sample(seed)];
        let config = ModelConfig {
            block_type: BlockType::Convnext,
            decoder_type: DecoderType::HalfUnet,
            encoder_channels: [width; 5],
            decoder_channels: [width; 5],
            encoder_blocks: [1; 5],
            decoder_blocks: [1; 5],
            output_blocks: 1,
            resmerge_blocks: 1,
            dropout: 0.0,
            input_channels: 1,
            output_channels: 3,
        };
        let mut model = build_model::<f32>(&config, 11).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: lr,
            weight_decay: 0.0,
            seed: 4,
            ..TrainConfig::default()
        };
        let t = std::time::Instant::now();
        let h = train(&mut model, &samples, &samples, &cfg).unwrap();
        let first = h[0].train_loss;
        let last = h.last().unwrap().train_loss;
        println!(
            "seed {seed} lr {lr}: first {first:e} last {last:e} ratio {:.1} ({:?})",
            first / last,
            t.elapsed()
        );
    }
}

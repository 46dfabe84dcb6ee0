use std::cell::RefCell;

use rand::Rng;

use super::blocks::{Block, ResMerge};
use super::counting::{conv_macs, conv_params};
use super::*;
use crate::gradcheck::{grad_check, GradCheck};
use crate::ops::Mode;

fn tiny_config(block: BlockType, decoder: DecoderType) -> ModelConfig {
    let encoder_channels = [4, 4, 4, 4, 4];
    let decoder_channels = match decoder {
        DecoderType::Unet => {
            let mut r = encoder_channels;
            r.reverse();
            r
        }
        DecoderType::HalfUnet => encoder_channels,
    };
    ModelConfig {
        block_type: block,
        decoder_type: decoder,
        encoder_channels,
        decoder_channels,
        encoder_blocks: [1; 5],
        decoder_blocks: [1; 5],
        output_blocks: 1,
        resmerge_blocks: 1,
        dropout: 0.0,
        input_channels: 1,
        output_channels: 3,
    }
}

fn rand_input(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, "model-test", 0);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = r.gen_range(-1.0..1.0);
    }
    t
}

#[test]
fn validate_names_the_violated_rule() {
    let mut c = tiny_config(BlockType::Unet, DecoderType::Unet);
    c.decoder_channels = [4, 4, 4, 4, 8];
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("reverse")));

    let mut c = tiny_config(BlockType::Unet, DecoderType::HalfUnet);
    c.encoder_channels = [4, 8, 4, 4, 4];
    c.decoder_channels = c.encoder_channels;
    assert!(c.validate().is_err());

    let mut c = tiny_config(BlockType::Unet, DecoderType::Unet);
    c.encoder_blocks[2] = 0;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("block counts")));

    let mut c = tiny_config(BlockType::Unet, DecoderType::Unet);
    c.input_channels = 4;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("exceed")));

    let mut c = tiny_config(BlockType::Unet, DecoderType::Unet);
    c.dropout = 1.0;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("dropout")));
}

#[test]
fn architecture_names_follow_table() {
    assert_eq!(tiny_config(BlockType::Convnext, DecoderType::HalfUnet).architecture(), "Half-U-NeXt");
    assert_eq!(tiny_config(BlockType::Unet, DecoderType::HalfUnet).architecture(), "Half-U-Net");
    assert_eq!(tiny_config(BlockType::Convnext, DecoderType::Unet).architecture(), "U-NeXt");
    assert_eq!(tiny_config(BlockType::Unet, DecoderType::Unet).architecture(), "U-Net");
}

#[test]
fn config_json_round_trip_uses_exact_field_names() {
    let c = tiny_config(BlockType::Convnext, DecoderType::HalfUnet);
    let json = serde_json::to_string(&c).unwrap();
    assert!(json.contains("\"block_type\":\"convnext\""));
    assert!(json.contains("\"decoder_type\":\"half_unet\""));
    assert!(json.contains("\"encoder_channels\""));
    let back: ModelConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, c);

    // input/output channels default when omitted
    let parsed: ModelConfig = serde_json::from_str(
        r#"{"block_type":"unet","decoder_type":"unet",
            "encoder_channels":[4,4,4,4,4],"decoder_channels":[4,4,4,4,4],
            "encoder_blocks":[1,1,1,1,1],"decoder_blocks":[1,1,1,1,1],
            "output_blocks":1,"resmerge_blocks":1,"dropout":0.1}"#,
    )
    .unwrap();
    assert_eq!(parsed.input_channels, 1);
    assert_eq!(parsed.output_channels, 3);
}

#[test]
fn stem_branch_shapes_split_the_first_width() {
    let mut c = tiny_config(BlockType::Convnext, DecoderType::HalfUnet);
    c.encoder_channels = [32; 5];
    c.decoder_channels = [32; 5];
    let specs = param_specs(&c).unwrap();
    let find = |name: &str| specs.iter().find(|s| s.name == name).unwrap().shape;
    assert_eq!(find("stem.down4.weight"), [1, 1, 4, 4]);
    assert_eq!(find("stem.conv7.weight"), [1, 1, 7, 7]);
    assert_eq!(find("stem.conv1.weight"), [31, 1, 1, 1]);
}

#[test]
fn unet_block_parameter_enumeration() {
    let mut sink = SpecSink { specs: Vec::new() };
    let _b = Block::<f32>::new(&mut sink, "b", BlockType::Unet, 4, 8);
    let total: u64 = sink.specs.iter().map(|s| s.len()).sum();
    assert_eq!(total, 912);
}

#[test]
fn conv_count_examples() {
    assert_eq!(conv_params(1, 1, 1, 1), 2);
    assert_eq!(conv_params(4, 8, 3, 1), 296);
    assert_eq!(conv_macs(4, 8, 3, 1, 64), 18_432);
}

#[test]
fn zeroed_convnext_block_is_pure_residual() {
    let mut reg = ParamRegistry::<f32>::new();
    let mut sink = RealSink {
        registry: &mut reg,
        rng: rng::stream(0, "init", 0),
    };
    let mut block = Block::<f32>::new(&mut sink, "b", BlockType::Convnext, 4, 4);
    for p in reg.iter_mut() {
        for v in p.value.data_mut() {
            *v = 0.0;
        }
    }
    let mut tape = Tape::new();
    let pvars: Vec<Var> = (0..reg.len()).map(|i| tape.leaf(reg.get(i).value.clone())).collect();
    let input = rand_input([1, 4, 8, 8], 1);
    let x = tape.leaf(input.clone());
    let y = block.forward(&mut tape, &pvars, Mode::Eval, x).unwrap();
    assert_eq!(tape.value(y).data(), input.data());
}

#[test]
fn convnext_block_passes_grad_check() {
    let mut reg = ParamRegistry::<f64>::new();
    let mut sink = RealSink {
        registry: &mut reg,
        rng: rng::stream(2, "init", 0),
    };
    let block = RefCell::new(Block::<f64>::new(&mut sink, "b", BlockType::Convnext, 4, 4));
    let mut inputs = vec![{
        let mut r = rng::stream(3, "model-test", 0);
        let mut t = Tensor::<f64>::zeros([1, 4, 8, 8]);
        for v in t.data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        t
    }];
    inputs.extend(reg.iter().map(|p| p.value.clone()));
    let err = grad_check(
        |tape, vars| block.borrow_mut().forward(tape, &vars[1..], Mode::Eval, vars[0]),
        &inputs,
        &GradCheck {
            max_coords: Some(4),
            ..GradCheck::default()
        },
    )
    .unwrap();
    assert!(err < 1e-4, "err = {err:e}");
}

#[test]
fn forward_shape_contract_all_architectures() {
    for block in [BlockType::Unet, BlockType::Convnext] {
        for decoder in [DecoderType::Unet, DecoderType::HalfUnet] {
            let mut model = build_model::<f32>(&tiny_config(block, decoder), 11).unwrap();
            let out = model.predict(&rand_input([1, 1, 64, 64], 7)).unwrap();
            assert_eq!(out.shape(), [1, 3, 64, 64]);
            assert!(out.all_finite());
        }
    }
    let mut model = build_model::<f32>(&tiny_config(BlockType::Convnext, DecoderType::HalfUnet), 11).unwrap();
    let out = model.predict(&rand_input([1, 1, 128, 128], 8)).unwrap();
    assert_eq!(out.shape(), [1, 3, 128, 128]);
}

#[test]
fn forward_rejects_bad_inputs() {
    let mut model = build_model::<f32>(&tiny_config(BlockType::Unet, DecoderType::Unet), 0).unwrap();
    assert!(model.predict(&Tensor::zeros([1, 2, 64, 64])).is_err());
    assert!(model.predict(&Tensor::zeros([1, 1, 60, 64])).is_err());
}

#[test]
fn unet_decoder_builds_four_junctions() {
    let specs = param_specs(&tiny_config(BlockType::Unet, DecoderType::Unet)).unwrap();
    for i in 0..4 {
        let prefix = format!("decoder.j{i}.");
        assert!(specs.iter().any(|s| s.name.starts_with(&prefix)));
    }
    assert!(!specs.iter().any(|s| s.name.starts_with("decoder.j4.")));

    let half = param_specs(&tiny_config(BlockType::Unet, DecoderType::HalfUnet)).unwrap();
    assert!(half.iter().any(|s| s.name.starts_with("decoder.fused.")));
}

#[test]
fn zeroed_resmerge_returns_upsampled_decoder_output() {
    let c = tiny_config(BlockType::Unet, DecoderType::HalfUnet);
    let mut reg = ParamRegistry::<f32>::new();
    let mut sink = RealSink {
        registry: &mut reg,
        rng: rng::stream(5, "init", 0),
    };
    let mut rm = ResMerge::<f32>::new(&c, &mut sink);
    for p in reg.iter_mut() {
        for v in p.value.data_mut() {
            *v = 0.0;
        }
    }
    let mut tape = Tape::new();
    let pvars: Vec<Var> = (0..reg.len()).map(|i| tape.leaf(reg.get(i).value.clone())).collect();
    let dec = tape.leaf(rand_input([1, 4, 16, 16], 9));
    let raw = tape.leaf(rand_input([1, 1, 64, 64], 10));
    let expected = {
        let up = tape.upsample_nearest(dec, 4).unwrap();
        tape.value(up).clone()
    };
    let mut drng = rng::stream(5, "dropout", 0);
    let out = rm.forward(&mut tape, &pvars, Mode::Eval, &mut drng, dec, raw).unwrap();
    assert_eq!(tape.value(out).data(), expected.data());
}

fn random_config(family: (BlockType, DecoderType), seed: u64) -> ModelConfig {
    let mut r = rng::stream(seed, "config-sample", 0);
    let (block, decoder) = family;
    let encoder_channels = match decoder {
        DecoderType::Unet => {
            let base = [4usize, 8, 16][r.gen_range(0..3)];
            [base, base * 2, base * 4, base * 8, base * 16]
        }
        DecoderType::HalfUnet => {
            let w = [4usize, 8, 16, 32][r.gen_range(0..4)];
            [w; 5]
        }
    };
    let decoder_channels = match decoder {
        DecoderType::Unet => {
            let mut rev = encoder_channels;
            rev.reverse();
            rev
        }
        DecoderType::HalfUnet => encoder_channels,
    };
    let mut blocks = [0usize; 5];
    for b in &mut blocks {
        *b = r.gen_range(1..4);
    }
    let mut dblocks = [0usize; 5];
    for b in &mut dblocks {
        *b = r.gen_range(1..4);
    }
    ModelConfig {
        block_type: block,
        decoder_type: decoder,
        encoder_channels,
        decoder_channels,
        encoder_blocks: blocks,
        decoder_blocks: dblocks,
        output_blocks: r.gen_range(1..5),
        resmerge_blocks: r.gen_range(1..5),
        dropout: 0.1,
        input_channels: 1,
        output_channels: 3,
    }
}

#[test]
fn count_params_matches_registry_enumeration() {
    let families = [
        (BlockType::Unet, DecoderType::Unet),
        (BlockType::Unet, DecoderType::HalfUnet),
        (BlockType::Convnext, DecoderType::Unet),
        (BlockType::Convnext, DecoderType::HalfUnet),
    ];
    for family in families {
        for s in 0..10 {
            let c = random_config(family, s);
            let specs = param_specs(&c).unwrap();
            let enumerated: u64 = specs.iter().map(|p| p.len()).sum();
            assert_eq!(count_params(&c).unwrap(), enumerated, "{c:?}");
        }
        let small = tiny_config(family.0, family.1);
        let model = build_model::<f32>(&small, 3).unwrap();
        assert_eq!(count_params(&small).unwrap(), model.registry().total_len());
    }
}

#[test]
fn count_macs_matches_instrumented_forward() {
    for block in [BlockType::Unet, BlockType::Convnext] {
        for decoder in [DecoderType::Unet, DecoderType::HalfUnet] {
            let c = tiny_config(block, decoder);
            let mut model = build_model::<f32>(&c, 17).unwrap();
            let mut tape = Tape::new();
            let input = rand_input([1, 1, 64, 64], 13);
            model.forward(&mut tape, &input, Mode::Eval).unwrap();
            assert_eq!(tape.macs(), count_macs(&c, 64, 64).unwrap(), "{c:?}");
        }
    }
}

#[test]
fn doubling_channels_increases_both_counts() {
    let base = random_config((BlockType::Convnext, DecoderType::Unet), 21);
    let mut doubled = base.clone();
    for c in doubled.encoder_channels.iter_mut().chain(doubled.decoder_channels.iter_mut()) {
        *c *= 2;
    }
    assert!(count_params(&doubled).unwrap() > count_params(&base).unwrap());
    assert!(count_macs(&doubled, 64, 64).unwrap() > count_macs(&base, 64, 64).unwrap());
}

#[test]
fn half_unet_decoder_has_fewer_params_at_matched_leading_width() {
    let mut half = tiny_config(BlockType::Unet, DecoderType::HalfUnet);
    half.encoder_channels = [64; 5];
    half.decoder_channels = [64; 5];
    let mut full = tiny_config(BlockType::Unet, DecoderType::Unet);
    full.encoder_channels = [64, 128, 256, 512, 1024];
    full.decoder_channels = [1024, 512, 256, 128, 64];
    assert!(count_params(&half).unwrap() < count_params(&full).unwrap());
}

#[test]
fn rebuild_with_same_seed_is_bit_identical() {
    let c = tiny_config(BlockType::Convnext, DecoderType::Unet);
    let a = build_model::<f32>(&c, 42).unwrap();
    let b = build_model::<f32>(&c, 42).unwrap();
    for (pa, pb) in a.registry().iter().zip(b.registry().iter()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.value.data(), pb.value.data());
    }
    let other = build_model::<f32>(&c, 43).unwrap();
    let differs = a
        .registry()
        .iter()
        .zip(other.registry().iter())
        .any(|(pa, pb)| pa.value.data() != pb.value.data());
    assert!(differs);
}

#[test]
fn repeated_forward_is_bit_identical() {
    let c = tiny_config(BlockType::Unet, DecoderType::HalfUnet);
    let mut model = build_model::<f32>(&c, 5).unwrap();
    let input = rand_input([1, 1, 64, 64], 6);
    let a = model.predict(&input).unwrap();
    let b = model.predict(&input).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn full_model_grad_check_on_tiny_config() {
    let mut c = tiny_config(BlockType::Convnext, DecoderType::Unet);
    c.encoder_channels = [2; 5];
    c.decoder_channels = [2; 5];
    let model = RefCell::new(build_model::<f64>(&c, 23).unwrap());
    let mut inputs = vec![{
        let mut r = rng::stream(29, "model-test", 0);
        let mut t = Tensor::<f64>::zeros([1, 1, 64, 64]);
        for v in t.data_mut() {
            *v = r.gen_range(0.0..1.0);
        }
        t
    }];
    inputs.extend(model.borrow().registry().iter().map(|p| {
        // Kaiming bounds at width 2 are large; damp the weights so the deep
        // residual stack stays in a numerically benign regime for central
        // differences.
        let mut t = p.value.clone();
        for v in t.data_mut() {
            *v *= 0.25;
        }
        t
    }));
    let err = grad_check(
        |tape, vars| {
            model
                .borrow_mut()
                .forward_leaves(tape, &vars[1..], vars[0], Mode::Eval)
        },
        &inputs,
        &GradCheck {
            h: 1e-6,
            max_coords: Some(2),
            ..GradCheck::default()
        },
    )
    .unwrap();
    assert!(err < 1e-4, "err = {err:e}");
}

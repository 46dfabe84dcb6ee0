//! End-to-end command-line workflow driven through the CLI entry point:
//! generate data, train, predict a wind field, and count ops.
//!
//! Run with: cargo run --release --example predict_field

use urbanwind::cli;

fn run(parts: &[&str]) {
    println!("\n$ urbanwind {}", parts.join(" "));
    let code = cli::run(std::iter::once("urbanwind").chain(parts.iter().copied()));
    assert_eq!(code, 0, "command failed with exit code {code}");
}

fn main() {
    let dir = std::env::temp_dir().join("urbanwind-example-cli");
    std::fs::create_dir_all(&dir).unwrap();
    let data = dir.join("data");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "block_type": "unet",
  "decoder_type": "half_unet",
  "encoder_channels": [8, 8, 8, 8, 8],
  "decoder_channels": [8, 8, 8, 8, 8],
  "encoder_blocks": [1, 1, 1, 1, 1],
  "decoder_blocks": [1, 1, 1, 1, 1],
  "output_blocks": 1,
  "resmerge_blocks": 1,
  "dropout": 0.1
}"#,
    )
    .unwrap();

    let data_s = data.to_str().unwrap();
    let config_s = config.to_str().unwrap();
    let ckpt = dir.join("model.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let scene = data.join("0");
    let out = dir.join("prediction");

    run(&["gen-data", "--scenes", "10", "--grid", "64", "--seed", "1", "--out", data_s]);
    run(&["count", "--config", config_s, "--grid", "64"]);
    run(&["train", "--config", config_s, "--data", data_s, "--epochs", "2", "--out", ckpt_s]);
    run(&["bench", "--ckpt", ckpt_s, "--grid", "64", "--warmup", "2", "--repeats", "5"]);
    run(&[
        "predict", "--ckpt", ckpt_s, "--scene", scene.to_str().unwrap(),
        "--dir", "2", "--out", out.to_str().unwrap(),
    ]);
    println!("\nartifacts under {}", dir.display());
}

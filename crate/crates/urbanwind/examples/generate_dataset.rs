//! Builds a small synthetic dataset on disk and loads a training split back,
//! demonstrating the canonical-frame rotation and 8-bit quantization.
//!
//! Run with: cargo run --release --example generate_dataset

use urbanwind::data::{build_dataset, load_sample, load_split, read_manifest, DIRECTIONS};

fn main() -> urbanwind::Result<()> {
    let dir = std::env::temp_dir().join("urbanwind-example-dataset");
    let manifest = build_dataset(&dir, 10, 64, 42, 1100.0, true)?;
    println!(
        "wrote {} scenes x {DIRECTIONS} directions = {} samples to {}",
        manifest.n_scenes,
        manifest.total_samples(),
        dir.display()
    );
    println!(
        "scene split: {} train / {} val / {} test (split by scene, never by direction)",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );

    let train = load_split(&dir, "train")?;
    println!("loaded {} training samples", train.len());
    let s = &train[0];
    println!(
        "sample scene {} direction {}: input {:?}, target {:?}",
        s.scene_id,
        s.direction,
        s.input.shape(),
        s.target.shape()
    );

    // all 8 directions of one scene share a height map but differ in targets
    let manifest = read_manifest(&dir)?;
    let mut means = Vec::new();
    for d in 0..DIRECTIONS {
        let s = load_sample(&dir, &manifest, 0, d)?;
        let mean = s.target.data().iter().map(|&v| v as f64).sum::<f64>() / s.target.len() as f64;
        means.push(format!("{mean:.4}"));
    }
    println!("per-direction mean targets of scene 0: {}", means.join(" "));
    println!("previews: see height.png / d*.png under {}", dir.join("0").display());
    Ok(())
}

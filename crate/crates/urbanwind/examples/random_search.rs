//! Runs a short random hyperparameter search, interrupts it halfway, and
//! resumes from the results CSV.
//!
//! Run with: cargo run --release --example random_search

use urbanwind::data::{build_dataset, load_split};
use urbanwind::search::{run_search, select_best, ParamSpace, SearchOptions};

fn main() -> urbanwind::Result<()> {
    let dir = std::env::temp_dir().join("urbanwind-example-search");
    build_dataset(&dir, 10, 64, 2, 1100.0, false)?;
    let train_set = load_split(&dir, "train")?;
    let val_set = load_split(&dir, "val")?;

    let space = ParamSpace::for_architecture("half-u-net", true)?;
    println!(
        "space for {}: widths {:?}, blocks {:?}, dropout {:?}",
        space.architecture, space.channel_options, space.block_options, space.dropout_options
    );

    let csv = dir.join("results.csv");
    let _ = std::fs::remove_file(&csv);
    let mut options = SearchOptions {
        n_trials: 4,
        epochs: 1,
        batch_size: 4,
        base_seed: 9,
        bench_warmup: 1,
        bench_repeats: 3,
        stop_after: Some(2),
    };

    let partial = run_search(&space, &train_set, &val_set, &options, &csv)?;
    println!("\ninterrupted after {} of {} trials; resuming...", partial.len(), options.n_trials);
    options.stop_after = None;
    let results = run_search(&space, &train_set, &val_set, &options, &csv)?;

    println!("\n{:>5} {:>10} {:>12} {:>12} {:>14}", "trial", "loss", "runtime_ms", "params", "macs");
    for r in &results {
        println!(
            "{:>5} {:>10.6} {:>12.3} {:>12} {:>14}",
            r.trial, r.loss, r.runtime_ms, r.params, r.macs
        );
    }
    let best = select_best(&results);
    let winner = best.first().expect("at least one successful trial");
    println!(
        "\nbest {} trial: {} (loss {:.6}, dropout {}, {} encoder blocks)",
        winner.arch,
        winner.trial,
        winner.loss,
        winner.config.dropout,
        winner.config.encoder_blocks[0]
    );
    println!("results persisted to {}", csv.display());
    Ok(())
}

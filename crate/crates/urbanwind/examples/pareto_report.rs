//! Pareto-front extraction and relative-metric annotation over a set of
//! (loss, runtime) trade-off points, exported as CSV and SVG.
//!
//! Run with: cargo run --release --example pareto_report

use urbanwind::analysis::{export_report, pareto_front, relative_metrics, TrialPoint};

fn main() -> urbanwind::Result<()> {
    // a mix of strong, middling, and dominated configurations
    let trials = vec![
        point("convnext-wide", 0.0090, 0.5400, "ConvNeXt", "U-Net"),
        point("convnext-mid", 0.0096, 0.5304, "ConvNeXt", "U-Net"),
        point("convnext-half", 0.0103, 0.2753, "ConvNeXt", "Half U-Net"),
        point("unet-small", 0.0122, 0.1139, "U-Net", "U-Net"),
        point("unet-tiny", 0.0165, 0.0785, "U-Net", "Half U-Net"),
        point("dominated-a", 0.0100, 0.6000, "ConvNeXt", "U-Net"),
        point("dominated-b", 0.0130, 0.2000, "U-Net", "U-Net"),
        point("dominated-c", 0.0170, 0.0900, "U-Net", "Half U-Net"),
    ];

    let objectives: Vec<(f64, f64)> = trials.iter().map(|t| (t.loss, t.runtime_ms)).collect();
    let front = pareto_front(&objectives);
    println!("{} of {} points are non-dominated", front.len(), trials.len());

    let members: Vec<TrialPoint> = front.iter().map(|&i| trials[i].clone()).collect();
    println!("\n{:<16} {:>8} {:>10} {:>9} {:>9}", "config", "loss", "runtime", "rel loss", "rel time");
    for p in relative_metrics(&members)? {
        println!(
            "{:<16} {:>8.4} {:>10.4} {:>9.4} {:>9.4}",
            p.trial.label, p.trial.loss, p.trial.runtime_ms, p.relative_loss, p.relative_runtime
        );
    }

    let prefix = std::env::temp_dir().join("urbanwind-example-pareto");
    export_report(&trials, &prefix)?;
    println!(
        "\nwrote {} and {}",
        prefix.with_extension("csv").display(),
        prefix.with_extension("svg").display()
    );
    Ok(())
}

fn point(label: &str, loss: f64, runtime_ms: f64, block: &str, decoder: &str) -> TrialPoint {
    TrialPoint {
        label: label.to_string(),
        loss,
        runtime_ms,
        block_type: block.to_string(),
        decoder_type: decoder.to_string(),
        params: 0,
        macs: 0,
    }
}

//! Pareto-front extraction over (loss, runtime), relative metrics, inference
//! benchmarking, and CSV/SVG report export.

use std::path::Path;
use std::time::Instant;

use crate::data::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ops::Mode;
use crate::tensor::Tensor;

/// One trial as it enters the analysis: absolute objectives plus descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPoint {
    pub label: String,
    pub loss: f64,
    pub runtime_ms: f64,
    pub block_type: String,
    pub decoder_type: String,
    pub params: u64,
    pub macs: u64,
}

/// A front member annotated with ratios against the minimum-loss member.
#[derive(Clone, Debug)]
pub struct ParetoPoint {
    pub trial: TrialPoint,
    pub relative_loss: f64,
    pub relative_runtime: f64,
}

/// Returns the indices of the non-dominated points, sorted by descending
/// runtime. A point dominates another when it is no worse in both loss and
/// runtime and strictly better in at least one; identical duplicate points
/// collapse to the first occurrence.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .1
            .total_cmp(&points[b].1)
            .then(points[a].0.total_cmp(&points[b].0))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut last: Option<(f64, f64)> = None;
    for i in order {
        let p = points[i];
        if last == Some(p) {
            continue; // exact duplicate of a kept point
        }
        if p.0 < best_loss {
            front.push(i);
            best_loss = p.0;
            last = Some(p);
        }
    }
    front.reverse(); // ascending runtime -> descending runtime
    front
}

/// Annotates a front with relative loss and runtime against its minimum-loss
/// member. Ratios are kept at full precision; rounding happens at export.
pub fn relative_metrics(front: &[TrialPoint]) -> Result<Vec<ParetoPoint>> {
    let baseline = front
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .ok_or_else(|| Error::EmptyDataset("pareto front".into()))?
        .clone();
    Ok(front
        .iter()
        .map(|t| ParetoPoint {
            relative_loss: t.loss / baseline.loss,
            relative_runtime: t.runtime_ms / baseline.runtime_ms,
            trial: t.clone(),
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub warmup: usize,
    pub repeats: usize,
    pub times_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub cv: f64,
}

/// Wall-clock forward-pass latency: `warmup` unmeasured passes, then
/// `repeats` measured ones over the same fixed input, batch 1, eval mode.
pub fn bench_runtime(
    model: &mut Model<f32>,
    height: usize,
    width: usize,
    warmup: usize,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats < 1 {
        return Err(Error::InvalidArgument {
            op: "bench_runtime",
            detail: "repeats must be >= 1".into(),
        });
    }
    let input = Tensor::<f32>::full([1, model.config().input_channels, height, width], 0.1);
    for _ in 0..warmup {
        model.predict(&input)?;
    }
    let mut times_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        let mut tape = crate::ops::Tape::new();
        model.forward(&mut tape, &input, Mode::Eval)?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = times_ms.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let var = sorted.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(BenchReport {
        warmup,
        repeats,
        times_ms,
        mean_ms: mean,
        median_ms: median,
        min_ms: sorted[0],
        cv: var.sqrt() / mean,
    })
}

pub const REPORT_HEADER: [&str; 9] = [
    "config",
    "huber_loss",
    "runtime_ms",
    "relative_loss",
    "relative_runtime",
    "block_type",
    "decoder_type",
    "parameters",
    "multiply_adds",
];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Extracts the front from `trials`, writes `<prefix>.csv` (front rows in
/// descending-runtime order, ratios rounded to 4 decimals) and
/// `<prefix>.svg` (all trials, front members highlighted and connected).
/// Returns the annotated front.
pub fn export_report(trials: &[TrialPoint], prefix: &Path) -> Result<Vec<ParetoPoint>> {
    let objectives: Vec<(f64, f64)> = trials.iter().map(|t| (t.loss, t.runtime_ms)).collect();
    let front_idx = pareto_front(&objectives);
    let front_points: Vec<TrialPoint> = front_idx.iter().map(|&i| trials[i].clone()).collect();
    let front = if front_points.is_empty() {
        Vec::new()
    } else {
        relative_metrics(&front_points)?
    };

    let mut csv_bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut csv_bytes);
        w.write_record(REPORT_HEADER)?;
        for p in &front {
            w.write_record([
                p.trial.label.clone(),
                format!("{}", p.trial.loss),
                format!("{}", p.trial.runtime_ms),
                format!("{:.4}", round4(p.relative_loss)),
                format!("{:.4}", round4(p.relative_runtime)),
                p.trial.block_type.clone(),
                p.trial.decoder_type.clone(),
                p.trial.params.to_string(),
                p.trial.macs.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(prefix, e))?;
    }
    write_atomic(&prefix.with_extension("csv"), &csv_bytes)?;
    write_atomic(&prefix.with_extension("svg"), render_svg(trials, &front_idx).as_bytes())?;
    Ok(front)
}

/// Reads a report CSV (schema of [`REPORT_HEADER`]) back into trial points.
/// The relative columns are ignored; they are re-derived on demand.
pub fn read_report(path: &Path) -> Result<Vec<TrialPoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::BadFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let bad = |detail: String| Error::BadFormat {
        path: path.to_path_buf(),
        detail,
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        if r.len() != REPORT_HEADER.len() {
            return Err(bad(format!("expected {} columns, found {}", REPORT_HEADER.len(), r.len())));
        }
        let f = |i: usize| -> Result<f64> {
            r[i].parse().map_err(|_| bad(format!("bad number '{}' in column {}", &r[i], REPORT_HEADER[i])))
        };
        let u = |i: usize| -> Result<u64> {
            r[i].parse().map_err(|_| bad(format!("bad count '{}' in column {}", &r[i], REPORT_HEADER[i])))
        };
        out.push(TrialPoint {
            label: r[0].to_string(),
            loss: f(1)?,
            runtime_ms: f(2)?,
            block_type: r[5].to_string(),
            decoder_type: r[6].to_string(),
            params: u(7)?,
            macs: u(8)?,
        });
    }
    Ok(out)
}

/// Self-contained scatter plot: every trial as a dot, front members filled
/// and joined by a polyline in runtime order.
fn render_svg(trials: &[TrialPoint], front_idx: &[usize]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 56.0;
    let finite: Vec<&TrialPoint> = trials.iter().filter(|t| t.loss.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for t in &finite {
        x0 = x0.min(t.runtime_ms);
        x1 = x1.max(t.runtime_ms);
        y0 = y0.min(t.loss);
        y1 = y1.max(t.loss);
    }
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |rt: f64| M + (rt - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |loss: f64| H - M - (loss - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    s.push_str(&format!("<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n", H - M));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">runtime (ms)</text>\n",
        W / 2.0,
        H - 14.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {})\">Huber loss</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for t in &finite {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"none\" stroke=\"#777\"/>\n",
            px(t.runtime_ms),
            py(t.loss)
        ));
    }
    if front_idx.len() > 1 {
        let pts: Vec<String> = front_idx
            .iter()
            .map(|&i| format!("{:.2},{:.2}", px(trials[i].runtime_ms), py(trials[i].loss)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#c33\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    for &i in front_idx {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#c33\"><title>{}</title></circle>\n",
            px(trials[i].runtime_ms),
            py(trials[i].loss),
            trials[i].label
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_force_front(points: &[(f64, f64)]) -> Vec<usize> {
        let dominates = |p: (f64, f64), q: (f64, f64)| {
            p.0 <= q.0 && p.1 <= q.1 && (p.0 < q.0 || p.1 < q.1)
        };
        let mut keep = Vec::new();
        for (i, &q) in points.iter().enumerate() {
            if points.iter().any(|&p| dominates(p, q)) {
                continue;
            }
            // duplicates collapse to the earliest index
            if points[..i].contains(&q) {
                continue;
            }
            keep.push(i);
        }
        keep.sort_by(|&a, &b| points[b].1.total_cmp(&points[a].1));
        keep
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        for seed in 0..100u64 {
            let mut r = crate::rng::stream(seed, "pareto", 0);
            let n = r.gen_range(1..=1000);
            // coarse values force plenty of exact ties and duplicates
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| (r.gen_range(0..40) as f64 * 0.01, r.gen_range(0..40) as f64 * 0.1))
                .collect();
            assert_eq!(pareto_front(&points), brute_force_front(&points), "seed {seed}");
        }
    }

    #[test]
    fn front_is_sorted_and_idempotent() {
        let mut r = crate::rng::stream(42, "pareto", 1);
        let points: Vec<(f64, f64)> = (0..500)
            .map(|_| (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)))
            .collect();
        let front = pareto_front(&points);
        for w in front.windows(2) {
            assert!(points[w[0]].1 > points[w[1]].1, "descending runtime");
            assert!(points[w[0]].0 < points[w[1]].0, "strictly increasing loss");
        }
        let sub: Vec<(f64, f64)> = front.iter().map(|&i| points[i]).collect();
        let again = pareto_front(&sub);
        assert_eq!(again.len(), sub.len());
    }

    #[test]
    fn dominance_examples() {
        let points = vec![(0.0090, 0.5400), (0.0096, 0.5304), (0.0103, 0.2753)];
        assert_eq!(pareto_front(&points).len(), 3);
        let mut with_dominated = points.clone();
        with_dominated.push((0.0100, 0.60));
        let front = pareto_front(&with_dominated);
        assert_eq!(front.len(), 3);
        assert!(!front.contains(&3));
        assert_eq!(pareto_front(&[(1.0, 2.0)]), vec![0]);
        assert!(pareto_front(&[]).is_empty());
    }

    fn trial(label: &str, loss: f64, rt: f64) -> TrialPoint {
        TrialPoint {
            label: label.to_string(),
            loss,
            runtime_ms: rt,
            block_type: "ConvNeXt".into(),
            decoder_type: "U-Net".into(),
            params: 100,
            macs: 200,
        }
    }

    #[test]
    fn relative_metrics_against_min_loss_member() {
        let front = vec![trial("a", 0.0090, 0.5400), trial("b", 0.0096, 0.5304)];
        let annotated = relative_metrics(&front).unwrap();
        assert_eq!(annotated[0].relative_loss, 1.0);
        assert_eq!(annotated[0].relative_runtime, 1.0);
        assert!((annotated[1].relative_loss - 0.0096 / 0.0090).abs() < 1e-12);
        assert!((annotated[1].relative_runtime - 0.5304 / 0.5400).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("report");
        let trials = vec![
            trial("t0", 0.0090, 0.5400),
            trial("t1", 0.0096, 0.5304),
            trial("t2", 0.0100, 0.60), // dominated
            trial("t3", 0.0103, 0.2753),
        ];
        let front = export_report(&trials, &prefix).unwrap();
        assert_eq!(front.len(), 3);

        let back = read_report(&prefix.with_extension("csv")).unwrap();
        assert_eq!(back.len(), 3);
        let objectives: Vec<(f64, f64)> = back.iter().map(|t| (t.loss, t.runtime_ms)).collect();
        assert_eq!(pareto_front(&objectives).len(), 3, "re-ingested front is stable");

        let svg = std::fs::read_to_string(prefix.with_extension("svg")).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn empty_trial_set_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("empty");
        let front = export_report(&[], &prefix).unwrap();
        assert!(front.is_empty());
        let text = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(prefix.with_extension("svg").exists());
    }

    #[test]
    fn bench_report_shape() {
        use crate::model::{BlockType, DecoderType, ModelConfig};
        let config = ModelConfig {
            block_type: BlockType::Unet,
            decoder_type: DecoderType::HalfUnet,
            encoder_channels: [4; 5],
            decoder_channels: [4; 5],
            encoder_blocks: [1; 5],
            decoder_blocks: [1; 5],
            output_blocks: 1,
            resmerge_blocks: 1,
            dropout: 0.1,
            input_channels: 1,
            output_channels: 3,
        };
        let mut model = crate::model::build_model::<f32>(&config, 1).unwrap();
        let report = bench_runtime(&mut model, 64, 64, 1, 5).unwrap();
        assert_eq!(report.times_ms.len(), 5);
        assert!(report.min_ms > 0.0);
        assert!(report.mean_ms >= report.min_ms);
        assert!(report.cv >= 0.0);
    }
}

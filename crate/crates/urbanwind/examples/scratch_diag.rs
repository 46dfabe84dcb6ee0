use urbanwind::data::load_split;

fn huber(e: f64) -> f64 {
    let a = e.abs();
    if a <= 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

fn main() -> urbanwind::Result<()> {
    let dir = std::env::temp_dir().join("uw-c4");
    let train = load_split(&dir, "train")?;
    let val = load_split(&dir, "val")?;
    println!("train {} val {}", train.len(), val.len());
    let n = 128 * 128;

    // per-channel means over train
    let mut ch_mean = [0.0f64; 3];
    let mut count = 0usize;
    for s in &train {
        let d = s.target.data();
        for c in 0..3 {
            ch_mean[c] += d[c * n..(c + 1) * n].iter().map(|&v| v as f64).sum::<f64>();
        }
        count += n;
    }
    for c in 0..3 {
        ch_mean[c] /= count as f64;
    }
    println!("channel means {ch_mean:?}");

    // per-pixel per-channel mean over train
    let mut px_mean = vec![0.0f64; 3 * n];
    for s in &train {
        for (m, &v) in px_mean.iter_mut().zip(s.target.data()) {
            *m += v as f64;
        }
    }
    for m in px_mean.iter_mut() {
        *m /= train.len() as f64;
    }

    for (name, split) in [("train", &train), ("val", &val)] {
        let mut ch_loss = [0.0f64; 3];
        let mut px_loss = [0.0f64; 3];
        for s in split.iter() {
            let d = s.target.data();
            for c in 0..3 {
                for i in 0..n {
                    let t = d[c * n + i] as f64;
                    ch_loss[c] += huber(ch_mean[c] - t);
                    px_loss[c] += huber(px_mean[c * n + i] - t);
                }
            }
        }
        let total = (split.len() * n) as f64;
        let ch_total: f64 = ch_loss.iter().sum::<f64>() / (3.0 * total);
        let px_total: f64 = px_loss.iter().sum::<f64>() / (3.0 * total);
        println!("{name}: per-channel-const loss {ch_total:.6} (u/v/w {:?})", ch_loss.map(|l| l / total));
        println!("{name}: per-pixel-mean  loss {px_total:.6} (u/v/w {:?})", px_loss.map(|l| l / total));
    }
    Ok(())
}

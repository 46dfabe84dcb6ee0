//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! magic "UWCK", u32 version, u32 config JSON length + bytes, u64 epoch,
//! u64 model seed, u64 dropout stream word position, 32 dropout seed bytes,
//! then a named f32 tensor section (parameters followed by batchnorm running
//! stats), then an optional optimizer section (step counter plus first and
//! second moments in registry order).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::optim::AdamW;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"UWCK";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamW<f32>>,
    pub epoch: usize,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: [usize; 4], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(path: &Path, model: &Model<f32>, optimizer: Option<&AdamW<f32>>, epoch: usize) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(epoch as u64).to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    let (word_pos, seed_bytes) = model.dropout_rng_state();
    out.extend_from_slice(&word_pos.to_le_bytes());
    out.extend_from_slice(&seed_bytes);

    let stats = model.running_stats_tensors();
    let count = model.registry().len() + stats.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for p in model.registry().iter() {
        push_tensor(&mut out, &p.name, p.value.shape(), p.value.data());
    }
    for (name, values) in &stats {
        push_tensor(&mut out, name, [1, values.len(), 1, 1], values);
    }

    match optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(1);
            let (m, v, step) = opt.state();
            out.extend_from_slice(&step.to_le_bytes());
            for t in m.iter().chain(v.iter()) {
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    write_atomic(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::BadFormat {
                path: self.path.to_path_buf(),
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn bad(&self, detail: impl Into<String>) -> Error {
        Error::BadFormat {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(r.bad("bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.bad(format!("unsupported version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
    let epoch = r.u64()? as usize;
    let seed = r.u64()?;
    let word_pos = r.u64()?;
    let seed_bytes: [u8; 32] = r.take(32)?.try_into().unwrap();

    let mut model = build_model::<f32>(&config, seed)?;
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Tensor<f32>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.bad("non-utf8 tensor name"))?
            .to_string();
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let data = r.f32s(shape.iter().product())?;
        tensors.insert(name, Tensor::from_vec(shape, data)?);
    }
    for i in 0..model.registry().len() {
        let name = model.registry().get(i).name.clone();
        let stored = tensors
            .remove(&name)
            .ok_or_else(|| r.bad(format!("missing parameter '{name}'")))?;
        let slot = &mut model.registry_mut().get_mut(i).value;
        if stored.shape() != slot.shape() {
            return Err(r.bad(format!("shape mismatch for '{name}'")));
        }
        *slot = stored;
    }
    let stats: HashMap<String, Vec<f32>> = tensors
        .into_iter()
        .map(|(name, t)| (name, t.into_data()))
        .collect();
    model.set_running_stats(&stats);
    model.restore_dropout_rng(word_pos, seed_bytes);

    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let read_moments = |r: &mut Reader| -> Result<Vec<Tensor<f32>>> {
                (0..model.registry().len())
                    .map(|i| {
                        let shape = model.registry().get(i).value.shape();
                        let data = r.f32s(shape.iter().product())?;
                        Tensor::from_vec(shape, data)
                    })
                    .collect()
            };
            let m = read_moments(&mut r)?;
            let v = read_moments(&mut r)?;
            Some(AdamW::from_state(m, v, step))
        }
        flag => return Err(r.bad(format!("bad optimizer flag {flag}"))),
    };
    if r.pos != bytes.len() {
        return Err(r.bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::model::{BlockType, DecoderType};
    use crate::train::{evaluate, train, TrainConfig};
    use rand::Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            block_type: BlockType::Unet,
            decoder_type: DecoderType::HalfUnet,
            encoder_channels: [4; 5],
            decoder_channels: [4; 5],
            encoder_blocks: [1; 5],
            decoder_blocks: [1; 5],
            output_blocks: 1,
            resmerge_blocks: 1,
            dropout: 0.2,
            input_channels: 1,
            output_channels: 3,
        }
    }

    fn toy(n: usize) -> Vec<Sample> {
        let mut r = crate::rng::stream(0, "ckpt-toy", 0);
        (0..n)
            .map(|k| {
                let mut input = Tensor::zeros([1, 1, 64, 64]);
                for v in input.data_mut() {
                    *v = r.gen_range(0.0..1.0);
                }
                let mut target = Tensor::zeros([1, 3, 64, 64]);
                for v in target.data_mut() {
                    *v = r.gen_range(0.0..1.0);
                }
                Sample {
                    scene_id: k as u64,
                    direction: 0,
                    input,
                    target,
                }
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let samples = toy(4);
        let mut model = build_model::<f32>(&config(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        // a short run populates nontrivial weights, stats, and moments
        let mut opt = AdamW::new(model.registry());
        crate::train::train_with(&mut model, &mut opt, &samples, &samples, &cfg, 0).unwrap();

        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &model, Some(&opt), 2).unwrap();
        let loaded = load(&p1).unwrap();
        assert_eq!(loaded.epoch, 2);
        save(&p2, &loaded.model, loaded.optimizer.as_ref(), loaded.epoch).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_model_evaluates_identically() {
        let dir = tempfile::tempdir().unwrap();
        let samples = toy(4);
        let mut model = build_model::<f32>(&config(), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train(&mut model, &samples, &samples, &cfg).unwrap();
        let before = evaluate(&mut model, &samples, 1.0).unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &model, None, 1).unwrap();
        let mut loaded = load(&path).unwrap();
        assert_eq!(evaluate(&mut loaded.model, &samples, 1.0).unwrap(), before);
    }

    #[test]
    fn resumed_training_continues_the_dropout_stream() {
        // train 2 epochs straight vs 1 epoch, checkpoint, reload, 1 more
        let samples = toy(4);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut full = build_model::<f32>(&config(), 7).unwrap();
        let full_hist = train(&mut full, &samples, &samples, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ckpt");
        let mut half = build_model::<f32>(&config(), 7).unwrap();
        let mut opt = AdamW::new(half.registry());
        half.reseed_dropout(crate::rng::derive_seed(cfg.seed, "dropout", 0));
        let first = crate::train::train_with(
            &mut half,
            &mut opt,
            &samples,
            &samples,
            &TrainConfig { epochs: 1, ..cfg.clone() },
            0,
        )
        .unwrap();
        save(&path, &half, Some(&opt), 1).unwrap();

        let mut resumed = load(&path).unwrap();
        let second = crate::train::train_with(
            &mut resumed.model,
            resumed.optimizer.as_mut().unwrap(),
            &samples,
            &samples,
            &cfg,
            resumed.epoch,
        )
        .unwrap();
        let stitched: Vec<_> = first.into_iter().chain(second).collect();
        assert_eq!(stitched, full_hist);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load(&path), Err(Error::BadFormat { .. })));
        let model = build_model::<f32>(&config(), 1).unwrap();
        let good = dir.path().join("good.ckpt");
        save(&good, &model, None, 0).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes[4] = 99; // version
        fs::write(&good, &bytes).unwrap();
        assert!(matches!(load(&good), Err(Error::BadFormat { .. })));
    }
}

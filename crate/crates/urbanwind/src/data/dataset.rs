//! On-disk dataset layout and loaders.
//!
//! `<out>/<scene_id>/height.f32` holds the raw little-endian height grid,
//! `<out>/<scene_id>/d<k>.u8` holds the three quantized world-frame planes
//! (u, v, w in sequence), and `manifest.json` records splits and generator
//! parameters. Loaders return canonical-frame samples ready for training.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::canon::canonicalize;
use crate::data::oracle::{wind_oracle, WindField};
use crate::data::quant::{dequantize, quantize, V_MAX};
use crate::data::scene::generate_scene;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const DIRECTIONS: usize = 8;
/// Height-map normalization divisor, meters.
pub const HEIGHT_SCALE: f64 = 100.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub grid: usize,
    pub extent: f64,
    pub seed: u64,
    pub v_max: f64,
    pub n_scenes: usize,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Option<&[u64]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn total_samples(&self) -> usize {
        self.n_scenes * DIRECTIONS
    }
}

/// One training pair in the canonical inflow frame: heights scaled by 1/100
/// as the input, quantized velocities rescaled to [0,1] as the target.
#[derive(Clone)]
pub struct Sample {
    pub scene_id: u64,
    pub direction: usize,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e| Error::io(path, e);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

fn scene_dir(root: &Path, id: u64) -> PathBuf {
    root.join(id.to_string())
}

/// Generates `n_scenes` scenes with all 8 directions and writes the dataset
/// under `out`. Scenes split 80/10/10 by floor rule, never by direction.
pub fn build_dataset(
    out: &Path,
    n_scenes: usize,
    grid: usize,
    seed: u64,
    extent: f64,
    previews: bool,
) -> Result<DatasetManifest> {
    if n_scenes < 10 {
        return Err(Error::InvalidArgument {
            op: "build_dataset",
            detail: format!("n_scenes {n_scenes} must be >= 10"),
        });
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for s in 0..n_scenes {
        let id = s as u64;
        let scene = generate_scene(rng::derive_seed(seed, "scene", id), grid, extent)?;
        let dir = scene_dir(out, id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let mut height_bytes = Vec::with_capacity(grid * grid * 4);
        for &h in &scene.heights {
            height_bytes.extend_from_slice(&(h as f32).to_le_bytes());
        }
        write_atomic(&dir.join("height.f32"), &height_bytes)?;

        for d in 0..DIRECTIONS {
            let field = wind_oracle(&scene, d)?;
            let mut bytes = Vec::with_capacity(3 * grid * grid);
            for plane in [&field.u, &field.v, &field.w] {
                bytes.extend(plane.iter().map(|&v| quantize(v)));
            }
            write_atomic(&dir.join(format!("d{d}.u8")), &bytes)?;
            if previews {
                write_preview(&dir.join(format!("d{d}.png")), grid, &field)?;
            }
        }
        if previews {
            write_height_preview(&dir.join("height.png"), grid, &scene.heights)?;
        }
    }

    let n_train = n_scenes * 8 / 10;
    let n_val = n_scenes / 10;
    let ids: Vec<u64> = (0..n_scenes as u64).collect();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        grid,
        extent,
        seed,
        v_max: V_MAX,
        n_scenes,
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    write_atomic(out.join("manifest.json").as_path(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

fn write_height_preview(path: &Path, grid: usize, heights: &[f64]) -> Result<()> {
    let pixels: Vec<u8> = heights.iter().map(|&h| (h / 100.0 * 255.0) as u8).collect();
    let img = image::GrayImage::from_raw(grid as u32, grid as u32, pixels).unwrap();
    img.save(path).map_err(|e| Error::BadFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn write_preview(path: &Path, grid: usize, field: &WindField) -> Result<()> {
    let pixels: Vec<u8> = (0..grid * grid)
        .map(|i| {
            let speed = (field.u[i].powi(2) + field.v[i].powi(2)).sqrt();
            (speed / V_MAX * 255.0).clamp(0.0, 255.0) as u8
        })
        .collect();
    let img = image::GrayImage::from_raw(grid as u32, grid as u32, pixels).unwrap();
    img.save(path).map_err(|e| Error::BadFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::BadFormat {
            path,
            detail: format!("unsupported format version {}", manifest.format_version),
        });
    }
    Ok(manifest)
}

fn read_heights(root: &Path, id: u64, grid: usize) -> Result<Vec<f64>> {
    let path = scene_dir(root, id).join("height.f32");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != grid * grid * 4 {
        return Err(Error::BadFormat {
            path,
            detail: format!("expected {} bytes, found {}", grid * grid * 4, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_field(root: &Path, id: u64, direction: usize, grid: usize) -> Result<WindField> {
    let path = scene_dir(root, id).join(format!("d{direction}.u8"));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let n = grid * grid;
    if bytes.len() != 3 * n {
        return Err(Error::BadFormat {
            path,
            detail: format!("expected {} bytes, found {}", 3 * n, bytes.len()),
        });
    }
    let mut f = WindField::zeros(grid);
    for i in 0..n {
        f.u[i] = dequantize(bytes[i]);
        f.v[i] = dequantize(bytes[n + i]);
        f.w[i] = dequantize(bytes[2 * n + i]);
    }
    Ok(f)
}

/// Loads one (scene, direction) pair as a canonical-frame sample.
pub fn load_sample(root: &Path, manifest: &DatasetManifest, id: u64, direction: usize) -> Result<Sample> {
    let g = manifest.grid;
    let heights = read_heights(root, id, g)?;
    let field = read_field(root, id, direction, g)?;
    let (h_c, f_c) = canonicalize(g, &heights, &field, direction);

    let input: Vec<f32> = h_c.iter().map(|&h| (h / HEIGHT_SCALE) as f32).collect();
    let mut target = Vec::with_capacity(3 * g * g);
    for plane in [&f_c.u, &f_c.v, &f_c.w] {
        target.extend(plane.iter().map(|&v| quantize(v) as f32 / 255.0));
    }
    Ok(Sample {
        scene_id: id,
        direction,
        input: Tensor::from_vec([1, 1, g, g], input)?,
        target: Tensor::from_vec([1, 3, g, g], target)?,
    })
}

/// Loads every sample of a named split (`train`, `val`, `test`).
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Sample>> {
    let manifest = read_manifest(root)?;
    let ids = manifest
        .split(split)
        .ok_or_else(|| Error::EmptyDataset(split.to_string()))?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset(split.to_string()));
    }
    let mut samples = Vec::with_capacity(ids.len() * DIRECTIONS);
    for &id in ids {
        for d in 0..DIRECTIONS {
            samples.push(load_sample(root, &manifest, id, d)?);
        }
    }
    Ok(samples)
}

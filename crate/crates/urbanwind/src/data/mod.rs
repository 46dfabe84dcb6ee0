//! Synthetic urban scenes and proxy wind fields: procedural generation, a
//! 2-D potential-flow oracle standing in for CFD, canonical inflow-frame
//! rotation, 8-bit quantization, and dataset files.

mod canon;
pub(crate) mod dataset;
mod oracle;
mod quant;
mod scene;

pub use canon::{canonicalize, canonicalize_heights};
pub use dataset::{
    build_dataset, load_sample, load_split, read_manifest, DatasetManifest, Sample, DIRECTIONS,
    HEIGHT_SCALE,
};
pub use oracle::{wind_oracle, WindField, U_INF};
pub use quant::{dequantize, quantize, V_MAX};
pub use scene::{generate_scene, Scene};

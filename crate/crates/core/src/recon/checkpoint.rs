//! Parameter checkpoints: one raw grid file per tensor plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::{load_grid, save_grid};
use crate::tensor::{ComplexGrid, Shape, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub step: usize,
    /// Master seed and stream label the run drew from; together with `step`
    /// this is enough to resume the counter-based streams.
    pub rng_seed: u64,
    pub rng_stream: String,
}

fn tensors(p: &ModelParams) -> Vec<(String, Shape, Vec<C64>)> {
    let c = p.config;
    let (ks, kt, ch) = (c.spatial_kernel, c.temporal_kernel, c.channels);
    let real = |v: &[f64]| v.iter().map(|&b| C64::new(b, 0.0)).collect::<Vec<_>>();
    p.unrolls
        .iter()
        .enumerate()
        .flat_map(|(i, u)| {
            vec![
                (format!("unroll{i}.spatial_in"), Shape::new(ch, 1, ks, ks), u.spatial_in.clone()),
                (format!("unroll{i}.temporal_in"), Shape::new(ch, ch, kt, 1), u.temporal_in.clone()),
                (format!("unroll{i}.bias"), Shape::new(ch, 1, 1, 1), real(&u.bias)),
                (format!("unroll{i}.spatial_out"), Shape::new(1, ch, ks, ks), u.spatial_out.clone()),
                (format!("unroll{i}.temporal_out"), Shape::new(1, 1, kt, 1), u.temporal_out.clone()),
                (format!("unroll{i}.dc_step"), Shape::new(1, 1, 1, 1), real(&[u.dc_step])),
            ]
        })
        .collect()
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    params: &ModelParams,
    step: usize,
    rng_seed: u64,
    rng_stream: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, shape, data) in tensors(params) {
        let file = format!("{name}.grid");
        save_grid(dir.join(&file), &ComplexGrid::from_vec(shape, data)?)?;
        entries.push(TensorEntry { name, file, shape: shape.dims() });
    }
    let manifest = CheckpointManifest {
        config: params.config,
        tensors: entries,
        step,
        rng_seed,
        rng_stream: rng_stream.to_string(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(ModelParams, CheckpointManifest)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut params = ModelParams::zeros(manifest.config);
    let expected = tensors(&params);
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, model needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape, _), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || shape.dims() != entry.shape {
            return Err(Error::Format(format!("unexpected tensor '{}' {:?}", entry.name, entry.shape)));
        }
    }
    for (i, u) in params.unrolls.iter_mut().enumerate() {
        let load = |suffix: &str| -> Result<Vec<C64>> {
            let entry = &manifest.tensors[i * 6
                + ["spatial_in", "temporal_in", "bias", "spatial_out", "temporal_out", "dc_step"]
                    .iter()
                    .position(|s| *s == suffix)
                    .unwrap()];
            Ok(load_grid(dir.join(&entry.file))?.into_vec())
        };
        u.spatial_in = load("spatial_in")?;
        u.temporal_in = load("temporal_in")?;
        u.bias = load("bias")?.iter().map(|z| z.re).collect();
        u.spatial_out = load("spatial_out")?;
        u.temporal_out = load("temporal_out")?;
        u.dc_step = load("dc_step")?[0].re;
    }
    Ok((params, manifest))
}

use std::path::Path;

use crate::data::{normalize_stack, tile_offsets, write_png, Mask, Raster, SceneSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::UNetModel;

use super::metrics::threshold_mask;

/// Per-pixel burn-scar probability for a whole scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    pub fn threshold(&self, tau: f64) -> Result<Mask> {
        threshold_mask(&self.data, self.height, self.width, tau)
    }

    /// 8-bit grayscale, `round(255 p)`.
    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            bit_depth: 8,
            data: self
                .data
                .iter()
                .map(|&p| (f64::from(p) * 255.0).round().clamp(0.0, 255.0) as u16)
                .collect(),
        }
    }

    /// Writes `prob.png` and the thresholded `mask.png` into `dir`.
    pub fn write(&self, dir: &Path, tau: f64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_png(&dir.join("prob.png"), &self.to_raster())?;
        write_png(&dir.join("mask.png"), &self.threshold(tau)?.to_raster())
    }
}

/// Tiles processed per forward call.
const TILE_BATCH: usize = 4;

/// Overlapping-tile inference; every pixel gets the arithmetic mean of the
/// probabilities of the tiles covering it.
pub fn predict_scene(
    model: &UNetModel<f32>,
    sample: &SceneSample,
    tile: usize,
    stride: usize,
) -> Result<ProbMap> {
    let (h, w) = (sample.height(), sample.width());
    if tile > h || tile > w {
        return Err(Error::Tiling(format!(
            "scene {} is {h}x{w}, smaller than tile {tile}",
            sample.scene_id
        )));
    }
    let x = normalize_stack(sample)?;
    let c = x.shape()[1];
    let rows = tile_offsets(h, tile, stride)?;
    let cols = tile_offsets(w, tile, stride)?;
    let origins: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&col| (r, col)))
        .collect();

    let mut sum = vec![0.0f64; h * w];
    let mut hits = vec![0u32; h * w];
    for group in origins.chunks(TILE_BATCH) {
        let mut data = Vec::with_capacity(group.len() * c * tile * tile);
        for &(r0, c0) in group {
            for ch in 0..c {
                let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
                for r in r0..r0 + tile {
                    data.extend_from_slice(&plane[r * w + c0..r * w + c0 + tile]);
                }
            }
        }
        let batch = Tensor::new(&[group.len(), c, tile, tile], data)?;
        let prob = model.predict(&batch)?;
        for (i, &(r0, c0)) in group.iter().enumerate() {
            let p = &prob.data()[i * tile * tile..(i + 1) * tile * tile];
            for r in 0..tile {
                for cc in 0..tile {
                    let q = (r0 + r) * w + c0 + cc;
                    sum[q] += f64::from(p[r * tile + cc]);
                    hits[q] += 1;
                }
            }
        }
    }
    Ok(ProbMap {
        height: h,
        width: w,
        data: sum
            .iter()
            .zip(&hits)
            .map(|(&s, &n)| (s / f64::from(n)) as f32)
            .collect(),
    })
}

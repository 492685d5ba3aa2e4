use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::Example;

use super::scene::{mask_tensor, normalize_stack, SceneSample};

/// Window origins along one axis: `0, S, 2S, ...`, with the final window
/// shifted inward so it ends exactly at `len`.
pub fn tile_offsets(len: usize, tile: usize, stride: usize) -> Result<Vec<usize>> {
    if tile == 0 || stride == 0 {
        return Err(Error::Tiling("tile size and stride must be >= 1".into()));
    }
    if tile > len {
        return Err(Error::Tiling(format!("tile {tile} exceeds extent {len}")));
    }
    let mut out: Vec<usize> = (0..=len - tile).step_by(stride).collect();
    if *out.last().unwrap() != len - tile {
        out.push(len - tile);
    }
    Ok(out)
}

/// A full-size window of a scene with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
    /// `[1, C, T, T]` in `[0, 1]`.
    pub input: Tensor<f32>,
    /// `[1, 1, T, T]`.
    pub target: Tensor<f32>,
}

impl Tile {
    pub fn example(&self) -> Example {
        Example {
            input: self.input.clone(),
            target: self.target.clone(),
        }
    }
}

/// Stacked tiles ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBatch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    /// `(scene_id, row_off, col_off)` per batch item.
    pub provenance: Vec<(String, usize, usize)>,
}

impl TileBatch {
    pub fn from_tiles(tiles: &[Tile]) -> Result<Self> {
        let inputs: Vec<&Tensor<f32>> = tiles.iter().map(|t| &t.input).collect();
        let targets: Vec<&Tensor<f32>> = tiles.iter().map(|t| &t.target).collect();
        Ok(Self {
            input: Tensor::stack_batch(&inputs)?,
            target: Tensor::stack_batch(&targets)?,
            provenance: tiles
                .iter()
                .map(|t| (t.scene_id.clone(), t.row, t.col))
                .collect(),
        })
    }
}

/// Cuts `sample` into `tile x tile` windows on a stride-`stride` grid
/// (row-major order).
pub fn tile_scene(sample: &SceneSample, tile: usize, stride: usize) -> Result<Vec<Tile>> {
    sample.validate()?;
    let rows = tile_offsets(sample.height(), tile, stride)?;
    let cols = tile_offsets(sample.width(), tile, stride)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let part = sample.crop(r, c, tile, tile);
            out.push(Tile {
                scene_id: sample.scene_id.clone(),
                row: r,
                col: c,
                input: normalize_stack(&part)?,
                target: mask_tensor(&part.labels)?,
            });
        }
    }
    Ok(out)
}

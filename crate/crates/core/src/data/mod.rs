//! Scene IO, normalization, tiling, splitting and the synthetic generator.

mod components;
mod raster;
mod scene;
mod split;
pub mod synth;
mod tile;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use components::{component_pixels, connected_components, dilate};
pub use raster::{read_png, write_png, Mask, Raster};
pub use scene::{load_scene, mask_tensor, normalize_stack, save_scene, ConfuserMasks, SceneSample};
pub use split::{split_dataset, val_count};
pub use synth::{
    corrupt_labels, dropped_components, injected_components, synth_dataset, synth_scene, SynthConfig,
    FALSE_BLOB_MARGIN, FALSE_BLOB_STEPS,
};
pub use tile::{tile_offsets, tile_scene, Tile, TileBatch};

/// Scene directories under `<root>/scenes`. Order follows the first column
/// of `<root>/manifest.csv` when present, otherwise sorted by name.
pub fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let scenes = root.join("scenes");
    if !scenes.is_dir() {
        return Err(Error::load(&scenes, "dataset root has no scenes/ directory"));
    }
    let manifest = root.join("manifest.csv");
    if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        return Ok(text
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').next())
            .map(str::trim)
            .filter(|id| !id.is_empty())
            .map(|id| scenes.join(id))
            .collect());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&scenes)
        .map_err(|e| Error::io(&scenes, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<SceneSample>> {
    scene_dirs(root)?.iter().map(|d| load_scene(d)).collect()
}

/// Writes `<root>/scenes/<id>/...` and a manifest.
pub fn save_dataset(root: &Path, scenes: &[SceneSample]) -> Result<()> {
    let mut manifest = String::from("scene_id,split_hint,biome\n");
    for s in scenes {
        save_scene(&root.join("scenes").join(&s.scene_id), s)?;
        manifest.push_str(&format!("{},,synthetic\n", s.scene_id));
    }
    let path = root.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

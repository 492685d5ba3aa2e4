use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::raster::{read_png, write_png, Mask, Raster};

/// Extra masks written by the synthetic generator for confuser analysis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfuserMasks {
    pub river: Mask,
    pub cloud: Mask,
}

/// One co-registered VIS/NIR scene with its (possibly noisy) label mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneSample {
    pub scene_id: String,
    /// 8-bit RGB.
    pub vis: Raster,
    /// 8- or 16-bit, one channel per NIR band.
    pub nir: Raster,
    pub labels: Mask,
    /// Clean mask, synthetic scenes only.
    pub oracle: Option<Mask>,
    pub confusers: Option<ConfuserMasks>,
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.vis.height
    }

    pub fn width(&self) -> usize {
        self.vis.width
    }

    /// Input channel count, 3 + NIR bands.
    pub fn channels(&self) -> usize {
        3 + self.nir.channels
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if self.vis.channels != 3 || self.vis.bit_depth != 8 {
            return Err(Error::contract("vis must be 8-bit RGB"));
        }
        let mut dims = vec![
            ("nir", self.nir.height, self.nir.width),
            ("labels", self.labels.height, self.labels.width),
        ];
        if let Some(o) = &self.oracle {
            dims.push(("oracle", o.height, o.width));
        }
        for (what, dh, dw) in dims {
            if (dh, dw) != (h, w) {
                return Err(Error::shape(format!(
                    "{what} is {dh}x{dw}, vis is {h}x{w}"
                )));
            }
        }
        Ok(())
    }

    /// Crops every raster to the window, keeping the scene id.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> SceneSample {
        SceneSample {
            scene_id: self.scene_id.clone(),
            vis: self.vis.crop(row, col, h, w),
            nir: self.nir.crop(row, col, h, w),
            labels: self.labels.crop(row, col, h, w),
            oracle: self.oracle.as_ref().map(|m| m.crop(row, col, h, w)),
            confusers: self.confusers.as_ref().map(|c| ConfuserMasks {
                river: c.river.crop(row, col, h, w),
                cloud: c.cloud.crop(row, col, h, w),
            }),
        }
    }
}

fn read_mask(path: &Path) -> Result<Mask> {
    Mask::from_raster(&read_png(path)?).map_err(|e| Error::load(path, e.to_string()))
}

fn check_dims(path: &Path, h: usize, w: usize, expected: (usize, usize)) -> Result<()> {
    if (h, w) != expected {
        return Err(Error::load(
            path,
            format!(
                "dimension mismatch: {h}x{w}, vis.png is {}x{}",
                expected.0, expected.1
            ),
        ));
    }
    Ok(())
}

/// Reads `vis.png`, `nir.png`, `mask.png` and, when present, `oracle.png`,
/// `river.png` and `cloud.png` from `dir`. The directory name is the scene id.
pub fn load_scene(dir: &Path) -> Result<SceneSample> {
    let scene_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let vis_path = dir.join("vis.png");
    let vis = read_png(&vis_path)?;
    if vis.channels != 3 || vis.bit_depth != 8 {
        return Err(Error::load(
            &vis_path,
            format!("expected 8-bit RGB, got {} channel(s) at {} bits", vis.channels, vis.bit_depth),
        ));
    }
    let dims = (vis.height, vis.width);
    let nir_path = dir.join("nir.png");
    let nir = read_png(&nir_path)?;
    check_dims(&nir_path, nir.height, nir.width, dims)?;
    let mask_path = dir.join("mask.png");
    let labels = read_mask(&mask_path)?;
    check_dims(&mask_path, labels.height, labels.width, dims)?;

    let optional = |name: &str| -> Result<Option<Mask>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let m = read_mask(&p)?;
        check_dims(&p, m.height, m.width, dims)?;
        Ok(Some(m))
    };
    let oracle = optional("oracle.png")?;
    let confusers = match (optional("river.png")?, optional("cloud.png")?) {
        (Some(river), Some(cloud)) => Some(ConfuserMasks { river, cloud }),
        _ => None,
    };
    Ok(SceneSample {
        scene_id,
        vis,
        nir,
        labels,
        oracle,
        confusers,
    })
}

/// Writes the layout read by [`load_scene`].
pub fn save_scene(dir: &Path, sample: &SceneSample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png(&dir.join("vis.png"), &sample.vis)?;
    write_png(&dir.join("nir.png"), &sample.nir)?;
    write_png(&dir.join("mask.png"), &sample.labels.to_raster())?;
    if let Some(o) = &sample.oracle {
        write_png(&dir.join("oracle.png"), &o.to_raster())?;
    }
    if let Some(c) = &sample.confusers {
        write_png(&dir.join("river.png"), &c.river.to_raster())?;
        write_png(&dir.join("cloud.png"), &c.cloud.to_raster())?;
    }
    Ok(())
}

/// Scales every channel by its bit-depth maximum into `[0, 1]` and stacks
/// them as `[1, 3 + B2, H, W]` in the order R, G, B, NIR bands.
pub fn normalize_stack(sample: &SceneSample) -> Result<Tensor<f32>> {
    sample.validate()?;
    let (h, w) = (sample.height(), sample.width());
    let mut data = Vec::with_capacity(sample.channels() * h * w);
    for raster in [&sample.vis, &sample.nir] {
        let scale = f32::from(raster.max_value());
        for ch in 0..raster.channels {
            data.extend(
                raster
                    .data
                    .iter()
                    .skip(ch)
                    .step_by(raster.channels)
                    .map(|&v| f32::from(v) / scale),
            );
        }
    }
    Tensor::new(&[1, sample.channels(), h, w], data)
}

/// Mask as a `[1, 1, H, W]` tensor of 0.0 / 1.0.
pub fn mask_tensor(mask: &Mask) -> Result<Tensor<f32>> {
    Tensor::new(
        &[1, 1, mask.height, mask.width],
        mask.data.iter().map(|&v| f32::from(v)).collect(),
    )
}

//! Procedural VIS/NIR scenes with burn scars, optional river and cloud
//! confusers, and component-level label corruption.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Stream};

use super::components::{component_pixels, dilate};
use super::raster::{Mask, Raster};
use super::scene::{ConfuserMasks, SceneSample};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Scene height and width.
    pub canvas: usize,
    pub n_scenes: usize,
    /// Inclusive range of scars per scene.
    pub scar_count_range: (usize, usize),
    /// Inclusive range of random-walk steps per scar.
    pub scar_size_range: (usize, usize),
    pub river_prob: f64,
    pub cloud_prob: f64,
    pub label_drop_fraction: f64,
    pub false_label_count: usize,
    /// Number of NIR bands (B2).
    pub nir_bands: usize,
    /// 8 or 16.
    pub nir_bits: u8,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas: 128,
            n_scenes: 16,
            scar_count_range: (2, 5),
            scar_size_range: (40, 160),
            river_prob: 0.0,
            cloud_prob: 0.0,
            label_drop_fraction: 0.0,
            false_label_count: 0,
            nir_bands: 1,
            nir_bits: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.canvas < 16 {
            bad.push(format!("canvas must be >= 16 (got {})", self.canvas));
        }
        if self.scar_count_range.0 > self.scar_count_range.1 {
            bad.push("scar_count_range is empty".to_string());
        }
        if self.scar_size_range.0 > self.scar_size_range.1 || self.scar_size_range.0 == 0 {
            bad.push("scar_size_range must be a non-empty range of positive step counts".to_string());
        }
        for (name, p) in [
            ("river_prob", self.river_prob),
            ("cloud_prob", self.cloud_prob),
            ("label_drop_fraction", self.label_drop_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bad.push(format!("{name} must lie in [0, 1] (got {p})"));
            }
        }
        if self.nir_bands == 0 {
            bad.push("nir_bands must be >= 1".to_string());
        }
        if self.nir_bits != 8 && self.nir_bits != 16 {
            bad.push(format!("nir_bits must be 8 or 16 (got {})", self.nir_bits));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(bad.join("; ")))
        }
    }
}

const PASTURE_VIS: [f64; 3] = [70.0, 120.0, 60.0];
const PASTURE_NIR: f64 = 150.0;
const SCAR_VIS: [f64; 3] = [95.0, 55.0, 40.0];
const SCAR_NIR: f64 = 45.0;
const RIVER_VIS: [f64; 3] = [45.0, 60.0, 75.0];
const RIVER_NIR: f64 = 10.0;
const CLOUD_VIS: [f64; 3] = [235.0, 235.0, 240.0];
const CLOUD_NIR: f64 = 220.0;

/// Paints a disk of `radius` at every position of a random walk of `steps`
/// moves from `(r0, c0)`. The walk is confined to the canvas.
fn random_walk_blob(
    mask: &mut Mask,
    rng: &mut Rng,
    (r0, c0): (usize, usize),
    steps: usize,
    radius: usize,
) {
    let (h, w) = (mask.height as i64, mask.width as i64);
    let (mut r, mut c) = (r0 as i64, c0 as i64);
    let rad = radius as i64;
    for _ in 0..=steps {
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (y, x) = (r + dr, c + dc);
                if dr * dr + dc * dc <= rad * rad && y >= 0 && x >= 0 && y < h && x < w {
                    mask.set(y as usize, x as usize, 1);
                }
            }
        }
        r = (r + rng.int_in(-1, 1)).clamp(0, h - 1);
        c = (c + rng.int_in(-1, 1)).clamp(0, w - 1);
    }
}

fn river_mask(n: usize, rng: &mut Rng) -> Mask {
    let mut m = Mask::zeros(n, n);
    let nf = n as f64;
    let a = rng.uniform() * nf;
    let b = rng.uniform() * nf;
    let amp = (0.05 + 0.1 * rng.uniform()) * nf;
    let period = (0.5 + rng.uniform()) * nf;
    let phase = rng.uniform() * TAU;
    let width_phase = rng.uniform() * TAU;
    let vertical = rng.bernoulli(0.5);
    for t in 0..n {
        let tf = t as f64;
        let centre = a + (b - a) * tf / nf + amp * (TAU * tf / period + phase).sin();
        let half = 1.5 + 1.0 * (TAU * tf / nf + width_phase).sin().abs();
        for s in 0..n {
            if (s as f64 - centre).abs() <= half {
                if vertical {
                    m.set(t, s, 1);
                } else {
                    m.set(s, t, 1);
                }
            }
        }
    }
    m
}

fn to_sample(v: f64) -> u16 {
    v.round().clamp(0.0, 255.0) as u16
}

/// Generates one scene; labels start equal to the oracle.
pub fn synth_scene(cfg: &SynthConfig, rng: &mut Rng, scene_id: &str) -> Result<SceneSample> {
    cfg.validate()?;
    let n = cfg.canvas;
    let nf = n as f64;

    // smooth illumination field plus pixel noise
    let (fx, fy) = (rng.uniform() * 2.0 + 0.5, rng.uniform() * 2.0 + 0.5);
    let (px, py) = (rng.uniform() * TAU, rng.uniform() * TAU);
    let field = |r: usize, c: usize| {
        6.0 * (TAU * fx * c as f64 / nf + px).sin() + 6.0 * (TAU * fy * r as f64 / nf + py).sin()
    };
    let mut vis = vec![[0.0f64; 3]; n * n];
    let mut nir = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let f = field(r, c);
            for ch in 0..3 {
                vis[i][ch] = PASTURE_VIS[ch] + f + 5.0 * rng.standard_normal();
            }
            nir[i] = PASTURE_NIR + 1.5 * f + 8.0 * rng.standard_normal();
        }
    }

    let mut river = Mask::zeros(n, n);
    if rng.bernoulli(cfg.river_prob) {
        river = river_mask(n, rng);
        for i in 0..n * n {
            if river.data[i] == 1 {
                for ch in 0..3 {
                    vis[i][ch] = RIVER_VIS[ch] + 4.0 * rng.standard_normal();
                }
                nir[i] = RIVER_NIR + 3.0 * rng.standard_normal();
            }
        }
    }

    let mut cloud = Mask::zeros(n, n);
    if rng.bernoulli(cfg.cloud_prob) {
        let (cr, cc) = (rng.uniform() * nf, rng.uniform() * nf);
        let radius = nf * (0.125 + 0.125 * rng.uniform());
        for r in 0..n {
            for c in 0..n {
                let d2 = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)) / (radius * radius);
                let alpha = (-2.0 * d2).exp();
                let i = r * n + c;
                for ch in 0..3 {
                    vis[i][ch] = (1.0 - alpha) * vis[i][ch] + alpha * CLOUD_VIS[ch];
                }
                nir[i] = (1.0 - alpha) * nir[i] + alpha * CLOUD_NIR;
                if alpha > 0.5 {
                    cloud.data[i] = 1;
                }
            }
        }
    }

    let mut oracle = Mask::zeros(n, n);
    let scars = rng.int_in(cfg.scar_count_range.0 as i64, cfg.scar_count_range.1 as i64);
    for _ in 0..scars {
        let steps = rng.int_in(cfg.scar_size_range.0 as i64, cfg.scar_size_range.1 as i64);
        let radius = rng.int_in(2, 3) as usize;
        let start = (rng.index(n), rng.index(n));
        random_walk_blob(&mut oracle, rng, start, steps as usize, radius);
    }
    for i in 0..n * n {
        if oracle.data[i] == 1 {
            for ch in 0..3 {
                vis[i][ch] = SCAR_VIS[ch] + 5.0 * rng.standard_normal();
            }
            nir[i] = SCAR_NIR + 6.0 * rng.standard_normal();
            river.data[i] = 0;
            cloud.data[i] = 0;
        }
    }

    let mut vis_r = Raster::new(n, n, 3, 8)?;
    for (i, px) in vis.iter().enumerate() {
        for ch in 0..3 {
            vis_r.data[i * 3 + ch] = to_sample(px[ch]);
        }
    }
    let bands = cfg.nir_bands;
    let mut nir_r = Raster::new(n, n, bands, cfg.nir_bits)?;
    let scale = if cfg.nir_bits == 16 { 257 } else { 1 };
    for (i, &v) in nir.iter().enumerate() {
        for b in 0..bands {
            nir_r.data[i * bands + b] = to_sample(v) * scale;
        }
    }
    Ok(SceneSample {
        scene_id: scene_id.to_string(),
        vis: vis_r,
        nir: nir_r,
        labels: oracle.clone(),
        oracle: Some(oracle),
        confusers: Some(ConfuserMasks { river, cloud }),
    })
}

/// Random-walk steps of injected false blobs.
pub const FALSE_BLOB_STEPS: (usize, usize) = (20, 80);
/// Minimum gap, in pixels, between a false blob and any scar or other blob.
pub const FALSE_BLOB_MARGIN: usize = 3;
const PLACEMENT_ATTEMPTS: usize = 500;

/// Removes `floor(f * n)` of the oracle's `n` connected components from the
/// labels and adds `k` blobs on scar-free background.
pub fn corrupt_labels(sample: &SceneSample, f: f64, k: usize, rng: &mut Rng) -> Result<SceneSample> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::config(format!("label drop fraction {f} outside [0, 1]")));
    }
    let oracle = sample
        .oracle
        .as_ref()
        .ok_or_else(|| Error::contract(format!("scene {} has no oracle mask", sample.scene_id)))?;
    let mut labels = oracle.clone();
    let mut comps: Vec<Vec<usize>> = component_pixels(oracle);
    let n_drop = (f * comps.len() as f64 + 1e-9).floor() as usize;
    rng.shuffle(&mut comps);
    for comp in &comps[..n_drop] {
        for &p in comp {
            labels.data[p] = 0;
        }
    }

    let (h, w) = (oracle.height, oracle.width);
    let mut occupied = oracle.clone();
    for blob_index in 0..k {
        let forbidden = dilate(&occupied, FALSE_BLOB_MARGIN);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut blob = Mask::zeros(h, w);
            let steps = rng.int_in(FALSE_BLOB_STEPS.0 as i64, FALSE_BLOB_STEPS.1 as i64);
            let start = (rng.index(h), rng.index(w));
            random_walk_blob(&mut blob, rng, start, steps as usize, 2);
            if blob.data.iter().zip(&forbidden.data).all(|(&b, &f)| b == 0 || f == 0) {
                placed = Some(blob);
                break;
            }
        }
        let blob = placed.ok_or_else(|| {
            Error::contract(format!(
                "could not place false blob {} of {k} in scene {} after {PLACEMENT_ATTEMPTS} attempts",
                blob_index + 1,
                sample.scene_id
            ))
        })?;
        for (i, &b) in blob.data.iter().enumerate() {
            if b == 1 {
                labels.data[i] = 1;
                occupied.data[i] = 1;
            }
        }
    }
    Ok(SceneSample {
        labels,
        ..sample.clone()
    })
}

/// Oracle components with no labelled pixel.
pub fn dropped_components(sample: &SceneSample) -> Vec<Vec<usize>> {
    let Some(oracle) = &sample.oracle else {
        return Vec::new();
    };
    component_pixels(oracle)
        .into_iter()
        .filter(|c| c.iter().all(|&p| sample.labels.data[p] == 0))
        .collect()
}

/// Label components that do not touch the oracle.
pub fn injected_components(sample: &SceneSample) -> Vec<Vec<usize>> {
    let Some(oracle) = &sample.oracle else {
        return Vec::new();
    };
    component_pixels(&sample.labels)
        .into_iter()
        .filter(|c| c.iter().all(|&p| oracle.data[p] == 0))
        .collect()
}

/// Generates `cfg.n_scenes` scenes named `scene_0000`, ... Scene `i` draws
/// from its own indexed stream, and label corruption continues that stream.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SceneSample>> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    (0..cfg.n_scenes)
        .map(|i| {
            let mut rng = root.split_indexed(Stream::Synth, i as u64);
            let scene = synth_scene(cfg, &mut rng, &format!("scene_{i:04}"))?;
            if cfg.label_drop_fraction > 0.0 || cfg.false_label_count > 0 {
                corrupt_labels(&scene, cfg.label_drop_fraction, cfg.false_label_count, &mut rng)
            } else {
                Ok(scene)
            }
        })
        .collect()
}

use std::collections::HashSet;
use std::path::Path;

use scarseg::data::{
    connected_components, corrupt_labels, dilate, injected_components, load_dataset, load_scene,
    normalize_stack, read_png, save_dataset, save_scene, split_dataset, synth_dataset, synth_scene,
    tile_offsets, tile_scene, val_count, write_png, Mask, Raster, SceneSample, SynthConfig,
    TileBatch, FALSE_BLOB_MARGIN,
};
use scarseg::tensor::{Rng, Stream};
use scarseg::Error;

fn blank_scene(id: &str, h: usize, w: usize) -> SceneSample {
    SceneSample {
        scene_id: id.into(),
        vis: Raster::new(h, w, 3, 8).unwrap(),
        nir: Raster::new(h, w, 1, 8).unwrap(),
        labels: Mask::zeros(h, w),
        oracle: None,
        confusers: None,
    }
}

/// Scene whose raster values encode their position, so crops are checkable.
fn patterned_scene(id: &str, h: usize, w: usize) -> SceneSample {
    let mut s = blank_scene(id, h, w);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                s.vis.set(r, c, ch, ((r * 7 + c * 3 + ch * 11) % 256) as u16);
            }
            s.nir.set(r, c, 0, ((r + 5 * c) % 256) as u16);
            s.labels.set(r, c, u8::from((r / 3 + c / 5) % 2 == 0));
        }
    }
    s
}

/// Ten separated 4x4 squares on a 64x64 canvas.
fn ten_component_scene() -> SceneSample {
    let mut s = blank_scene("ten", 64, 64);
    let mut oracle = Mask::zeros(64, 64);
    for i in 0..10 {
        let (r0, c0) = (4 + (i / 5) * 30, 4 + (i % 5) * 12);
        for r in r0..r0 + 4 {
            for c in c0..c0 + 4 {
                oracle.set(r, c, 1);
            }
        }
    }
    s.labels = oracle.clone();
    s.oracle = Some(oracle);
    s
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_size_triplet_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let s = patterned_scene("big", 1024, 1024);
    save_scene(dir.path(), &s).unwrap();
    let loaded = load_scene(dir.path()).unwrap();
    assert_eq!((loaded.height(), loaded.width()), (1024, 1024));
    assert_eq!(loaded.vis, s.vis);
    assert_eq!(loaded.nir, s.nir);
    assert_eq!(loaded.labels, s.labels);
    assert!(loaded.oracle.is_none());
}

#[test]
fn mask_is_binarized_at_128() {
    let dir = tempfile::tempdir().unwrap();
    save_scene(dir.path(), &blank_scene("m", 4, 4)).unwrap();
    let mut raw = Raster::new(4, 4, 1, 8).unwrap();
    for (i, v) in [0u16, 255, 127, 128].iter().cycle().take(16).enumerate() {
        raw.set(i / 4, i % 4, 0, *v);
    }
    write_png(&dir.path().join("mask.png"), &raw).unwrap();
    let s = load_scene(dir.path()).unwrap();
    let got: Vec<u8> = (0..16).map(|i| s.labels.get(i / 4, i % 4)).collect();
    assert_eq!(got[..4], [0, 1, 0, 1]);
    assert!(got.iter().all(|&v| v <= 1));
}

#[test]
fn dimension_mismatch_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    save_scene(dir.path(), &blank_scene("d", 64, 64)).unwrap();
    write_png(&dir.path().join("nir.png"), &Raster::new(32, 32, 1, 8).unwrap()).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Load { .. }));
    assert!(err.to_string().contains("nir.png"), "{err}");
}

#[test]
fn missing_file_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    save_scene(dir.path(), &blank_scene("x", 8, 8)).unwrap();
    std::fs::remove_file(dir.path().join("vis.png")).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    assert!(err.to_string().contains("vis.png"), "{err}");
}

#[test]
fn sixteen_bit_nir_normalizes_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = blank_scene("n", 8, 8);
    s.nir = Raster::new(8, 8, 1, 16).unwrap();
    s.nir.set(0, 0, 0, 65535);
    s.nir.set(0, 1, 0, 300);
    s.vis.set(0, 0, 0, 255);
    save_scene(dir.path(), &s).unwrap();
    let loaded = load_scene(dir.path()).unwrap();
    assert_eq!(loaded.nir.bit_depth, 16);
    assert_eq!(loaded.nir.get(0, 1, 0), 300);
    let x = normalize_stack(&loaded).unwrap();
    assert_eq!(x.shape(), &[1, 4, 8, 8]);
    let d = x.data();
    assert_eq!(d[0], 1.0);
    assert_eq!(d[1], 0.0);
    assert_eq!(d[3 * 64], 1.0);
    assert!((d[3 * 64 + 1] - 300.0 / 65535.0).abs() < 1e-7);
    assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn tiling_counts() {
    let s = blank_scene("t", 1024, 1024);
    assert_eq!(tile_scene(&s, 256, 256).unwrap().len(), 16);
    assert_eq!(tile_scene(&s, 256, 128).unwrap().len(), 49);
    let one = tile_scene(&blank_scene("o", 256, 256), 256, 256).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!((one[0].row, one[0].col), (0, 0));
    assert_eq!(tile_offsets(100, 32, 32).unwrap(), [0, 32, 64, 68]);
    assert!(matches!(tile_scene(&s, 2048, 256), Err(Error::Tiling(_))));
}

#[test]
fn stride_t_tiles_reassemble_exactly() {
    let s = patterned_scene("r", 96, 64);
    let tiles = tile_scene(&s, 32, 32).unwrap();
    assert_eq!(tiles.len(), 6);
    let full = normalize_stack(&s).unwrap();
    let mut rebuilt = vec![f32::NAN; full.len()];
    let mut labels = Mask::zeros(96, 64);
    for t in &tiles {
        for ch in 0..4 {
            for r in 0..32 {
                for c in 0..32 {
                    rebuilt[(ch * 96 + t.row + r) * 64 + t.col + c] = t.input.data()[(ch * 32 + r) * 32 + c];
                }
            }
        }
        for r in 0..32 {
            for c in 0..32 {
                labels.set(t.row + r, t.col + c, t.target.data()[r * 32 + c] as u8);
            }
        }
    }
    assert_eq!(rebuilt, full.data());
    assert_eq!(labels, s.labels);
    let batch = TileBatch::from_tiles(&tiles).unwrap();
    assert_eq!(batch.input.shape(), &[6, 4, 32, 32]);
    assert_eq!(batch.provenance[1], ("r".to_string(), 0, 32));
}

#[test]
fn split_sizes_and_no_leakage() {
    assert_eq!(val_count(10, 0.2), 2);
    assert_eq!(val_count(299, 0.2), 60);
    let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    let (train, val) = split_dataset(ids.clone(), 0.2, 3).unwrap();
    assert_eq!((train.len(), val.len()), (8, 2));
    let a: HashSet<_> = train.iter().collect();
    assert!(val.iter().all(|v| !a.contains(v)));
    assert_eq!(split_dataset(ids.clone(), 0.2, 3).unwrap(), (train, val));
    let (t, v) = split_dataset((0..299).collect::<Vec<_>>(), 0.2, 1).unwrap();
    assert_eq!((t.len(), v.len()), (239, 60));
    assert!(matches!(split_dataset(vec![1], 0.2, 0), Err(Error::Split(_))));
}

#[test]
fn synth_is_deterministic_and_round_trips() {
    let cfg = SynthConfig {
        n_scenes: 3,
        canvas: 64,
        label_drop_fraction: 0.3,
        false_label_count: 2,
        river_prob: 1.0,
        cloud_prob: 1.0,
        seed: 7,
        ..SynthConfig::default()
    };
    let a = synth_dataset(&cfg).unwrap();
    assert_eq!(a, synth_dataset(&cfg).unwrap());
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(d1.path(), &a).unwrap();
    save_dataset(d2.path(), &a).unwrap();
    assert_eq!(tree_bytes(d1.path()), tree_bytes(d2.path()));
    let loaded = load_dataset(d1.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    for (l, s) in loaded.iter().zip(&a) {
        assert_eq!(l.scene_id, s.scene_id);
        assert_eq!((&l.vis, &l.nir, &l.labels, &l.oracle), (&s.vis, &s.nir, &s.labels, &s.oracle));
        assert_eq!(l.confusers, s.confusers);
    }
    let other = synth_dataset(&SynthConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a[0].vis, other[0].vis);
}

#[test]
fn zero_scars_give_empty_oracle() {
    let cfg = SynthConfig {
        scar_count_range: (0, 0),
        ..SynthConfig::default()
    };
    let s = synth_scene(&cfg, &mut Rng::new(1), "z").unwrap();
    assert_eq!(s.oracle.as_ref().unwrap().count(), 0);
    assert_eq!(s.labels.count(), 0);
}

#[test]
fn scar_fraction_and_nir_contrast_over_100_scenes() {
    let cfg = SynthConfig {
        n_scenes: 100,
        ..SynthConfig::default()
    };
    for s in synth_dataset(&cfg).unwrap() {
        let oracle = s.oracle.as_ref().unwrap();
        let frac = oracle.count() as f64 / (s.height() * s.width()) as f64;
        assert!((0.01..=0.30).contains(&frac), "{}: scar fraction {frac}", s.scene_id);
        assert_eq!(s.labels, *oracle);
        let (mut scar, mut ns, mut bg, mut nb) = (0.0, 0, 0.0, 0);
        for r in 0..s.height() {
            for c in 0..s.width() {
                let v = f64::from(s.nir.get(r, c, 0));
                if oracle.get(r, c) == 1 {
                    scar += v;
                    ns += 1;
                } else {
                    bg += v;
                    nb += 1;
                }
            }
        }
        assert!(scar / ns as f64 + 20.0 < bg / nb as f64, "{}", s.scene_id);
    }
}

#[test]
fn corrupt_labels_examples() {
    let s = ten_component_scene();
    let oracle = s.oracle.clone().unwrap();
    let mut rng = Rng::new(0).split(Stream::Synth);
    assert_eq!(corrupt_labels(&s, 0.0, 0, &mut rng).unwrap().labels, oracle);
    assert_eq!(corrupt_labels(&s, 1.0, 0, &mut rng).unwrap().labels.count(), 0);
    let half = corrupt_labels(&s, 0.5, 0, &mut rng).unwrap();
    assert_eq!(connected_components(&half.labels).1, 5);
    assert_eq!(half.oracle.as_ref(), Some(&oracle));
    for f in [-0.1, 1.5] {
        assert!(matches!(corrupt_labels(&s, f, 0, &mut rng), Err(Error::Config(_))));
    }
    assert!(matches!(
        corrupt_labels(&blank_scene("b", 8, 8), 0.5, 0, &mut rng),
        Err(Error::Contract(_))
    ));
}

#[test]
fn false_blobs_keep_their_margin() {
    for seed in 0..20 {
        let cfg = SynthConfig {
            n_scenes: 1,
            false_label_count: 3,
            label_drop_fraction: 0.2,
            seed,
            ..SynthConfig::default()
        };
        let s = synth_dataset(&cfg).unwrap().remove(0);
        let oracle = s.oracle.as_ref().unwrap();
        let near = dilate(oracle, FALSE_BLOB_MARGIN);
        let blobs = injected_components(&s);
        assert_eq!(blobs.len(), 3);
        for blob in blobs {
            for &p in &blob {
                let (r, c) = (p / s.width(), p % s.width());
                assert_eq!(near.get(r, c), 0, "seed {seed}: blob pixel ({r},{c}) within margin");
                assert_eq!(s.labels.get(r, c), 1);
            }
        }
    }
}

#[test]
fn png_round_trip_keeps_sixteen_bits() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Raster::new(3, 5, 1, 16).unwrap();
    r.set(2, 4, 0, 40000);
    r.set(1, 1, 0, 1);
    let path = dir.path().join("x.png");
    write_png(&path, &r).unwrap();
    assert_eq!(read_png(&path).unwrap(), r);
}

//! Procedural toy dataset: one ellipse or rectangle per image on a smooth
//! two-colour background, with a matching mask and a depth map that puts the
//! shape in front.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::{encode_png, Raster};
use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSample {
    pub image: Raster,
    pub mask: Raster,
    pub depth: Raster,
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

pub fn synth_sample(size: usize, seed: u64) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let ellipse = rng.random_bool(0.5);
    let (cy, cx) = (rng.random_range(0.3..0.7) * n, rng.random_range(0.3..0.7) * n);
    let (ry, rx) = (rng.random_range(0.12..0.3) * n, rng.random_range(0.12..0.3) * n);
    let (bg0, bg1) = (color(&mut rng), color(&mut rng));
    // Keep the foreground clearly apart from both background colours.
    let fg = loop {
        let c = color(&mut rng);
        let dist = |b: &[f64; 3]| c.iter().zip(b).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if dist(&bg0) > 0.6 && dist(&bg1) > 0.6 {
            break c;
        }
    };
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (dy, dx) = (angle.sin(), angle.cos());

    let mut image = Vec::with_capacity(size * size * 3);
    let mut mask = Vec::with_capacity(size * size);
    let mut depth = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let (u, v) = ((py - cy) / ry, (px - cx) / rx);
            let inside = if ellipse {
                u * u + v * v <= 1.0
            } else {
                u.abs() <= 1.0 && v.abs() <= 1.0
            };
            let t = ((py * dy + px * dx) / (n * 1.5)).clamp(0.0, 1.0);
            let rgb: [f64; 3] = if inside {
                fg
            } else {
                std::array::from_fn(|c| bg0[c] * (1.0 - t) + bg1[c] * t)
            };
            image.extend(rgb.iter().map(|v| (v * 255.0).round() as u8));
            mask.push(if inside { 255 } else { 0 });
            depth.push(if inside { 200 } else { 40 + (t * 80.0) as u8 });
        }
    }
    SynthSample {
        image: Raster::rgb(size, size, image),
        mask: Raster::gray(size, size, mask),
        depth: Raster::gray(size, size, depth),
    }
}

/// Writes `count` samples as PNGs plus `manifest.tsv` into `dir` and returns
/// the manifest path. Sample `i` uses seed `seed + i`.
pub fn write_synth_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    with_depth: bool,
) -> Result<PathBuf, DataError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = String::from("# split: synth\n");
    for i in 0..count {
        let s = synth_sample(size, seed + i as u64);
        let mut files = vec![
            (format!("img_{i:03}.png"), &s.image),
            (format!("img_{i:03}_mask.png"), &s.mask),
        ];
        if with_depth {
            files.push((format!("img_{i:03}_depth.png"), &s.depth));
        }
        let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
        manifest.push_str(&names.join("\t"));
        manifest.push('\n');
        for (name, raster) in &files {
            let path = dir.join(name);
            let bytes = encode_png(raster).map_err(|source| DataError::Raster {
                path: path.clone(),
                source,
            })?;
            std::fs::write(&path, bytes).map_err(io(&path))?;
        }
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(io(&path))?;
    Ok(path)
}

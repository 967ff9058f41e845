//! Procedural clear-scene generator used for fixtures, tests and demos.
//!
//! Scenes are street-like: a thin flat sky band, a distant backdrop, a
//! perspective ground plane, and three fronto-parallel facades standing on
//! the ground. The layout varies little between seeds, the way frames from a
//! fixed street camera do. Every non-sky surface
//! colour is saturated (one channel near zero) and textured with dark
//! speckle, so clear scenes obey the dark channel prior outside the sky the
//! way outdoor photographs do.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec;
use crate::error::Result;
use crate::image::{DepthMap, RgbImage};

/// Depth assigned to sky pixels; far enough that every fog level saturates
/// the transmission at its floor.
pub const SKY_DEPTH: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct Scene {
    pub clear: RgbImage,
    pub depth: DepthMap,
}

fn saturated_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let hi = rng.gen_range(0.45..0.95);
    let lo = rng.gen_range(0.0..0.04);
    let mid = rng.gen_range(lo..hi);
    let mut c = [hi, mid, lo];
    // random channel permutation
    for i in (1..3).rev() {
        let j = rng.gen_range(0..=i);
        c.swap(i, j);
    }
    c
}

/// Generates a scene of the given size from a seed.
pub fn generate_scene(width: usize, height: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f06);
    let n = width * height;
    let mut color = vec![[0.0f64; 3]; n];
    let mut depth = vec![0.0f64; n];

    let sky_line = (height as f64 * rng.gen_range(0.07..0.09)) as usize;
    let horizon = sky_line + (height as f64 * rng.gen_range(0.17..0.19)) as usize;
    let sky = [
        rng.gen_range(0.55..0.75),
        rng.gen_range(0.65..0.85),
        rng.gen_range(0.80..0.95),
    ];
    let backdrop_depth = rng.gen_range(22.0..24.0);
    let backdrop = saturated_color(&mut rng);
    let ground = saturated_color(&mut rng).map(|v| v * 0.6);
    let near = rng.gen_range(2.0..2.2);

    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if y < sky_line {
                color[i] = sky;
                depth[i] = SKY_DEPTH;
            } else if y < horizon {
                color[i] = backdrop;
                depth[i] = backdrop_depth;
            } else {
                // perspective ground: depth falls off with distance below the horizon
                let rows_below = (y - horizon) as f64 + 1.0;
                let span = (height - horizon) as f64;
                depth[i] = (near * span / rows_below).min(backdrop_depth);
                color[i] = ground;
            }
        }
    }

    // facades, far to near
    let mut facades: Vec<(f64, usize, usize, usize, usize, [f64; 3])> = (0..3)
        .map(|_| {
            let fw = rng.gen_range(width / 4..width / 3 + 1).max(2);
            let fh = rng.gen_range(height / 4..height / 3 + 1).max(2);
            let x0 = rng.gen_range(0..width.saturating_sub(fw).max(1));
            let base = rng.gen_range(horizon..height.max(horizon + 1));
            let y0 = base.saturating_sub(fh).max(sky_line);
            // stands on the ground: depth of the ground row at its base
            let rows_below = (base - horizon) as f64 + 1.0;
            let d = (near * (height - horizon) as f64 / rows_below).clamp(6.0, backdrop_depth);
            (d, x0, y0, fw, base - y0, saturated_color(&mut rng))
        })
        .collect();
    facades.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (d, x0, y0, fw, fh, c) in facades {
        let win = rng.gen_range(3..6);
        for y in y0..(y0 + fh).min(height) {
            for x in x0..(x0 + fw).min(width) {
                let i = y * width + x;
                let in_window = (x - x0) % win == win / 2 && (y - y0) % win == win / 2;
                color[i] = if in_window { c.map(|v| v * 0.15) } else { c };
                depth[i] = d;
            }
        }
    }

    let mut data = Vec::with_capacity(n * 3);
    for (px, &d) in color.iter().zip(&depth) {
        let shade: f64 = rng.gen_range(0.85..1.15);
        let speckle = if rng.gen_bool(0.06) { 0.1 } else { 1.0 };
        if d == SKY_DEPTH {
            data.extend_from_slice(px);
            continue;
        }
        for &v in px {
            data.push((v * shade * speckle).clamp(0.0, 1.0));
        }
    }

    Scene {
        clear: RgbImage::new(width, height, data).expect("scene values clamped"),
        depth: DepthMap::new(width, height, depth).expect("scene depth non-negative"),
    }
}

/// Writes `count` scenes as `scene_XXXX.png` + `scene_XXXX.pfm` into `dir`
/// and a pair list `pairs.txt`; returns the pair list path.
pub fn write_scene_set(
    dir: impl AsRef<Path>,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut list = String::new();
    for k in 0..count {
        let scene = generate_scene(width, height, seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let clear = format!("scene_{k:04}.png");
        let depth = format!("scene_{k:04}.pfm");
        codec::save_image(&scene.clear, dir.join(&clear))?;
        codec::save_depth(&scene.depth, dir.join(&depth), 1.0)?;
        list.push_str(&format!("{clear} {depth}\n"));
    }
    let path = dir.join("pairs.txt");
    std::fs::write(&path, list).map_err(|e| crate::Error::io(&path, e))?;
    Ok(path)
}

//! Window filters shared by feature extraction and the unfolding stages.
//!
//! Windows are truncated at the image border (no padding): box means divide by
//! the number of in-bounds samples, min filters take the minimum over the
//! in-bounds part of the window.

use crate::image::{Plane, RgbImage};

/// Mean over a `(2r+1)^2` window, computed with a summed-area table.
pub fn box_mean(src: &Plane, radius: usize) -> Plane {
    let (w, h) = (src.width, src.height);
    let stride = w + 1;
    let mut sat = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src.data[y * w + x];
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let sum = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            out[y * w + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    Plane::new(w, h, out)
}

/// Minimum over a `window x window` neighbourhood (odd window).
pub fn min_filter(src: &Plane, window: usize) -> Plane {
    let r = window / 2;
    let (w, h) = (src.width, src.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            tmp[y * w + x] = src.data[y * w + x0..y * w + x1]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let mut m = f64::INFINITY;
            for yy in y0..y1 {
                m = m.min(tmp[yy * w + x]);
            }
            out[y * w + x] = m;
        }
    }
    Plane::new(w, h, out)
}

/// Dark channel: per-pixel channel minimum followed by a square min filter.
pub fn dark_channel(image: &RgbImage, window: usize) -> Plane {
    min_filter(&image.min_channel(), window)
}

/// Grey-guided filter (He et al. formulation): local linear model
/// `q = a * guide + b` fitted per window with regulariser `eps`.
pub fn guided_filter(input: &Plane, guide: &Plane, radius: usize, eps: f64) -> Plane {
    debug_assert_eq!(input.data.len(), guide.data.len());
    let mean_i = box_mean(guide, radius);
    let mean_p = box_mean(input, radius);
    let corr_ip = box_mean(&guide.zip_map(input, |g, p| g * p), radius);
    let corr_ii = box_mean(&guide.map(|g| g * g), radius);

    let n = input.data.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        let var = corr_ii.data[i] - mean_i.data[i] * mean_i.data[i];
        let cov = corr_ip.data[i] - mean_i.data[i] * mean_p.data[i];
        a[i] = cov / (var.max(0.0) + eps);
        b[i] = mean_p.data[i] - a[i] * mean_i.data[i];
    }
    let mean_a = box_mean(&Plane::new(input.width, input.height, a), radius);
    let mean_b = box_mean(&Plane::new(input.width, input.height, b), radius);
    Plane::new(
        input.width,
        input.height,
        (0..n)
            .map(|i| mean_a.data[i] * guide.data[i] + mean_b.data[i])
            .collect(),
    )
}

/// Non-local means over an RGB image.
///
/// `patch` and `search` are odd window sizes. Patch distance is the mean
/// squared difference over the patch and the three channels; weights are
/// `exp(-dist / h^2)`. Offsets are visited in a fixed raster order, so the
/// result is bit-reproducible.
pub fn non_local_means(image: &RgbImage, patch: usize, search: usize, h: f64) -> RgbImage {
    let (w, ht) = (image.width(), image.height());
    let pr = patch / 2;
    let sr = (search / 2) as isize;
    let src = image.data();
    let inv_h2 = 1.0 / (h * h).max(1e-12);

    let mut acc = vec![0.0; w * ht * 3];
    let mut wsum = vec![0.0; w * ht];
    let mut diff = Plane::filled(w, ht, 0.0);

    for dy in -sr..=sr {
        for dx in -sr..=sr {
            for y in 0..ht {
                let yy = (y as isize + dy).clamp(0, ht as isize - 1) as usize;
                for x in 0..w {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let (a, b) = ((y * w + x) * 3, (yy * w + xx) * 3);
                    let mut d = 0.0;
                    for c in 0..3 {
                        let e = src[a + c] - src[b + c];
                        d += e * e;
                    }
                    diff.data[y * w + x] = d / 3.0;
                }
            }
            let dist = box_mean(&diff, pr);
            for y in 0..ht {
                let yy = (y as isize + dy).clamp(0, ht as isize - 1) as usize;
                for x in 0..w {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let i = y * w + x;
                    let wt = (-dist.data[i] * inv_h2).exp();
                    wsum[i] += wt;
                    let b = (yy * w + xx) * 3;
                    for c in 0..3 {
                        acc[i * 3 + c] += wt * src[b + c];
                    }
                }
            }
        }
    }
    for i in 0..w * ht {
        for c in 0..3 {
            acc[i * 3 + c] /= wsum[i];
        }
    }
    RgbImage::from_clamped(w, ht, acc).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Plane {
        Plane::new(w, h, (0..w * h).map(|i| ((i * 37) % 11) as f64 / 10.0).collect())
    }

    #[test]
    fn box_mean_matches_brute_force() {
        let p = ramp(9, 7);
        let r = 2;
        let fast = box_mean(&p, r);
        for y in 0..7usize {
            for x in 0..9usize {
                let mut s = 0.0;
                let mut n = 0;
                for yy in y.saturating_sub(r)..(y + r + 1).min(7) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(9) {
                        s += p.get(xx, yy);
                        n += 1;
                    }
                }
                assert!((fast.get(x, y) - s / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn min_filter_matches_brute_force() {
        let p = ramp(10, 8);
        let m = min_filter(&p, 5);
        for y in 0..8usize {
            for x in 0..10usize {
                let mut best = f64::INFINITY;
                for yy in y.saturating_sub(2)..(y + 3).min(8) {
                    for xx in x.saturating_sub(2)..(x + 3).min(10) {
                        best = best.min(p.get(xx, yy));
                    }
                }
                assert_eq!(m.get(x, y), best);
            }
        }
    }

    #[test]
    fn guided_filter_preserves_constants() {
        let c = Plane::filled(12, 12, 0.4);
        let g = ramp(12, 12);
        let out = guided_filter(&c, &g, 3, 1e-3);
        assert!(out.data.iter().all(|v| (v - 0.4).abs() < 1e-9));
    }

    #[test]
    fn guided_filter_self_guided_keeps_strong_edges() {
        let step = Plane::new(16, 4, (0..64).map(|i| if i % 16 < 8 { 0.0 } else { 1.0 }).collect());
        let out = guided_filter(&step, &step, 2, 1e-4);
        assert!(out.get(0, 1) < 0.01 && out.get(15, 1) > 0.99);
        assert!(out.get(6, 1) < 0.05 && out.get(9, 1) > 0.95);
    }

    #[test]
    fn nlm_leaves_constant_image_unchanged() {
        let img = RgbImage::filled(12, 10, [0.2, 0.5, 0.7]).unwrap();
        let out = non_local_means(&img, 5, 11, 0.1);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

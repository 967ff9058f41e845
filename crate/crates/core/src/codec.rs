//! File codecs for images and depth maps.
//!
//! Images: 8-bit PNG and binary PPM (P6). Depth: 16-bit grayscale PNG scaled
//! by a meters-per-unit factor, and little-endian PFM holding meters directly.
//! The codec is picked from the file extension.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::image::{DepthMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Png,
    Ppm,
    Pfm,
}

fn kind_of(path: &Path) -> Result<Kind> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(Kind::Png),
        Some("ppm") => Ok(Kind::Ppm),
        Some("pfm") => Ok(Kind::Pfm),
        other => Err(Error::codec(
            path,
            format!("unsupported codec (extension {other:?}); expected .png, .ppm or .pfm"),
        )),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Byte quantization: `round(v * 255)`, ties rounded up.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// The image as it reads back after an 8-bit save.
pub fn quantized(image: &RgbImage) -> RgbImage {
    let data = image.data().iter().map(|&v| quantize(v) as f64 / 255.0).collect();
    RgbImage::new(image.width(), image.height(), data).expect("quantized values lie in [0,1]")
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let kind = kind_of(path)?;
    let bytes = read_bytes(path)?;
    match kind {
        Kind::Png => decode_png_rgb(path, &bytes),
        Kind::Ppm => decode_ppm(path, &bytes),
        Kind::Pfm => Err(Error::codec(path, "PFM is a depth codec, not an image codec")),
    }
}

fn decode_png_rgb(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::codec(path, format!("corrupt PNG: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        _ => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
    };
    RgbImage::new(w, h, data)
}

struct PnmHeader<'a> {
    tokens: Vec<&'a str>,
    body: usize,
}

/// Reads `count` whitespace-separated header tokens, skipping `#` comments.
/// The body starts after exactly one whitespace byte following the last token.
fn pnm_header(bytes: &[u8], count: usize) -> Option<PnmHeader<'_>> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(std::str::from_utf8(&bytes[start..i]).ok()?);
    }
    if i >= bytes.len() {
        return None;
    }
    Some(PnmHeader {
        tokens,
        body: i + 1,
    })
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let corrupt = |m: &str| Error::codec(path, format!("corrupt PPM: {m}"));
    let header = pnm_header(bytes, 4).ok_or_else(|| corrupt("truncated header"))?;
    if header.tokens[0] != "P6" {
        return Err(Error::codec(path, format!("unsupported PNM magic {}", header.tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| corrupt("bad header number"));
    let w = parse(header.tokens[1])?;
    let h = parse(header.tokens[2])?;
    let maxval = parse(header.tokens[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt("maxval out of range"));
    }
    let body = &bytes[header.body..];
    let n = w * h * 3;
    let data: Vec<f64> = if maxval < 256 {
        if body.len() < n {
            return Err(corrupt("truncated pixel data"));
        }
        body[..n].iter().map(|&v| v as f64 / maxval as f64).collect()
    } else {
        if body.len() < 2 * n {
            return Err(corrupt("truncated pixel data"));
        }
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    RgbImage::new(w, h, data).map_err(|e| corrupt(&e.to_string()))
}

pub fn save_image(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(image, kind_of(path)?, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_image(image: &RgbImage, kind: Kind, path: &Path) -> Result<Vec<u8>> {
    let raw: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    match kind {
        Kind::Ppm => {
            let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
            out.extend_from_slice(&raw);
            Ok(out)
        }
        Kind::Png => {
            let mut out = Vec::new();
            image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
                .write_image(
                    &raw,
                    image.width() as u32,
                    image.height() as u32,
                    ColorType::Rgb8.into(),
                )
                .map_err(|e| Error::codec(path, format!("PNG encode failed: {e}")))?;
            Ok(out)
        }
        Kind::Pfm => Err(Error::codec(path, "PFM is a depth codec, not an image codec")),
    }
}

/// Loads a depth map in meters. `meters_per_unit` scales 16-bit PNG samples
/// and is ignored for PFM, which stores meters directly.
pub fn load_depth(path: impl AsRef<Path>, meters_per_unit: f64) -> Result<DepthMap> {
    let path = path.as_ref();
    let kind = kind_of(path)?;
    let bytes = read_bytes(path)?;
    let reject = |e: Error| match e {
        Error::Invalid(m) => Error::format(path, m),
        other => other,
    };
    match kind {
        Kind::Png => {
            if !(meters_per_unit.is_finite() && meters_per_unit > 0.0) {
                return Err(Error::invalid(format!(
                    "meters-per-unit must be positive, got {meters_per_unit}"
                )));
            }
            let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
                .map_err(|e| Error::codec(path, format!("corrupt PNG: {e}")))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = match img {
                DynamicImage::ImageLuma16(buf) => buf
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f64 * meters_per_unit)
                    .collect(),
                DynamicImage::ImageLuma8(buf) => buf
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f64 * meters_per_unit)
                    .collect(),
                other => {
                    return Err(Error::codec(
                        path,
                        format!("depth PNG must be single-channel, got {:?}", other.color()),
                    ))
                }
            };
            DepthMap::new(w, h, data).map_err(reject)
        }
        Kind::Pfm => decode_pfm(path, &bytes).map_err(reject),
        Kind::Ppm => Err(Error::codec(path, "PPM is an image codec, not a depth codec")),
    }
}

fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<DepthMap> {
    let corrupt = |m: &str| Error::codec(path, format!("corrupt PFM: {m}"));
    let header = pnm_header(bytes, 4).ok_or_else(|| corrupt("truncated header"))?;
    let channels = match header.tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(Error::codec(path, format!("unsupported PFM magic {m}"))),
    };
    let w: usize = header.tokens[1].parse().map_err(|_| corrupt("bad width"))?;
    let h: usize = header.tokens[2].parse().map_err(|_| corrupt("bad height"))?;
    let scale: f64 = header.tokens[3].parse().map_err(|_| corrupt("bad scale"))?;
    let little = scale < 0.0;
    let body = &bytes[header.body..];
    if body.len() < w * h * channels * 4 {
        return Err(corrupt("truncated pixel data"));
    }
    let mut data = vec![0.0; w * h];
    // PFM rows run bottom to top; only the first channel is used for colour files.
    for row in 0..h {
        for x in 0..w {
            let o = ((row * w + x) * channels) * 4;
            let b = [body[o], body[o + 1], body[o + 2], body[o + 3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            data[(h - 1 - row) * w + x] = v as f64;
        }
    }
    DepthMap::new(w, h, data)
}

/// Writes a depth map: PFM stores meters as `f32`; 16-bit PNG stores
/// `round(depth / meters_per_unit)` saturated at 65535.
pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>, meters_per_unit: f64) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (depth.width(), depth.height());
    let bytes = match kind_of(path)? {
        Kind::Pfm => {
            let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
            for row in (0..h).rev() {
                for x in 0..w {
                    out.extend_from_slice(&(depth.get(x, row) as f32).to_le_bytes());
                }
            }
            out
        }
        Kind::Png => {
            if !(meters_per_unit.is_finite() && meters_per_unit > 0.0) {
                return Err(Error::invalid("meters-per-unit must be positive"));
            }
            let units: Vec<u16> = depth
                .data()
                .iter()
                .map(|&m| (m / meters_per_unit).round().clamp(0.0, 65535.0) as u16)
                .collect();
            let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, units)
                .expect("buffer length matches dimensions");
            let mut out = Vec::new();
            DynamicImage::ImageLuma16(buf)
                .write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
                .map_err(|e| Error::codec(path, format!("PNG encode failed: {e}")))?;
            out
        }
        Kind::Ppm => return Err(Error::codec(path, "PPM is an image codec, not a depth codec")),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

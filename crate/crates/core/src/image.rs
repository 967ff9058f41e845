//! Pixel, depth and transmission containers.
//!
//! All containers are row-major and immutable once built. Constructors
//! validate their value ranges, so downstream code never sees a channel
//! outside `[0, 1]`, a negative depth, or a transmission below [`T_FLOOR`].

use crate::error::{Error, Result};

/// Lower clamp for transmission values.
pub const T_FLOOR: f64 = 0.05;

/// Luma weights used wherever an RGB image is reduced to one channel.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_dims(width: usize, height: usize, len: usize, per_px: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("empty image {width}x{height}")));
    }
    if len != width * height * per_px {
        return Err(Error::invalid(format!(
            "data length {len} does not match {width}x{height}x{per_px}"
        )));
    }
    Ok(())
}

/// Three-channel linear intensity image, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            let px = i / 3;
            return Err(Error::invalid(format!(
                "channel value {} out of [0,1] at ({}, {}) channel {}",
                data[i],
                px % width,
                px / width,
                i % 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from arbitrary values, clamping each channel into `[0, 1]`.
    /// Non-finite values map to 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixel_at(y * self.width + x)
    }

    pub fn pixel_at(&self, i: usize) -> [f64; 3] {
        let o = i * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn same_dims<T: Dims>(&self, other: &T) -> bool {
        self.width == other.dims().0 && self.height == other.dims().1
    }

    /// One channel as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    pub fn luma(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .pixels()
                .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
                .collect(),
        }
    }

    /// Per-pixel minimum over the three channels.
    pub fn min_channel(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels().map(|p| p[0].min(p[1]).min(p[2])).collect(),
        }
    }

    /// Reassembles an image from three planes, clamping into range.
    pub fn from_planes(planes: [&Plane; 3]) -> Result<Self> {
        let (w, h) = (planes[0].width, planes[0].height);
        for p in &planes[1..] {
            if p.width != w || p.height != h {
                return Err(Error::DimensionMismatch {
                    what: "channel plane",
                    got_w: p.width,
                    got_h: p.height,
                    want_w: w,
                    want_h: h,
                });
            }
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            data.push(planes[0].data[i]);
            data.push(planes[1].data[i]);
            data.push(planes[2].data[i]);
        }
        Self::from_clamped(w, h, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(x, y));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Scene depth in meters, every value finite and `>= 0`. Zero marks a depth hole.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "depth value {} invalid at ({}, {})",
                data[i],
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, meters: f64) -> Result<Self> {
        Self::new(width, height, vec![meters; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Medium transmission, every value in `[T_FLOOR, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl TransmissionMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < T_FLOOR || *v > 1.0)
        {
            return Err(Error::invalid(format!(
                "transmission {} outside [{T_FLOOR}, 1] at ({}, {})",
                data[i],
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Clamps every value into `[T_FLOOR, 1]`; non-finite values map to 1.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        for v in &mut data {
            *v = if v.is_finite() {
                v.clamp(T_FLOOR, 1.0)
            } else {
                1.0
            };
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, t: f64) -> Result<Self> {
        Self::new(width, height, vec![t; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn as_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }

    /// Grayscale rendering of the map, for dumping to an image file.
    pub fn to_image(&self) -> RgbImage {
        let data = self.data.iter().flat_map(|&t| [t, t, t]).collect();
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Unconstrained single-channel working buffer used by the filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert_eq!(self.data.len(), other.data.len());
        Plane::new(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }
}

/// Anything with a width and height.
pub trait Dims {
    fn dims(&self) -> (usize, usize);
}

impl Dims for RgbImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for DepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for TransmissionMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for Plane {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

pub(crate) fn ensure_same_dims<A: Dims, B: Dims>(what: &'static str, a: &A, b: &B) -> Result<()> {
    let (aw, ah) = a.dims();
    let (bw, bh) = b.dims();
    if aw != bw || ah != bh {
        return Err(Error::DimensionMismatch {
            what,
            got_w: bw,
            got_h: bh,
            want_w: aw,
            want_h: ah,
        });
    }
    Ok(())
}

pub(crate) fn ensure_min_side<A: Dims>(a: &A, min: usize) -> Result<()> {
    let (w, h) = a.dims();
    if w < min || h < min {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min,
        });
    }
    Ok(())
}

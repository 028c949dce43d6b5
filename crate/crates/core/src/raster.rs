//! 8-bit interleaved pixel buffers with 1 (gray) or 3 (RGB) channels, plus the
//! resampling kernels used throughout the pipeline.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngDecoder, PngEncoder};
use image::{ColorType, ExtendedColorType, ImageDecoder, ImageEncoder};

use crate::error::{Error, Result};
use crate::scalar::to_u8;
use crate::types::BBox;

#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}x{}x{})", self.width, self.height, self.channels)
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8) -> Self {
        Self::filled(width, height, channels, 0)
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Self {
        let mut r = Self::new(width, height, channels);
        let mut i = 0;
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    r.data[i] = f(x, y, c);
                    i += 1;
                }
            }
        }
        r
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.offset(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let o = self.offset(x, y) + c as usize;
        self.data[o] = v;
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let stride = self.width as usize * self.channels as usize;
        &self.data[y as usize * stride..(y as usize + 1) * stride]
    }

    pub fn bounds(&self) -> BBox {
        BBox::from_xywh(0, 0, self.width as i64, self.height as i64)
    }

    /// Copies the rectangle `rect`, which must lie inside the raster.
    pub fn crop(&self, rect: &BBox) -> Result<Raster> {
        if !self.bounds().contains(rect) {
            return Err(Error::OutOfRange(format!(
                "crop {rect} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels as usize;
        let w = rect.width() as usize;
        let mut out = Vec::with_capacity(w * rect.height() as usize * c);
        for y in rect.y_min..rect.y_max {
            let start = self.offset(rect.x_min as u32, y as u32);
            out.extend_from_slice(&self.data[start..start + w * c]);
        }
        Raster::from_raw(rect.width() as u32, rect.height() as u32, self.channels, out)
    }

    /// Writes `src` with its top-left corner at `(x, y)`; parts falling
    /// outside are discarded.
    pub fn paste(&mut self, src: &Raster, x: i64, y: i64) {
        assert_eq!(src.channels, self.channels, "channel mismatch in paste");
        let Some(dst) = src.bounds().translate(x, y).clip(&self.bounds()) else {
            return;
        };
        let c = self.channels as usize;
        let w = dst.width() as usize * c;
        for yy in dst.y_min..dst.y_max {
            let d = self.offset(dst.x_min as u32, yy as u32);
            let s = src.offset((dst.x_min - x) as u32, (yy - y) as u32);
            self.data[d..d + w].copy_from_slice(&src.data[s..s + w]);
        }
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.offset(self.width - 1 - x, y);
                let dst = self.offset(x, y);
                let c = self.channels as usize;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Raster {
        let mut out = self.clone();
        let stride = self.width as usize * self.channels as usize;
        for y in 0..self.height as usize {
            let src = (self.height as usize - 1 - y) * stride;
            out.data[y * stride..(y + 1) * stride]
                .copy_from_slice(&self.data[src..src + stride]);
        }
        out
    }

    /// Mean over all samples.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }

    /// Population variance over all samples.
    pub fn variance(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.data
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Lossless PNG encoding (fast deflate, no row filters).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let enc = PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::Sub);
        let color = if self.channels == 1 {
            ExtendedColorType::L8
        } else {
            ExtendedColorType::Rgb8
        };
        enc.write_image(&self.data, self.width, self.height, color)?;
        Ok(buf)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
        let dec = PngDecoder::new(Cursor::new(bytes))?;
        let (w, h) = dec.dimensions();
        let channels = match dec.color_type() {
            ColorType::L8 => 1,
            ColorType::Rgb8 => 3,
            other => {
                return Err(Error::Invalid(format!("unsupported PNG color type {other:?}")))
            }
        };
        let mut data = vec![0u8; dec.total_bytes() as usize];
        dec.read_image(&mut data)?;
        Raster::from_raw(w, h, channels, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Raster::decode_png(&bytes)
    }

    /// Resizes with the box (area) filter on every axis.
    pub fn resize_area(&self, width: u32, height: u32) -> Raster {
        self.resample(
            &AxisMap::area(self.width, width),
            &AxisMap::area(self.height, height),
            0,
        )
    }

    /// Area filter on shrinking axes, bilinear on enlarging axes.
    pub fn resize_mixed(&self, width: u32, height: u32) -> Raster {
        let pick = |src: u32, dst: u32| {
            if dst > src {
                AxisMap::bilinear(src, dst)
            } else {
                AxisMap::area(src, dst)
            }
        };
        self.resample(&pick(self.width, width), &pick(self.height, height), 0)
    }

    /// Separable resampling through precomputed axis maps. Output samples
    /// whose footprint leaves the source are blended toward `fill`.
    pub fn resample(&self, xs: &AxisMap, ys: &AxisMap, fill: u8) -> Raster {
        assert_eq!(xs.src_len, self.width);
        assert_eq!(ys.src_len, self.height);
        let c = self.channels as usize;
        let ow = xs.taps.len();
        let oh = ys.taps.len();
        let fill = fill as f64;
        // horizontal pass into floats
        let mut tmp = vec![0f64; ow * self.height as usize * c];
        for y in 0..self.height as usize {
            let row = &self.data[y * self.width as usize * c..(y + 1) * self.width as usize * c];
            for (ox, taps) in xs.taps.iter().enumerate() {
                let covered: f64 = taps.iter().map(|t| t.1).sum();
                for ch in 0..c {
                    let mut acc = (1.0 - covered) * fill;
                    for &(sx, w) in taps {
                        acc += w * row[sx as usize * c + ch] as f64;
                    }
                    tmp[(y * ow + ox) * c + ch] = acc;
                }
            }
        }
        let mut out = Raster::new(ow as u32, oh as u32, self.channels);
        for (oy, taps) in ys.taps.iter().enumerate() {
            let covered: f64 = taps.iter().map(|t| t.1).sum();
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = (1.0 - covered) * fill;
                    for &(sy, w) in taps {
                        acc += w * tmp[(sy as usize * ow + ox) * c + ch];
                    }
                    out.data[(oy * ow + ox) * c + ch] = to_u8(acc);
                }
            }
        }
        out
    }
}

/// Source taps `(index, weight)` for every output sample along one axis.
#[derive(Debug, Clone)]
pub struct AxisMap {
    src_len: u32,
    taps: Vec<Vec<(u32, f64)>>,
}

impl AxisMap {
    /// Box filter for a uniform rescale from `src` to `dst` samples.
    pub fn area(src: u32, dst: u32) -> Self {
        Self::affine_area(src, dst, dst as f64 / src as f64, 0.0)
    }

    /// Box filter for the map `out = scale * in + offset`, producing `dst`
    /// output samples. Each output sample averages the source interval its
    /// footprint covers; uncovered parts carry zero weight.
    pub fn affine_area(src: u32, dst: u32, scale: f64, offset: f64) -> Self {
        assert!(scale > 0.0, "scale must be positive");
        let inv = 1.0 / scale;
        let taps = (0..dst)
            .map(|o| {
                if scale == 1.0 && offset.fract() == 0.0 {
                    let s = o as i64 - offset as i64;
                    return if s >= 0 && s < src as i64 {
                        vec![(s as u32, 1.0)]
                    } else {
                        vec![]
                    };
                }
                let lo = (o as f64 - offset) * inv;
                let hi = (o as f64 + 1.0 - offset) * inv;
                let first = lo.floor().max(0.0) as i64;
                let last = (hi.ceil() as i64).min(src as i64);
                let mut v = Vec::new();
                for s in first..last {
                    let a = lo.max(s as f64);
                    let b = hi.min(s as f64 + 1.0);
                    if b > a {
                        v.push((s as u32, (b - a) * scale));
                    }
                }
                v
            })
            .collect();
        Self { src_len: src, taps }
    }

    /// Linear interpolation with pixel-center alignment and edge clamping.
    pub fn bilinear(src: u32, dst: u32) -> Self {
        let scale = src as f64 / dst as f64;
        let taps = (0..dst)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = pos.floor() as u32;
                let i1 = (i0 + 1).min(src - 1);
                let t = pos - i0 as f64;
                if i1 == i0 || t == 0.0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - t), (i1, t)]
                }
            })
            .collect();
        Self { src_len: src, taps }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

//! Tiled, pyramidal, multi-plane slide storage.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/<slide_id>/meta.json
//! <root>/<slide_id>/p<plane>/l<level>/t<x>_<y>.png
//! ```
//!
//! Level `L` is a `2^L` downscale: its pixel `(x, y)` is the rounded
//! (half-up) mean of the level-0 block `[x·2^L, (x+1)·2^L) × [y·2^L, (y+1)·2^L)`
//! clipped to the image. Levels are computed from exact level-0 sums, not by
//! repeated rounding, so every level is the true area mean of level 0.
//!
//! Ingest walks the tile quadtree depth-first, so only one tile of sums per
//! level is alive at a time and slides far larger than memory can be written
//! from a streaming [`PlaneSource`].

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::types::{BBox, SlideMeta};

pub const DEFAULT_TILE_SIZE: u32 = 512;
/// Pyramids always reach at least a 64x downscale.
pub const MIN_LEVELS: u32 = 7;
pub const DEFAULT_READ_BUDGET: usize = 64;
pub const MIN_READ_BUDGET: usize = 4;

/// Streaming access to level-0 pixels of each focal plane.
pub trait PlaneSource: Sync {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    fn channels(&self) -> u8;
    fn plane_count(&self) -> u32;
    /// Level-0 pixels of `rect`, which lies inside the image.
    fn read(&self, plane: u32, rect: &BBox) -> Result<Raster>;
}

/// In-memory planes, one raster per focal plane.
pub struct RasterPlanes<'a>(pub &'a [Raster]);

impl PlaneSource for RasterPlanes<'_> {
    fn width(&self) -> u32 {
        self.0[0].width()
    }
    fn height(&self) -> u32 {
        self.0[0].height()
    }
    fn channels(&self) -> u8 {
        self.0[0].channels()
    }
    fn plane_count(&self) -> u32 {
        self.0.len() as u32
    }
    fn read(&self, plane: u32, rect: &BBox) -> Result<Raster> {
        self.0[plane as usize].crop(rect)
    }
}

/// Contents of `meta.json`: the slide metadata plus storage parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerMeta {
    #[serde(flatten)]
    pub slide: SlideMeta,
    pub tile_size: u32,
    /// Downscale factor of each level: 1, 2, 4, ...
    pub levels: Vec<u64>,
    #[serde(default = "default_channels")]
    pub channels: u8,
}

fn default_channels() -> u8 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionRequest {
    pub plane: u32,
    pub level: u32,
    /// Rectangle in coordinates of `level`.
    pub rect: BBox,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadStats {
    pub tiles_read: usize,
    pub peak_resident: usize,
}

/// Counts tile buffers that are alive at the same time.
#[derive(Debug, Default)]
pub struct TileMeter {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl TileMeter {
    fn acquire(self: &Arc<Self>) -> TileGuard {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        TileGuard(Arc::clone(self))
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    /// Highest simultaneous count since creation or the last reset.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.current(), Ordering::SeqCst);
    }
}

struct TileGuard(Arc<TileMeter>);

impl Drop for TileGuard {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// A slide written to disk. Read-only after ingest and safe to share
/// between threads.
#[derive(Debug, Clone)]
pub struct SlideContainer {
    dir: PathBuf,
    meta: ContainerMeta,
    meter: Arc<TileMeter>,
}

pub fn level_count(width: u64, height: u64, tile_size: u32) -> u32 {
    let long = width.max(height);
    let mut n = 1;
    while long.div_ceil(1 << (n - 1)) > tile_size as u64 {
        n += 1;
    }
    n.max(MIN_LEVELS)
}

impl SlideContainer {
    /// Writes in-memory planes. All planes must share the metadata's
    /// dimensions.
    pub fn ingest(root: &Path, planes: &[Raster], meta: SlideMeta) -> Result<Self> {
        Self::ingest_with_tile_size(root, planes, meta, DEFAULT_TILE_SIZE)
    }

    pub fn ingest_with_tile_size(
        root: &Path,
        planes: &[Raster],
        meta: SlideMeta,
        tile_size: u32,
    ) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Invalid("no planes to ingest".into()))?;
        for (i, p) in planes.iter().enumerate() {
            if p.dims() != first.dims() || p.channels() != first.channels() {
                return Err(Error::Invalid(format!(
                    "plane {i} is {}x{}x{}, plane 0 is {}x{}x{}",
                    p.width(),
                    p.height(),
                    p.channels(),
                    first.width(),
                    first.height(),
                    first.channels()
                )));
            }
        }
        Self::ingest_source(root, &RasterPlanes(planes), meta, tile_size)
    }

    pub fn ingest_source(
        root: &Path,
        source: &dyn PlaneSource,
        mut meta: SlideMeta,
        tile_size: u32,
    ) -> Result<Self> {
        meta.validate()?;
        if tile_size == 0 {
            return Err(Error::Invalid("tile size must be positive".into()));
        }
        if source.width() as u64 != meta.width_px || source.height() as u64 != meta.height_px {
            return Err(Error::Invalid(format!(
                "planes are {}x{} but metadata says {}x{}",
                source.width(),
                source.height(),
                meta.width_px,
                meta.height_px
            )));
        }
        meta.plane_count = source.plane_count();
        meta.validate()?;
        let n_levels = level_count(meta.width_px, meta.height_px, tile_size);
        let cmeta = ContainerMeta {
            slide: meta,
            tile_size,
            levels: (0..n_levels).map(|l| 1u64 << l).collect(),
            channels: source.channels(),
        };
        let dir = root.join(&cmeta.slide.slide_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let container = SlideContainer {
            dir,
            meta: cmeta,
            meter: Arc::default(),
        };
        let top = n_levels - 1;
        for plane in 0..container.meta.slide.plane_count {
            for l in 0..n_levels {
                let d = container.level_dir(plane, l);
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            }
            let (tw, th) = container.tile_grid(top);
            for ty in 0..th {
                for tx in 0..tw {
                    container.build_tile(source, plane, top, tx, ty)?;
                }
            }
        }
        let meta_path = container.dir.join("meta.json");
        let json = serde_json::to_string_pretty(&container.meta)?;
        std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
        Ok(container)
    }

    /// Writes tile `(tx, ty)` of `level` and returns its level-0 sums.
    fn build_tile(
        &self,
        source: &dyn PlaneSource,
        plane: u32,
        level: u32,
        tx: u32,
        ty: u32,
    ) -> Result<Vec<u64>> {
        let rect = self.tile_rect(level, tx, ty);
        let c = self.meta.channels as usize;
        let (w, h) = (rect.width() as usize, rect.height() as usize);
        if level == 0 {
            let r = source.read(plane, &rect)?;
            if r.dims() != (w as u32, h as u32) || r.channels() != self.meta.channels {
                return Err(Error::Invalid(format!(
                    "source returned {:?} for {rect}",
                    r
                )));
            }
            r.save_png(&self.tile_path(plane, 0, tx, ty))?;
            return Ok(r.data().iter().map(|&v| v as u64).collect());
        }
        let mut sums = vec![0u64; w * h * c];
        let (pw, ph) = self.tile_grid(level - 1);
        let ts = self.meta.tile_size as i64;
        for (cx, cy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let (ctx, cty) = (2 * tx + cx, 2 * ty + cy);
            if ctx >= pw || cty >= ph {
                continue;
            }
            let child = self.build_tile(source, plane, level - 1, ctx, cty)?;
            let crect = self.tile_rect(level - 1, ctx, cty);
            let cw = crect.width() as usize;
            for yy in 0..crect.height() as usize {
                let py = ((cty as i64 * ts + yy as i64) / 2 - rect.y_min) as usize;
                for xx in 0..cw {
                    let px = ((ctx as i64 * ts + xx as i64) / 2 - rect.x_min) as usize;
                    let s = (yy * cw + xx) * c;
                    let d = (py * w + px) * c;
                    for ch in 0..c {
                        sums[d + ch] += child[s + ch];
                    }
                }
            }
        }
        let (w0, h0) = (self.meta.slide.width_px as i64, self.meta.slide.height_px as i64);
        let block = |i: i64, full: i64| ((i + 1) << level).min(full) - (i << level);
        let mut out = Raster::new(w as u32, h as u32, self.meta.channels);
        let data = out.data_mut();
        for y in 0..h {
            let bh = block(rect.y_min + y as i64, h0) as u64;
            for x in 0..w {
                let count = bh * block(rect.x_min + x as i64, w0) as u64;
                let o = (y * w + x) * c;
                for ch in 0..c {
                    data[o + ch] = ((2 * sums[o + ch] + count) / (2 * count)) as u8;
                }
            }
        }
        out.save_png(&self.tile_path(plane, level, tx, ty))?;
        Ok(sums)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ContainerMeta = serde_json::from_str(&text)?;
        meta.slide.validate()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            meter: Arc::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SlideMeta {
        &self.meta.slide
    }

    pub fn container_meta(&self) -> &ContainerMeta {
        &self.meta
    }

    pub fn meter(&self) -> &TileMeter {
        &self.meter
    }

    pub fn tile_size(&self) -> u32 {
        self.meta.tile_size
    }

    pub fn level_count(&self) -> u32 {
        self.meta.levels.len() as u32
    }

    pub fn plane_count(&self) -> u32 {
        self.meta.slide.plane_count
    }

    pub fn channels(&self) -> u8 {
        self.meta.channels
    }

    pub fn level_dims(&self, level: u32) -> (u32, u32) {
        let f = 1u64 << level;
        (
            self.meta.slide.width_px.div_ceil(f) as u32,
            self.meta.slide.height_px.div_ceil(f) as u32,
        )
    }

    pub fn tile_grid(&self, level: u32) -> (u32, u32) {
        let (w, h) = self.level_dims(level);
        (w.div_ceil(self.meta.tile_size), h.div_ceil(self.meta.tile_size))
    }

    fn tile_rect(&self, level: u32, tx: u32, ty: u32) -> BBox {
        let (w, h) = self.level_dims(level);
        let ts = self.meta.tile_size;
        let x0 = tx * ts;
        let y0 = ty * ts;
        BBox::from_xywh(
            x0 as i64,
            y0 as i64,
            (w - x0).min(ts) as i64,
            (h - y0).min(ts) as i64,
        )
    }

    fn level_dir(&self, plane: u32, level: u32) -> PathBuf {
        self.dir.join(format!("p{plane}")).join(format!("l{level}"))
    }

    pub fn tile_path(&self, plane: u32, level: u32, tx: u32, ty: u32) -> PathBuf {
        self.level_dir(plane, level).join(format!("t{tx}_{ty}.png"))
    }

    pub fn has_tile(&self, plane: u32, level: u32, tx: u32, ty: u32) -> bool {
        if plane >= self.plane_count() || level >= self.level_count() {
            return false;
        }
        let (tw, th) = self.tile_grid(level);
        tx < tw && ty < th
    }

    /// Stored PNG bytes of one tile, or `None` for coordinates outside the
    /// pyramid.
    pub fn tile_bytes(&self, plane: u32, level: u32, tx: u32, ty: u32) -> Result<Option<Vec<u8>>> {
        if !self.has_tile(plane, level, tx, ty) {
            return Ok(None);
        }
        let path = self.tile_path(plane, level, tx, ty);
        std::fs::read(&path)
            .map(Some)
            .map_err(|e| Error::io(&path, e))
    }

    pub fn read_tile(&self, plane: u32, level: u32, tx: u32, ty: u32) -> Result<Raster> {
        if !self.has_tile(plane, level, tx, ty) {
            return Err(Error::OutOfRange(format!(
                "tile p{plane}/l{level}/{tx}_{ty}"
            )));
        }
        Raster::load_png(&self.tile_path(plane, level, tx, ty))
    }

    pub fn read_region(&self, req: &RegionRequest, budget: usize) -> Result<Raster> {
        self.read_region_with_stats(req, budget).map(|(r, _)| r)
    }

    /// Reads a rectangle of one level. The rectangle is clipped to the level
    /// bounds; tiles are decoded one at a time and never more than `budget`
    /// tile buffers are resident for this read.
    pub fn read_region_with_stats(
        &self,
        req: &RegionRequest,
        budget: usize,
    ) -> Result<(Raster, ReadStats)> {
        if budget < MIN_READ_BUDGET {
            return Err(Error::Invalid(format!(
                "tile budget {budget} is below the minimum of {MIN_READ_BUDGET}"
            )));
        }
        if req.plane >= self.plane_count() {
            return Err(Error::OutOfRange(format!(
                "plane {} of {}",
                req.plane,
                self.plane_count()
            )));
        }
        if req.level >= self.level_count() {
            return Err(Error::OutOfRange(format!(
                "level {} of {}",
                req.level,
                self.level_count()
            )));
        }
        let (lw, lh) = self.level_dims(req.level);
        let level_bounds = BBox::from_xywh(0, 0, lw as i64, lh as i64);
        let rect = req.rect.clip(&level_bounds).ok_or_else(|| {
            Error::OutOfRange(format!("region {} outside level {}", req.rect, req.level))
        })?;
        let ts = self.meta.tile_size as i64;
        let mut out = Raster::new(rect.width() as u32, rect.height() as u32, self.meta.channels);
        let local = Arc::new(TileMeter::default());
        let mut stats = ReadStats::default();
        for ty in (rect.y_min / ts)..=((rect.y_max - 1) / ts) {
            for tx in (rect.x_min / ts)..=((rect.x_max - 1) / ts) {
                let _global = self.meter.acquire();
                let _mine = local.acquire();
                debug_assert!(local.current() <= budget);
                let tile = self.read_tile(req.plane, req.level, tx as u32, ty as u32)?;
                stats.tiles_read += 1;
                let trect = BBox::from_xywh(
                    tx * ts,
                    ty * ts,
                    tile.width() as i64,
                    tile.height() as i64,
                );
                let part = trect.intersection(&rect).expect("tile overlaps region");
                let piece = tile.crop(&part.translate(-trect.x_min, -trect.y_min))?;
                out.paste(&piece, part.x_min - rect.x_min, part.y_min - rect.y_min);
            }
        }
        stats.peak_resident = local.peak();
        Ok((out, stats))
    }

    /// Coarsest level whose long side is still at least `target_long_side`.
    pub fn level_for_long_side(&self, target_long_side: u32) -> u32 {
        (0..self.level_count())
            .rev()
            .find(|&l| {
                let (w, h) = self.level_dims(l);
                w.max(h) >= target_long_side
            })
            .unwrap_or(0)
    }

    /// Dimensions of a downscaled view with the given long side; the aspect
    /// ratio of level 0 is kept, rounding half up.
    pub fn view_dims(&self, target_long_side: u32) -> (u32, u32) {
        let (w, h) = (self.meta.slide.width_px, self.meta.slide.height_px);
        let long = w.max(h);
        let t = target_long_side as u64;
        let scale = |d: u64| ((2 * d * t + long) / (2 * long)).max(1) as u32;
        (scale(w), scale(h))
    }

    /// Whole-slide view of one plane whose long side equals
    /// `target_long_side`, read from the nearest pyramid level at or above
    /// the target and area-resampled.
    pub fn downscaled_view(&self, plane: u32, target_long_side: u32) -> Result<Raster> {
        let long0 = self.meta.slide.long_side();
        if target_long_side == 0 || target_long_side as u64 > long0 {
            return Err(Error::OutOfRange(format!(
                "target long side {target_long_side} for a slide of long side {long0}"
            )));
        }
        let level = self.level_for_long_side(target_long_side);
        let (lw, lh) = self.level_dims(level);
        let full = self.read_region(
            &RegionRequest {
                plane,
                level,
                rect: BBox::from_xywh(0, 0, lw as i64, lh as i64),
            },
            DEFAULT_READ_BUDGET,
        )?;
        let (tw, th) = self.view_dims(target_long_side);
        if (tw, th) == (lw, lh) {
            return Ok(full);
        }
        Ok(full.resize_area(tw, th))
    }
}

//! Detection-side tiling and stitching; classification-side crop
//! extraction, aspect-preserving normalization, grayscale and focal-plane
//! assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::raster::Raster;
use crate::scorers::Detection;
use crate::slide_store::{RegionRequest, SlideContainer, DEFAULT_READ_BUDGET};
use crate::types::BBox;

pub const DEFAULT_CROP_SIZE: u32 = 800;
pub const DEFAULT_WORKING_LONG_SIDE: u32 = 5184;
/// Detections overlapping more than this after stitching are duplicates.
pub const STITCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub overlap: u32,
    pub cols: u32,
    pub rows: u32,
    /// Row-major tile rectangles in image coordinates.
    pub grid: Vec<BBox>,
}

fn axis_starts(dim: u32, tile: u32, overlap: u32) -> Vec<u32> {
    if dim <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let count = (dim - overlap).div_ceil(stride);
    (0..count).map(|i| i * stride).collect()
}

pub fn plan_tiles(width: u32, height: u32, tile_size: u32, overlap: u32) -> Result<TilingPlan> {
    if overlap >= tile_size {
        return Err(Error::Invalid(format!(
            "overlap {overlap} must be smaller than tile size {tile_size}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Invalid("cannot tile an empty image".into()));
    }
    let xs = axis_starts(width, tile_size, overlap);
    let ys = axis_starts(height, tile_size, overlap);
    let mut grid = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let w = tile_size.min(width - x);
            let h = tile_size.min(height - y);
            grid.push(BBox::from_xywh(x as i64, y as i64, w as i64, h as i64));
        }
    }
    Ok(TilingPlan {
        width,
        height,
        tile_size,
        overlap,
        cols: xs.len() as u32,
        rows: ys.len() as u32,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchOptions {
    pub nms_iou: f64,
    /// Drop boxes touching a tile border that is not an image border; an
    /// object smaller than the overlap is then seen whole by another tile.
    pub drop_border_touching: bool,
}

impl Default for StitchOptions {
    fn default() -> Self {
        Self {
            nms_iou: STITCH_IOU,
            drop_border_touching: true,
        }
    }
}

/// Merges per-tile detections `(tile index, tile-local detections)` into
/// image coordinates.
pub fn stitch(per_tile: &[(usize, Vec<Detection>)], plan: &TilingPlan) -> Result<Vec<Detection>> {
    stitch_with(per_tile, plan, &StitchOptions::default())
}

pub fn stitch_with(
    per_tile: &[(usize, Vec<Detection>)],
    plan: &TilingPlan,
    opts: &StitchOptions,
) -> Result<Vec<Detection>> {
    let mut all = Vec::new();
    for (tile, dets) in per_tile {
        let rect = plan
            .grid
            .get(*tile)
            .ok_or_else(|| Error::OutOfRange(format!("tile {tile} of {}", plan.grid.len())))?;
        for d in dets {
            let b = d.bbox.translate(rect.x_min, rect.y_min);
            if opts.drop_border_touching {
                let touches = (b.x_min == rect.x_min && rect.x_min > 0)
                    || (b.y_min == rect.y_min && rect.y_min > 0)
                    || (b.x_max == rect.x_max && rect.x_max < plan.width as i64)
                    || (b.y_max == rect.y_max && rect.y_max < plan.height as i64);
                if touches {
                    continue;
                }
            }
            all.push(Detection::new(b, d.confidence));
        }
    }
    Ok(suppress(all, opts.nms_iou))
}

/// Greedy non-maximum suppression: highest confidence first, later boxes
/// with IOU strictly above `threshold` against a kept box are dropped.
/// Ties in confidence keep the earlier box.
pub fn suppress(mut dets: Vec<Detection>, threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou::<f64>(&dets[k].bbox, &dets[i].bbox) <= threshold) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let keep: std::collections::HashSet<usize> = kept.into_iter().collect();
    let mut i = 0;
    dets.retain(|_| {
        let k = keep.contains(&i);
        i += 1;
        k
    });
    dets
}

/// `bbox` grown by `round(margin_frac · side)` on each side and clipped to
/// the slide.
pub fn crop_rect(bounds: &BBox, bbox: &BBox, margin_frac: f64) -> Result<BBox> {
    if !(margin_frac >= 0.0) {
        return Err(Error::Invalid(format!("negative crop margin {margin_frac}")));
    }
    let mx = (bbox.width() as f64 * margin_frac).round() as i64;
    let my = (bbox.height() as f64 * margin_frac).round() as i64;
    let grown = BBox {
        x_min: bbox.x_min - mx,
        y_min: bbox.y_min - my,
        x_max: bbox.x_max + mx,
        y_max: bbox.y_max + my,
    };
    if bbox.intersection(bounds).is_none() {
        return Err(Error::OutOfRange(format!("box {bbox} lies outside the slide")));
    }
    Ok(grown.clip(bounds).expect("intersects bounds"))
}

/// Level-0 pixels of one plane around `bbox`. Returns the raster and the
/// rectangle it covers.
pub fn extract_crop(
    slide: &SlideContainer,
    bbox: &BBox,
    plane: u32,
    margin_frac: f64,
) -> Result<(Raster, BBox)> {
    let rect = crop_rect(&slide.meta().bounds(), bbox, margin_frac)?;
    let r = slide.read_region(
        &RegionRequest {
            plane,
            level: 0,
            rect,
        },
        DEFAULT_READ_BUDGET,
    )?;
    Ok((r, rect))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Scale the long side down to the target, then zero-pad to a square.
    #[default]
    Pad,
    /// Resize both sides to the target independently.
    DistortResize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeConfig {
    pub target: u32,
    pub mode: NormalizeMode,
    pub grayscale: bool,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            target: DEFAULT_CROP_SIZE,
            mode: NormalizeMode::Pad,
            grayscale: true,
        }
    }
}

/// A square model input and where the original crop landed inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCrop {
    pub raster: Raster,
    /// Region holding crop pixels; the rest is padding.
    pub content: BBox,
    /// Output pixels per level-0 pixel along the long side.
    pub scale: f64,
}

/// `round(short · target / long)` in integers, at least 1.
fn scaled_side(side: u32, target: u32, long: u32) -> u32 {
    let (s, t, l) = (side as u64, target as u64, long as u64);
    ((2 * s * t + l) / (2 * l)).max(1) as u32
}

pub fn normalize_crop(crop: &Raster, cfg: &NormalizeConfig) -> Result<NormalizedCrop> {
    let s = cfg.target;
    if s == 0 {
        return Err(Error::Invalid("normalize target must be positive".into()));
    }
    let (w, h) = crop.dims();
    if w == 0 || h == 0 {
        return Err(Error::Invalid("cannot normalize an empty crop".into()));
    }
    let long = w.max(h);
    let src = if cfg.grayscale && crop.channels() == 3 {
        grayscale(crop)
    } else {
        crop.clone()
    };
    match cfg.mode {
        NormalizeMode::DistortResize => Ok(NormalizedCrop {
            raster: if (w, h) == (s, s) { src } else { src.resize_mixed(s, s) },
            content: BBox::from_xywh(0, 0, s as i64, s as i64),
            scale: s as f64 / long as f64,
        }),
        NormalizeMode::Pad => {
            let (inner, scale) = if long > s {
                let (nw, nh) = (scaled_side(w, s, long), scaled_side(h, s, long));
                (src.resize_area(nw, nh), s as f64 / long as f64)
            } else {
                (src, 1.0)
            };
            let (iw, ih) = inner.dims();
            let (left, top) = ((s - iw) / 2, (s - ih) / 2);
            let mut out = Raster::new(s, s, inner.channels());
            out.paste(&inner, left as i64, top as i64);
            Ok(NormalizedCrop {
                raster: out,
                content: BBox::from_xywh(left as i64, top as i64, iw as i64, ih as i64),
                scale,
            })
        }
    }
}

/// Rec. 601 luma, rounded half up. One-channel input is returned as is.
pub fn grayscale(rgb: &Raster) -> Raster {
    if rgb.channels() == 1 {
        return rgb.clone();
    }
    let (w, h) = rgb.dims();
    Raster::from_fn(w, h, 1, |x, y, _| {
        let p = rgb.pixel(x, y);
        // integer form of 0.299 R + 0.587 G + 0.114 B
        let acc = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
        ((acc + 500) / 1000) as u8
    })
}

/// Which focal planes feed the classifier. Plane ordinals are 1-based.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "planes")]
pub enum PlaneMode {
    Single(u32),
    Stack3(u32, u32, u32),
    #[default]
    PerPlane,
}

impl PlaneMode {
    /// 1-based ordinals this mode reads from a slide with `plane_count`
    /// planes.
    pub fn planes(&self, plane_count: u32) -> Result<Vec<u32>> {
        let wanted = match *self {
            PlaneMode::Single(k) => vec![k],
            PlaneMode::Stack3(i, j, k) => vec![i, j, k],
            PlaneMode::PerPlane => (1..=plane_count).collect(),
        };
        for &p in &wanted {
            if p == 0 || p > plane_count {
                return Err(Error::OutOfRange(format!("plane {p} of {plane_count}")));
            }
        }
        Ok(wanted)
    }
}

/// Builds model inputs from per-plane rasters (index 0 = plane 1).
pub fn assemble_planes(crops: &[Raster], mode: PlaneMode) -> Result<Vec<Raster>> {
    let planes = mode.planes(crops.len() as u32)?;
    let gray: Vec<Raster> = planes.iter().map(|&p| grayscale(&crops[p as usize - 1])).collect();
    match mode {
        PlaneMode::Single(_) | PlaneMode::PerPlane => Ok(gray),
        PlaneMode::Stack3(..) => {
            let (w, h) = gray[0].dims();
            if gray.iter().any(|g| g.dims() != (w, h)) {
                return Err(Error::Invalid("stacked planes differ in size".into()));
            }
            Ok(vec![Raster::from_fn(w, h, 3, |x, y, c| gray[c as usize].get(x, y, 0))])
        }
    }
}

/// File name of a cached normalized crop.
pub fn crop_cache_name(slide_id: &str, annotation_id: &str, plane: u32) -> String {
    format!("{slide_id}_{annotation_id}_p{plane}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropManifestEntry {
    pub file: String,
    pub slide_id: String,
    pub annotation_id: String,
    pub plane: u32,
    /// Level-0 rectangle the crop was read from.
    pub source_rect: BBox,
    pub content: BBox,
}

/// Writes the crop as PNG into `dir` and returns its manifest entry.
pub fn cache_crop(
    dir: &Path,
    slide_id: &str,
    annotation_id: &str,
    plane: u32,
    source_rect: BBox,
    crop: &NormalizedCrop,
) -> Result<CropManifestEntry> {
    let file = crop_cache_name(slide_id, annotation_id, plane);
    crop.raster.save_png(&dir.join(&file))?;
    Ok(CropManifestEntry {
        file,
        slide_id: slide_id.into(),
        annotation_id: annotation_id.into(),
        plane,
        source_rect,
        content: crop.content,
    })
}

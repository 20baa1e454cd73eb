//! Tissue detection and tile extraction on slide rasters.
//!
//! A slide enters the pipeline as a plain RGB raster with a physical
//! resolution (microns per pixel). Tissue is located by thresholding mean
//! HSV saturation on a downsampled grid, a regular tile grid is planned at
//! the target resolution, and tiles are resampled by exact area averaging
//! and persisted as JPEGs under `<root>/<slide_id>/<x>_<y>.jpg` next to an
//! `index.tsv` sidecar.
//!
//! All operations are pure functions of (raster, params): masks and plans
//! are byte-for-byte reproducible.

mod synth;

pub use synth::{synth_slide, Shape, SlideSpec};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Saturation threshold used in fixed mode and as the Otsu fallback.
///
/// Background (white/grey) has near-zero saturation; stained tissue sits
/// well above this.
pub const FIXED_SATURATION_THRESHOLD: f64 = 0.05;

/// Upper bound on tissue-mask cells; the downsample factor is grown until
/// the mask fits.
pub const MAX_MASK_CELLS: u64 = 4_000_000;

/// JPEG quality for persisted tiles.
const TILE_JPEG_QUALITY: u8 = 90;

/// In-memory 8-bit RGB slide with physical resolution metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideRaster {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    /// Microns per pixel; must be positive.
    pub mpp: f64,
    /// Row-major RGB, length `width_px * height_px * 3`.
    pub pixels: Vec<u8>,
}

impl SlideRaster {
    pub fn new(
        slide_id: impl Into<String>,
        width_px: u32,
        height_px: u32,
        mpp: f64,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::InvalidInput("raster has zero area".into()));
        }
        if !(mpp > 0.0) {
            return Err(Error::InvalidInput(format!("mpp must be positive, got {mpp}")));
        }
        let expect = width_px as usize * height_px as usize * 3;
        if pixels.len() != expect {
            return Err(Error::InvalidInput(format!(
                "pixel buffer length {} != {}x{}x3 = {}",
                pixels.len(),
                width_px,
                height_px,
                expect
            )));
        }
        Ok(Self {
            slide_id: slide_id.into(),
            width_px,
            height_px,
            mpp,
            pixels,
        })
    }

    pub fn meta(&self) -> RasterMeta {
        RasterMeta {
            width_px: self.width_px,
            height_px: self.height_px,
            mpp: self.mpp,
        }
    }

    fn rgb(&self, x: u32, y: u32) -> (u8, u8, u8) {
        let i = (y as usize * self.width_px as usize + x as usize) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }
}

/// Raster dimensions and resolution, enough to plan tiles without pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterMeta {
    pub width_px: u32,
    pub height_px: u32,
    pub mpp: f64,
}

/// Tissue/background decision grid at a stated downsample factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub downsample_factor: u32,
    /// Row-major; `true` marks tissue.
    pub cells: Vec<bool>,
}

impl TissueMask {
    pub fn cell(&self, cx: u32, cy: u32) -> bool {
        self.cells[cy as usize * self.width as usize + cx as usize]
    }

    pub fn tissue_cells(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Tile corner in level-0 pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
    /// Edge length at level 0 (tile_px times the resample factor).
    pub size_px: u32,
}

/// A planned tile together with its measured tissue fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedTile {
    pub coord: TileCoord,
    pub tissue_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Compare block saturation against [`FIXED_SATURATION_THRESHOLD`].
    FixedSaturation,
    /// Derive the threshold from the per-pixel saturation histogram
    /// (Otsu); falls back to the fixed threshold when the histogram is
    /// degenerate (all pixels in one bin).
    OtsuSaturation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilingParams {
    /// Output tile edge in pixels.
    pub tile_px: u32,
    /// Microns per pixel of output tiles; must be >= the raster mpp.
    pub target_mpp: f64,
    /// Minimum tissue fraction for a tile to be kept.
    pub min_tissue_frac: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for TilingParams {
    fn default() -> Self {
        Self {
            tile_px: 224,
            target_mpp: 0.5,
            min_tissue_frac: 0.25,
            threshold_mode: ThresholdMode::FixedSaturation,
        }
    }
}

impl TilingParams {
    pub fn validate(&self) -> Result<()> {
        if self.tile_px == 0 {
            return Err(Error::InvalidConfig("tile_px must be positive".into()));
        }
        if !(self.target_mpp > 0.0) {
            return Err(Error::InvalidConfig("target_mpp must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_tissue_frac) {
            return Err(Error::InvalidConfig(format!(
                "min_tissue_frac must lie in [0,1], got {}",
                self.min_tissue_frac
            )));
        }
        Ok(())
    }
}

/// HSV saturation of an 8-bit RGB pixel, in [0,1].
pub fn saturation(r: u8, g: u8, b: u8) -> f64 {
    let max = r.max(g).max(b);
    if max == 0 {
        return 0.0;
    }
    let min = r.min(g).min(b);
    f64::from(max - min) / f64::from(max)
}

/// Integer resample factor from raster resolution to target resolution.
///
/// Upsampling (target finer than source) and non-integer ratios are
/// rejected: area averaging is only exact for whole factors.
pub fn resample_factor(mpp: f64, target_mpp: f64) -> Result<u32> {
    if !(mpp > 0.0) || !(target_mpp > 0.0) {
        return Err(Error::InvalidInput("resolutions must be positive".into()));
    }
    let ratio = target_mpp / mpp;
    if ratio < 1.0 - 1e-9 {
        return Err(Error::InvalidInput(format!(
            "target_mpp {target_mpp} is finer than slide mpp {mpp}; upsampling unsupported"
        )));
    }
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(Error::InvalidInput(format!(
            "non-integer resample factor {ratio} (target_mpp {target_mpp} / mpp {mpp})"
        )));
    }
    Ok(rounded as u32)
}

fn pick_downsample_factor(width: u32, height: u32) -> u32 {
    let area = u64::from(width) * u64::from(height);
    let mut f = ((area as f64 / MAX_MASK_CELLS as f64).sqrt().ceil()).max(1.0) as u32;
    while mask_cells(width, height, f) > MAX_MASK_CELLS {
        f += 1;
    }
    f
}

fn mask_cells(width: u32, height: u32, f: u32) -> u64 {
    u64::from(width.div_ceil(f)) * u64::from(height.div_ceil(f))
}

/// Classify each mask cell as tissue iff the mean HSV saturation of its
/// pixel block exceeds the threshold.
pub fn detect_tissue(raster: &SlideRaster, params: &TilingParams) -> Result<TissueMask> {
    params.validate()?;
    if raster.width_px == 0 || raster.height_px == 0 {
        return Err(Error::InvalidInput("raster has zero area".into()));
    }

    let f = pick_downsample_factor(raster.width_px, raster.height_px);
    let mw = raster.width_px.div_ceil(f);
    let mh = raster.height_px.div_ceil(f);

    let mut sums = vec![0.0f64; mw as usize * mh as usize];
    let mut counts = vec![0u32; mw as usize * mh as usize];
    let mut histogram = [0u64; 256];

    for y in 0..raster.height_px {
        let cy = y / f;
        for x in 0..raster.width_px {
            let (r, g, b) = raster.rgb(x, y);
            let s = saturation(r, g, b);
            let cell = (cy * mw + x / f) as usize;
            sums[cell] += s;
            counts[cell] += 1;
            histogram[((s * 255.0).round() as usize).min(255)] += 1;
        }
    }

    let threshold = match params.threshold_mode {
        ThresholdMode::FixedSaturation => FIXED_SATURATION_THRESHOLD,
        ThresholdMode::OtsuSaturation => {
            otsu_threshold(&histogram).unwrap_or(FIXED_SATURATION_THRESHOLD)
        }
    };

    let cells = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / f64::from(c) > threshold)
        .collect();

    Ok(TissueMask {
        width: mw,
        height: mh,
        downsample_factor: f,
        cells,
    })
}

/// Otsu's between-class variance maximizer over a 256-bin histogram.
///
/// Returns `None` when every sample falls in a single bin, in which case the
/// caller falls back to the fixed threshold.
fn otsu_threshold(histogram: &[u64; 256]) -> Option<f64> {
    let total: u64 = histogram.iter().sum();
    if total == 0 || histogram.iter().any(|&c| c == total) {
        return None;
    }
    let sum_all: f64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for t in 0..255 {
        w0 += histogram[t];
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        sum0 += t as f64 * histogram[t] as f64;
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    // Classes split as [0..=t], [t+1..]; the comparison value sits on the
    // bin boundary in saturation units.
    Some((best.1 as f64 + 0.5) / 255.0)
}

/// Plan a non-overlapping row-major tile grid over the tissue mask.
///
/// A tile is kept when the mean of the mask cells it covers reaches
/// `min_tissue_frac`. An empty plan is a valid result.
pub fn plan_tiles(
    mask: &TissueMask,
    meta: &RasterMeta,
    params: &TilingParams,
) -> Result<Vec<PlannedTile>> {
    params.validate()?;
    let factor = resample_factor(meta.mpp, params.target_mpp)?;
    let stride = params
        .tile_px
        .checked_mul(factor)
        .ok_or_else(|| Error::InvalidInput("tile stride overflows u32".into()))?;

    let mut tiles = Vec::new();
    let mut y = 0u32;
    while y + stride <= meta.height_px {
        let mut x = 0u32;
        while x + stride <= meta.width_px {
            let frac = tile_tissue_frac(mask, x, y, stride);
            if frac >= params.min_tissue_frac {
                tiles.push(PlannedTile {
                    coord: TileCoord {
                        x,
                        y,
                        size_px: stride,
                    },
                    tissue_frac: frac,
                });
            }
            x += stride;
        }
        y += stride;
    }
    Ok(tiles)
}

/// Mean of the mask cells overlapped by the level-0 region
/// `[x, x+stride) x [y, y+stride)`.
fn tile_tissue_frac(mask: &TissueMask, x: u32, y: u32, stride: u32) -> f64 {
    let f = mask.downsample_factor;
    let cx0 = x / f;
    let cx1 = ((x + stride - 1) / f).min(mask.width - 1);
    let cy0 = y / f;
    let cy1 = ((y + stride - 1) / f).min(mask.height - 1);
    let mut tissue = 0u64;
    let mut total = 0u64;
    for cy in cy0..=cy1 {
        for cx in cx0..=cx1 {
            tissue += u64::from(mask.cell(cx, cy));
            total += 1;
        }
    }
    tissue as f64 / total as f64
}

/// Area-average a level-0 region down to a `tile_px` square tile.
///
/// The region must lie in bounds and have edge `tile_px * factor`. Each
/// output channel value is the rounded mean of its `factor x factor` source
/// block, so a factor of 1 is an exact crop.
pub fn resample_region(raster: &SlideRaster, coord: TileCoord, tile_px: u32) -> Result<Vec<u8>> {
    if coord.x + coord.size_px > raster.width_px || coord.y + coord.size_px > raster.height_px {
        return Err(Error::InvalidInput(format!(
            "tile ({}, {}) size {} exceeds raster {}x{}",
            coord.x, coord.y, coord.size_px, raster.width_px, raster.height_px
        )));
    }
    if coord.size_px % tile_px != 0 {
        return Err(Error::InvalidInput(format!(
            "tile size {} is not a multiple of output edge {}",
            coord.size_px, tile_px
        )));
    }
    let f = coord.size_px / tile_px;
    let ff = u32::from(f as u16) * u32::from(f as u16);
    let mut out = vec![0u8; tile_px as usize * tile_px as usize * 3];
    for oy in 0..tile_px {
        for ox in 0..tile_px {
            let mut acc = [0u32; 3];
            for sy in 0..f {
                let row = (coord.y + oy * f + sy) as usize * raster.width_px as usize;
                for sx in 0..f {
                    let i = (row + (coord.x + ox * f + sx) as usize) * 3;
                    acc[0] += u32::from(raster.pixels[i]);
                    acc[1] += u32::from(raster.pixels[i + 1]);
                    acc[2] += u32::from(raster.pixels[i + 2]);
                }
            }
            let o = (oy as usize * tile_px as usize + ox as usize) * 3;
            for ch in 0..3 {
                out[o + ch] = ((acc[ch] + ff / 2) / ff) as u8;
            }
        }
    }
    Ok(out)
}

/// One failed tile; extraction keeps going past individual failures.
#[derive(Debug, Clone)]
pub struct TileError {
    pub coord: TileCoord,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExtractReport {
    pub slide_dir: PathBuf,
    pub written: usize,
    pub errors: Vec<TileError>,
}

/// Extract planned tiles into `<root>/<slide_id>/<x>_<y>.jpg` plus an
/// `index.tsv` listing (x, y, tissue_frac).
///
/// Out-of-bounds coordinates are recorded as per-tile errors and skipped.
pub fn extract_tiles(
    raster: &SlideRaster,
    tiles: &[PlannedTile],
    params: &TilingParams,
    root: &Path,
) -> Result<ExtractReport> {
    params.validate()?;
    let slide_dir = root.join(&raster.slide_id);
    fs::create_dir_all(&slide_dir).map_err(|e| Error::io(&slide_dir, e))?;

    let mut errors = Vec::new();
    let mut index = String::from("x\ty\ttissue_frac\n");
    let mut written = 0usize;

    for tile in tiles {
        match write_tile(raster, tile.coord, params.tile_px, &slide_dir) {
            Ok(()) => {
                index.push_str(&format!(
                    "{}\t{}\t{}\n",
                    tile.coord.x, tile.coord.y, tile.tissue_frac
                ));
                written += 1;
            }
            Err(e) => errors.push(TileError {
                coord: tile.coord,
                message: e.to_string(),
            }),
        }
    }

    let index_path = slide_dir.join("index.tsv");
    let mut file = fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
    file.write_all(index.as_bytes())
        .map_err(|e| Error::io(&index_path, e))?;

    Ok(ExtractReport {
        slide_dir,
        written,
        errors,
    })
}

fn write_tile(raster: &SlideRaster, coord: TileCoord, tile_px: u32, dir: &Path) -> Result<()> {
    let rgb = resample_region(raster, coord, tile_px)?;
    let path = dir.join(format!("{}_{}.jpg", coord.x, coord.y));
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    let encoder =
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut writer, TILE_JPEG_QUALITY);
    image::ImageBuffer::<image::Rgb<u8>, _>::from_raw(tile_px, tile_px, rgb)
        .expect("tile buffer matches dimensions")
        .write_with_encoder(encoder)
        .map_err(|e| Error::InvalidInput(format!("jpeg encode failed: {e}")))?;
    Ok(())
}

/// Plain-text `key=value` sidecar carrying slide identity and resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideMeta {
    pub slide_id: String,
    pub mpp: f64,
    pub organ: String,
}

impl SlideMeta {
    pub fn to_text(&self) -> String {
        format!("slide_id={}\nmpp={}\norgan={}\n", self.slide_id, self.mpp, self.organ)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut slide_id = None;
        let mut mpp = None;
        let mut organ = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::InvalidInput(
                format!("sidecar line {}: expected key=value, got {line:?}", i + 1),
            ))?;
            match key.trim() {
                "slide_id" => slide_id = Some(value.trim().to_string()),
                "mpp" => {
                    mpp = Some(value.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidInput(format!("sidecar mpp: {e}"))
                    })?)
                }
                "organ" => organ = Some(value.trim().to_string()),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "sidecar line {}: unknown key {other:?}",
                        i + 1
                    )))
                }
            }
        }
        Ok(Self {
            slide_id: slide_id.ok_or_else(|| Error::InvalidInput("sidecar missing slide_id".into()))?,
            mpp: mpp.ok_or_else(|| Error::InvalidInput("sidecar missing mpp".into()))?,
            organ: organ.ok_or_else(|| Error::InvalidInput("sidecar missing organ".into()))?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

//! Synthetic slide generator: white background plus stained tissue blobs.
//!
//! Used as a test fixture and by the `synth-slide` CLI stage. Rendering is
//! fully determined by the spec (including its seed), so repeated calls
//! produce byte-identical rasters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{self, stream};

use super::SlideRaster;

/// Largest allowed synthetic raster edge.
pub const MAX_SYNTH_EDGE: u32 = 8192;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Filled disk; a pixel belongs to it when its center lies inside.
    Disk { cx: f64, cy: f64, radius: f64, color: [u8; 3] },
    /// Axis-aligned filled rectangle over `[x0, x1) x [y0, y1)`.
    Rect { x0: u32, y0: u32, x1: u32, y1: u32, color: [u8; 3] },
}

impl Shape {
    fn covers(&self, x: u32, y: u32) -> Option<[u8; 3]> {
        match *self {
            Shape::Disk { cx, cy, radius, color } => {
                let dx = f64::from(x) + 0.5 - cx;
                let dy = f64::from(y) + 0.5 - cy;
                (dx * dx + dy * dy <= radius * radius).then_some(color)
            }
            Shape::Rect { x0, y0, x1, y1, color } => {
                (x >= x0 && x < x1 && y >= y0 && y < y1).then_some(color)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideSpec {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub mpp: f64,
    pub background: [u8; 3],
    pub shapes: Vec<Shape>,
    /// Uniform per-channel color jitter amplitude applied to shape pixels.
    pub color_jitter: u8,
    pub seed: u64,
}

impl SlideSpec {
    pub fn new(slide_id: impl Into<String>, width_px: u32, height_px: u32, mpp: f64) -> Self {
        Self {
            slide_id: slide_id.into(),
            width_px,
            height_px,
            mpp,
            background: [255, 255, 255],
            shapes: Vec::new(),
            color_jitter: 0,
            seed: 0,
        }
    }

    /// Scatter `n` seeded disks with radii in `[r_min, r_max]`.
    pub fn with_random_disks(mut self, n: usize, r_min: f64, r_max: f64, color: [u8; 3]) -> Self {
        let mut rng = seed::rng(seed::mix(self.seed, &[stream::SLIDE]));
        for _ in 0..n {
            let radius = if r_max > r_min {
                rng.random_range(r_min..=r_max)
            } else {
                r_min
            };
            let cx = rng.random_range(0.0..f64::from(self.width_px));
            let cy = rng.random_range(0.0..f64::from(self.height_px));
            self.shapes.push(Shape::Disk { cx, cy, radius, color });
        }
        self
    }
}

/// Render the spec. Later shapes paint over earlier ones; jitter, when
/// enabled, perturbs shape pixels only, in row-major order.
pub fn synth_slide(spec: &SlideSpec) -> Result<SlideRaster> {
    if spec.width_px > MAX_SYNTH_EDGE || spec.height_px > MAX_SYNTH_EDGE {
        return Err(Error::InvalidInput(format!(
            "synthetic raster {}x{} exceeds {MAX_SYNTH_EDGE}^2",
            spec.width_px, spec.height_px
        )));
    }
    let mut pixels = Vec::with_capacity(spec.width_px as usize * spec.height_px as usize * 3);
    let mut jitter_rng = seed::rng(seed::mix(spec.seed, &[stream::JITTER]));
    let j = i16::from(spec.color_jitter);

    for y in 0..spec.height_px {
        for x in 0..spec.width_px {
            let mut color = spec.background;
            let mut on_shape = false;
            for shape in &spec.shapes {
                if let Some(c) = shape.covers(x, y) {
                    color = c;
                    on_shape = true;
                }
            }
            if on_shape && j > 0 {
                for c in &mut color {
                    let delta = jitter_rng.random_range(-j..=j);
                    *c = (i16::from(*c) + delta).clamp(0, 255) as u8;
                }
            }
            pixels.extend_from_slice(&color);
        }
    }
    SlideRaster::new(spec.slide_id.clone(), spec.width_px, spec.height_px, spec.mpp, pixels)
}

#[cfg(test)]
pub(crate) fn test_blob_raster(edge: u32, seed: u64) -> SlideRaster {
    let spec = SlideSpec {
        seed,
        color_jitter: 8,
        ..SlideSpec::new(format!("blob{seed}"), edge, edge, 0.5)
    }
    .with_random_disks(6, f64::from(edge) / 12.0, f64::from(edge) / 5.0, [160, 70, 120]);
    synth_slide(&spec).unwrap()
}

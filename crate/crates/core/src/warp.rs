//! Depth-guided cross-view warping with occlusion-aware visibility masks.
//!
//! Backward warping: each target pixel is lifted to 3D with the target
//! depth, reprojected into the anchor view, and bilinearly sampled there.
//! A pixel is visible iff the reprojection lands in frame and the sampled
//! anchor depth agrees with the reprojected depth to a relative tolerance;
//! everything else gets weight 0 and black color. Mask boundaries can then
//! be softened to 0.1 for smooth blending.

use nalgebra::Vector2;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, ScalarImage};

/// Per-pixel depth (camera-frame z) with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub pixels: ScalarImage,
    pub validity: Vec<bool>,
}

impl DepthImage {
    /// Wraps a depth plane; pixels with depth <= 0 are invalid.
    pub fn new(pixels: ScalarImage) -> Self {
        let validity = pixels.data.iter().map(|&d| d > 0.0).collect();
        Self { pixels, validity }
    }

    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if self.validity[y * self.pixels.width + x] {
            Some(self.pixels.get(x, y))
        } else {
            None
        }
    }
}

/// Per-pixel warp trust weights: 1 visible, 0 occluded or absent, 0.1 on
/// softened boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub weights: ScalarImage,
}

pub const BOUNDARY_WEIGHT: f64 = 0.1;

/// Default relative depth tolerance for the visibility test.
pub const DEFAULT_DEPTH_TOL: f64 = 0.01;

/// Bilinear sample with edge clamp. Integer coordinates return the exact
/// pixel value.
fn bilinear_rgb(img: &Image, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width, img.height);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    if fx == 0.0 && fy == 0.0 {
        return img.get(x0, y0);
    }
    let p00 = img.get(x0, y0);
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = p00[ch] * (1.0 - fx) + p10[ch] * fx;
        let bot = p01[ch] * (1.0 - fx) + p11[ch] * fx;
        out[ch] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Bilinear depth sample; `None` if any contributing tap is invalid.
fn bilinear_depth(depth: &DepthImage, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (depth.width(), depth.height());
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    if fx == 0.0 && fy == 0.0 {
        return depth.get(x0, y0);
    }
    let d00 = depth.get(x0, y0)?;
    let d10 = if fx > 0.0 { depth.get(x1, y0)? } else { d00 };
    let d01 = if fy > 0.0 { depth.get(x0, y1)? } else { d00 };
    let d11 = if fx > 0.0 && fy > 0.0 {
        depth.get(x1, y1)?
    } else {
        d00
    };
    let top = d00 * (1.0 - fx) + d10 * fx;
    let bot = d01 * (1.0 - fx) + d11 * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Warps the anchor image into the target view.
///
/// Returns the warped image (black where invisible) and the binary
/// visibility mask (1 visible, 0 not). `tol` is the relative depth
/// tolerance of the occlusion test.
pub fn warp(
    anchor_img: &Image,
    anchor_depth: &DepthImage,
    anchor_cam: &Camera,
    target_cam: &Camera,
    target_depth: &DepthImage,
    tol: f64,
) -> Result<(Image, VisibilityMask)> {
    if tol <= 0.0 {
        return Err(Error::Config(format!("depth tolerance must be positive, got {tol}")));
    }
    if anchor_img.width != anchor_cam.width() || anchor_img.height != anchor_cam.height() {
        return Err(Error::DimensionMismatch(format!(
            "anchor image {}x{} vs camera {}x{}",
            anchor_img.width,
            anchor_img.height,
            anchor_cam.width(),
            anchor_cam.height()
        )));
    }
    if anchor_depth.width() != anchor_cam.width() || anchor_depth.height() != anchor_cam.height() {
        return Err(Error::DimensionMismatch("anchor depth vs anchor camera".into()));
    }
    if target_depth.width() != target_cam.width() || target_depth.height() != target_cam.height() {
        return Err(Error::DimensionMismatch("target depth vs target camera".into()));
    }

    let (w, h) = (target_cam.width(), target_cam.height());
    let mut out = Image::new(w, h);
    let mut mask = ScalarImage::new(w, h);
    let max_x = (anchor_cam.width() - 1) as f64 + 0.5;
    let max_y = (anchor_cam.height() - 1) as f64 + 0.5;

    for y in 0..h {
        for x in 0..w {
            let Some(depth) = target_depth.get(x, y) else {
                continue; // invalid target depth: invisible, not an error
            };
            let world = target_cam.unproject(&Vector2::new(x as f64, y as f64), depth)?;
            let Ok((mut anchor_px, reproj_depth)) = anchor_cam.project(&world) else {
                continue; // behind the anchor camera
            };
            // Snap reprojections that land within rounding noise of a pixel
            // center, so an identity warp samples source pixels exactly.
            for c in anchor_px.iter_mut() {
                if (*c - c.round()).abs() < 1e-9 {
                    *c = c.round();
                }
            }
            // More than 0.5 px outside the frame is invisible.
            if anchor_px.x < -0.5 || anchor_px.x > max_x || anchor_px.y < -0.5 || anchor_px.y > max_y
            {
                continue;
            }
            let Some(sampled_depth) = bilinear_depth(anchor_depth, anchor_px.x, anchor_px.y) else {
                continue;
            };
            if (sampled_depth - reproj_depth).abs() > tol * reproj_depth {
                continue; // occluded
            }
            out.set(x, y, bilinear_rgb(anchor_img, anchor_px.x, anchor_px.y));
            mask.set(x, y, 1.0);
        }
    }
    Ok((out, VisibilityMask { weights: mask }))
}

/// Sets mask pixels equal to 1 that lie within `band` pixels (Chebyshev
/// distance) of any 0 pixel to the boundary weight 0.1. Zeros stay zero,
/// deep interior stays 1. Idempotent on its own output.
pub fn soften_mask(mask: &VisibilityMask, band: usize) -> VisibilityMask {
    let band = band.max(1) as isize;
    let (w, h) = (mask.weights.width, mask.weights.height);
    let mut out = mask.weights.clone();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if mask.weights.get(x as usize, y as usize) != 1.0 {
                continue;
            }
            'scan: for dy in -band..=band {
                for dx in -band..=band {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue; // the image border is not a transition
                    }
                    if mask.weights.get(nx as usize, ny as usize) == 0.0 {
                        out.set(x as usize, y as usize, BOUNDARY_WEIGHT);
                        break 'scan;
                    }
                }
            }
        }
    }
    VisibilityMask { weights: out }
}

/// Per-pixel blend: `mask * warped + (1 - mask) * base`.
pub fn blend(warped: &Image, base: &Image, mask: &VisibilityMask) -> Result<Image> {
    warped.check_same_size(base, "blend inputs")?;
    if mask.weights.width != warped.width || mask.weights.height != warped.height {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.weights.width, mask.weights.height, warped.width, warped.height
        )));
    }
    let mut out = Image::new(warped.width, warped.height);
    for i in 0..warped.pixel_count() {
        let m = mask.weights.data[i];
        for ch in 0..3 {
            out.data[i * 3 + ch] =
                m * warped.data[i * 3 + ch] + (1.0 - m) * base.data[i * 3 + ch];
        }
    }
    Ok(out)
}

//! Closed-form 3D reconstruction from rectified coordinates and disparity,
//! plus a naive SAD block matcher so the pipeline runs end to end.
//!
//! In the rectified frame the two cameras share all axes up to the baseline
//! offset along X, so a correspondence `(u1, v1) / (u1 - d, v1)` pins the
//! point through its angles `γ1 = Ψu⁻¹(u1)`, `γ2 = Ψu⁻¹(u1 - d)` and
//! `β = Ψv⁻¹(v1)`.

use crate::rectmodel::{MapError, RectificationModel};
use crate::warper::RasterImage;
use rayon::prelude::*;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconstructError {
    /// `tan γ1 = tan γ2`: the correspondence triangulates at infinity.
    #[error("zero disparity angle: point at infinity")]
    ZeroDisparityAngle,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("pfm file error: {0}")]
    PfmFile(String),
    #[error("ply file error: {0}")]
    PlyFile(String),
}

/// Point in the camera-1 rectified frame, in baseline units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Per-pixel disparity `d` with `u2 = u1 - d`; infinity marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DisparityMap {
    pub const INVALID: f32 = f32::INFINITY;

    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![Self::INVALID; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let d = self.data[y as usize * self.width as usize + x as usize];
        d.is_finite().then_some(d)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, d: f32) {
        self.data[y as usize * self.width as usize + x as usize] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_finite()).count()
    }

    /// Write as grayscale PFM, scale -1.0 (little-endian), bottom-up rows.
    pub fn save_pfm(&self, path: &Path) -> Result<(), ReconstructError> {
        let mut out = Vec::with_capacity(self.data.len() * 4 + 32);
        out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", self.width, self.height).as_bytes());
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                let d = self.data[y as usize * self.width as usize + x as usize];
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        let mut file =
            fs::File::create(path).map_err(|e| ReconstructError::PfmFile(e.to_string()))?;
        file.write_all(&out)
            .map_err(|e| ReconstructError::PfmFile(e.to_string()))
    }

    pub fn load_pfm(path: &Path) -> Result<Self, ReconstructError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| ReconstructError::PfmFile(format!("{}: {e}", path.display())))?;
        let bad = |m: &str| ReconstructError::PfmFile(format!("{}: {m}", path.display()));
        let mut pos = 0usize;
        let token = |pos: &mut usize| -> Result<String, ReconstructError> {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            Ok(std::str::from_utf8(&bytes[start..*pos])
                .map_err(|_| ReconstructError::PfmFile("invalid header".into()))?
                .to_string())
        };
        let magic = token(&mut pos)?;
        if magic != "Pf" {
            return Err(bad("only grayscale Pf supported"));
        }
        let width: u32 = token(&mut pos)?.parse().map_err(|_| bad("bad width"))?;
        let height: u32 = token(&mut pos)?.parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = token(&mut pos)?.parse().map_err(|_| bad("bad scale"))?;
        if scale >= 0.0 {
            return Err(bad("big-endian pfm not supported"));
        }
        pos += 1; // single whitespace after scale
        let n = width as usize * height as usize;
        if bytes.len() < pos + n * 4 {
            return Err(bad("truncated raster"));
        }
        let mut map = DisparityMap::new(width, height);
        for (i, chunk) in bytes[pos..pos + n * 4].chunks_exact(4).enumerate() {
            let row = height as usize - 1 - i / width as usize;
            let col = i % width as usize;
            map.data[row * width as usize + col] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(map)
    }
}

/// Reconstruct the 3D point of a rectified correspondence with disparity `d`.
pub fn disparity_to_point(
    model: &RectificationModel,
    u1: f64,
    v1: f64,
    d: f64,
    baseline: f64,
) -> Result<Point3D, ReconstructError> {
    let gamma1 = model.psi_u.invert(u1)?;
    let gamma2 = model.psi_u.invert(u1 - d)?;
    let beta = model.psi_v.invert(v1)?;

    let tg1 = gamma1.tan();
    let tg2 = gamma2.tan();
    let denom = tg1 - tg2;
    if denom.abs() < 1e-12 {
        return Err(ReconstructError::ZeroDisparityAngle);
    }
    let tb = beta.tan();
    let sec_b = (1.0 + tb * tb).sqrt();
    Ok(Point3D::new(
        baseline * tg1 / denom,
        baseline * tb / (denom * sec_b),
        baseline / (denom * sec_b),
    ))
}

/// A reconstructed point with an optional color sampled from the rectified
/// left image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub point: Point3D,
    pub color: Option<[u8; 3]>,
}

/// One point per valid disparity pixel; pixels whose coordinates leave the
/// projection ranges or triangulate at infinity are skipped.
pub fn reconstruct_cloud(
    disp: &DisparityMap,
    model: &RectificationModel,
    baseline: f64,
    color: Option<&RasterImage>,
) -> Result<Vec<ColoredPoint>, ReconstructError> {
    if disp.width != model.out_width || disp.height != model.out_height {
        return Err(ReconstructError::DimensionMismatch {
            expected: format!("{}x{}", model.out_width, model.out_height),
            got: format!("{}x{}", disp.width, disp.height),
        });
    }
    if let Some(img) = color {
        if img.width != disp.width || img.height != disp.height {
            return Err(ReconstructError::DimensionMismatch {
                expected: format!("{}x{}", disp.width, disp.height),
                got: format!("{}x{}", img.width, img.height),
            });
        }
    }
    let mut out = Vec::new();
    for y in 0..disp.height {
        for x in 0..disp.width {
            let Some(d) = disp.get(x, y) else {
                continue;
            };
            let Ok(point) = disparity_to_point(model, x as f64, y as f64, d as f64, baseline)
            else {
                continue;
            };
            let color = color.map(|img| match img.channels {
                1 => {
                    let g = img.sample(x, y, 0);
                    [g, g, g]
                }
                _ => [img.sample(x, y, 0), img.sample(x, y, 1), img.sample(x, y, 2)],
            });
            out.push(ColoredPoint { point, color });
        }
    }
    Ok(out)
}

/// Write an ASCII PLY point cloud, with per-vertex color when present.
pub fn save_ply(path: &Path, points: &[ColoredPoint]) -> Result<(), ReconstructError> {
    let with_color = points.iter().any(|p| p.color.is_some());
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", points.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if with_color {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    for p in points {
        let (x, y, z) = (p.point.x as f32, p.point.y as f32, p.point.z as f32);
        if with_color {
            let c = p.color.unwrap_or([255, 255, 255]);
            out.push_str(&format!("{x} {y} {z} {} {} {}\n", c[0], c[1], c[2]));
        } else {
            out.push_str(&format!("{x} {y} {z}\n"));
        }
    }
    fs::write(path, out).map_err(|e| ReconstructError::PlyFile(e.to_string()))
}

/// Naive block matcher settings.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchConfig {
    /// Odd SAD window size in pixels.
    pub window: u32,
    pub max_disparity: u32,
    /// Left-right consistency tolerance in pixels.
    pub lr_tolerance: f32,
    /// Second-best SAD must exceed best by this relative margin.
    pub uniqueness: f64,
}

impl Default for BlockMatchConfig {
    fn default() -> Self {
        Self {
            window: 9,
            max_disparity: 64,
            lr_tolerance: 1.0,
            uniqueness: 0.05,
        }
    }
}

/// Per-pixel SAD argmin along the same row within `[0, max_disparity]`, with
/// uniqueness and left-right consistency checks.
pub fn block_match(
    left: &RasterImage,
    right: &RasterImage,
    cfg: &BlockMatchConfig,
) -> Result<DisparityMap, ReconstructError> {
    if left.width != right.width || left.height != right.height {
        return Err(ReconstructError::DimensionMismatch {
            expected: format!("{}x{}", left.width, left.height),
            got: format!("{}x{}", right.width, right.height),
        });
    }
    let left = left.to_gray();
    let right = right.to_gray();
    // left-based: right pixel sits at x - d; right-based: left pixel at x + d
    let disp_left = match_one_direction(&left, &right, cfg, false);
    let disp_right = match_one_direction(&right, &left, cfg, true);

    let mut out = DisparityMap::new(left.width, left.height);
    for y in 0..left.height {
        for x in 0..left.width {
            let Some(dl) = disp_left.get(x, y) else {
                continue;
            };
            let xr = x as f32 - dl;
            if xr < 0.0 {
                continue;
            }
            let Some(dr) = disp_right.get(xr.round() as u32, y) else {
                continue;
            };
            if (dl - dr).abs() <= cfg.lr_tolerance {
                out.set(x, y, dl);
            }
        }
    }
    Ok(out)
}

fn match_one_direction(
    base: &RasterImage,
    other: &RasterImage,
    cfg: &BlockMatchConfig,
    positive_shift: bool,
) -> DisparityMap {
    let half = (cfg.window / 2) as i64;
    let (w, h) = (base.width as i64, base.height as i64);
    let mut out = DisparityMap::new(base.width, base.height);

    let sad_at = |x: i64, y: i64, xo: i64| -> u64 {
        let mut sad = 0u64;
        for dy in -half..=half {
            for dx in -half..=half {
                let a = base.sample((x + dx) as u32, (y + dy) as u32, 0);
                let b = other.sample((xo + dx) as u32, (y + dy) as u32, 0);
                sad += (a as i64).abs_diff(b as i64);
            }
        }
        sad
    };

    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![DisparityMap::INVALID; w as usize];
            if y < half || y >= h - half {
                return row;
            }
            for x in half..w - half {
                let shifted = |d: u32| {
                    let xo = if positive_shift {
                        x + d as i64
                    } else {
                        x - d as i64
                    };
                    (xo >= half && xo < w - half).then_some(xo)
                };
                let mut best = u64::MAX;
                let mut best_d = 0u32;
                for d in 0..=cfg.max_disparity {
                    let Some(xo) = shifted(d) else { break };
                    let sad = sad_at(x, y, xo);
                    if sad < best {
                        best = sad;
                        best_d = d;
                    }
                }
                if best == u64::MAX {
                    continue;
                }
                // uniqueness: the runner-up outside the immediate neighborhood
                // of the winner must be clearly worse
                let mut second = u64::MAX;
                for d in 0..=cfg.max_disparity {
                    if d.abs_diff(best_d) <= 1 {
                        continue;
                    }
                    let Some(xo) = shifted(d) else { break };
                    second = second.min(sad_at(x, y, xo));
                }
                if second == u64::MAX
                    || (second as f64) <= (best as f64) * (1.0 + cfg.uniqueness)
                {
                    continue;
                }
                row[x as usize] = best_d as f32;
            }
            row
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, d) in row.into_iter().enumerate() {
            out.data[y * w as usize + x] = d;
        }
    }
    out
}

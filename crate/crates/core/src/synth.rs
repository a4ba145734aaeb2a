//! Synthetic scenes and stereo renderings with exact ground truth.
//!
//! Every acceptance check in this crate runs against data produced here:
//! seeded point clouds in the shared viewing frustum, subpixel-exact
//! correspondences, optional Gaussian pixel noise, and rendered image pairs
//! (splatted dots or a ray-cast checkerboard plane with known corner
//! positions).

use crate::camera::{CameraModel, Pixel};
use crate::epipolar::{Correspondence, RelativePose};
use crate::reconstruct::{save_ply, ColoredPoint, Point3D, ReconstructError};
use crate::warper::{RasterImage, WarpError};
use nalgebra::{UnitVector3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cameras/pose admit no shared viewing volume")]
    EmptyFrustum,
    #[error("invalid depth range [{0}, {1}]")]
    BadDepthRange(f64, f64),
    #[error("value {0} outside the function range")]
    OutOfRange(f64),
    #[error(transparent)]
    Image(#[from] WarpError),
    #[error(transparent)]
    Ply(#[from] ReconstructError),
    #[error("bundle write error: {0}")]
    Bundle(String),
}

/// Scene point in the camera-1 frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
}

/// Checkerboard plane: `origin + s·axis_u + t·axis_v` with alternating cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckerboardPlane {
    pub origin: Vector3<f64>,
    /// Unit, mutually orthogonal in-plane axes.
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    pub cell_size: f64,
    pub cells_u: u32,
    pub cells_v: u32,
}

impl CheckerboardPlane {
    /// Interior corner `(i, j)`, `1 <= i < cells_u`, `1 <= j < cells_v`,
    /// in camera-1 coordinates.
    pub fn corner(&self, i: u32, j: u32) -> Vector3<f64> {
        self.origin
            + self.axis_u * (i as f64 * self.cell_size)
            + self.axis_v * (j as f64 * self.cell_size)
    }

    pub fn interior_corners(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for j in 1..self.cells_v {
            for i in 1..self.cells_u {
                out.push(self.corner(i, j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub points: Vec<ScenePoint>,
    pub checkerboard: Option<CheckerboardPlane>,
}

/// How `render_pair` fills the image pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageMode {
    /// Splat every visible scene point as a small bright dot.
    Dots,
    /// Ray-cast the checkerboard plane (gray background without one).
    Checkerboard,
}

/// Everything a synthetic evaluation needs: the image pair, subpixel-exact
/// correspondences, the true pose and cameras, and the generating 3D points
/// (index-aligned with the correspondences).
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub left: RasterImage,
    pub right: RasterImage,
    pub corrs: Vec<Correspondence>,
    pub pose: RelativePose,
    pub cam1: CameraModel,
    pub cam2: CameraModel,
    pub points: Vec<ScenePoint>,
}

/// Desk-scale stereo rig emulating a lateral fisheye motion pair: equidistant
/// 160 degree cameras, 640x480, baseline 0.3, rotation about Y.
pub fn default_rig(rot_y_deg: f64) -> (CameraModel, CameraModel, RelativePose) {
    let theta_max = 160f64.to_radians();
    // FOV circle radius = half the image width
    let focal = 320.0 / (0.5 * theta_max);
    let cam = CameraModel::equidistant(focal, Pixel::new(320.0, 240.0), 640, 480, theta_max)
        .expect("valid rig camera");
    let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), rot_y_deg.to_radians())
        .into_inner();
    let pose = RelativePose::new(rot, Vector3::x(), 0.3).expect("valid rig pose");
    (cam.clone(), cam, pose)
}

/// Checkerboard facing the default rig.
pub fn default_checkerboard() -> CheckerboardPlane {
    CheckerboardPlane {
        origin: Vector3::new(-1.85, -1.35, 3.5),
        axis_u: Vector3::x(),
        axis_v: Vector3::y(),
        cell_size: 0.45,
        cells_u: 9,
        cells_v: 6,
    }
}

fn project(
    cam: &CameraModel,
    pose_rot_t: Option<(&RelativePose,)>,
    p: &Vector3<f64>,
) -> Option<Pixel> {
    let local = match pose_rot_t {
        None => *p,
        Some((pose,)) => {
            pose.rotation.transpose() * (p - pose.translation_dir.into_inner() * pose.baseline)
        }
    };
    if local.norm() < 1e-9 {
        return None;
    }
    let pix = cam
        .bearing_to_pixel(&UnitVector3::new_normalize(local))
        .ok()?;
    cam.contains(&pix).then_some(pix)
}

/// Seeded point set visible from both cameras, uniform over the camera-1
/// image and the given depth range.
pub fn generate_scene(
    cam1: &CameraModel,
    cam2: &CameraModel,
    pose: &RelativePose,
    seed: u64,
    n_points: usize,
    depth_range: (f64, f64),
) -> Result<SyntheticScene, SynthError> {
    assert!(n_points >= 1);
    let (dmin, dmax) = depth_range;
    if !(dmin > 0.0 && dmin < dmax) {
        return Err(SynthError::BadDepthRange(dmin, dmax));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    let max_attempts = 10_000usize.max(1_000 * n_points);
    let mut attempts = 0;
    while points.len() < n_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::EmptyFrustum);
        }
        let pix = Pixel::new(
            rng.random_range(0.0..cam1.width() as f64),
            rng.random_range(0.0..cam1.height() as f64),
        );
        let Ok(bearing) = cam1.pixel_to_bearing(&pix) else {
            continue;
        };
        let depth = rng.random_range(dmin..dmax);
        let p = bearing.into_inner() * depth;
        if project(cam2, Some((pose,)), &p).is_none() {
            continue;
        }
        let color = [
            rng.random_range(40..=255u8),
            rng.random_range(40..=255u8),
            rng.random_range(40..=255u8),
        ];
        points.push(ScenePoint { position: p, color });
    }
    Ok(SyntheticScene {
        points,
        checkerboard: None,
    })
}

/// Project the scene through both cameras: exact correspondences at subpixel
/// precision, rendered images per `mode`, optional Gaussian pixel noise on
/// the correspondences only.
pub fn render_pair(
    scene: &SyntheticScene,
    cam1: &CameraModel,
    cam2: &CameraModel,
    pose: &RelativePose,
    mode: ImageMode,
    noise_px: f64,
    seed: u64,
) -> GroundTruthBundle {
    let mut corrs = Vec::new();
    let mut points = Vec::new();
    for sp in &scene.points {
        let (Some(p1), Some(p2)) = (
            project(cam1, None, &sp.position),
            project(cam2, Some((pose,)), &sp.position),
        ) else {
            continue;
        };
        corrs.push(Correspondence::new(p1, p2));
        points.push(*sp);
    }
    if noise_px > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f6973);
        let normal = Normal::new(0.0, noise_px).expect("positive sigma");
        for c in corrs.iter_mut() {
            c.u1 += normal.sample(&mut rng);
            c.v1 += normal.sample(&mut rng);
            c.u2 += normal.sample(&mut rng);
            c.v2 += normal.sample(&mut rng);
        }
    }

    let render = |cam: &CameraModel, rel: Option<(&RelativePose,)>| match mode {
        ImageMode::Dots => render_dots(cam, rel, scene),
        ImageMode::Checkerboard => render_checkerboard(cam, rel, scene),
    };
    GroundTruthBundle {
        left: render(cam1, None),
        right: render(cam2, Some((pose,))),
        corrs,
        pose: pose.clone(),
        cam1: cam1.clone(),
        cam2: cam2.clone(),
        points,
    }
}

fn render_dots(
    cam: &CameraModel,
    rel: Option<(&RelativePose,)>,
    scene: &SyntheticScene,
) -> RasterImage {
    let mut img = RasterImage::new(cam.width(), cam.height(), 3).expect("3 channels");
    img.data.fill(10);
    for sp in &scene.points {
        let Some(pix) = project(cam, rel, &sp.position) else {
            continue;
        };
        // 5x5 gaussian splat
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let x = pix.u.round() as i64 + dx;
                let y = pix.v.round() as i64 + dy;
                if x < 0 || y < 0 || x >= cam.width() as i64 || y >= cam.height() as i64 {
                    continue;
                }
                let cx = x as f64 - pix.u;
                let cy = y as f64 - pix.v;
                let w = (-(cx * cx + cy * cy) / 2.0).exp();
                for ch in 0..3 {
                    let old = img.sample(x as u32, y as u32, ch);
                    let add = (sp.color[ch as usize] as f64 * w) as u16;
                    img.set(x as u32, y as u32, ch, (old as u16 + add).min(255) as u8);
                }
            }
        }
    }
    img
}

const CHECKER_SUPERSAMPLE: u32 = 4;
const CHECKER_BRIGHT: f64 = 230.0;
const CHECKER_DARK: f64 = 25.0;
const CHECKER_BACKGROUND: f64 = 128.0;

fn render_checkerboard(
    cam: &CameraModel,
    rel: Option<(&RelativePose,)>,
    scene: &SyntheticScene,
) -> RasterImage {
    let mut img = RasterImage::new(cam.width(), cam.height(), 1).expect("1 channel");
    let Some(board) = &scene.checkerboard else {
        img.data.fill(CHECKER_BACKGROUND as u8);
        return img;
    };
    // plane in this camera's frame
    let (origin, axis_u, axis_v) = match rel {
        None => (board.origin, board.axis_u, board.axis_v),
        Some((pose,)) => {
            let rt = pose.rotation.transpose();
            (
                rt * (board.origin - pose.translation_dir.into_inner() * pose.baseline),
                rt * board.axis_u,
                rt * board.axis_v,
            )
        }
    };
    let normal = axis_u.cross(&axis_v);
    let span_u = board.cells_u as f64 * board.cell_size;
    let span_v = board.cells_v as f64 * board.cell_size;
    let ss = CHECKER_SUPERSAMPLE;
    let inv = 1.0 / ss as f64;

    for y in 0..cam.height() {
        for x in 0..cam.width() {
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = Pixel::new(
                        x as f64 + (sx as f64 + 0.5) * inv - 0.5,
                        y as f64 + (sy as f64 + 0.5) * inv - 0.5,
                    );
                    acc += match cam.pixel_to_bearing(&px) {
                        Ok(b) => {
                            let denom = b.dot(&normal);
                            if denom.abs() < 1e-12 {
                                CHECKER_BACKGROUND
                            } else {
                                let lambda = origin.dot(&normal) / denom;
                                if lambda <= 0.0 {
                                    CHECKER_BACKGROUND
                                } else {
                                    let hit = b.into_inner() * lambda - origin;
                                    let s = hit.dot(&axis_u);
                                    let t = hit.dot(&axis_v);
                                    if s < 0.0 || s >= span_u || t < 0.0 || t >= span_v {
                                        CHECKER_BACKGROUND
                                    } else {
                                        let ci = (s / board.cell_size) as u32;
                                        let cj = (t / board.cell_size) as u32;
                                        if (ci + cj) % 2 == 0 {
                                            CHECKER_BRIGHT
                                        } else {
                                            CHECKER_DARK
                                        }
                                    }
                                }
                            }
                        }
                        Err(_) => 0.0,
                    };
                }
            }
            img.set(x, y, 0, (acc * inv * inv).round().clamp(0.0, 255.0) as u8);
        }
    }
    img
}

/// Subpixel saddle-point refinement of a checkerboard corner near `guess`:
/// iterate `q = argmin Σ w(p)·(∇I(p)ᵀ(q-p))²` over a window. Returns `None`
/// when the local structure is too weak (flat patch).
pub fn detect_corner_subpixel(
    img: &RasterImage,
    guess: Pixel,
    window: u32,
    iterations: u32,
) -> Option<Pixel> {
    let gray = img.to_gray();
    let w = window as i64;
    let mut q = guess;
    let lim_u = gray.width as f64 - 2.0;
    let lim_v = gray.height as f64 - 2.0;
    for _ in 0..iterations {
        if q.u < w as f64 + 2.0
            || q.v < w as f64 + 2.0
            || q.u > lim_u - w as f64
            || q.v > lim_v - w as f64
        {
            return None;
        }
        let mut gxx = 0.0;
        let mut gxy = 0.0;
        let mut gyy = 0.0;
        let mut bx = 0.0;
        let mut by = 0.0;
        let sigma2 = (window as f64 / 2.0).powi(2);
        for dy in -w..=w {
            for dx in -w..=w {
                let pu = q.u + dx as f64;
                let pv = q.v + dy as f64;
                let ix = (gray.bilinear(pu + 1.0, pv, 0) - gray.bilinear(pu - 1.0, pv, 0)) / 2.0;
                let iy = (gray.bilinear(pu, pv + 1.0, 0) - gray.bilinear(pu, pv - 1.0, 0)) / 2.0;
                let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma2)).exp();
                gxx += wgt * ix * ix;
                gxy += wgt * ix * iy;
                gyy += wgt * iy * iy;
                bx += wgt * (ix * ix * pu + ix * iy * pv);
                by += wgt * (ix * iy * pu + iy * iy * pv);
            }
        }
        let det = gxx * gyy - gxy * gxy;
        if det.abs() < 1e-9 {
            return None;
        }
        let nu = (gyy * bx - gxy * by) / det;
        let nv = (gxx * by - gxy * bx) / det;
        let moved = (nu - q.u).hypot(nv - q.v);
        q = Pixel::new(nu, nv);
        if moved < 1e-4 {
            break;
        }
    }
    (q.distance(&guess) < window as f64).then_some(q)
}

/// Independent brute-force inversion oracle: bisection of a strictly
/// monotone scalar function to 1e-12, separate from the projection-inversion
/// code path it cross-checks.
pub fn oracle_invert<F>(f: F, domain: (f64, f64), value: f64) -> Result<f64, SynthError>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = domain;
    let f_lo = f(lo);
    let f_hi = f(hi);
    let increasing = f_hi > f_lo;
    let (vmin, vmax) = if increasing { (f_lo, f_hi) } else { (f_hi, f_lo) };
    if value < vmin || value > vmax {
        return Err(SynthError::OutOfRange(value));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let below = if increasing {
            f(mid) < value
        } else {
            f(mid) > value
        };
        if below {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl GroundTruthBundle {
    /// Largest angular epipolar residual of the correspondences under the
    /// bundled pose (meaningful for noise-free bundles).
    pub fn max_epipolar_residual(&self) -> f64 {
        let e = self.pose.essential();
        let mut worst = 0.0f64;
        for c in &self.corrs {
            let (Ok(b1), Ok(b2)) = (
                self.cam1.pixel_to_bearing(&c.p1()),
                self.cam2.pixel_to_bearing(&c.p2()),
            ) else {
                continue;
            };
            worst = worst.max((b2.into_inner().dot(&(e.0 * b1.into_inner()))).abs());
        }
        worst
    }

    /// Write the bundle directory: `left.png`, `right.png`, `corrs.csv`,
    /// `pose.json`, `cam1.json`, `cam2.json`, `points.ply`.
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(|e| SynthError::Bundle(e.to_string()))?;
        self.left.save(&dir.join("left.png"))?;
        self.right.save(&dir.join("right.png"))?;
        crate::epipolar::save_correspondences(&dir.join("corrs.csv"), &self.corrs)
            .map_err(|e| SynthError::Bundle(e.to_string()))?;
        self.pose
            .save(&dir.join("pose.json"))
            .map_err(|e| SynthError::Bundle(e.to_string()))?;
        self.cam1
            .save(&dir.join("cam1.json"))
            .map_err(|e| SynthError::Bundle(e.to_string()))?;
        self.cam2
            .save(&dir.join("cam2.json"))
            .map_err(|e| SynthError::Bundle(e.to_string()))?;
        let cloud: Vec<ColoredPoint> = self
            .points
            .iter()
            .map(|sp| ColoredPoint {
                point: Point3D::new(sp.position.x, sp.position.y, sp.position.z),
                color: Some(sp.color),
            })
            .collect();
        save_ply(&dir.join("points.ply"), &cloud)?;
        Ok(())
    }
}

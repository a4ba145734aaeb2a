//! Evaluation of rectification maps against reference methods.
//!
//! Two fixed baselines frame the comparison: the conventional perspective
//! rectification (pinhole reprojection of the rotated bearings, focal length
//! scanned for minimal resampling distortion) and a fixed equidistant map
//! with coverage-fitting focal length and no distortion optimization. Both
//! expose the same forward-map interface as the optimized model, and every
//! method is measured on one shared sample list and one shared correspondence
//! set.

use crate::camera::{CameraModel, Pixel};
use crate::distortion::{total_distortion, DistortionError, DistortionReport, DistortionWeights};
use crate::epipolar::{rectifying_rotations, Correspondence, EpipolarError, RelativePose};
use crate::optimizer::fitted_theta_halves;
use crate::rectmodel::{bearing_to_angles, CamSide, MapError, RectificationModel};
use nalgebra::Matrix3;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    /// Perspective rectification cannot represent a FOV of 180 degrees or
    /// more.
    #[error("field of view {fov_deg:.1} deg too wide for a perspective baseline")]
    FovTooWide { fov_deg: f64 },
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error("no correspondence could be evaluated")]
    NoUsableCorrespondences,
}

/// Anything that maps source pixels of either camera to rectified pixels.
pub trait RectifyMap {
    fn map(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError>;
    fn name(&self) -> &str;
}

impl RectifyMap for RectificationModel {
    fn map(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError> {
        self.forward_map(side, p)
    }

    fn name(&self) -> &str {
        "optimized"
    }
}

/// Conventional perspective rectification `û = f·tanγ/cosβ + cx`,
/// `v̂ = f·tanβ + cy` of the rotated bearings.
#[derive(Debug, Clone)]
pub struct PerspectiveRect {
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub cam1: CameraModel,
    pub cam2: CameraModel,
    pub focal: f64,
    pub center: Pixel,
}

impl PerspectiveRect {
    fn map_impl(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError> {
        let (cam, rot) = match side {
            CamSide::Left => (&self.cam1, &self.r1),
            CamSide::Right => (&self.cam2, &self.r2),
        };
        let b = rot.transpose() * cam.pixel_to_bearing(p)?.into_inner();
        if b.z <= 1e-9 {
            return Err(MapError::Domain {
                theta: std::f64::consts::FRAC_PI_2,
                half: std::f64::consts::FRAC_PI_2,
            });
        }
        Ok(Pixel::new(
            self.center.u + self.focal * b.x / b.z,
            self.center.v + self.focal * b.y / b.z,
        ))
    }
}

impl RectifyMap for PerspectiveRect {
    fn map(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError> {
        self.map_impl(side, p)
    }

    fn name(&self) -> &str {
        "perspective"
    }
}

/// Fixed equidistant map `û = f·γ + cx`, `v̂ = f·β + cy` with a single
/// coverage-fitting focal length and no distortion optimization.
#[derive(Debug, Clone)]
pub struct EquidistantRect {
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub cam1: CameraModel,
    pub cam2: CameraModel,
    pub focal: f64,
    pub center: Pixel,
}

impl RectifyMap for EquidistantRect {
    fn map(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError> {
        let (cam, rot) = match side {
            CamSide::Left => (&self.cam1, &self.r1),
            CamSide::Right => (&self.cam2, &self.r2),
        };
        let b = rot.transpose() * cam.pixel_to_bearing(p)?.into_inner();
        let a = bearing_to_angles(&b)?;
        Ok(Pixel::new(
            self.center.u + self.focal * a.gamma,
            self.center.v + self.focal * a.beta,
        ))
    }

    fn name(&self) -> &str {
        "equidistant"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Perspective,
    Equidistant,
}

/// Reference rectification map of the requested family.
#[derive(Debug)]
pub enum BaselineMap {
    Perspective(PerspectiveRect),
    Equidistant(EquidistantRect),
}

impl RectifyMap for BaselineMap {
    fn map(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError> {
        match self {
            BaselineMap::Perspective(m) => m.map(side, p),
            BaselineMap::Equidistant(m) => m.map(side, p),
        }
    }

    fn name(&self) -> &str {
        match self {
            BaselineMap::Perspective(m) => m.name(),
            BaselineMap::Equidistant(m) => m.name(),
        }
    }
}

/// Build a reference rectification. The perspective focal length is chosen by
/// a geometric grid scan refined with golden-section search, minimizing the
/// same distortion measure on the same samples; the equidistant baseline uses
/// the coverage-fitting focal length with no optimization.
pub fn build_baseline(
    kind: BaselineKind,
    cam1: &CameraModel,
    cam2: &CameraModel,
    pose: &RelativePose,
    samples: &[Pixel],
    weights: &DistortionWeights,
    fd_step: f64,
) -> Result<BaselineMap, EvalError> {
    match kind {
        BaselineKind::Equidistant => {
            let rotations = rectifying_rotations(pose)?;
            let (th_u, th_v) = fitted_theta_halves(cam1, cam2, &rotations);
            let focal = (cam1.width() as f64 / (2.0 * th_u))
                .min(cam1.height() as f64 / (2.0 * th_v));
            Ok(BaselineMap::Equidistant(EquidistantRect {
                r1: rotations.r1,
                r2: rotations.r2,
                cam1: cam1.clone(),
                cam2: cam2.clone(),
                focal,
                center: Pixel::new(cam1.width() as f64 / 2.0, cam1.height() as f64 / 2.0),
            }))
        }
        BaselineKind::Perspective => {
            let fov = cam1.theta_max().max(cam2.theta_max());
            if fov >= std::f64::consts::PI {
                return Err(EvalError::FovTooWide {
                    fov_deg: fov.to_degrees(),
                });
            }
            let rotations = rectifying_rotations(pose)?;
            let center = Pixel::new(cam1.width() as f64 / 2.0, cam1.height() as f64 / 2.0);
            let mk = |focal: f64| PerspectiveRect {
                r1: rotations.r1,
                r2: rotations.r2,
                cam1: cam1.clone(),
                cam2: cam2.clone(),
                focal,
                center,
            };
            let score = |focal: f64| -> f64 {
                let rect = mk(focal);
                let mut total = 0.0;
                for side in [CamSide::Left, CamSide::Right] {
                    match total_distortion(
                        |p| rect.map(side, p),
                        samples,
                        weights,
                        fd_step,
                        false,
                    ) {
                        Ok(report) => total += report.total,
                        Err(_) => return f64::INFINITY,
                    }
                }
                total
            };

            // nominal focal fitting the FOV onto the output width
            let f_id = (cam1.width() as f64 / 2.0) / (0.5 * fov).tan().max(1e-6);
            let lo = f_id * 0.05;
            let hi = f_id * 20.0;
            let n_grid = 64;
            let ratio = (hi / lo).powf(1.0 / (n_grid - 1) as f64);
            let mut best_i = 0;
            let mut best_score = f64::INFINITY;
            let mut f = lo;
            let mut grid = Vec::with_capacity(n_grid);
            for i in 0..n_grid {
                grid.push(f);
                let s = score(f);
                if s < best_score {
                    best_score = s;
                    best_i = i;
                }
                f *= ratio;
            }
            // golden-section refinement on the bracketing interval
            let mut a = grid[best_i.saturating_sub(1)];
            let mut b = grid[(best_i + 1).min(n_grid - 1)];
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let mut x1 = b - phi * (b - a);
            let mut x2 = a + phi * (b - a);
            let mut f1 = score(x1);
            let mut f2 = score(x2);
            for _ in 0..60 {
                if f1 < f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - phi * (b - a);
                    f1 = score(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + phi * (b - a);
                    f2 = score(x2);
                }
            }
            let best_f = if f1 < f2 { x1 } else { x2 };
            Ok(BaselineMap::Perspective(mk(best_f)))
        }
    }
}

/// Evaluation of one method on a shared correspondence set and sample list.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub method_name: String,
    /// Mean rectified y-disparity in pixels.
    pub rect_error_mean: f64,
    pub rect_error_max: f64,
    pub distortion_total: f64,
    pub distortion_mean: f64,
    pub n_correspondences: usize,
    pub n_samples: usize,
    pub n_flagged: usize,
}

/// Rectification error (y-disparity of the mapped correspondences) and
/// resampling distortion of `map` over the shared inputs.
pub fn evaluate_rectification<M: RectifyMap>(
    map: &M,
    corrs: &[Correspondence],
    samples: &[Pixel],
    weights: &DistortionWeights,
    fd_step: f64,
) -> Result<EvaluationSummary, EvalError> {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut used = 0usize;
    let mut flagged = 0usize;
    for c in corrs {
        match (map.map(CamSide::Left, &c.p1()), map.map(CamSide::Right, &c.p2())) {
            (Ok(q1), Ok(q2)) => {
                let r = (q1.v - q2.v).abs();
                sum += r;
                max = max.max(r);
                used += 1;
            }
            _ => flagged += 1,
        }
    }
    if used == 0 && !corrs.is_empty() {
        return Err(EvalError::NoUsableCorrespondences);
    }

    let mut distortion_total = 0.0;
    let mut n_samples = 0usize;
    for side in [CamSide::Left, CamSide::Right] {
        let report = total_distortion(|p| map.map(side, p), samples, weights, fd_step, false)?;
        distortion_total += report.total;
        n_samples += report.n_samples;
    }

    Ok(EvaluationSummary {
        method_name: map.name().to_string(),
        rect_error_mean: if used == 0 { 0.0 } else { sum / used as f64 },
        rect_error_max: max,
        distortion_total,
        distortion_mean: if n_samples == 0 {
            0.0
        } else {
            distortion_total / n_samples as f64
        },
        n_correspondences: used,
        n_samples,
        n_flagged: flagged,
    })
}

/// Per-sample distortion report of a map side, for the CSV output.
pub fn distortion_report<M: RectifyMap>(
    map: &M,
    side: CamSide,
    samples: &[Pixel],
    weights: &DistortionWeights,
    fd_step: f64,
) -> Result<DistortionReport, EvalError> {
    Ok(total_distortion(
        |p| map.map(side, p),
        samples,
        weights,
        fd_step,
        true,
    )?)
}

/// Summaries as a CSV table.
pub fn summaries_to_csv(summaries: &[EvaluationSummary]) -> String {
    let mut out = String::from(
        "method,rect_error_mean,rect_error_max,distortion_total,distortion_mean,n_correspondences,n_samples,n_flagged\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.method_name,
            s.rect_error_mean,
            s.rect_error_max,
            s.distortion_total,
            s.distortion_mean,
            s.n_correspondences,
            s.n_samples,
            s.n_flagged
        ));
    }
    out
}

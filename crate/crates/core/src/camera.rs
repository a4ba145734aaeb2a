//! Intrinsic camera models mapping image pixels to unit bearing vectors and
//! back.
//!
//! Three radial projections are supported: equidistant fisheye (`r = f·θ`),
//! general polynomial fisheye (`r = Σ aₖ·θᵏ`, k ≥ 1) and pinhole perspective
//! (`r = f·tan θ`). All of them are rotationally symmetric about the optical
//! axis, so a pixel is characterized by its radius from the principal point
//! and its azimuth, and a bearing by its polar angle `θ` and the same azimuth.

use nalgebra::{UnitVector3, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Unit 3D ray from the camera center, expressed in the camera frame.
pub type Bearing = UnitVector3<f64>;

/// Continuous image coordinates, origin at the top-left corner, integer
/// values at pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Euclidean distance to another pixel.
    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Debug, Error)]
pub enum CameraError {
    /// The pixel radius (or bearing angle) lies beyond the field of view.
    #[error("out of field of view: {what} = {value:.6} exceeds limit {limit:.6}")]
    OutOfFov {
        what: &'static str,
        value: f64,
        limit: f64,
    },
    /// NaN or infinite input coordinate.
    #[error("non-finite input coordinate")]
    NonFinite,
    #[error("camera config parse error: {0}")]
    Parse(String),
    /// The configured model violates an invariant.
    #[error("invalid camera model: {0}")]
    InvalidModel(String),
}

/// Radial projection family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraKind {
    Equidistant,
    Polynomial,
    Pinhole,
}

/// Calibrated intrinsic camera model (`Phi` maps pixels to bearings,
/// `Phi⁻¹` maps bearings back to pixels).
///
/// Immutable after construction; all operations are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    kind: CameraKind,
    /// Pixels per radian (equidistant) or pixels (pinhole). Unused for
    /// polynomial models.
    focal: f64,
    /// Radial coefficients `a₁..aₙ` with `r(θ) = Σ aₖ·θᵏ` (polynomial kind).
    poly_coeffs: Vec<f64>,
    center: Pixel,
    width: u32,
    height: u32,
    /// Full angular field of view in radians.
    theta_max: f64,
    /// Cached `r(theta_max/2)`.
    max_radius: f64,
}

/// On-disk camera config. Angles are degrees in the file, radians internally.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraConfig {
    kind: CameraKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    focal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    poly_coeffs: Option<Vec<f64>>,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    theta_max_deg: f64,
}

const MONOTONE_SCAN_POINTS: usize = 1000;

impl CameraModel {
    /// Equidistant fisheye: `r = focal·θ`.
    pub fn equidistant(
        focal: f64,
        center: Pixel,
        width: u32,
        height: u32,
        theta_max: f64,
    ) -> Result<Self, CameraError> {
        Self::build(
            CameraKind::Equidistant,
            focal,
            Vec::new(),
            center,
            width,
            height,
            theta_max,
        )
    }

    /// Pinhole perspective: `r = focal·tan θ`. Requires `theta_max < π`.
    pub fn pinhole(
        focal: f64,
        center: Pixel,
        width: u32,
        height: u32,
        theta_max: f64,
    ) -> Result<Self, CameraError> {
        Self::build(
            CameraKind::Pinhole,
            focal,
            Vec::new(),
            center,
            width,
            height,
            theta_max,
        )
    }

    /// General polynomial fisheye: `r(θ) = Σ coeffs[k]·θ^(k+1)`.
    pub fn polynomial(
        coeffs: Vec<f64>,
        center: Pixel,
        width: u32,
        height: u32,
        theta_max: f64,
    ) -> Result<Self, CameraError> {
        Self::build(
            CameraKind::Polynomial,
            0.0,
            coeffs,
            center,
            width,
            height,
            theta_max,
        )
    }

    fn build(
        kind: CameraKind,
        focal: f64,
        poly_coeffs: Vec<f64>,
        center: Pixel,
        width: u32,
        height: u32,
        theta_max: f64,
    ) -> Result<Self, CameraError> {
        if !(theta_max.is_finite() && theta_max > 0.0 && theta_max < 2.0 * std::f64::consts::PI) {
            return Err(CameraError::InvalidModel(format!(
                "theta_max must lie in (0, 2*pi), got {theta_max}"
            )));
        }
        if width < 2 || height < 2 {
            return Err(CameraError::InvalidModel(format!(
                "image dimensions must be >= 2, got {width}x{height}"
            )));
        }
        if !center.is_finite() {
            return Err(CameraError::InvalidModel("non-finite principal point".into()));
        }
        match kind {
            CameraKind::Equidistant | CameraKind::Pinhole => {
                if !(focal.is_finite() && focal > 0.0) {
                    return Err(CameraError::InvalidModel(format!(
                        "focal must be positive, got {focal}"
                    )));
                }
                if kind == CameraKind::Pinhole && theta_max >= std::f64::consts::PI {
                    return Err(CameraError::InvalidModel(format!(
                        "pinhole theta_max must be < pi, got {theta_max}"
                    )));
                }
            }
            CameraKind::Polynomial => {
                if poly_coeffs.is_empty() || !poly_coeffs.iter().all(|c| c.is_finite()) {
                    return Err(CameraError::InvalidModel(
                        "polynomial model needs at least one finite coefficient".into(),
                    ));
                }
            }
        }
        let mut model = Self {
            kind,
            focal,
            poly_coeffs,
            center,
            width,
            height,
            theta_max,
            max_radius: 0.0,
        };
        model.validate_radial_monotone()?;
        model.max_radius = model.radial(model.theta_half());
        Ok(model)
    }

    /// Dense scan: `r(θ)` must be strictly increasing on `[0, theta_max/2]`.
    fn validate_radial_monotone(&self) -> Result<(), CameraError> {
        let half = self.theta_half();
        let mut prev = 0.0;
        for i in 1..=MONOTONE_SCAN_POINTS {
            let theta = half * i as f64 / MONOTONE_SCAN_POINTS as f64;
            let r = self.radial(theta);
            if !(r.is_finite() && r > prev) {
                return Err(CameraError::InvalidModel(format!(
                    "radial mapping not strictly increasing at theta = {theta:.6} rad \
                     (r = {r:.6}, previous {prev:.6})"
                )));
            }
            prev = r;
        }
        Ok(())
    }

    pub fn kind(&self) -> CameraKind {
        self.kind
    }

    pub fn center(&self) -> Pixel {
        self.center
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Full angular field of view in radians.
    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// Half field of view: the largest polar angle inside the FOV.
    pub fn theta_half(&self) -> f64 {
        0.5 * self.theta_max
    }

    /// Largest pixel radius inside the FOV.
    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// Radial mapping `r(θ)` in pixels.
    fn radial(&self, theta: f64) -> f64 {
        match self.kind {
            CameraKind::Equidistant => self.focal * theta,
            CameraKind::Pinhole => self.focal * theta.tan(),
            CameraKind::Polynomial => {
                // Horner over a₁..aₙ, then one extra multiply for the missing
                // constant term.
                let mut acc = 0.0;
                for &c in self.poly_coeffs.iter().rev() {
                    acc = acc * theta + c;
                }
                acc * theta
            }
        }
    }

    /// Inverse radial mapping `θ(r)`; `r` must be within `[0, max_radius]`.
    fn radial_inverse(&self, r: f64) -> f64 {
        match self.kind {
            CameraKind::Equidistant => r / self.focal,
            CameraKind::Pinhole => (r / self.focal).atan(),
            CameraKind::Polynomial => {
                // Monotone bisection; no closed form for general coefficients.
                let mut lo = 0.0;
                let mut hi = self.theta_half();
                for _ in 0..200 {
                    if hi - lo <= 1e-14 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if self.radial(mid) < r {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// `Phi`: lift a pixel to its unit bearing vector. The bearing's azimuth
    /// matches the pixel's offset from the principal point.
    pub fn pixel_to_bearing(&self, p: &Pixel) -> Result<Bearing, CameraError> {
        if !p.is_finite() {
            return Err(CameraError::NonFinite);
        }
        let dx = p.u - self.center.u;
        let dy = p.v - self.center.v;
        let r = dx.hypot(dy);
        // Tiny slack so pixels exactly on the FOV rim survive rounding.
        if r > self.max_radius * (1.0 + 1e-12) + 1e-9 {
            return Err(CameraError::OutOfFov {
                what: "pixel radius",
                value: r,
                limit: self.max_radius,
            });
        }
        if r == 0.0 {
            return Ok(UnitVector3::new_unchecked(Vector3::z()));
        }
        let theta = self.radial_inverse(r.min(self.max_radius));
        let (sin_t, cos_t) = theta.sin_cos();
        let (cos_p, sin_p) = (dx / r, dy / r);
        Ok(UnitVector3::new_normalize(Vector3::new(
            sin_t * cos_p,
            sin_t * sin_p,
            cos_t,
        )))
    }

    /// `Phi⁻¹`: project a bearing back to pixel coordinates.
    pub fn bearing_to_pixel(&self, b: &Bearing) -> Result<Pixel, CameraError> {
        let rho = b.x.hypot(b.y);
        let theta = rho.atan2(b.z);
        if theta > self.theta_half() * (1.0 + 1e-12) + 1e-12 {
            return Err(CameraError::OutOfFov {
                what: "bearing angle",
                value: theta,
                limit: self.theta_half(),
            });
        }
        if rho == 0.0 {
            return Ok(self.center);
        }
        let r = self.radial(theta.min(self.theta_half()));
        Ok(Pixel::new(
            self.center.u + r * (b.x / rho),
            self.center.v + r * (b.y / rho),
        ))
    }

    /// True if `p` lies inside the image rectangle `[0,w)x[0,h)`.
    pub fn contains(&self, p: &Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    pub fn to_json(&self) -> String {
        let cfg = CameraConfig {
            kind: self.kind,
            focal: match self.kind {
                CameraKind::Polynomial => None,
                _ => Some(self.focal),
            },
            poly_coeffs: match self.kind {
                CameraKind::Polynomial => Some(self.poly_coeffs.clone()),
                _ => None,
            },
            cx: self.center.u,
            cy: self.center.v,
            width: self.width,
            height: self.height,
            theta_max_deg: self.theta_max.to_degrees(),
        };
        serde_json::to_string_pretty(&cfg).expect("camera config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CameraError> {
        let cfg: CameraConfig =
            serde_json::from_str(text).map_err(|e| CameraError::Parse(e.to_string()))?;
        let theta_max = cfg.theta_max_deg.to_radians();
        let center = Pixel::new(cfg.cx, cfg.cy);
        match cfg.kind {
            CameraKind::Equidistant => Self::equidistant(
                cfg.focal
                    .ok_or_else(|| CameraError::Parse("missing focal".into()))?,
                center,
                cfg.width,
                cfg.height,
                theta_max,
            ),
            CameraKind::Pinhole => Self::pinhole(
                cfg.focal
                    .ok_or_else(|| CameraError::Parse("missing focal".into()))?,
                center,
                cfg.width,
                cfg.height,
                theta_max,
            ),
            CameraKind::Polynomial => Self::polynomial(
                cfg.poly_coeffs
                    .ok_or_else(|| CameraError::Parse("missing poly_coeffs".into()))?,
                center,
                cfg.width,
                cfg.height,
                theta_max,
            ),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CameraError> {
        fs::write(path, self.to_json() + "\n").map_err(|e| CameraError::Parse(e.to_string()))
    }
}

/// Load and validate a camera config file.
pub fn load_camera_model(path: &Path) -> Result<CameraModel, CameraError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CameraError::Parse(format!("{}: {e}", path.display())))?;
    CameraModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn equidistant_160() -> CameraModel {
        CameraModel::equidistant(
            200.0,
            Pixel::new(320.0, 240.0),
            640,
            480,
            160f64.to_radians(),
        )
        .unwrap()
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let cam = equidistant_160();
        let b = cam.pixel_to_bearing(&Pixel::new(320.0, 240.0)).unwrap();
        assert_relative_eq!(b.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b.y, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b.z, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn equidistant_one_radian() {
        // radius 200 px at 200 px/rad is exactly one radian off-axis.
        let cam = CameraModel::equidistant(
            200.0,
            Pixel::new(320.0, 240.0),
            640,
            480,
            170f64.to_radians(),
        )
        .unwrap();
        let b = cam.pixel_to_bearing(&Pixel::new(520.0, 240.0)).unwrap();
        assert_relative_eq!(b.x, 1f64.sin(), epsilon = 1e-12);
        assert_relative_eq!(b.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(b.z, 1f64.cos(), epsilon = 1e-12);

        let p = cam.bearing_to_pixel(&b).unwrap();
        assert_relative_eq!(p.u, 520.0, epsilon = 1e-9);
        assert_relative_eq!(p.v, 240.0, epsilon = 1e-9);
    }

    #[test]
    fn pinhole_45_degrees() {
        let cam = CameraModel::pinhole(
            500.0,
            Pixel::new(320.0, 240.0),
            640,
            480,
            140f64.to_radians(),
        )
        .unwrap();
        let b = cam.pixel_to_bearing(&Pixel::new(820.0, 240.0)).unwrap();
        let expect = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert_relative_eq!(b.x, expect.x, epsilon = 1e-12);
        assert_relative_eq!(b.z, expect.z, epsilon = 1e-12);
    }

    #[test]
    fn out_of_fov_pixel_rejected() {
        let cam = equidistant_160();
        // max radius = 200 * 80 deg in rad ~ 279 px
        let err = cam.pixel_to_bearing(&Pixel::new(639.0, 240.0)).unwrap_err();
        assert!(matches!(err, CameraError::OutOfFov { .. }));
    }

    #[test]
    fn nan_input_rejected() {
        let cam = equidistant_160();
        let err = cam
            .pixel_to_bearing(&Pixel::new(f64::NAN, 10.0))
            .unwrap_err();
        assert!(matches!(err, CameraError::NonFinite));
    }

    fn roundtrip_sweep(cam: &CameraModel, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        let mut tested = 0;
        while tested < n {
            let p = Pixel::new(
                rng.random_range(0.0..cam.width() as f64),
                rng.random_range(0.0..cam.height() as f64),
            );
            let Ok(b) = cam.pixel_to_bearing(&p) else {
                continue;
            };
            assert_relative_eq!(b.norm(), 1.0, epsilon = 1e-12);
            let back = cam.bearing_to_pixel(&b).unwrap();
            worst = worst.max(back.distance(&p));
            tested += 1;
        }
        worst
    }

    #[test]
    fn roundtrip_equidistant() {
        assert!(roundtrip_sweep(&equidistant_160(), 10_000) < 1e-9);
    }

    #[test]
    fn roundtrip_pinhole() {
        let cam = CameraModel::pinhole(
            554.0,
            Pixel::new(320.0, 240.0),
            640,
            480,
            60f64.to_radians(),
        )
        .unwrap();
        assert!(roundtrip_sweep(&cam, 10_000) < 1e-9);
    }

    #[test]
    fn roundtrip_polynomial() {
        let cam = CameraModel::polynomial(
            vec![220.0, 0.0, -15.0],
            Pixel::new(320.0, 240.0),
            640,
            480,
            160f64.to_radians(),
        )
        .unwrap();
        assert!(roundtrip_sweep(&cam, 10_000) < 1e-9);
    }

    #[test]
    fn azimuth_preserved() {
        let cam = equidistant_160();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = Pixel::new(rng.random_range(60.0..580.0), rng.random_range(40.0..440.0));
            let radius = (p.u - 320.0).hypot(p.v - 240.0);
            if radius <= 1.0 {
                continue;
            }
            let Ok(b) = cam.pixel_to_bearing(&p) else {
                continue;
            };
            let az_pix = (p.v - 240.0).atan2(p.u - 320.0);
            let az_ray = b.y.atan2(b.x);
            assert_relative_eq!(az_ray, az_pix, epsilon = 1e-12);
        }
    }

    #[test]
    fn config_roundtrip() {
        let cam = equidistant_160();
        let parsed = CameraModel::from_json(&cam.to_json()).unwrap();
        assert_eq!(parsed.kind(), CameraKind::Equidistant);
        assert_eq!(parsed, cam);
    }

    #[test]
    fn negative_focal_rejected() {
        let text = r#"{"kind":"equidistant","focal":-10.0,"cx":320,"cy":240,
                       "width":640,"height":480,"theta_max_deg":160}"#;
        let err = CameraModel::from_json(text).unwrap_err();
        assert!(matches!(err, CameraError::InvalidModel(_)));
    }

    #[test]
    fn decreasing_polynomial_rejected() {
        // r(theta) = 100*theta - 120*theta^2 turns around inside the FOV.
        let text = r#"{"kind":"polynomial","poly_coeffs":[100.0,-120.0],"cx":320,"cy":240,
                       "width":640,"height":480,"theta_max_deg":160}"#;
        let err = CameraModel::from_json(text).unwrap_err();
        match err {
            CameraError::InvalidModel(msg) => assert!(msg.contains("theta")),
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn wide_fov_bearing_behind_image_plane() {
        // 220 degree FOV: rays with bz < 0 stay inside the model.
        let cam = CameraModel::equidistant(
            150.0,
            Pixel::new(320.0, 240.0),
            640,
            480,
            220f64.to_radians(),
        )
        .unwrap();
        let theta: f64 = 100f64.to_radians();
        let p = Pixel::new(320.0 + 150.0 * theta, 240.0);
        let b = cam.pixel_to_bearing(&p).unwrap();
        assert!(b.z < 0.0);
        let back = cam.bearing_to_pixel(&b).unwrap();
        assert!(back.distance(&p) < 1e-9);
    }
}

//! The pixel-variant rectification map `H = Psi ∘ R ∘ Phi` and its inverse.
//!
//! A bearing in the rectified frame is described by two angles: `beta`, the
//! epipolar-plane angle (constant along a rectified row) and `gamma`, the
//! position along the epipolar line. Monotone cubic projections `Psi_u(gamma)`
//! and `Psi_v(beta)` turn the angles into rectified pixel coordinates; because
//! the row coordinate depends only on `beta`, epipolar lines map to scan lines
//! for any choice of coefficients.

use crate::camera::{CameraError, CameraModel, Pixel};
use crate::epipolar::RectifyingRotations;
use nalgebra::{Matrix3, UnitVector3, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    /// Angle outside the projection's domain.
    #[error("theta {theta:.6} outside projection domain [-{half:.6}, {half:.6}]")]
    Domain { theta: f64, half: f64 },
    /// Value outside the projection's range (unfilled rectified pixel).
    #[error("value {value:.3} outside projection range [{lo:.3}, {hi:.3}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    /// Bearing with `by = bz = 0` has no epipolar-plane angle.
    #[error("degenerate ray along the baseline")]
    DegenerateRay,
    #[error("model file error: {0}")]
    ModelFile(String),
}

/// Epipolar angles of a rectified-frame bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleCoords {
    /// Epipolar-plane angle, `atan2(by, bz)`.
    pub beta: f64,
    /// Along-line angle, `atan(bx / sqrt(by² + bz²))`.
    pub gamma: f64,
}

/// Angles of a bearing in the rectified frame.
pub fn bearing_to_angles(b: &Vector3<f64>) -> Result<AngleCoords, MapError> {
    let rho = b.y.hypot(b.z);
    if rho == 0.0 {
        return Err(MapError::DegenerateRay);
    }
    Ok(AngleCoords {
        beta: b.y.atan2(b.z),
        gamma: (b.x / rho).atan(),
    })
}

/// Exact inverse of [`bearing_to_angles`]; returns a unit vector.
pub fn angles_to_bearing(a: &AngleCoords) -> Vector3<f64> {
    let (sg, cg) = a.gamma.sin_cos();
    let (sb, cb) = a.beta.sin_cos();
    Vector3::new(sg, cg * sb, cg * cb)
}

/// Monotone cubic `c0 + c1·θ + c2·θ² + c3·θ³` on `[-theta_half, theta_half]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicProjection {
    pub c: [f64; 4],
    pub theta_half: f64,
}

/// Slack for angles that land on the domain boundary up to rounding.
const DOMAIN_EPS: f64 = 1e-9;

impl CubicProjection {
    pub fn new(c: [f64; 4], theta_half: f64) -> Self {
        Self { c, theta_half }
    }

    /// Polynomial value; `theta` must lie within the domain.
    pub fn eval(&self, theta: f64) -> Result<f64, MapError> {
        if !theta.is_finite() || theta.abs() > self.theta_half + DOMAIN_EPS {
            return Err(MapError::Domain {
                theta,
                half: self.theta_half,
            });
        }
        Ok(self.eval_unchecked(theta))
    }

    #[inline]
    pub fn eval_unchecked(&self, theta: f64) -> f64 {
        ((self.c[3] * theta + self.c[2]) * theta + self.c[1]) * theta + self.c[0]
    }

    /// Derivative `c1 + 2·c2·θ + 3·c3·θ²`.
    #[inline]
    pub fn derivative(&self, theta: f64) -> f64 {
        (3.0 * self.c[3] * theta + 2.0 * self.c[2]) * theta + self.c[1]
    }

    /// Range endpoints `(p(-theta_half), p(theta_half))`.
    pub fn range(&self) -> (f64, f64) {
        (
            self.eval_unchecked(-self.theta_half),
            self.eval_unchecked(self.theta_half),
        )
    }

    /// Monotone inversion by bisection; `value` must lie within the range.
    pub fn invert(&self, value: f64) -> Result<f64, MapError> {
        let (lo_v, hi_v) = self.range();
        if !(value >= lo_v && value <= hi_v) {
            return Err(MapError::OutOfRange {
                value,
                lo: lo_v,
                hi: hi_v,
            });
        }
        let mut lo = -self.theta_half;
        let mut hi = self.theta_half;
        for _ in 0..200 {
            if hi - lo <= 1e-14 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.eval_unchecked(mid) < value {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Strict monotonicity: derivative positive at `n_points` uniform control
    /// points and the derivative quadratic has no real root inside the domain.
    pub fn is_monotone(&self, n_points: usize) -> bool {
        assert!(n_points >= 2);
        let h = self.theta_half;
        for i in 0..n_points {
            let theta = -h + 2.0 * h * i as f64 / (n_points - 1) as f64;
            if !(self.derivative(theta) > 0.0) {
                return false;
            }
        }
        // Exact root check of c1 + 2c2·θ + 3c3·θ².
        let (a, b, c) = (3.0 * self.c[3], 2.0 * self.c[2], self.c[1]);
        if a == 0.0 {
            if b == 0.0 {
                return c > 0.0;
            }
            let root = -c / b;
            return root.abs() > h;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return true;
        }
        let sq = disc.sqrt();
        let r1 = (-b - sq) / (2.0 * a);
        let r2 = (-b + sq) / (2.0 * a);
        r1.abs() > h && r2.abs() > h
    }

    /// Cubic least-squares fit of the inverse function, usable as a LUT
    /// precomputation accelerator. The fit must stay within 0.05 px of the
    /// exact bisection inverse to be returned.
    pub fn fit_inverse(&self, n_samples: usize) -> Option<CubicProjection> {
        let (lo, hi) = self.range();
        let mid = 0.5 * (lo + hi);
        let half_span = 0.5 * (hi - lo);
        if half_span <= 0.0 {
            return None;
        }
        // Fit theta(value) on centered values to keep the normal matrix sane.
        let n = n_samples.max(8);
        let mut ata = nalgebra::Matrix4::<f64>::zeros();
        let mut atb = nalgebra::Vector4::<f64>::zeros();
        for i in 0..n {
            let theta = -self.theta_half + 2.0 * self.theta_half * i as f64 / (n - 1) as f64;
            let x = self.eval_unchecked(theta) - mid;
            let row = nalgebra::Vector4::new(1.0, x, x * x, x * x * x);
            ata += row * row.transpose();
            atb += row * theta;
        }
        let sol = ata.lu().solve(&atb)?;
        // Re-center: theta(v) = d0 + d1·(v-mid) + d2·(v-mid)² + d3·(v-mid)³
        let fit = CenteredCubic {
            d: [sol[0], sol[1], sol[2], sol[3]],
            mid,
            half_span,
        };
        let mut worst = 0.0f64;
        for i in 0..n {
            let theta = -self.theta_half + 2.0 * self.theta_half * i as f64 / (n - 1) as f64;
            let v = self.eval_unchecked(theta);
            let err = (fit.eval(v) - theta).abs() * self.derivative(theta).abs();
            worst = worst.max(err);
        }
        if worst > 0.05 {
            return None;
        }
        // Expand into plain coefficients over the value domain (shifted basis
        // kept implicit by returning the centered form's expansion).
        Some(fit.expand())
    }
}

/// Helper for the inverse fit: cubic in `(v - mid)`.
struct CenteredCubic {
    d: [f64; 4],
    mid: f64,
    half_span: f64,
}

impl CenteredCubic {
    fn eval(&self, v: f64) -> f64 {
        let x = v - self.mid;
        ((self.d[3] * x + self.d[2]) * x + self.d[1]) * x + self.d[0]
    }

    /// Expand to a `CubicProjection` over value offsets from `mid`, with the
    /// centered value span as the nominal domain.
    fn expand(&self) -> CubicProjection {
        // The centered form IS a cubic in x = v - mid; keep it that way and
        // record the shift in c0 via composition at lookup time. Callers use
        // `eval_unchecked(v - mid)`, so store mid in theta_half... instead we
        // expand (v - mid) powers into plain powers of v for a standalone
        // cubic in v.
        let [d0, d1, d2, d3] = self.d;
        let m = self.mid;
        let c0 = d0 - d1 * m + d2 * m * m - d3 * m * m * m;
        let c1 = d1 - 2.0 * d2 * m + 3.0 * d3 * m * m;
        let c2 = d2 - 3.0 * d3 * m;
        let c3 = d3;
        CubicProjection::new([c0, c1, c2, c3], self.mid.abs() + self.half_span)
    }
}

/// Complete rectification model for a stereo pair: rotations, shared cubic
/// projections and the embedded camera models.
#[derive(Debug, Clone, PartialEq)]
pub struct RectificationModel {
    pub rotations: RectifyingRotations,
    pub psi_u: CubicProjection,
    pub psi_v: CubicProjection,
    pub cam1: CameraModel,
    pub cam2: CameraModel,
    pub out_width: u32,
    pub out_height: u32,
}

/// Which camera of the pair a mapping refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamSide {
    Left,
    Right,
}

impl CamSide {
    pub fn index(self) -> usize {
        match self {
            CamSide::Left => 1,
            CamSide::Right => 2,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "R1")]
    r1: Vec<f64>,
    #[serde(rename = "R2")]
    r2: Vec<f64>,
    cu: [f64; 4],
    cv: [f64; 4],
    theta_half_u_deg: f64,
    theta_half_v_deg: f64,
    out_width: u32,
    out_height: u32,
    cam1: serde_json::Value,
    cam2: serde_json::Value,
}

impl RectificationModel {
    pub fn camera(&self, side: CamSide) -> &CameraModel {
        match side {
            CamSide::Left => &self.cam1,
            CamSide::Right => &self.cam2,
        }
    }

    pub fn rotation(&self, side: CamSide) -> &Matrix3<f64> {
        match side {
            CamSide::Left => &self.rotations.r1,
            CamSide::Right => &self.rotations.r2,
        }
    }

    /// Rectified-frame bearing of a source pixel: `Rᵀ·Phi(p)`.
    pub fn rectified_bearing(&self, side: CamSide, p: &Pixel) -> Result<Vector3<f64>, MapError> {
        let b = self.camera(side).pixel_to_bearing(p)?;
        Ok(self.rotation(side).transpose() * b.into_inner())
    }

    /// Epipolar angles of a source pixel.
    pub fn angles_of(&self, side: CamSide, p: &Pixel) -> Result<AngleCoords, MapError> {
        bearing_to_angles(&self.rectified_bearing(side, p)?)
    }

    /// `H`: source pixel to rectified pixel.
    pub fn forward_map(&self, side: CamSide, p: &Pixel) -> Result<Pixel, MapError> {
        let a = self.angles_of(side, p)?;
        Ok(Pixel::new(self.psi_u.eval(a.gamma)?, self.psi_v.eval(a.beta)?))
    }

    /// `H⁻¹`: rectified pixel back to the source image, by exact monotone
    /// inversion of the cubics.
    pub fn inverse_map(&self, side: CamSide, q: &Pixel) -> Result<Pixel, MapError> {
        let gamma = self.psi_u.invert(q.u)?;
        let beta = self.psi_v.invert(q.v)?;
        let b_rect = angles_to_bearing(&AngleCoords { beta, gamma });
        let b = self.rotation(side) * b_rect;
        Ok(self.camera(side).bearing_to_pixel(&UnitVector3::new_normalize(b))?)
    }

    /// Both projections monotone and the mapped range inside the output image.
    pub fn validate(&self, n_control_points: usize) -> Result<(), MapError> {
        for (name, psi, limit) in [
            ("psi_u", &self.psi_u, self.out_width as f64),
            ("psi_v", &self.psi_v, self.out_height as f64),
        ] {
            if !psi.is_monotone(n_control_points) {
                return Err(MapError::ModelFile(format!("{name} is not monotone")));
            }
            let (lo, hi) = psi.range();
            if lo < -1e-6 || hi > limit + 1e-6 {
                return Err(MapError::ModelFile(format!(
                    "{name} range [{lo:.3}, {hi:.3}] exceeds [0, {limit}]"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        let file = ModelFile {
            r1: self.rotations.r1.transpose().as_slice().to_vec(),
            r2: self.rotations.r2.transpose().as_slice().to_vec(),
            cu: self.psi_u.c,
            cv: self.psi_v.c,
            theta_half_u_deg: self.psi_u.theta_half.to_degrees(),
            theta_half_v_deg: self.psi_v.theta_half.to_degrees(),
            out_width: self.out_width,
            out_height: self.out_height,
            cam1: serde_json::from_str(&self.cam1.to_json())
                .map_err(|e| MapError::ModelFile(e.to_string()))?,
            cam2: serde_json::from_str(&self.cam2.to_json())
                .map_err(|e| MapError::ModelFile(e.to_string()))?,
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| MapError::ModelFile(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| MapError::ModelFile(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let text = fs::read_to_string(path)
            .map_err(|e| MapError::ModelFile(format!("{}: {e}", path.display())))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| MapError::ModelFile(e.to_string()))?;
        if file.r1.len() != 9 || file.r2.len() != 9 {
            return Err(MapError::ModelFile("rotations must have 9 entries".into()));
        }
        let model = Self {
            rotations: RectifyingRotations {
                r1: Matrix3::from_row_slice(&file.r1),
                r2: Matrix3::from_row_slice(&file.r2),
            },
            psi_u: CubicProjection::new(file.cu, file.theta_half_u_deg.to_radians()),
            psi_v: CubicProjection::new(file.cv, file.theta_half_v_deg.to_radians()),
            cam1: CameraModel::from_json(&file.cam1.to_string())
                .map_err(|e| MapError::ModelFile(e.to_string()))?,
            cam2: CameraModel::from_json(&file.cam2.to_string())
                .map_err(|e| MapError::ModelFile(e.to_string()))?,
            out_width: file.out_width,
            out_height: file.out_height,
        };
        model.validate(33)?;
        Ok(model)
    }
}

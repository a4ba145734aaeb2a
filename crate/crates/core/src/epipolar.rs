//! Essential-matrix machinery: the double-rotation parametrization
//! `E = R2·[e]×·R1ᵀ` with `e = (1,0,0)ᵀ`, rectifying rotations derived from a
//! relative pose, construction and verification of the multiplier pairs that
//! preserve the canonical epipolar form, and a linear relative-pose estimator
//! with RANSAC.

use crate::camera::{CameraError, CameraModel, Pixel};
use nalgebra::{Matrix2, Matrix3, RowVector2, UnitVector3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpipolarError {
    /// Translation direction numerically zero; no baseline to rectify about.
    #[error("degenerate pose: translation direction norm below 1e-12")]
    DegeneratePose,
    /// Multiplier-pair construction received singular inputs.
    #[error("singular input: {0}")]
    SingularInput(String),
    #[error("need at least {need} correspondences, got {got}")]
    InsufficientCorrespondences { got: usize, need: usize },
    /// RANSAC found no model with the required inlier ratio.
    #[error("no consensus: best inlier ratio {best_ratio:.3} below {required:.3}")]
    NoConsensus { best_ratio: f64, required: f64 },
    #[error("rotation matrix not orthonormal (defect {0:.3e})")]
    NotARotation(f64),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("pose file error: {0}")]
    PoseFile(String),
    #[error("correspondence file error: {0}")]
    CorrsFile(String),
}

/// A matched pixel pair between the two source images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
}

impl Correspondence {
    pub fn new(p1: Pixel, p2: Pixel) -> Self {
        Self {
            u1: p1.u,
            v1: p1.v,
            u2: p2.u,
            v2: p2.v,
        }
    }

    pub fn p1(&self) -> Pixel {
        Pixel::new(self.u1, self.v1)
    }

    pub fn p2(&self) -> Pixel {
        Pixel::new(self.u2, self.v2)
    }
}

/// Relative pose of camera 2 with respect to camera 1.
///
/// `rotation` maps camera-2-frame coordinates into the camera-1 frame;
/// `translation_dir` points from the camera-1 center to the camera-2 center,
/// expressed in the camera-1 frame; `baseline` is the metric center distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation_dir: UnitVector3<f64>,
    pub baseline: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    /// Row-major 3x3 rotation.
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: [f64; 3],
    baseline: f64,
}

fn orthonormality_defect(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    gram.norm().max((m.determinant() - 1.0).abs())
}

impl RelativePose {
    pub fn new(
        rotation: Matrix3<f64>,
        translation_dir: Vector3<f64>,
        baseline: f64,
    ) -> Result<Self, EpipolarError> {
        let defect = orthonormality_defect(&rotation);
        if defect > 1e-10 {
            return Err(EpipolarError::NotARotation(defect));
        }
        if translation_dir.norm() < 1e-12 {
            return Err(EpipolarError::DegeneratePose);
        }
        Ok(Self {
            rotation,
            translation_dir: UnitVector3::new_normalize(translation_dir),
            baseline,
        })
    }

    /// Essential matrix of this pose in the bearing-vector constraint
    /// `b2ᵀ·E·b1 = 0`.
    pub fn essential(&self) -> EssentialMatrix {
        EssentialMatrix(self.rotation.transpose() * cross_matrix(&self.translation_dir))
    }

    pub fn save(&self, path: &Path) -> Result<(), EpipolarError> {
        let file = PoseFile {
            r: self.rotation.transpose().as_slice().to_vec(),
            t: [
                self.translation_dir.x,
                self.translation_dir.y,
                self.translation_dir.z,
            ],
            baseline: self.baseline,
        };
        let text =
            serde_json::to_string_pretty(&file).map_err(|e| EpipolarError::PoseFile(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| EpipolarError::PoseFile(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EpipolarError> {
        let text = fs::read_to_string(path)
            .map_err(|e| EpipolarError::PoseFile(format!("{}: {e}", path.display())))?;
        let file: PoseFile =
            serde_json::from_str(&text).map_err(|e| EpipolarError::PoseFile(e.to_string()))?;
        if file.r.len() != 9 {
            return Err(EpipolarError::PoseFile("R must have 9 entries".into()));
        }
        // nalgebra's from_row_slice wants the row-major layout we store.
        let rotation = Matrix3::from_row_slice(&file.r);
        Self::new(rotation, Vector3::from(file.t), file.baseline)
    }
}

/// Rotations applied (transposed) to camera-1 and camera-2 bearing vectors to
/// reach the canonical configuration whose fundamental form is `[e]×`.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifyingRotations {
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Canonical epipole direction `e = (1,0,0)ᵀ` as a cross matrix.
pub fn canonical_epipolar_form() -> Matrix3<f64> {
    cross_matrix(&Vector3::x())
}

/// Essential matrix, defined up to scale; rank 2 with two equal singular
/// values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Matrix3<f64>);

impl EssentialMatrix {
    /// Singular values sorted descending.
    pub fn singular_values(&self) -> [f64; 3] {
        let svd = self.0.svd(false, false);
        let mut s = [
            svd.singular_values[0],
            svd.singular_values[1],
            svd.singular_values[2],
        ];
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    /// Angular epipolar residual of a bearing pair, in radians: mean angle
    /// between each bearing and the epipolar plane induced by the other view.
    pub fn angular_residual(&self, b1: &Vector3<f64>, b2: &Vector3<f64>) -> f64 {
        let n2 = self.0 * b1;
        let n1 = self.0.transpose() * b2;
        let val = (b2.dot(&n2)).abs();
        let d2 = n2.norm();
        let d1 = n1.norm();
        if d1 < 1e-300 || d2 < 1e-300 {
            return f64::INFINITY;
        }
        0.5 * (val / d2 + val / d1)
    }
}

/// `E = R2·[e]×·R1ᵀ` with `e = (1,0,0)ᵀ`.
///
/// Any common rotation about the baseline axis applied to both cameras
/// (right-multiplying `R1` and `R2`) leaves the result unchanged.
pub fn essential_from_rotations(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> EssentialMatrix {
    EssentialMatrix(r2 * canonical_epipolar_form() * r1.transpose())
}

/// Compute rectifying rotations from a relative pose.
///
/// The new X axis is the baseline direction; the free rotation about it is
/// fixed by keeping the common optical axis as close as possible to the mean
/// of the two original optical axes.
pub fn rectifying_rotations(pose: &RelativePose) -> Result<RectifyingRotations, EpipolarError> {
    let x_new = pose.translation_dir.into_inner();
    if x_new.norm() < 1e-12 {
        return Err(EpipolarError::DegeneratePose);
    }

    let z1 = Vector3::z();
    let z2 = pose.rotation * Vector3::z();
    let z_avg = (z1 + z2).normalize();

    let mut z_new = z_avg - x_new * z_avg.dot(&x_new);
    if z_new.norm() < 1e-9 {
        // Baseline parallel to the mean optical axis; pick any perpendicular.
        let aux = if x_new.y.abs() < 0.9 {
            Vector3::y()
        } else {
            Vector3::z()
        };
        z_new = aux - x_new * aux.dot(&x_new);
    }
    let z_new = z_new.normalize();
    let y_new = z_new.cross(&x_new);

    let r1 = Matrix3::from_columns(&[x_new, y_new, z_new]);
    let r2 = pose.rotation.transpose() * r1;
    Ok(RectifyingRotations { r1, r2 })
}

/// Build a Theorem-1 transformation pair
///
/// ```text
/// A  = | a11  row  |      A' = | a11p  rowp    |
///      |  0   A2   |           |  0    λ·A2    |
/// ```
///
/// which preserves the canonical epipolar form up to the scale `λ·det(A2)`.
#[derive(Debug, Clone)]
pub struct MultiplierPair {
    pub a: Matrix3<f64>,
    pub a_prime: Matrix3<f64>,
    pub lambda: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn make_multiplier_pair(
    a11: f64,
    a1_row: RowVector2<f64>,
    a2_block: Matrix2<f64>,
    a11p: f64,
    a1p_row: RowVector2<f64>,
    lambda: f64,
) -> Result<MultiplierPair, EpipolarError> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(EpipolarError::SingularInput("lambda must be nonzero".into()));
    }
    let det2 = a2_block.determinant();
    if det2.abs() < 1e-12 {
        return Err(EpipolarError::SingularInput(
            "lower-right 2x2 block is singular".into(),
        ));
    }
    if a11.abs() < 1e-12 || a11p.abs() < 1e-12 {
        // With the zero pattern below, det(A) = a11·det(A2).
        return Err(EpipolarError::SingularInput(
            "leading entry makes the matrix singular".into(),
        ));
    }
    let mut a = Matrix3::zeros();
    a[(0, 0)] = a11;
    a[(0, 1)] = a1_row[0];
    a[(0, 2)] = a1_row[1];
    let mut a_prime = Matrix3::zeros();
    a_prime[(0, 0)] = a11p;
    a_prime[(0, 1)] = a1p_row[0];
    a_prime[(0, 2)] = a1p_row[1];
    for r in 0..2 {
        for c in 0..2 {
            a[(r + 1, c + 1)] = a2_block[(r, c)];
            a_prime[(r + 1, c + 1)] = lambda * a2_block[(r, c)];
        }
    }
    Ok(MultiplierPair { a, a_prime, lambda })
}

/// Frobenius residual of `(A')ᵀ·[e]×·A / s` against `[e]×`, where `s` is the
/// least-squares proportionality factor. Zero means the pair preserves the
/// canonical epipolar form up to scale.
pub fn verify_multiplier_pair(a: &Matrix3<f64>, a_prime: &Matrix3<f64>) -> f64 {
    let e = canonical_epipolar_form();
    let m = a_prime.transpose() * e * a;
    // <M, [e]x>_F / ||[e]x||^2_F
    let s = (m[(2, 1)] - m[(1, 2)]) / 2.0;
    if s.abs() < 1e-300 {
        return f64::INFINITY;
    }
    (m / s - e).norm()
}

/// RANSAC settings for relative pose estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Angular inlier threshold in radians.
    pub threshold: f64,
    pub seed: u64,
    /// Required inlier fraction for consensus.
    pub min_inlier_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold: 1e-3,
            seed: 0,
            min_inlier_ratio: 0.5,
        }
    }
}

/// Relative pose plus the supporting evidence from RANSAC.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub pose: RelativePose,
    pub inliers: Vec<usize>,
    pub mean_angular_residual: f64,
}

const MIN_CORRESPONDENCES: usize = 8;

/// Estimate the relative pose from pixel correspondences.
///
/// Linear (8+ point) essential estimation on bearing vectors inside RANSAC
/// with an angular residual; the translation sign is fixed by cheirality and
/// the baseline defaults to 1.
pub fn estimate_relative_pose(
    corrs: &[Correspondence],
    cam1: &CameraModel,
    cam2: &CameraModel,
    ransac: &RansacConfig,
) -> Result<PoseEstimate, EpipolarError> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(EpipolarError::InsufficientCorrespondences {
            got: corrs.len(),
            need: MIN_CORRESPONDENCES,
        });
    }
    let mut pairs = Vec::with_capacity(corrs.len());
    for c in corrs {
        let b1 = cam1.pixel_to_bearing(&c.p1())?;
        let b2 = cam2.pixel_to_bearing(&c.p2())?;
        pairs.push((b1.into_inner(), b2.into_inner()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ransac.seed);
    let mut best: Option<(usize, f64, EssentialMatrix)> = None;

    for _ in 0..ransac.iterations {
        let idx = sample(&mut rng, pairs.len(), MIN_CORRESPONDENCES);
        let subset: Vec<(Vector3<f64>, Vector3<f64>)> =
            idx.iter().map(|i| pairs[i]).collect();
        let Some(e) = linear_essential(&subset) else {
            continue;
        };
        let mut inliers = 0usize;
        let mut residual_sum = 0.0;
        for (b1, b2) in &pairs {
            let r = e.angular_residual(b1, b2);
            if r < ransac.threshold {
                inliers += 1;
                residual_sum += r;
            }
        }
        if inliers == 0 {
            continue;
        }
        let mean_res = residual_sum / inliers as f64;
        let better = match &best {
            None => true,
            Some((bi, br, _)) => inliers > *bi || (inliers == *bi && mean_res < *br),
        };
        if better {
            best = Some((inliers, mean_res, e));
        }
    }

    let Some((best_inliers, _, best_e)) = best else {
        return Err(EpipolarError::NoConsensus {
            best_ratio: 0.0,
            required: ransac.min_inlier_ratio,
        });
    };
    let ratio = best_inliers as f64 / pairs.len() as f64;
    if ratio < ransac.min_inlier_ratio {
        return Err(EpipolarError::NoConsensus {
            best_ratio: ratio,
            required: ransac.min_inlier_ratio,
        });
    }

    // Refit on the consensus set, then reclassify.
    let inlier_pairs: Vec<(Vector3<f64>, Vector3<f64>)> = pairs
        .iter()
        .filter(|(b1, b2)| best_e.angular_residual(b1, b2) < ransac.threshold)
        .copied()
        .collect();
    let e = linear_essential(&inlier_pairs).unwrap_or(best_e);

    let mut inliers = Vec::new();
    let mut residual_sum = 0.0;
    for (i, (b1, b2)) in pairs.iter().enumerate() {
        let r = e.angular_residual(b1, b2);
        if r < ransac.threshold {
            inliers.push(i);
            residual_sum += r;
        }
    }
    if (inliers.len() as f64) < ransac.min_inlier_ratio * pairs.len() as f64 {
        return Err(EpipolarError::NoConsensus {
            best_ratio: inliers.len() as f64 / pairs.len() as f64,
            required: ransac.min_inlier_ratio,
        });
    }

    let support: Vec<(Vector3<f64>, Vector3<f64>)> =
        inliers.iter().map(|&i| pairs[i]).collect();
    let pose = decompose_essential(&e, &support)?;
    Ok(PoseEstimate {
        mean_angular_residual: residual_sum / inliers.len() as f64,
        pose,
        inliers,
    })
}

/// Least-squares essential matrix from `b2ᵀ·E·b1 = 0`, projected onto the
/// essential manifold (singular values {1,1,0}).
fn linear_essential(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Option<EssentialMatrix> {
    if pairs.len() < MIN_CORRESPONDENCES {
        return None;
    }
    // Normal matrix of the design system; 9x9 eigen problem.
    let mut ata = nalgebra::SMatrix::<f64, 9, 9>::zeros();
    for (b1, b2) in pairs {
        let mut row = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                row[3 * r + c] = b2[r] * b1[c];
            }
        }
        for i in 0..9 {
            for j in 0..9 {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    let eig = ata.symmetric_eigen();
    let min_idx = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .map(|(i, _)| i)?;
    let v = eig.eigenvectors.column(min_idx);
    let raw = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);

    let svd = raw.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let proj = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t;
    Some(EssentialMatrix(proj))
}

/// Split `E ≅ [t']×·R'` (convention `P₂ = R'·P₁ + t'`) into the four candidate
/// poses and keep the one with the most triangulated points in front of both
/// cameras.
fn decompose_essential(
    e: &EssentialMatrix,
    pairs: &[(Vector3<f64>, Vector3<f64>)],
) -> Result<RelativePose, EpipolarError> {
    let svd = e.0.svd(true, true);
    let u = svd.u.ok_or(EpipolarError::SingularInput("SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or(EpipolarError::SingularInput("SVD failed".into()))?;
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);

    let fix = |m: Matrix3<f64>| if m.determinant() < 0.0 { -m } else { m };
    let r_a = fix(u * w * v_t);
    let r_b = fix(u * w.transpose() * v_t);
    let t = u.column(2).into_owned();

    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for r_prime in [r_a, r_b] {
        for t_prime in [t, -t] {
            let mut front = 0usize;
            for (b1, b2) in pairs.iter().take(200) {
                if let Some((z1, z2)) = triangulate_depths(&r_prime, &t_prime, b1, b2) {
                    if z1 > 0.0 && z2 > 0.0 {
                        front += 1;
                    }
                }
            }
            if best.as_ref().map_or(true, |(f, _, _)| front > *f) {
                best = Some((front, r_prime, t_prime));
            }
        }
    }
    let (_, r_prime, t_prime) = best.expect("four candidates evaluated");

    // Convert from P2 = R'·P1 + t' to our camera-2-relative-to-camera-1 pose.
    let rotation = r_prime.transpose();
    let center2 = -(r_prime.transpose() * t_prime);
    RelativePose::new(rotation, center2, 1.0)
}

/// Depths along both rays for `z₂·b₂ = R'·(z₁·b₁) + t'`, by 3x2 least squares.
fn triangulate_depths(
    r_prime: &Matrix3<f64>,
    t_prime: &Vector3<f64>,
    b1: &Vector3<f64>,
    b2: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let a1 = -(r_prime * b1);
    // Normal equations of [a1 b2]·[z1 z2]ᵀ = t'.
    let g = Matrix2::new(a1.dot(&a1), a1.dot(b2), a1.dot(b2), b2.dot(b2));
    let rhs = Vector2::new(a1.dot(t_prime), b2.dot(t_prime));
    let inv = g.try_inverse()?;
    let z = inv * rhs;
    Some((z[0], z[1]))
}

/// Read a `u1,v1,u2,v2` CSV correspondence file.
pub fn load_correspondences(path: &Path) -> Result<Vec<Correspondence>, EpipolarError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| EpipolarError::CorrsFile(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.deserialize() {
        let c: Correspondence = record.map_err(|e| EpipolarError::CorrsFile(e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}

/// Write a `u1,v1,u2,v2` CSV correspondence file.
pub fn save_correspondences(path: &Path, corrs: &[Correspondence]) -> Result<(), EpipolarError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| EpipolarError::CorrsFile(e.to_string()))?;
    for c in corrs {
        writer
            .serialize(c)
            .map_err(|e| EpipolarError::CorrsFile(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| EpipolarError::CorrsFile(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        Rotation3::from_axis_angle(&UnitVector3::new_normalize(axis), angle).into_inner()
    }

    fn x_rotation(angle: f64) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::x_axis(), angle).into_inner()
    }

    #[test]
    fn identity_rotations_give_canonical_form() {
        let e = essential_from_rotations(&Matrix3::identity(), &Matrix3::identity());
        assert_relative_eq!(e.0, canonical_epipolar_form(), epsilon = 1e-15);
    }

    #[test]
    fn common_x_rotation_leaves_essential_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r1 = random_rotation(&mut rng);
            let r2 = random_rotation(&mut rng);
            let rx = x_rotation(rng.random_range(-3.0..3.0));
            let e = essential_from_rotations(&r1, &r2);
            let e_rot = essential_from_rotations(&(r1 * rx), &(r2 * rx));
            assert!((e.0 - e_rot.0).norm() < 1e-12);
        }
        // The special case from the canonical setup: a shared X rotation
        // applied to identity cameras reproduces [e]x exactly.
        let r = x_rotation(0.7);
        let e = essential_from_rotations(&r, &r);
        assert_relative_eq!(e.0, canonical_epipolar_form(), epsilon = 1e-15);
    }

    #[test]
    fn constructed_essential_has_equal_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let e = essential_from_rotations(&random_rotation(&mut rng), &random_rotation(&mut rng));
            let s = e.singular_values();
            assert_relative_eq!(s[0], 1.0, epsilon = 1e-10);
            assert_relative_eq!(s[1], 1.0, epsilon = 1e-10);
            assert!(s[2].abs() < 1e-10);
        }
    }

    #[test]
    fn rectifying_rotations_canonical_pose_is_identity() {
        let pose = RelativePose::new(Matrix3::identity(), Vector3::x(), 1.0).unwrap();
        let rr = rectifying_rotations(&pose).unwrap();
        assert_relative_eq!(rr.r1, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(rr.r2, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn rectifying_rotations_forward_baseline() {
        let pose = RelativePose::new(Matrix3::identity(), Vector3::z(), 1.0).unwrap();
        let rr = rectifying_rotations(&pose).unwrap();
        let mapped = rr.r1.transpose() * Vector3::z();
        assert_relative_eq!(mapped, Vector3::x(), epsilon = 1e-12);
        assert!(orthonormality_defect(&rr.r1) < 1e-12);
        assert!(orthonormality_defect(&rr.r2) < 1e-12);
    }

    #[test]
    fn rectifying_rotations_align_synthetic_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rot = Rotation3::from_euler_angles(0.02, -0.05, 0.01).into_inner();
        let tdir = Vector3::new(0.9, 0.1, -0.2).normalize();
        let pose = RelativePose::new(rot, tdir, 0.5).unwrap();
        let rr = rectifying_rotations(&pose).unwrap();
        assert_relative_eq!(rr.r1.transpose() * tdir, Vector3::x(), epsilon = 1e-10);

        let e = canonical_epipolar_form();
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(2.0..8.0),
            );
            let b1 = p.normalize();
            let b2 = (rot.transpose() * (p - tdir * 0.5)).normalize();
            let res = (rr.r2.transpose() * b2).dot(&(e * (rr.r1.transpose() * b1)));
            assert!(res.abs() < 1e-10, "residual {res}");
        }
    }

    #[test]
    fn multiplier_pair_identity() {
        let pair = make_multiplier_pair(
            1.0,
            RowVector2::zeros(),
            Matrix2::identity(),
            1.0,
            RowVector2::zeros(),
            1.0,
        )
        .unwrap();
        assert_eq!(pair.a, Matrix3::identity());
        assert_eq!(pair.a_prime, Matrix3::identity());
        assert!(verify_multiplier_pair(&pair.a, &pair.a_prime) < 1e-15);
    }

    #[test]
    fn multiplier_pair_rotation_block() {
        let (s, c) = 30f64.to_radians().sin_cos();
        let block = Matrix2::new(c, -s, s, c);
        let pair = make_multiplier_pair(
            2.0,
            RowVector2::new(0.3, -0.1),
            block,
            1.5,
            RowVector2::new(-0.2, 0.4),
            1.0,
        )
        .unwrap();
        assert!(verify_multiplier_pair(&pair.a, &pair.a_prime) < 1e-12);
    }

    #[test]
    fn multiplier_pair_rejects_zero_lambda() {
        let err = make_multiplier_pair(
            1.0,
            RowVector2::zeros(),
            Matrix2::identity(),
            1.0,
            RowVector2::zeros(),
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, EpipolarError::SingularInput(_)));
    }

    #[test]
    fn random_valid_pairs_have_tiny_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let block = Matrix2::<f64>::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            if block.determinant().abs() < 0.05 {
                continue;
            }
            let pair = make_multiplier_pair(
                rng.random_range(0.5..2.0),
                RowVector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                block,
                rng.random_range(0.5..2.0),
                RowVector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                rng.random_range(0.1..3.0),
            )
            .unwrap();
            assert!(verify_multiplier_pair(&pair.a, &pair.a_prime) < 1e-9);
        }
    }

    #[test]
    fn unstructured_pairs_have_large_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut dense = || {
            let mut m = Matrix3::zeros();
            for r in 0..3 {
                for c in 0..3 {
                    m[(r, c)] = rng.random_range(-1.0..1.0);
                }
            }
            m
        };
        for _ in 0..1000 {
            let a = dense();
            let a_prime = dense();
            assert!(verify_multiplier_pair(&a, &a_prime) > 1e-3);
        }
    }

    fn synthetic_correspondences(
        cam: &CameraModel,
        pose: &RelativePose,
        n: usize,
        noise_px: f64,
        seed: u64,
    ) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(2.0..10.0),
            );
            let b1 = UnitVector3::new_normalize(p);
            let b2 = UnitVector3::new_normalize(
                pose.rotation.transpose() * (p - pose.translation_dir.into_inner() * pose.baseline),
            );
            let (Ok(mut p1), Ok(mut p2)) = (cam.bearing_to_pixel(&b1), cam.bearing_to_pixel(&b2))
            else {
                continue;
            };
            if noise_px > 0.0 {
                use rand_distr::{Distribution, Normal};
                let normal = Normal::new(0.0, noise_px).unwrap();
                p1.u += normal.sample(&mut rng);
                p1.v += normal.sample(&mut rng);
                p2.u += normal.sample(&mut rng);
                p2.v += normal.sample(&mut rng);
            }
            if !cam.contains(&p1) || !cam.contains(&p2) {
                continue;
            }
            out.push(Correspondence::new(p1, p2));
        }
        out
    }

    fn test_camera() -> CameraModel {
        CameraModel::equidistant(
            229.2,
            Pixel::new(320.0, 240.0),
            640,
            480,
            160f64.to_radians(),
        )
        .unwrap()
    }

    #[test]
    fn pose_recovered_from_exact_correspondences() {
        let cam = test_camera();
        let pose = RelativePose::new(Matrix3::identity(), Vector3::x(), 1.0).unwrap();
        let corrs = synthetic_correspondences(&cam, &pose, 200, 0.0, 8);
        let est = estimate_relative_pose(&corrs, &cam, &cam, &RansacConfig::default()).unwrap();

        let angle = Rotation3::from_matrix_unchecked(est.pose.rotation).angle();
        assert!(angle < 1e-6, "rotation error {angle}");
        let dir_err = est
            .pose
            .translation_dir
            .angle(&UnitVector3::new_normalize(Vector3::x()));
        assert!(dir_err < 1e-6, "direction error {dir_err}");
        assert!(est.inliers.len() >= 190);
    }

    #[test]
    fn pose_recovered_with_rotation() {
        let cam = test_camera();
        let rot = Rotation3::from_euler_angles(0.01, 0.05, -0.02).into_inner();
        let pose = RelativePose::new(rot, Vector3::new(0.95, 0.05, 0.1), 1.0).unwrap();
        let corrs = synthetic_correspondences(&cam, &pose, 200, 0.0, 9);
        let est = estimate_relative_pose(&corrs, &cam, &cam, &RansacConfig::default()).unwrap();

        let rot_err =
            Rotation3::from_matrix_unchecked(est.pose.rotation.transpose() * pose.rotation).angle();
        assert!(rot_err < 1e-6, "rotation error {rot_err}");
        let dir_err = est.pose.translation_dir.angle(&pose.translation_dir);
        assert!(dir_err < 1e-6, "direction error {dir_err}");
    }

    #[test]
    fn pose_recovered_with_noise() {
        let cam = test_camera();
        let pose = RelativePose::new(Matrix3::identity(), Vector3::x(), 1.0).unwrap();
        let corrs = synthetic_correspondences(&cam, &pose, 200, 0.5, 10);
        let ransac = RansacConfig {
            threshold: 6e-3,
            ..RansacConfig::default()
        };
        let est = estimate_relative_pose(&corrs, &cam, &cam, &ransac).unwrap();
        let dir_err = est.pose.translation_dir.angle(&pose.translation_dir);
        assert!(dir_err < 0.5f64.to_radians(), "direction error {dir_err}");
    }

    #[test]
    fn too_few_correspondences() {
        let cam = test_camera();
        let pose = RelativePose::new(Matrix3::identity(), Vector3::x(), 1.0).unwrap();
        let corrs = synthetic_correspondences(&cam, &pose, 7, 0.0, 11);
        let err = estimate_relative_pose(&corrs, &cam, &cam, &RansacConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            EpipolarError::InsufficientCorrespondences { got: 7, need: 8 }
        ));
    }

    #[test]
    fn pose_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.json");
        let rot = Rotation3::from_euler_angles(0.1, -0.2, 0.05).into_inner();
        let pose = RelativePose::new(rot, Vector3::new(0.8, 0.1, 0.2), 0.37).unwrap();
        pose.save(&path).unwrap();
        let loaded = RelativePose::load(&path).unwrap();
        assert!((loaded.rotation - pose.rotation).norm() < 1e-12);
        assert!(loaded.translation_dir.angle(&pose.translation_dir) < 1e-12);
        assert_relative_eq!(loaded.baseline, 0.37);
    }

    #[test]
    fn correspondence_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corrs.csv");
        let corrs = vec![
            Correspondence::new(Pixel::new(1.5, 2.25), Pixel::new(3.0, 2.25)),
            Correspondence::new(Pixel::new(100.0, 50.5), Pixel::new(90.0, 50.5)),
        ];
        save_correspondences(&path, &corrs).unwrap();
        let loaded = load_correspondences(&path).unwrap();
        assert_eq!(loaded, corrs);
    }
}

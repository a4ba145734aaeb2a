//! Resampling-distortion measurement.
//!
//! A unit rectangle around a source pixel maps to an approximate
//! parallelogram in the rectified image with sides `w1 = ∂(û,v̂)/∂u` and
//! `w2 = ∂(û,v̂)/∂v`. Three losses penalize its deformation: change of area
//! `(S-1)²` with `S = |w1×w2|`, change of aspect ratio `(|w1|-|w2|)²`, and
//! skew `(w1ᵀw2)²`. The total over an image is the weighted sum over a fixed
//! grid of sample pixels.

use crate::camera::Pixel;
use crate::rectmodel::MapError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistortionError {
    /// A finite-difference stencil point left the field of view.
    #[error("stencil outside the mappable region: {0}")]
    Stencil(#[from] MapError),
    #[error("margins leave no sampling area")]
    InvalidMargin,
    #[error("all {0} samples were skipped")]
    AllSamplesSkipped(usize),
}

/// Columns of the local Jacobian of the rectification map, in pixels per
/// pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianColumns {
    /// `(∂û/∂u, ∂v̂/∂u)`
    pub w1: [f64; 2],
    /// `(∂û/∂v, ∂v̂/∂v)`
    pub w2: [f64; 2],
}

/// Weights balancing the ratio and skew losses against the area loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for DistortionWeights {
    fn default() -> Self {
        // Empirical weights used for every experiment.
        Self {
            alpha1: 0.5,
            alpha2: 0.5,
        }
    }
}

/// Per-sample loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleLoss {
    pub u: f64,
    pub v: f64,
    pub l_area: f64,
    pub l_ratio: f64,
    pub l_skew: f64,
}

/// Distortion of an image under a rectification map, as an unnormalized sum
/// over sample pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    pub total: f64,
    pub sum_area: f64,
    pub sum_ratio: f64,
    pub sum_skew: f64,
    /// Samples that contributed to the sums.
    pub n_samples: usize,
    /// Samples skipped because their stencil left the mappable region.
    pub n_skipped: usize,
    pub weights: DistortionWeights,
    pub samples: Option<Vec<SampleLoss>>,
}

impl DistortionReport {
    /// Mean per-sample loss, for cross-image comparability.
    pub fn mean(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            self.total / self.n_samples as f64
        }
    }

    /// CSV with one `u,v,l_area,l_ratio,l_skew` row per sample and a trailing
    /// summary comment line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,v,l_area,l_ratio,l_skew\n");
        if let Some(samples) = &self.samples {
            for s in samples {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.u, s.v, s.l_area, s.l_ratio, s.l_skew
                ));
            }
        }
        out.push_str(&format!(
            "# summary: n={} skipped={} sum_area={} sum_ratio={} sum_skew={} alpha1={} alpha2={} total={}\n",
            self.n_samples,
            self.n_skipped,
            self.sum_area,
            self.sum_ratio,
            self.sum_skew,
            self.weights.alpha1,
            self.weights.alpha2,
            self.total
        ));
        out
    }
}

/// Central-difference Jacobian of `map` at `p` with step `h` pixels.
pub fn local_jacobian<F>(map: F, p: &Pixel, h: f64) -> Result<JacobianColumns, DistortionError>
where
    F: Fn(&Pixel) -> Result<Pixel, MapError>,
{
    assert!(h > 0.0);
    let right = map(&Pixel::new(p.u + h, p.v))?;
    let left = map(&Pixel::new(p.u - h, p.v))?;
    let down = map(&Pixel::new(p.u, p.v + h))?;
    let up = map(&Pixel::new(p.u, p.v - h))?;
    let inv = 1.0 / (2.0 * h);
    Ok(JacobianColumns {
        w1: [(right.u - left.u) * inv, (right.v - left.v) * inv],
        w2: [(down.u - up.u) * inv, (down.v - up.v) * inv],
    })
}

/// The three per-sample losses `(l_area, l_ratio, l_skew)`.
pub fn sample_losses(j: &JacobianColumns) -> (f64, f64, f64) {
    let area = (j.w1[0] * j.w2[1] - j.w2[0] * j.w1[1]).abs();
    let n1 = j.w1[0].hypot(j.w1[1]);
    let n2 = j.w2[0].hypot(j.w2[1]);
    let dot = j.w1[0] * j.w2[0] + j.w1[1] * j.w2[1];
    let l_area = (area - 1.0) * (area - 1.0);
    let l_ratio = (n1 - n2) * (n1 - n2);
    let l_skew = dot * dot;
    (l_area, l_ratio, l_skew)
}

/// Deterministic ~`√n`×`√n` grid of sample pixels inside the margins,
/// truncated to `n` points in row-major order.
pub fn select_samples(
    width: u32,
    height: u32,
    n: usize,
    margin: f64,
) -> Result<Vec<Pixel>, DistortionError> {
    assert!(n >= 4);
    let w = width as f64;
    let h = height as f64;
    if w - 2.0 * margin <= 0.0 || h - 2.0 * margin <= 0.0 {
        return Err(DistortionError::InvalidMargin);
    }
    let k = (n as f64).sqrt().ceil() as usize;
    let mut out = Vec::with_capacity(n);
    'rows: for row in 0..k {
        for col in 0..k {
            if out.len() == n {
                break 'rows;
            }
            let fx = if k == 1 { 0.5 } else { col as f64 / (k - 1) as f64 };
            let fy = if k == 1 { 0.5 } else { row as f64 / (k - 1) as f64 };
            out.push(Pixel::new(
                margin + fx * (w - 2.0 * margin),
                margin + fy * (h - 2.0 * margin),
            ));
        }
    }
    Ok(out)
}

/// Weighted distortion total over the sample pixels. Samples whose stencil
/// leaves the mappable region are skipped and counted; accumulation follows
/// sample index order.
pub fn total_distortion<F>(
    map: F,
    samples: &[Pixel],
    weights: &DistortionWeights,
    h: f64,
    keep_samples: bool,
) -> Result<DistortionReport, DistortionError>
where
    F: Fn(&Pixel) -> Result<Pixel, MapError>,
{
    assert!(!samples.is_empty());
    let mut report = DistortionReport {
        total: 0.0,
        sum_area: 0.0,
        sum_ratio: 0.0,
        sum_skew: 0.0,
        n_samples: 0,
        n_skipped: 0,
        weights: *weights,
        samples: keep_samples.then(Vec::new),
    };
    for p in samples {
        let j = match local_jacobian(&map, p, h) {
            Ok(j) => j,
            Err(DistortionError::Stencil(_)) => {
                report.n_skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (l_area, l_ratio, l_skew) = sample_losses(&j);
        report.sum_area += l_area;
        report.sum_ratio += l_ratio;
        report.sum_skew += l_skew;
        report.n_samples += 1;
        if let Some(list) = &mut report.samples {
            list.push(SampleLoss {
                u: p.u,
                v: p.v,
                l_area,
                l_ratio,
                l_skew,
            });
        }
    }
    if report.n_samples == 0 {
        return Err(DistortionError::AllSamplesSkipped(samples.len()));
    }
    report.total =
        report.sum_area + weights.alpha1 * report.sum_ratio + weights.alpha2 * report.sum_skew;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity(p: &Pixel) -> Result<Pixel, MapError> {
        Ok(*p)
    }

    fn hscale2(p: &Pixel) -> Result<Pixel, MapError> {
        Ok(Pixel::new(2.0 * p.u, p.v))
    }

    #[test]
    fn jacobian_identity() {
        let j = local_jacobian(identity, &Pixel::new(10.0, 20.0), 0.5).unwrap();
        assert_eq!(j.w1, [1.0, 0.0]);
        assert_eq!(j.w2, [0.0, 1.0]);
    }

    #[test]
    fn jacobian_scaling_exact() {
        let j = local_jacobian(hscale2, &Pixel::new(10.0, 20.0), 0.5).unwrap();
        assert_eq!(j.w1, [2.0, 0.0]);
        assert_eq!(j.w2, [0.0, 1.0]);
    }

    #[test]
    fn jacobian_step_consistency_on_smooth_map() {
        // Smooth nonlinear map acting like a mild fisheye stretch.
        let map = |p: &Pixel| {
            let du = p.u - 320.0;
            let dv = p.v - 240.0;
            let r2 = (du * du + dv * dv) / 1e5;
            Ok(Pixel::new(320.0 + du * (1.0 + 0.2 * r2), 240.0 + dv * (1.0 - 0.1 * r2)))
        };
        let p = Pixel::new(410.0, 180.0);
        let j1 = local_jacobian(map, &p, 1e-4).unwrap();
        let j2 = local_jacobian(map, &p, 1e-5).unwrap();
        for (a, b) in j1.w1.iter().chain(&j1.w2).zip(j2.w1.iter().chain(&j2.w2)) {
            assert_relative_eq!(a, b, max_relative = 1e-3);
        }
    }

    #[test]
    fn losses_distortion_free() {
        let j = JacobianColumns {
            w1: [1.0, 0.0],
            w2: [0.0, 1.0],
        };
        assert_eq!(sample_losses(&j), (0.0, 0.0, 0.0));
    }

    #[test]
    fn losses_scaled() {
        let j = JacobianColumns {
            w1: [2.0, 0.0],
            w2: [0.0, 1.0],
        };
        assert_eq!(sample_losses(&j), (1.0, 1.0, 0.0));
    }

    #[test]
    fn losses_skewed() {
        let j = JacobianColumns {
            w1: [1.0, 0.0],
            w2: [1.0, 1.0],
        };
        let (l_area, l_ratio, l_skew) = sample_losses(&j);
        assert_relative_eq!(l_area, 0.0);
        assert_relative_eq!(l_ratio, (1.0 - 2f64.sqrt()).powi(2), epsilon = 1e-12);
        assert_relative_eq!(l_skew, 1.0);
    }

    #[test]
    fn losses_rotation_invariant() {
        let (s, c) = 0.7f64.sin_cos();
        let j = JacobianColumns {
            w1: [1.3, 0.2],
            w2: [-0.1, 0.9],
        };
        let rotated = JacobianColumns {
            w1: [c * j.w1[0] - s * j.w1[1], s * j.w1[0] + c * j.w1[1]],
            w2: [c * j.w2[0] - s * j.w2[1], s * j.w2[0] + c * j.w2[1]],
        };
        let (a0, r0, s0) = sample_losses(&j);
        let (a1, r1, s1) = sample_losses(&rotated);
        assert_relative_eq!(a0, a1, epsilon = 1e-12);
        assert_relative_eq!(r0, r1, epsilon = 1e-12);
        assert_relative_eq!(s0, s1, epsilon = 1e-12);
    }

    #[test]
    fn samples_grid_corners() {
        let samples = select_samples(100, 100, 4, 10.0).unwrap();
        assert_eq!(
            samples,
            vec![
                Pixel::new(10.0, 10.0),
                Pixel::new(90.0, 10.0),
                Pixel::new(10.0, 90.0),
                Pixel::new(90.0, 90.0),
            ]
        );
    }

    #[test]
    fn samples_deterministic() {
        let a = select_samples(640, 480, 500, 8.0).unwrap();
        let b = select_samples(640, 480, 500, 8.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
    }

    #[test]
    fn samples_invalid_margin() {
        assert!(matches!(
            select_samples(100, 100, 4, 60.0),
            Err(DistortionError::InvalidMargin)
        ));
    }

    #[test]
    fn total_identity_is_zero() {
        let samples = select_samples(640, 480, 100, 8.0).unwrap();
        let report =
            total_distortion(identity, &samples, &DistortionWeights::default(), 0.5, false)
                .unwrap();
        assert_eq!(report.total, 0.0);
        assert_eq!(report.n_samples, 100);
        assert_eq!(report.n_skipped, 0);
    }

    #[test]
    fn total_uniform_scale() {
        let samples = select_samples(640, 480, 100, 8.0).unwrap();
        let report =
            total_distortion(hscale2, &samples, &DistortionWeights::default(), 0.5, false)
                .unwrap();
        // per sample: 1 + 0.5*1 + 0
        assert_relative_eq!(report.total, 1.5 * 100.0, epsilon = 1e-9);
        assert_relative_eq!(report.mean(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn total_consistency_invariant() {
        let samples = select_samples(640, 480, 64, 8.0).unwrap();
        let w = DistortionWeights {
            alpha1: 0.25,
            alpha2: 0.75,
        };
        let report = total_distortion(hscale2, &samples, &w, 0.5, true).unwrap();
        assert_relative_eq!(
            report.total,
            report.sum_area + w.alpha1 * report.sum_ratio + w.alpha2 * report.sum_skew,
            epsilon = 1e-12
        );
        assert_eq!(report.samples.as_ref().unwrap().len(), report.n_samples);
    }

    #[test]
    fn skipped_samples_counted() {
        let map = |p: &Pixel| {
            if p.u > 320.0 {
                Err(MapError::DegenerateRay)
            } else {
                Ok(*p)
            }
        };
        let samples = select_samples(640, 480, 100, 8.0).unwrap();
        let report = total_distortion(map, &samples, &DistortionWeights::default(), 0.5, false)
            .unwrap();
        assert!(report.n_skipped > 0);
        assert_eq!(report.n_samples + report.n_skipped, 100);
    }

    #[test]
    fn all_skipped_is_error() {
        let map = |_: &Pixel| -> Result<Pixel, MapError> { Err(MapError::DegenerateRay) };
        let samples = select_samples(640, 480, 16, 8.0).unwrap();
        assert!(matches!(
            total_distortion(map, &samples, &DistortionWeights::default(), 0.5, false),
            Err(DistortionError::AllSamplesSkipped(16))
        ));
    }
}

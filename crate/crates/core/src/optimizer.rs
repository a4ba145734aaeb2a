//! Rectification model optimization: find the cubic coefficients minimizing
//! total resampling distortion over both images, subject to strict
//! monotonicity of the projections and the relaxed epipolar constraint.
//!
//! The rotations are fixed by the pose beforehand, so only the 8 coefficients
//! of `Psi_u`/`Psi_v` are free. The constrained problem is solved with a
//! log-barrier on the derivative-positivity control points (and on the
//! epipolar slack) driven by BFGS with finite-difference gradients; the
//! barrier weight decreases geometrically. Because the epipolar angles of a
//! pixel do not depend on the coefficients, all stencil angles are computed
//! once up front and each objective evaluation reduces to cubic arithmetic.

use crate::camera::CameraModel;
use crate::distortion::{sample_losses, select_samples, DistortionWeights, JacobianColumns};
use crate::epipolar::{rectifying_rotations, Correspondence, EpipolarError, RelativePose};
use crate::rectmodel::{CamSide, CubicProjection, MapError, RectificationModel};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    /// The initial coefficients violate monotonicity; nothing to optimize
    /// from.
    #[error("monotonicity unrecoverable: initial projection not monotone")]
    MonotonicityUnrecoverable,
    /// Residuals exceed epsilon already at initialization: the pose (or the
    /// correspondences) are inconsistent, not the model.
    #[error(
        "epipolar infeasible: max residual {max_residual:.3} px exceeds epsilon {epsilon} at init"
    )]
    EpipolarInfeasible { max_residual: f64, epsilon: f64 },
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("all distortion samples fell outside the mappable region")]
    NoUsableSamples,
}

/// Solver settings; the barrier parameters are deliberately exposed since the
/// paper reports none.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub weights: DistortionWeights,
    pub n_samples: usize,
    /// Sample-grid margin from the image border, in pixels.
    pub margin: f64,
    /// Finite-difference step of the distortion Jacobian, in pixels.
    pub fd_step: f64,
    /// Relaxed epipolar tolerance in rectified pixels.
    pub epsilon: f64,
    /// Uniform control points for the monotonicity constraint.
    pub n_control_points: usize,
    pub max_iters: usize,
    /// Initial barrier weight as a fraction of the initial loss.
    pub barrier_init_ratio: f64,
    /// Geometric decay of the barrier weight between rounds.
    pub barrier_decay: f64,
    pub barrier_rounds: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: DistortionWeights::default(),
            n_samples: 500,
            margin: 8.0,
            fd_step: 0.5,
            epsilon: 1.0,
            n_control_points: 33,
            max_iters: 500,
            barrier_init_ratio: 1e-3,
            barrier_decay: 0.2,
            barrier_rounds: 6,
            seed: 0,
        }
    }
}

/// One accepted iterate of the solver.
#[derive(Debug, Clone, Copy)]
pub struct TracePoint {
    pub iter: usize,
    /// Raw (unbarriered) distortion loss.
    pub loss: f64,
    pub barrier_weight: f64,
    pub cu: [f64; 4],
    pub cv: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub model: RectificationModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub epipolar_residual_max: f64,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
    /// Correspondences flagged out of FOV and excluded from the constraint.
    pub flagged_correspondences: usize,
}

/// Shared projection domain: half of the wider camera's field of view.
pub fn default_theta_half(cam1: &CameraModel, cam2: &CameraModel) -> f64 {
    0.5 * cam1.theta_max().max(cam2.theta_max())
}

fn scan_angles(
    cam: &CameraModel,
    rot: &nalgebra::Matrix3<f64>,
    max_gamma: &mut f64,
    max_beta: &mut f64,
) {
    let mut consider = |p: crate::camera::Pixel| {
        if !cam.contains(&p) {
            return;
        }
        let Ok(b) = cam.pixel_to_bearing(&p) else {
            return;
        };
        let Ok(a) = crate::rectmodel::bearing_to_angles(&(rot.transpose() * b.into_inner()))
        else {
            return;
        };
        *max_gamma = max_gamma.max(a.gamma.abs());
        *max_beta = max_beta.max(a.beta.abs());
    };
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let mut u = 0.0;
    while u <= w - 1.0 {
        consider(crate::camera::Pixel::new(u, 0.0));
        consider(crate::camera::Pixel::new(u, h - 1.0));
        u += 1.0;
    }
    let mut v = 0.0;
    while v <= h - 1.0 {
        consider(crate::camera::Pixel::new(0.0, v));
        consider(crate::camera::Pixel::new(w - 1.0, v));
        v += 1.0;
    }
    // FOV rim, when the circle cuts through the image rectangle
    let c = cam.center();
    let r = cam.max_radius() * (1.0 - 1e-9);
    for i in 0..1440 {
        let phi = 2.0 * std::f64::consts::PI * i as f64 / 1440.0;
        consider(crate::camera::Pixel::new(
            c.u + r * phi.cos(),
            c.v + r * phi.sin(),
        ));
    }
}

/// Fit the projection domains to the epipolar-angle ranges actually
/// attainable inside the two source images (scanning the image border and
/// the FOV rim), with a small margin for interpolation between scan points.
/// Fitting the domains keeps the image-coverage constraint from compressing
/// axes whose angular extent is narrower than the full field of view.
pub fn fitted_theta_halves(
    cam1: &CameraModel,
    cam2: &CameraModel,
    rotations: &crate::epipolar::RectifyingRotations,
) -> (f64, f64) {
    let mut max_gamma = 0.0f64;
    let mut max_beta = 0.0f64;
    scan_angles(cam1, &rotations.r1, &mut max_gamma, &mut max_beta);
    scan_angles(cam2, &rotations.r2, &mut max_gamma, &mut max_beta);
    if max_gamma <= 0.0 || max_beta <= 0.0 {
        let th = default_theta_half(cam1, cam2);
        return (th, th);
    }
    (1.02 * max_gamma, 1.02 * max_beta)
}

/// Equidistant-style initialization covering the output image exactly:
/// `c0 = dim/2`, `c1 = dim/(2·theta_half)`, higher orders zero.
pub fn initialize_coefficients(
    out_width: u32,
    out_height: u32,
    theta_half_u: f64,
    theta_half_v: f64,
) -> (CubicProjection, CubicProjection) {
    let w = out_width as f64;
    let h = out_height as f64;
    (
        CubicProjection::new([w / 2.0, w / (2.0 * theta_half_u), 0.0, 0.0], theta_half_u),
        CubicProjection::new([h / 2.0, h / (2.0 * theta_half_v), 0.0, 0.0], theta_half_v),
    )
}

/// Rectification model at the equidistant initialization (also used as the
/// fixed-model baseline).
pub fn initial_model(
    cam1: &CameraModel,
    cam2: &CameraModel,
    pose: &RelativePose,
) -> Result<RectificationModel, OptimizeError> {
    let rotations = rectifying_rotations(pose)?;
    let (th_u, th_v) = fitted_theta_halves(cam1, cam2, &rotations);
    let (out_width, out_height) = (cam1.width(), cam1.height());
    let (psi_u, psi_v) = initialize_coefficients(out_width, out_height, th_u, th_v);
    Ok(RectificationModel {
        rotations,
        psi_u,
        psi_v,
        cam1: cam1.clone(),
        cam2: cam2.clone(),
        out_width,
        out_height,
    })
}

/// Per-correspondence rectified y-disparities `|v̂1 - v̂2|`. Out-of-FOV (or
/// out-of-domain) entries are flagged as errors, not dropped.
pub fn epipolar_residuals(
    model: &RectificationModel,
    corrs: &[Correspondence],
) -> Vec<Result<f64, MapError>> {
    corrs
        .iter()
        .map(|c| {
            let a1 = model.angles_of(CamSide::Left, &c.p1())?;
            let a2 = model.angles_of(CamSide::Right, &c.p2())?;
            Ok((model.psi_v.eval(a1.beta)? - model.psi_v.eval(a2.beta)?).abs())
        })
        .collect()
}

/// Stencil angles of one distortion sample: `(gamma, beta)` for the four
/// central-difference points `+u, -u, +v, -v`.
struct StencilSample {
    gammas: [f64; 4],
    betas: [f64; 4],
}

struct CachedObjective {
    cam1_samples: Vec<StencilSample>,
    cam2_samples: Vec<StencilSample>,
    /// `(beta1, beta2)` per usable correspondence.
    corr_betas: Vec<(f64, f64)>,
    weights: DistortionWeights,
    inv_2h: f64,
    epsilon: f64,
    n_control_points: usize,
    out_width: f64,
    out_height: f64,
    theta_half_u: f64,
    theta_half_v: f64,
}

const COVERAGE_SLACK: f64 = 1e-6;

impl CachedObjective {
    fn projections(&self, x: &SVector<f64, 8>) -> (CubicProjection, CubicProjection) {
        (
            CubicProjection::new([x[0], x[1], x[2], x[3]], self.theta_half_u),
            CubicProjection::new([x[4], x[5], x[6], x[7]], self.theta_half_v),
        )
    }

    /// Distortion sum over both cameras; mirrors the arithmetic of
    /// `distortion::total_distortion` over a forward-map closure exactly.
    fn raw_loss(&self, x: &SVector<f64, 8>) -> f64 {
        let (psi_u, psi_v) = self.projections(x);
        let mut total = 0.0;
        for samples in [&self.cam1_samples, &self.cam2_samples] {
            let mut sum_area = 0.0;
            let mut sum_ratio = 0.0;
            let mut sum_skew = 0.0;
            for s in samples.iter() {
                let u: [f64; 4] = std::array::from_fn(|i| psi_u.eval_unchecked(s.gammas[i]));
                let v: [f64; 4] = std::array::from_fn(|i| psi_v.eval_unchecked(s.betas[i]));
                let j = JacobianColumns {
                    w1: [(u[0] - u[1]) * self.inv_2h, (v[0] - v[1]) * self.inv_2h],
                    w2: [(u[2] - u[3]) * self.inv_2h, (v[2] - v[3]) * self.inv_2h],
                };
                let (l_area, l_ratio, l_skew) = sample_losses(&j);
                sum_area += l_area;
                sum_ratio += l_ratio;
                sum_skew += l_skew;
            }
            total += sum_area + self.weights.alpha1 * sum_ratio + self.weights.alpha2 * sum_skew;
        }
        total
    }

    fn max_epipolar_residual(&self, psi_v: &CubicProjection) -> f64 {
        self.corr_betas
            .iter()
            .map(|(b1, b2)| (psi_v.eval_unchecked(*b1) - psi_v.eval_unchecked(*b2)).abs())
            .fold(0.0, f64::max)
    }

    fn coverage_ok(&self, psi_u: &CubicProjection, psi_v: &CubicProjection) -> bool {
        let (ulo, uhi) = psi_u.range();
        let (vlo, vhi) = psi_v.range();
        ulo >= -COVERAGE_SLACK
            && uhi <= self.out_width + COVERAGE_SLACK
            && vlo >= -COVERAGE_SLACK
            && vhi <= self.out_height + COVERAGE_SLACK
    }

    /// Strict feasibility used for iterate acceptance.
    fn feasible(&self, x: &SVector<f64, 8>) -> bool {
        let (psi_u, psi_v) = self.projections(x);
        psi_u.is_monotone(self.n_control_points)
            && psi_v.is_monotone(self.n_control_points)
            && self.coverage_ok(&psi_u, &psi_v)
            && self.max_epipolar_residual(&psi_v) <= self.epsilon
    }

    /// Log-barrier over the derivative control points and the epipolar slack;
    /// infinite outside the strictly feasible region.
    fn barrier(&self, x: &SVector<f64, 8>) -> f64 {
        let (psi_u, psi_v) = self.projections(x);
        if !self.coverage_ok(&psi_u, &psi_v) {
            return f64::INFINITY;
        }
        let mut sum = 0.0;
        let n = self.n_control_points;
        for (psi, half) in [(&psi_u, self.theta_half_u), (&psi_v, self.theta_half_v)] {
            for i in 0..n {
                let theta = -half + 2.0 * half * i as f64 / (n - 1) as f64;
                let slope = psi.derivative(theta);
                if slope <= 0.0 {
                    return f64::INFINITY;
                }
                sum -= slope.ln();
            }
        }
        for (b1, b2) in &self.corr_betas {
            let slack =
                self.epsilon - (psi_v.eval_unchecked(*b1) - psi_v.eval_unchecked(*b2)).abs();
            if slack <= 0.0 {
                return f64::INFINITY;
            }
            sum -= slack.ln();
        }
        sum
    }
}

/// Solve for the cubic coefficients. Deterministic for a fixed config.
pub fn optimize(
    cam1: &CameraModel,
    cam2: &CameraModel,
    pose: &RelativePose,
    corrs: &[Correspondence],
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult, OptimizeError> {
    let model = initial_model(cam1, cam2, pose)?;
    optimize_from(model, corrs, cfg)
}

/// Solve starting from an explicit (monotone) model; `optimize` wraps this
/// with the equidistant initialization.
pub fn optimize_from(
    init: RectificationModel,
    corrs: &[Correspondence],
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult, OptimizeError> {
    if !init.psi_u.is_monotone(cfg.n_control_points)
        || !init.psi_v.is_monotone(cfg.n_control_points)
    {
        return Err(OptimizeError::MonotonicityUnrecoverable);
    }

    let samples = select_samples(
        init.cam1.width(),
        init.cam1.height(),
        cfg.n_samples,
        cfg.margin,
    )
    .map_err(|_| OptimizeError::NoUsableSamples)?;

    // Angles are coefficient-independent; cache them once per stencil point.
    let cache_side = |side: CamSide| -> Vec<StencilSample> {
        let mut out = Vec::new();
        let h = cfg.fd_step;
        for p in &samples {
            let stencil = [
                (p.u + h, p.v),
                (p.u - h, p.v),
                (p.u, p.v + h),
                (p.u, p.v - h),
            ];
            let mut gammas = [0.0; 4];
            let mut betas = [0.0; 4];
            let mut ok = true;
            for (i, (u, v)) in stencil.iter().enumerate() {
                match init.angles_of(side, &crate::camera::Pixel::new(*u, *v)) {
                    Ok(a)
                        if init.psi_u.eval(a.gamma).is_ok()
                            && init.psi_v.eval(a.beta).is_ok() =>
                    {
                        gammas[i] = a.gamma;
                        betas[i] = a.beta;
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                out.push(StencilSample { gammas, betas });
            }
        }
        out
    };
    let cam1_samples = cache_side(CamSide::Left);
    let cam2_samples = cache_side(CamSide::Right);
    if cam1_samples.is_empty() && cam2_samples.is_empty() {
        return Err(OptimizeError::NoUsableSamples);
    }

    let mut corr_betas = Vec::with_capacity(corrs.len());
    let mut flagged = 0usize;
    for c in corrs {
        let b1 = init.angles_of(CamSide::Left, &c.p1());
        let b2 = init.angles_of(CamSide::Right, &c.p2());
        match (b1, b2) {
            (Ok(a1), Ok(a2))
                if init.psi_v.eval(a1.beta).is_ok() && init.psi_v.eval(a2.beta).is_ok() =>
            {
                corr_betas.push((a1.beta, a2.beta));
            }
            _ => flagged += 1,
        }
    }

    let objective = CachedObjective {
        cam1_samples,
        cam2_samples,
        corr_betas,
        weights: cfg.weights,
        inv_2h: 1.0 / (2.0 * cfg.fd_step),
        epsilon: cfg.epsilon,
        n_control_points: cfg.n_control_points,
        out_width: init.out_width as f64,
        out_height: init.out_height as f64,
        theta_half_u: init.psi_u.theta_half,
        theta_half_v: init.psi_v.theta_half,
    };

    let x0 =
        SVector::<f64, 8>::from_iterator(init.psi_u.c.iter().chain(init.psi_v.c.iter()).copied());
    let init_residual = objective.max_epipolar_residual(&init.psi_v);
    if init_residual > cfg.epsilon {
        return Err(OptimizeError::EpipolarInfeasible {
            max_residual: init_residual,
            epsilon: cfg.epsilon,
        });
    }

    let initial_loss = objective.raw_loss(&x0);
    let b0 = objective.barrier(&x0);
    let mut mu = cfg.barrier_init_ratio * initial_loss.max(1.0) / b0.abs().max(1.0);

    let mut x = x0;
    let mut best_x = x0;
    let mut best_loss = initial_loss;
    let mut trace = vec![TracePoint {
        iter: 0,
        loss: initial_loss,
        barrier_weight: mu,
        cu: init.psi_u.c,
        cv: init.psi_v.c,
    }];
    let mut total_iters = 0usize;
    let mut converged = false;
    // The extra round polishes at zero barrier weight, with feasibility
    // still enforced by rejection.
    let n_rounds = cfg.barrier_rounds + 1;
    let inner_budget = (cfg.max_iters / n_rounds.max(1)).max(20);

    for round in 0..n_rounds {
        let mu_round = if round == cfg.barrier_rounds { 0.0 } else { mu };
        let f = |x: &SVector<f64, 8>| -> f64 {
            let b = objective.barrier(x);
            if !b.is_finite() {
                return f64::INFINITY;
            }
            let raw = objective.raw_loss(x);
            if !raw.is_finite() {
                f64::INFINITY
            } else {
                raw + mu_round * b
            }
        };

        let mut hinv = SMatrix::<f64, 8, 8>::identity();
        let mut h_fresh = true;
        let mut fx = f(&x);
        let mut grad = fd_gradient(&f, &x);
        let mut window: Vec<f64> = vec![fx];
        let mut stagnated = false;

        for _ in 0..inner_budget {
            if total_iters >= cfg.max_iters {
                break;
            }
            let mut dir = -(hinv * grad);
            if dir.dot(&grad) >= 0.0 {
                hinv = SMatrix::identity();
                h_fresh = true;
                dir = -grad;
            }
            // Armijo backtracking; infeasible points evaluate to infinity and
            // are rejected naturally. Tiny steps fall back to plain decrease
            // since the finite-difference gradient is only approximate.
            let gd = grad.dot(&dir);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let cand = x + dir * t;
                let fc = f(&cand);
                if fc.is_finite() && (fc <= fx + 1e-4 * t * gd || (t < 1e-4 && fc < fx)) {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            let Some((x_new, f_new)) = accepted else {
                // a stale quasi-Newton direction can fail where steepest
                // descent still moves; retry once from a fresh Hessian
                if !h_fresh {
                    hinv = SMatrix::identity();
                    h_fresh = true;
                    continue;
                }
                stagnated = true;
                break;
            };
            let grad_new = fd_gradient(&f, &x_new);
            let s = x_new - x;
            let yv = grad_new - grad;
            let sy = s.dot(&yv);
            if sy > 1e-12 * s.norm() * yv.norm() {
                // BFGS inverse update
                let rho = 1.0 / sy;
                let i = SMatrix::<f64, 8, 8>::identity();
                let left = i - (s * yv.transpose()) * rho;
                let right = i - (yv * s.transpose()) * rho;
                hinv = left * hinv * right + (s * s.transpose()) * rho;
                h_fresh = false;
            }
            x = x_new;
            fx = f_new;
            grad = grad_new;
            total_iters += 1;

            let raw = objective.raw_loss(&x);
            if objective.feasible(&x) && raw < best_loss {
                best_loss = raw;
                best_x = x;
            }
            trace.push(TracePoint {
                iter: total_iters,
                loss: raw,
                barrier_weight: mu_round,
                cu: [x[0], x[1], x[2], x[3]],
                cv: [x[4], x[5], x[6], x[7]],
            });

            window.push(fx);
            if window.len() > 5 {
                window.remove(0);
                let drop = window[0] - fx;
                if drop < 1e-9 * window[0].abs().max(1e-12) {
                    stagnated = true;
                    break;
                }
            }
        }

        if round + 1 == n_rounds {
            converged = stagnated || total_iters < cfg.max_iters;
        }
        if total_iters >= cfg.max_iters {
            converged = false;
            break;
        }
        mu *= cfg.barrier_decay;
    }

    // Deterministic pattern search around the best iterate: the sampled
    // objective has a curved shallow valley (slope/curvature trade-off of
    // each cubic) that defeats quasi-Newton steps near its floor. Probes run
    // along the axes and along the paired slope/curvature directions; they
    // polish the result and are not counted as solver iterations.
    let raw_feasible = |x: &SVector<f64, 8>| -> f64 {
        if objective.feasible(x) {
            objective.raw_loss(x)
        } else {
            f64::INFINITY
        }
    };
    let mut directions: Vec<SVector<f64, 8>> = Vec::new();
    for i in 0..8 {
        let mut d = SVector::<f64, 8>::zeros();
        d[i] = 1.0;
        directions.push(d);
    }
    // c1/c3 couplings of psi_u and psi_v
    for (i, j) in [(1usize, 3usize), (5, 7)] {
        for s in [1.0, -1.0] {
            let mut d = SVector::<f64, 8>::zeros();
            d[i] = 1.0;
            d[j] = s / (objective.theta_half_u * objective.theta_half_u);
            directions.push(d);
        }
    }
    let mut trace_iter = total_iters;
    let mut scale = 0.02f64;
    while scale > 1e-7 {
        let mut sweeps = 0;
        loop {
            let mut improved = false;
            for dir in &directions {
                let step = scale * best_x.dot(dir).abs().max(1.0);
                for sign in [1.0, -1.0] {
                    let cand = best_x + dir * (sign * step);
                    let fc = raw_feasible(&cand);
                    // require real progress: the loss is constant along the
                    // offset coefficients up to rounding noise
                    if fc < best_loss * (1.0 - 1e-9) {
                        best_loss = fc;
                        best_x = cand;
                        improved = true;
                        trace_iter += 1;
                        trace.push(TracePoint {
                            iter: trace_iter,
                            loss: fc,
                            barrier_weight: 0.0,
                            cu: [cand[0], cand[1], cand[2], cand[3]],
                            cv: [cand[4], cand[5], cand[6], cand[7]],
                        });
                    }
                }
            }
            sweeps += 1;
            if !improved || sweeps >= 40 {
                break;
            }
        }
        scale *= 0.3;
    }

    let (psi_u, psi_v) = objective.projections(&best_x);
    let model = RectificationModel { psi_u, psi_v, ..init };
    let epipolar_residual_max = objective.max_epipolar_residual(&model.psi_v);

    Ok(OptimizeResult {
        model,
        initial_loss,
        final_loss: best_loss,
        iterations: total_iters,
        epipolar_residual_max,
        converged,
        trace,
        flagged_correspondences: flagged,
    })
}

/// Random feasible starting model for restart studies: the equidistant
/// initialization with seeded perturbations of the slopes and curvature,
/// rejection-sampled against monotonicity and coverage.
pub fn random_monotone_init(
    cam1: &CameraModel,
    cam2: &CameraModel,
    pose: &RelativePose,
    seed: u64,
) -> Result<RectificationModel, OptimizeError> {
    use rand::{Rng, SeedableRng};
    let base = initial_model(cam1, cam2, pose)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let mut model = base.clone();
        for psi in [&mut model.psi_u, &mut model.psi_v] {
            let th = psi.theta_half;
            let c1 = psi.c[1] * rng.random_range(0.7..0.88);
            let c2 = 0.04 * rng.random_range(-1.0..1.0) * c1 / th;
            let c3 = rng.random_range(-0.25..0.25) * c1 / (3.0 * th * th);
            psi.c = [psi.c[0], c1, c2, c3];
        }
        if model.validate(33).is_ok() {
            return Ok(model);
        }
    }
    Err(OptimizeError::MonotonicityUnrecoverable)
}

/// Central-difference gradient with per-coordinate relative step; near a
/// barrier boundary the step shrinks, falling back to one-sided differences.
fn fd_gradient<F>(f: &F, x: &SVector<f64, 8>) -> SVector<f64, 8>
where
    F: Fn(&SVector<f64, 8>) -> f64,
{
    let mut g = SVector::<f64, 8>::zeros();
    for i in 0..8 {
        let mut step = 1e-6 * x[i].abs().max(1.0);
        let mut done = false;
        for _ in 0..4 {
            let mut xp = *x;
            let mut xm = *x;
            xp[i] += step;
            xm[i] -= step;
            let fp = f(&xp);
            let fm = f(&xm);
            if fp.is_finite() && fm.is_finite() {
                g[i] = (fp - fm) / (2.0 * step);
                done = true;
                break;
            }
            step *= 0.1;
        }
        if !done {
            let f0 = f(x);
            let mut xp = *x;
            xp[i] += step;
            let fp = f(&xp);
            if fp.is_finite() && f0.is_finite() {
                g[i] = (fp - f0) / step;
            } else {
                let mut xm = *x;
                xm[i] -= step;
                let fm = f(&xm);
                if fm.is_finite() && f0.is_finite() {
                    g[i] = (f0 - fm) / step;
                }
            }
        }
    }
    g
}

/// Write the convergence trace as `iter,loss,barrier_weight` CSV.
pub fn trace_to_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iter,loss,barrier_weight\n");
    for t in trace {
        out.push_str(&format!("{},{},{}\n", t.iter, t.loss, t.barrier_weight));
    }
    out
}

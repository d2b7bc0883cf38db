//! Equidistribution of geodesic spheres in the unit tangent bundle.
//!
//! Flows sphere-many geodesic rays from a basepoint, folds the endpoint
//! tangents into the Dirichlet domain, and compares empirical averages of
//! test functions against Liouville-measure references. Also computes the
//! crossing-proportion statistic: the fraction of sphere time spent on
//! length-minimizing sub-segments running from one metric ball to another.

use crate::geom::{dist, exp_map, frame_at, HIsometry, HPoint, HTangent, MAX_TRUSTED_RADIUS};
use crate::lattice::{
    dirichlet_domain, fold, orbit_ball, quotient_distance, sample_ball_point, DirichletDomain,
    LatticeError, LatticeGroup,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EquidistError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("sphere radius {0} exceeds the trusted radius")]
    RadiusTooLarge(f64),
    #[error("need at least 10³ rays, got {0}")]
    TooFewRays(usize),
    #[error("basepoint fails Dirichlet membership")]
    BasepointOutsideDomain,
    #[error("{dropped} of {total} rays failed to fold (> 1%)")]
    TooManyDrops { dropped: usize, total: usize },
    #[error("smoothed box test functions require dimension 2, got {0}")]
    DimUnsupported(usize),
}

/// A weighted point of the unit tangent bundle over the Dirichlet domain.
#[derive(Debug, Clone)]
pub struct UnitTangentSample {
    pub base: HPoint,
    /// Unit tangent at `base`.
    pub direction: HTangent,
    pub weight: f64,
}

/// The projected geodesic sphere of radius t: endpoint unit tangents of the
/// rays from the origin point, folded into the Dirichlet domain.
#[derive(Debug, Clone)]
pub struct SphereFlowResult {
    pub t: f64,
    pub origin: HPoint,
    pub samples: Vec<UnitTangentSample>,
    /// Initial unit directions at the origin, aligned with `samples`
    /// (dropped rays excluded); enough to replay any trajectory.
    pub initial_directions: Vec<HTangent>,
    pub dropped: usize,
    pub requested: usize,
}

fn uniform_direction(x: &HPoint, rng: &mut impl rand::Rng) -> HTangent {
    let frame = frame_at(x);
    loop {
        let mut v = HTangent::zero(x.clone());
        for e in &frame {
            let g: f64 = StandardNormal.sample(rng);
            v = v.add(&e.scale(g));
        }
        let n = v.norm();
        if n > 1e-6 {
            return v.scale(1.0 / n);
        }
    }
}

/// Velocity of the unit-speed geodesic s ↦ cosh(s)x + sinh(s)v at time s,
/// as a tangent at the endpoint.
fn geodesic_velocity(x: &HPoint, v: &HTangent, s: f64) -> HTangent {
    let endpoint = exp_map(&v.scale(s));
    let vec = x.coords() * s.sinh() + v.vec() * s.cosh();
    HTangent::new(endpoint, vec).expect("geodesic velocity is tangent")
}

/// Flows `n_rays` uniformly-distributed rays from x₀ to radius t and folds
/// the endpoint tangents into the Dirichlet domain.
pub fn sphere_flow(
    group: &LatticeGroup,
    x0: &HPoint,
    t: f64,
    n_rays: usize,
    seed: u64,
) -> Result<SphereFlowResult, EquidistError> {
    if t + dist(x0, group.basepoint()) > MAX_TRUSTED_RADIUS {
        return Err(EquidistError::RadiusTooLarge(t));
    }
    if n_rays < 1_000 {
        return Err(EquidistError::TooFewRays(n_rays));
    }
    let domain = dirichlet_domain(group, 7.0)?;
    if !domain.contains(x0) {
        return Err(EquidistError::BasepointOutsideDomain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<HTangent> = (0..n_rays).map(|_| uniform_direction(x0, &mut rng)).collect();

    let folded: Vec<Option<(UnitTangentSample, HTangent)>> = directions
        .par_iter()
        .map(|v| {
            let endpoint_vel = geodesic_velocity(x0, v, t);
            match fold(group, &domain, endpoint_vel.base()) {
                Ok(f) => {
                    let moved = f.isometry.inverse().apply_tangent(&endpoint_vel);
                    Some((
                        UnitTangentSample {
                            base: f.point,
                            direction: moved.normalized(),
                            weight: 0.0,
                        },
                        v.clone(),
                    ))
                }
                Err(_) => None,
            }
        })
        .collect();

    let mut samples = Vec::new();
    let mut initial_directions = Vec::new();
    let mut dropped = 0;
    for item in folded {
        match item {
            Some((s, v)) => {
                samples.push(s);
                initial_directions.push(v);
            }
            None => dropped += 1,
        }
    }
    if dropped * 100 > n_rays {
        return Err(EquidistError::TooManyDrops {
            dropped,
            total: n_rays,
        });
    }
    let w = 1.0 / samples.len() as f64;
    for s in &mut samples {
        s.weight = w;
    }
    Ok(SphereFlowResult {
        t,
        origin: x0.clone(),
        samples,
        initial_directions,
        dropped,
        requested: n_rays,
    })
}

/// Test functions on the unit tangent bundle in (position, direction angle)
/// coordinates over the Dirichlet domain.
pub enum TestFunction {
    Constant(f64),
    /// Smoothed indicator of {dist(base, center) ≤ pos_radius} ×
    /// {direction angle within angle_halfwidth of angle_center}, with C¹
    /// smoothstep edges of the given width (surfaces only).
    SmoothedBox {
        center: HPoint,
        pos_radius: f64,
        angle_center: f64,
        angle_halfwidth: f64,
        smoothing: f64,
    },
    Custom(Box<dyn Fn(&HPoint, &HTangent) -> f64 + Sync>),
}

/// 1 below `edge − width`, 0 above `edge`, cubic smoothstep between.
fn falloff(d: f64, edge: f64, width: f64) -> f64 {
    if d <= edge - width {
        1.0
    } else if d >= edge {
        0.0
    } else {
        let s = (edge - d) / width;
        s * s * (3.0 - 2.0 * s)
    }
}

/// Direction angle of a unit tangent in the canonical frame at its base.
pub fn direction_angle(v: &HTangent) -> f64 {
    let frame = frame_at(v.base());
    v.inner(&frame[1]).atan2(v.inner(&frame[0]))
}

impl TestFunction {
    pub fn eval(&self, base: &HPoint, direction: &HTangent) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::SmoothedBox {
                center,
                pos_radius,
                angle_center,
                angle_halfwidth,
                smoothing,
            } => {
                let pos = falloff(dist(base, center), *pos_radius, *smoothing);
                if pos == 0.0 {
                    return 0.0;
                }
                let mut da = (direction_angle(direction) - angle_center)
                    % (2.0 * std::f64::consts::PI);
                if da > std::f64::consts::PI {
                    da -= 2.0 * std::f64::consts::PI;
                }
                if da < -std::f64::consts::PI {
                    da += 2.0 * std::f64::consts::PI;
                }
                pos * falloff(da.abs(), *angle_halfwidth, *smoothing)
            }
            TestFunction::Custom(f) => f(base, direction),
        }
    }
}

/// An equidistribution measurement: empirical sphere average vs Liouville
/// reference.
#[derive(Debug, Clone)]
pub struct EmStatistic {
    pub empirical_mean: f64,
    pub liouville_mean: f64,
    /// |empirical − Liouville|.
    pub statistic: f64,
}

/// Compares the weighted sphere average of f with its Liouville integral
/// (MC: uniform-by-volume position in 𝒟, uniform direction).
pub fn em_statistic(
    group: &LatticeGroup,
    result: &SphereFlowResult,
    f: &TestFunction,
    mc_samples: usize,
    seed: u64,
) -> Result<EmStatistic, EquidistError> {
    if matches!(f, TestFunction::SmoothedBox { .. }) && group.dim() != 2 {
        return Err(EquidistError::DimUnsupported(group.dim()));
    }
    let empirical_mean: f64 = result
        .samples
        .iter()
        .map(|s| s.weight * f.eval(&s.base, &s.direction))
        .sum();

    let domain = dirichlet_domain(group, 7.0)?;
    let sr = domain.sampling_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut kept = 0usize;
    while kept < mc_samples {
        let p = sample_ball_point(group.basepoint(), sr, &mut rng);
        if !domain.contains(&p) {
            continue;
        }
        let v = uniform_direction(&p, &mut rng);
        total += f.eval(&p, &v);
        kept += 1;
    }
    let liouville_mean = total / kept as f64;
    Ok(EmStatistic {
        empirical_mean,
        liouville_mean,
        statistic: (empirical_mean - liouville_mean).abs(),
    })
}

/// A certified minimizing crossing segment of one ray.
#[derive(Debug, Clone)]
pub struct CrossingSegment {
    pub ray: usize,
    /// Entry time (last visit to U_A before reaching U_B).
    pub enter: f64,
    /// Exit time (first arrival in U_B).
    pub exit: f64,
    pub arc_length: f64,
    /// Certified quotient distance between the folded endpoints.
    pub quotient_dist: f64,
}

/// The crossing-proportion statistic θ̂ with its per-ray evidence.
#[derive(Debug, Clone)]
pub struct CrossingStatistic {
    /// Largest θ such that at least a θ-fraction of rays spend at least a
    /// θ-fraction of their time on certified minimizing crossings.
    pub theta_hat: f64,
    /// Fraction of [0, t] each ray spends on certified crossings.
    pub fractions: Vec<f64>,
    pub segments: Vec<CrossingSegment>,
    /// Segments dropped because the quotient distance was uncertified.
    pub skipped: usize,
}

/// Trajectory step for ball-membership detection.
const WALK_STEP: f64 = 0.05;
/// Arc length must match the quotient distance this closely to certify a
/// segment as minimizing.
const MINIMALITY_TOL: f64 = 1e-6;

/// Detects sub-segments of each ray that run from the ball U_A = (center,
/// radius) to U_B within length t₀ and are length-minimizing in the
/// quotient. Both balls must lie inside the Dirichlet domain.
pub fn crossing_statistic(
    group: &LatticeGroup,
    result: &SphereFlowResult,
    u_a: (&HPoint, f64),
    u_b: (&HPoint, f64),
    t0: f64,
) -> Result<CrossingStatistic, EquidistError> {
    let domain = dirichlet_domain(group, 7.0)?;
    let sr = domain.sampling_radius();
    let ball = orbit_ball(group, t0 + 2.0 * sr + 1.0)?;
    let o = group.basepoint();
    let t = result.t;
    let steps = (t / WALK_STEP).ceil() as usize;

    #[derive(Default)]
    struct RayOutcome {
        crossing_time: f64,
        segments: Vec<CrossingSegment>,
        skipped: usize,
    }

    let outcomes: Vec<RayOutcome> = result
        .initial_directions
        .par_iter()
        .enumerate()
        .map(|(ray, v)| {
            let mut out = RayOutcome::default();
            // Incremental folding: track γ with current point ∈ γ𝒟 so each
            // step's fold starts near the domain.
            let mut acc = HIsometry::identity(group.dim());
            let mut last_a: Option<(f64, HPoint)> = None;
            for k in 0..=steps {
                let s = (k as f64 * WALK_STEP).min(t);
                let pos = exp_map(&v.scale(s));
                let near = acc.inverse().apply(&pos);
                let f = match fold(group, &domain, &near) {
                    Ok(f) => f,
                    Err(_) => continue,
                };
                acc = acc.compose(&f.isometry);
                let rep = f.point;
                if dist(&rep, u_a.0) <= u_a.1 {
                    last_a = Some((s, rep.clone()));
                }
                if dist(&rep, u_b.0) <= u_b.1 {
                    if let Some((sa, pa)) = last_a.take() {
                        let arc = s - sa;
                        if arc > 0.0 && arc <= t0 {
                            let qd = quotient_distance(&ball, o, &pa, &rep);
                            if !qd.certified {
                                out.skipped += 1;
                            } else if arc <= qd.value + MINIMALITY_TOL {
                                out.crossing_time += arc;
                                out.segments.push(CrossingSegment {
                                    ray,
                                    enter: sa,
                                    exit: s,
                                    arc_length: arc,
                                    quotient_dist: qd.value,
                                });
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut fractions = Vec::with_capacity(outcomes.len());
    let mut segments = Vec::new();
    let mut skipped = 0;
    for out in outcomes {
        fractions.push(if t > 0.0 { out.crossing_time / t } else { 0.0 });
        segments.extend(out.segments);
        skipped += out.skipped;
    }

    // θ̂ = max over k of min(kth largest fraction, k/N).
    let mut sorted = fractions.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let theta_hat = sorted
        .iter()
        .enumerate()
        .map(|(i, f)| f.min((i + 1) as f64 / n))
        .fold(0.0, f64::max);

    Ok(CrossingStatistic {
        theta_hat,
        fractions,
        segments,
        skipped,
    })
}

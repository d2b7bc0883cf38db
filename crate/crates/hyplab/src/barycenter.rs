//! The barycenter map on weighted orbit configurations.
//!
//! A configuration assigns weights w_γ (summing to 1) to finitely many orbit
//! points; the barycenter is the unique minimizer of the weighted distance
//! sum B_f(x) = Σ w_γ·dist(p_γ, x) — a geometric median — which exists and
//! is unique whenever the support is not contained in a single geodesic.
//!
//! The solver is a Weiszfeld fixed-point iteration with Armijo backtracking,
//! finished by safeguarded Newton steps using the closed-form Hessian of the
//! hyperbolic distance (Hess ρ = coth(ρ)·(g − dρ⊗dρ)). Differentials of the
//! barycenter along unit-sphere perturbations of the weight amplitudes are
//! computed either by central finite differences or implicitly from the
//! first-order optimality condition; the two must cross-validate.

use crate::geom::{
    dist, dist_gradient, exp_map, frame_at, log_map, parallel_transport, GeomError, HIsometry,
    HPoint, HTangent,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarycenterError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("degenerate configuration: support lies on a single geodesic")]
    Degenerate,
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("Hessian ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("barycenter within {dist:.3e} of an orbit point: differential undefined there")]
    NearSingularLocus { dist: f64 },
    #[error("invalid tangent frame: {0}")]
    InvalidFrame(String),
}

/// A finitely supported weight configuration on orbit points,
/// w_γ = |f(γ)|² with f on the unit sphere of ℓ²(Γ).
#[derive(Debug, Clone)]
pub struct WeightedConfiguration {
    labels: Vec<String>,
    points: Vec<HPoint>,
    weights: Vec<f64>,
}

impl WeightedConfiguration {
    pub fn new(
        support: Vec<(String, HPoint, f64)>,
    ) -> Result<Self, BarycenterError> {
        if support.is_empty() {
            return Err(BarycenterError::InvalidConfiguration(
                "empty support".into(),
            ));
        }
        let total: f64 = support.iter().map(|(_, _, w)| w).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(BarycenterError::InvalidConfiguration(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        for (_, _, w) in &support {
            if *w < 0.0 {
                return Err(BarycenterError::InvalidConfiguration(
                    "negative weight".into(),
                ));
            }
        }
        for i in 0..support.len() {
            for j in i + 1..support.len() {
                if crate::geom::rel_coord_diff(&support[i].1, &support[j].1) < 1e-10 {
                    return Err(BarycenterError::InvalidConfiguration(format!(
                        "support points {i} and {j} coincide"
                    )));
                }
            }
        }
        let (labels, rest): (Vec<_>, Vec<_>) = support
            .into_iter()
            .map(|(l, p, w)| (l, (p, w)))
            .unzip();
        let (points, weights) = rest.into_iter().unzip();
        Ok(Self {
            labels,
            points,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn points(&self) -> &[HPoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// The amplitude vector a_γ = √w_γ (the point of the unit sphere).
    pub fn amplitudes(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.weights.iter().map(|w| w.sqrt()))
    }

    /// The configuration with amplitudes replaced by amp/‖amp‖ (same
    /// support).
    pub fn with_amplitudes(&self, amp: &DVector<f64>) -> Result<Self, BarycenterError> {
        let norm = amp.norm();
        if norm < 1e-12 {
            return Err(BarycenterError::InvalidConfiguration(
                "zero amplitude vector".into(),
            ));
        }
        let mut c = self.clone();
        c.weights = amp.iter().map(|a| (a / norm) * (a / norm)).collect();
        Ok(c)
    }

    /// The image configuration γ·f (same weights on translated points).
    pub fn translate(&self, iso: &HIsometry) -> Self {
        let mut c = self.clone();
        c.points = self.points.iter().map(|p| iso.apply(p)).collect();
        c
    }
}

/// An orthonormal set of sphere-tangent perturbation directions of the
/// amplitude vector.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    config: WeightedConfiguration,
    directions: Vec<DVector<f64>>,
}

impl TangentFrame {
    pub fn new(
        config: WeightedConfiguration,
        directions: Vec<DVector<f64>>,
    ) -> Result<Self, BarycenterError> {
        let a = config.amplitudes();
        for (i, q) in directions.iter().enumerate() {
            if q.len() != config.len() {
                return Err(BarycenterError::InvalidFrame(format!(
                    "direction {i} has length {}, support has {}",
                    q.len(),
                    config.len()
                )));
            }
            if (q.norm() - 1.0).abs() > 1e-10 {
                return Err(BarycenterError::InvalidFrame(format!(
                    "direction {i} not unit norm"
                )));
            }
            if q.dot(&a).abs() > 1e-10 {
                return Err(BarycenterError::InvalidFrame(format!(
                    "direction {i} not tangent to the sphere"
                )));
            }
            for (j, p) in directions.iter().enumerate().take(i) {
                if q.dot(p).abs() > 1e-10 {
                    return Err(BarycenterError::InvalidFrame(format!(
                        "directions {j} and {i} not orthogonal"
                    )));
                }
            }
        }
        Ok(Self { config, directions })
    }

    pub fn config(&self) -> &WeightedConfiguration {
        &self.config
    }

    pub fn directions(&self) -> &[DVector<f64>] {
        &self.directions
    }
}

/// True iff the positively weighted support is not contained in one
/// geodesic (rank of the log-map images at the first support point).
pub fn is_admissible(f: &WeightedConfiguration) -> bool {
    let pts: Vec<&HPoint> = f
        .points
        .iter()
        .zip(&f.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, _)| p)
        .collect();
    if pts.len() < 3 {
        return false;
    }
    let base = pts[0];
    let n = base.dim();
    let mut vecs = DMatrix::zeros(n + 1, pts.len() - 1);
    for (k, p) in pts[1..].iter().enumerate() {
        vecs.set_column(k, log_map(base, p).vec());
    }
    let svals = vecs.svd(false, false).singular_values;
    svals.len() >= 2 && svals[1] > 1e-9 * svals[0].max(1.0)
}

/// B_f(x) = Σ w_γ·dist(p_γ, x).
pub fn eval_b(f: &WeightedConfiguration, x: &HPoint) -> f64 {
    f.points
        .iter()
        .zip(&f.weights)
        .map(|(p, w)| w * dist(p, x))
        .sum()
}

/// Riemannian gradient of B_f at x (undefined at support points: the caller
/// handles those via the subgradient test). Entries with dist < 1e-9 are
/// skipped, matching the subgradient convention.
fn grad_b(f: &WeightedConfiguration, x: &HPoint) -> HTangent {
    let mut g = HTangent::zero(x.clone());
    for (p, w) in f.points.iter().zip(&f.weights) {
        if *w == 0.0 || dist(p, x) < 1e-9 {
            continue;
        }
        // ∇_x dist(p, x) points away from p.
        let u = dist_gradient(p, x).expect("distance checked above");
        g = g.add(&u.scale(*w));
    }
    g
}

/// Closed-form Hessian of B_f at x in the orthonormal basis `frame`:
/// Σ w_γ·coth(d_γ)·(I − u_γ u_γᵀ) with u_γ the unit gradient coordinates.
fn hess_b(f: &WeightedConfiguration, x: &HPoint, frame: &[HTangent]) -> DMatrix<f64> {
    let n = x.dim();
    let mut h = DMatrix::zeros(n, n);
    for (p, w) in f.points.iter().zip(&f.weights) {
        let d = dist(p, x);
        if *w == 0.0 || d < 1e-9 {
            continue;
        }
        let g = dist_gradient(p, x).expect("distance checked above");
        let u = DVector::from_iterator(n, frame.iter().map(|e| g.inner(e)));
        let coth = 1.0 / d.tanh();
        for i in 0..n {
            for j in 0..n {
                let kron = if i == j { 1.0 } else { 0.0 };
                h[(i, j)] += w * coth * (kron - u[i] * u[j]);
            }
        }
    }
    h
}

/// Weiszfeld's test at a support point p_k: p_k minimizes B_f iff the pull
/// of the remaining weights does not exceed w_k. Returns the pull vector.
fn support_point_pull(f: &WeightedConfiguration, k: usize) -> HTangent {
    let x = &f.points[k];
    let mut pull = HTangent::zero(x.clone());
    for (i, (p, w)) in f.points.iter().zip(&f.weights).enumerate() {
        if i == k || *w == 0.0 {
            continue;
        }
        let u = dist_gradient(p, x).expect("distinct support points");
        pull = pull.add(&u.scale(-*w));
    }
    pull
}

/// Weighted Karcher-style initial point: a few fixed-point iterations of the
/// squared-distance mean x ← exp_x(Σ w_γ·log_x p_γ).
fn karcher_init(f: &WeightedConfiguration) -> HPoint {
    let imax = f
        .weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut x = f.points[imax].clone();
    for _ in 0..25 {
        let mut v = HTangent::zero(x.clone());
        for (p, w) in f.points.iter().zip(&f.weights) {
            if dist(p, &x) < 1e-12 {
                continue;
            }
            v = v.add(&log_map(&x, p).scale(*w));
        }
        if v.norm() < 1e-13 {
            break;
        }
        x = exp_map(&v);
    }
    x
}

const DEFAULT_TOL: f64 = 1e-10;
const MAX_ITER: usize = 10_000;

/// The barycenter bar(f): unique minimizer of B_f for admissible f.
pub fn bar(f: &WeightedConfiguration, tol: Option<f64>) -> Result<HPoint, BarycenterError> {
    bar_from(f, &karcher_init(f), tol)
}

/// Same, from an explicit starting point (used for uniqueness checks).
pub fn bar_from(
    f: &WeightedConfiguration,
    init: &HPoint,
    tol: Option<f64>,
) -> Result<HPoint, BarycenterError> {
    if !is_admissible(f) {
        return Err(BarycenterError::Degenerate);
    }
    // Solve in a frame recentered at the starting point: coordinates stay
    // small during the iteration, keeping rounding noise uniform no matter
    // where the configuration sits. Distances are isometry-invariant, so
    // this changes nothing mathematically.
    let origin = HPoint::origin(init.dim());
    if dist(init, &origin) > 0.5 {
        let to_origin = crate::geom::translate_to_origin(init);
        let recentred = f.translate(&to_origin);
        let x = bar_from(&recentred, &origin, tol)?;
        return Ok(to_origin.inverse().apply(&x));
    }
    let tol = tol.unwrap_or(DEFAULT_TOL);
    let mut x = init.clone();
    let mut value = eval_b(f, &x);
    // Once the gradient is small, Armijo on B_f can no longer certify
    // progress (value differences fall below f64 resolution); from there
    // pure Newton steps polish until the gradient stagnates at its
    // evaluation noise floor.
    let mut best: Option<(f64, HPoint)> = None;
    let mut stagnant = 0usize;
    // Rounding floor of the gradient evaluation: each unit-gradient term
    // carries cancellation error growing with cosh of the separation.
    let grad_floor = |f: &WeightedConfiguration, x: &HPoint| -> f64 {
        20.0 * f64::EPSILON
            * f.points
                .iter()
                .zip(&f.weights)
                .map(|(p, w)| w * dist(p, x).cosh())
                .sum::<f64>()
    };
    for iter in 0..MAX_ITER {
        // Support-point handling: if x sits (numerically) on a support
        // point, apply Weiszfeld's subgradient test there.
        if let Some(k) = (0..f.len()).find(|&k| dist(&f.points[k], &x) < 1e-7) {
            let pull = support_point_pull(f, k);
            let r = pull.norm();
            if r <= f.weights[k] + tol {
                return Ok(f.points[k].clone());
            }
            // Step off the support point along the pull.
            let denom: f64 = f
                .points
                .iter()
                .zip(&f.weights)
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, (p, w))| w / dist(p, &f.points[k]))
                .sum();
            let step = (r - f.weights[k]) / denom;
            x = exp_map(&pull.normalized().scale(step.max(1e-12)));
            value = eval_b(f, &x);
            continue;
        }

        let g = grad_b(f, &x);
        let gnorm = g.norm();
        if gnorm < tol.max(grad_floor(f, &x)) {
            return Ok(x);
        }
        if gnorm < 1e-6 {
            // Polish phase: undamped Newton, tracked by gradient norm.
            match best {
                Some((bg, _)) if gnorm >= bg => stagnant += 1,
                _ => {
                    best = Some((gnorm, x.clone()));
                    stagnant = 0;
                }
            }
            if stagnant >= 5 {
                let (bg, bx) = best.unwrap();
                if bg < 1e3 * tol.max(grad_floor(f, &bx)) {
                    return Ok(bx);
                }
                return Err(BarycenterError::NoConvergence {
                    iterations: iter,
                    grad_norm: bg,
                });
            }
            let frame = frame_at(&x);
            let h = hess_b(f, &x, &frame);
            let gc = DVector::from_iterator(x.dim(), frame.iter().map(|e| g.inner(e)));
            if let Some(chol) = h.cholesky() {
                let d = chol.solve(&(-gc));
                let mut v = HTangent::zero(x.clone());
                for (i, e) in frame.iter().enumerate() {
                    v = v.add(&e.scale(d[i]));
                }
                x = exp_map(&v);
                value = eval_b(f, &x);
                continue;
            }
        }

        // Step proposal: Newton (closed-form Hessian) once the gradient is
        // moderate, Weiszfeld fixed-point otherwise.
        let frame = frame_at(&x);
        let mut step = if gnorm < 1e-2 {
            let h = hess_b(f, &x, &frame);
            let gc = DVector::from_iterator(x.dim(), frame.iter().map(|e| g.inner(e)));
            match h.clone().cholesky() {
                Some(chol) => {
                    let d = chol.solve(&(-gc));
                    let mut v = HTangent::zero(x.clone());
                    for (i, e) in frame.iter().enumerate() {
                        v = v.add(&e.scale(d[i]));
                    }
                    v
                }
                None => g.scale(-1.0),
            }
        } else {
            // x ← exp_x((Σ w·log_x p/d) / (Σ w/d)).
            let mut num = HTangent::zero(x.clone());
            let mut den = 0.0;
            for (p, w) in f.points.iter().zip(&f.weights) {
                let d = dist(p, &x);
                num = num.add(&log_map(&x, p).scale(w / d));
                den += w / d;
            }
            num.scale(1.0 / den)
        };

        // Armijo backtracking on B_f.
        let descent = -step.inner(&g);
        if descent <= 0.0 {
            step = g.scale(-1.0 / gnorm.max(1.0));
        }
        let descent = -step.inner(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = exp_map(&step.scale(t));
            let cand_value = eval_b(f, &cand);
            // Strict decrease: equality means sub-resolution progress and
            // would loop forever.
            if cand_value < value && cand_value <= value - 1e-4 * t * descent {
                x = cand;
                value = cand_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Stalled against a nearby support point: when Weiszfeld's test
            // certifies it as the minimizer, snap to it.
            let nearest = (0..f.len())
                .min_by(|&a, &b| dist(&f.points[a], &x).total_cmp(&dist(&f.points[b], &x)))
                .unwrap();
            if dist(&f.points[nearest], &x) < 1e-4
                && support_point_pull(f, nearest).norm() <= f.weights[nearest] + tol
            {
                return Ok(f.points[nearest].clone());
            }
            // Objective flat at rounding level: accept the point if the
            // gradient criterion is close, otherwise report the stall.
            if gnorm < tol.max(grad_floor(f, &x)) * 100.0 {
                return Ok(x);
            }
            return Err(BarycenterError::NoConvergence {
                iterations: iter,
                grad_norm: gnorm,
            });
        }
    }
    let gnorm = grad_b(f, &x).norm();
    Err(BarycenterError::NoConvergence {
        iterations: MAX_ITER,
        grad_norm: gnorm,
    })
}

/// Differential method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMethod {
    /// Central differences of bar over sphere steps of 1e−5.
    FiniteDifference,
    /// Solve Hessian·dx = −(mixed second derivative), Hessian by finite
    /// differences of the gradient (step 1e−4).
    Implicit,
}

/// Hessian of B_f at x by central finite differences of the Riemannian
/// gradient (components transported back to the frame at x).
fn hess_b_fd(f: &WeightedConfiguration, x: &HPoint, frame: &[HTangent]) -> DMatrix<f64> {
    let n = x.dim();
    let h = 1e-4;
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let grad_coords = |s: f64| -> DVector<f64> {
            let y = exp_map(&frame[j].scale(s));
            let g = grad_b(f, &y);
            DVector::from_iterator(
                n,
                frame.iter().map(|e| g.inner(&parallel_transport(e, &y))),
            )
        };
        let col = (grad_coords(h) - grad_coords(-h)) / (2.0 * h);
        hess.set_column(j, &col);
    }
    // Symmetrize (the truncation error need not be).
    0.5 * (&hess + hess.transpose())
}

/// The k×n matrix of dBar applied to the frame directions, in the
/// orthonormal tangent basis at bar(f).
pub fn bar_differential(
    frame: &TangentFrame,
    method: DiffMethod,
) -> Result<DMatrix<f64>, BarycenterError> {
    let f = frame.config();
    let x = bar(f, Some(1e-11))?;
    let min_support_dist = f
        .points
        .iter()
        .map(|p| dist(p, &x))
        .fold(f64::INFINITY, f64::min);
    if min_support_dist < 1e-6 {
        return Err(BarycenterError::NearSingularLocus {
            dist: min_support_dist,
        });
    }
    let n = x.dim();
    let k = frame.directions().len();
    let basis = frame_at(&x);
    let a = f.amplitudes();
    let mut out = DMatrix::zeros(k, n);
    match method {
        DiffMethod::FiniteDifference => {
            let h = 1e-5;
            for (i, q) in frame.directions().iter().enumerate() {
                let xp = bar_from(&f.with_amplitudes(&(&a + h * q))?, &x, Some(1e-12))?;
                let xm = bar_from(&f.with_amplitudes(&(&a - h * q))?, &x, Some(1e-12))?;
                let vp = log_map(&x, &xp);
                let vm = log_map(&x, &xm);
                for (j, e) in basis.iter().enumerate() {
                    out[(i, j)] = (vp.inner(e) - vm.inner(e)) / (2.0 * h);
                }
            }
        }
        DiffMethod::Implicit => {
            let hess = hess_b_fd(f, &x, &basis);
            let cond = condition_number(&hess);
            if cond > 1e8 {
                return Err(BarycenterError::IllConditioned { cond });
            }
            // Mixed derivative ∂²B/∂t_i ∂x_j = Σ 2·a_γ·q_{iγ}·⟨∇dist_γ, e_j⟩
            // (the sphere constraint contributes nothing at first order
            // since q ⊥ a).
            let lu = hess.lu();
            for (i, q) in frame.directions().iter().enumerate() {
                let mut mixed = DVector::zeros(n);
                for (g_idx, (p, _)) in f.points.iter().zip(&f.weights).enumerate() {
                    let coeff = 2.0 * a[g_idx] * q[g_idx];
                    if coeff == 0.0 {
                        continue;
                    }
                    let u = dist_gradient(p, &x).expect("x off the support");
                    for (j, e) in basis.iter().enumerate() {
                        mixed[j] += coeff * u.inner(e);
                    }
                }
                let dx = lu
                    .solve(&(-mixed))
                    .ok_or(BarycenterError::IllConditioned { cond })?;
                for j in 0..n {
                    out[(i, j)] = dx[j];
                }
            }
        }
    }
    Ok(out)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// |Jac Bar| over the frame: √det(JᵀJ) of the implicit differential. Frames
/// with k = n directions measure the full volume distortion.
pub fn jacobian(frame: &TangentFrame) -> Result<f64, BarycenterError> {
    let j = bar_differential(frame, DiffMethod::Implicit)?;
    let jjt = &j * j.transpose();
    Ok(jjt.determinant().max(0.0).sqrt())
}

/// Outcome of a curve length-ratio measurement.
#[derive(Debug, Clone)]
pub struct LengthRatio {
    /// length(Bar∘α) / length(α); 0 for degenerate (zero-length) curves.
    pub ratio: f64,
    pub curve_length: f64,
    pub image_length: f64,
    pub degenerate: bool,
    /// Set when some vertex was skipped (barycenter failure) or came closer
    /// than the requested distance to the support orbit.
    pub partial: bool,
}

/// Measures length(Bar∘α)/length(α) for a polyline α of unit amplitude
/// vectors over the support of f. `min_orbit_dist` is the distance the bar
/// images are required to keep from the support orbit points.
pub fn length_ratio_check(
    f: &WeightedConfiguration,
    curve: &[DVector<f64>],
    min_orbit_dist: f64,
) -> Result<LengthRatio, BarycenterError> {
    let mut bars: Vec<Option<HPoint>> = Vec::new();
    let mut partial = false;
    for amp in curve {
        match f
            .with_amplitudes(amp)
            .and_then(|c| bar(&c, Some(1e-11)))
        {
            Ok(x) => {
                let near = f
                    .points
                    .iter()
                    .map(|p| dist(p, &x))
                    .fold(f64::INFINITY, f64::min);
                if near < min_orbit_dist {
                    partial = true;
                }
                bars.push(Some(x));
            }
            Err(_) => {
                partial = true;
                bars.push(None);
            }
        }
    }
    let mut curve_length = 0.0;
    let mut image_length = 0.0;
    for w in 0..curve.len().saturating_sub(1) {
        let cos = curve[w].dot(&curve[w + 1]).clamp(-1.0, 1.0);
        curve_length += cos.acos();
        if let (Some(a), Some(b)) = (&bars[w], &bars[w + 1]) {
            image_length += dist(a, b);
        }
    }
    if curve_length < 1e-14 {
        return Ok(LengthRatio {
            ratio: 0.0,
            curve_length,
            image_length,
            degenerate: true,
            partial,
        });
    }
    Ok(LengthRatio {
        ratio: image_length / curve_length,
        curve_length,
        image_length,
        degenerate: false,
        partial,
    })
}

/// The paper-normalization Jacobian bound (4n/(n−1)²)^{n/2} for H^n.
pub fn jacobian_bound(n: usize) -> f64 {
    let n = n as f64;
    (4.0 * n / ((n - 1.0) * (n - 1.0))).powf(n / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{orbit_ball, preset, sample_ball_point};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn config_from_points(
        points: Vec<HPoint>,
        weights: Vec<f64>,
    ) -> WeightedConfiguration {
        let support = points
            .into_iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (p, w))| (format!("g{i}"), p, w))
            .collect();
        WeightedConfiguration::new(support).unwrap()
    }

    /// Random admissible configuration drawn from an orbit point pool.
    fn random_config(
        pool: &[HPoint],
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> WeightedConfiguration {
        loop {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(rng);
            let points: Vec<HPoint> =
                idx[..m].iter().map(|&i| pool[i].clone()).collect();
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
            let s: f64 = w.iter().sum();
            for wi in w.iter_mut() {
                *wi /= s;
            }
            // Exact renormalization for the 1e-10 sum check.
            let s: f64 = w.iter().sum();
            w[0] += 1.0 - s;
            let c = config_from_points(points, w);
            if is_admissible(&c) {
                return c;
            }
        }
    }

    /// Orthonormal sphere-tangent directions via Gram-Schmidt.
    fn random_frame(
        config: WeightedConfiguration,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> TangentFrame {
        let m = config.len();
        let a = config.amplitudes();
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        while dirs.len() < k {
            let mut q =
                DVector::from_iterator(m, (0..m).map(|_| rng.gen::<f64>() - 0.5));
            q -= &a * a.dot(&q);
            for d in &dirs {
                q -= d * d.dot(&q);
            }
            if q.norm() > 1e-6 {
                q /= q.norm();
                dirs.push(q);
            }
        }
        TangentFrame::new(config, dirs).unwrap()
    }

    #[test]
    fn admissibility_cases() {
        let o = HPoint::origin(2);
        let f = frame_at(&o);
        let p = |a: f64, b: f64| {
            exp_map(&f[0].scale(a).add(&f[1].scale(b)))
        };
        // Nondegenerate triangle.
        let tri = config_from_points(
            vec![p(1.0, 0.0), p(0.0, 1.0), p(-1.0, -0.5)],
            vec![0.3, 0.3, 0.4],
        );
        assert!(is_admissible(&tri));
        // Three points on the first-axis geodesic.
        let line = config_from_points(
            vec![p(1.0, 0.0), p(-0.7, 0.0), p(0.2, 0.0)],
            vec![0.3, 0.3, 0.4],
        );
        assert!(!is_admissible(&line));
        // Two points are always aligned.
        let two = config_from_points(vec![p(1.0, 0.0), p(0.0, 1.0)], vec![0.5, 0.5]);
        assert!(!is_admissible(&two));
        // A zero weight removes its point from the alignment test.
        let masked = config_from_points(
            vec![p(1.0, 0.0), p(-0.7, 0.0), p(0.2, 0.0), p(0.0, 1.0)],
            vec![0.3, 0.3, 0.4, 0.0],
        );
        assert!(!is_admissible(&masked));
    }

    #[test]
    fn eval_b_basics() {
        let o = HPoint::origin(2);
        let f = frame_at(&o);
        let p = exp_map(&f[0].scale(1.2));
        let single = config_from_points(vec![p.clone()], vec![1.0]);
        let x = exp_map(&f[1].scale(0.7));
        assert!((eval_b(&single, &x) - dist(&p, &x)).abs() < 1e-14);
        assert!(eval_b(&single, &p).abs() < 1e-9);

        // Two equal weights, x on the connecting geodesic: B = ½·dist(p,q).
        let q = exp_map(&f[0].scale(-0.8));
        let pair = config_from_points(vec![p.clone(), q.clone()], vec![0.5, 0.5]);
        let mid = exp_map(&f[0].scale(0.3));
        assert!((eval_b(&pair, &mid) - 0.5 * dist(&p, &q)).abs() < 1e-12);
    }

    #[test]
    fn equilateral_triangle_barycenter_at_center() {
        let o = HPoint::origin(2);
        let f = frame_at(&o);
        let r = 1.1;
        let pts: Vec<HPoint> = (0..3)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                exp_map(&f[0].scale(r * phi.cos()).add(&f[1].scale(r * phi.sin())))
            })
            .collect();
        let c = config_from_points(pts, vec![1.0 / 3.0; 3]);
        let b = bar(&c, None).unwrap();
        assert!(dist(&b, &o) < 1e-8, "off-center by {}", dist(&b, &o));
    }

    #[test]
    fn degenerate_configuration_rejected() {
        let o = HPoint::origin(2);
        let f = frame_at(&o);
        let line = config_from_points(
            (0..3)
                .map(|k| exp_map(&f[0].scale(0.5 * k as f64 + 0.3)))
                .collect(),
            vec![0.2, 0.3, 0.5],
        );
        assert!(matches!(bar(&line, None), Err(BarycenterError::Degenerate)));
    }

    #[test]
    fn heavy_weight_pins_barycenter_to_support_point() {
        // With one weight > ½ + pull, the median sits at that support point.
        let o = HPoint::origin(2);
        let f = frame_at(&o);
        let pts = vec![
            o.clone(),
            exp_map(&f[0].scale(1.0)),
            exp_map(&f[1].scale(1.0)),
        ];
        let c = config_from_points(pts, vec![0.8, 0.1, 0.1]);
        let b = bar(&c, None).unwrap();
        assert!(dist(&b, &o) < 1e-10);
    }

    #[test]
    fn equivariance_over_random_pairs() {
        let g = preset("genus2-octagon").unwrap();
        let ball = orbit_ball(&g, 4.0).unwrap();
        let pool: Vec<HPoint> =
            ball.elements.iter().map(|e| e.point.clone()).collect();
        let isos: Vec<_> = ball.elements.iter().map(|e| e.isometry.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..100 {
            let f = random_config(&pool, 5, &mut rng);
            let iso = &isos[rng.gen_range(0..isos.len())];
            let b = bar(&f, None).unwrap();
            let tb = bar(&f.translate(iso), None).unwrap();
            // Near-equality is measured by the conditioned coordinate
            // discrepancy: dist() itself floors at ~1e-7 near the diagonal.
            let dev = crate::geom::rel_coord_diff(&tb, &iso.apply(&b));
            assert!(dev < 1e-8, "equivariance deviation {dev}");
        }
    }

    #[test]
    fn uniqueness_under_restarts() {
        let g = preset("figure-eight").unwrap();
        let ball = orbit_ball(&g, 3.0).unwrap();
        let pool: Vec<HPoint> =
            ball.elements.iter().map(|e| e.point.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let f = random_config(&pool, 5, &mut rng);
        let reference = bar(&f, None).unwrap();
        let o = HPoint::origin(3);
        for _ in 0..20 {
            let init = sample_ball_point(&o, 2.5, &mut rng);
            let b = bar_from(&f, &init, None).unwrap();
            assert!(
                dist(&b, &reference) < 1e-7,
                "restart spread {}",
                dist(&b, &reference)
            );
        }
    }

    #[test]
    fn grid_search_oracle_agrees() {
        let g = preset("genus2-octagon").unwrap();
        let ball = orbit_ball(&g, 4.0).unwrap();
        let pool: Vec<HPoint> =
            ball.elements.iter().map(|e| e.point.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let f = random_config(&pool, 5, &mut rng);
        let solved = bar(&f, None).unwrap();

        // Dense grid in normal coordinates with iterated local refinement.
        let mut center = karcher_init(&f);
        let mut span = 2.0;
        for _ in 0..9 {
            let frame = frame_at(&center);
            let mut best = (eval_b(&f, &center), center.clone());
            let grid = 20i32;
            for i in -grid..=grid {
                for j in -grid..=grid {
                    let v = frame[0]
                        .scale(span * i as f64 / grid as f64)
                        .add(&frame[1].scale(span * j as f64 / grid as f64));
                    let p = exp_map(&v);
                    let val = eval_b(&f, &p);
                    if val < best.0 {
                        best = (val, p);
                    }
                }
            }
            center = best.1;
            span /= 8.0;
        }
        assert!(
            dist(&center, &solved) < 1e-6,
            "grid oracle off by {}",
            dist(&center, &solved)
        );
    }

    #[test]
    fn differential_methods_cross_validate() {
        let g = preset("figure-eight").unwrap();
        let ball = orbit_ball(&g, 3.5).unwrap();
        let pool: Vec<HPoint> =
            ball.elements.iter().map(|e| e.point.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..10 {
            let f = random_config(&pool, 6, &mut rng);
            let frame = random_frame(f, 3, &mut rng);
            let fd = bar_differential(&frame, DiffMethod::FiniteDifference).unwrap();
            let imp = bar_differential(&frame, DiffMethod::Implicit).unwrap();
            let rel = (&fd - &imp).norm() / imp.norm().max(1e-12);
            assert!(rel < 1e-4, "method disagreement {rel}");
        }
    }

    #[test]
    fn symmetric_configuration_symmetric_differential() {
        // Configuration and perturbation invariant under the reflection
        // x₂ ↦ −x₂; the differential image must lie on the fixed axis.
        let o = HPoint::origin(2);
        let fr = frame_at(&o);
        let p = |a: f64, b: f64| exp_map(&fr[0].scale(a).add(&fr[1].scale(b)));
        let pts = vec![p(0.9, 0.6), p(0.9, -0.6), p(-0.8, 0.5), p(-0.8, -0.5)];
        let c = config_from_points(pts, vec![0.25; 4]);
        // Perturbation symmetric under the point swap (1↔2, 3↔4).
        let a = c.amplitudes();
        let mut q = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        q -= &a * a.dot(&q);
        q /= q.norm();
        let frame = TangentFrame::new(c, vec![q]).unwrap();
        let d = bar_differential(&frame, DiffMethod::Implicit).unwrap();
        // Tangent basis at bar ≈ origin aligns with the coordinate axes;
        // the second component is the reflection-odd one.
        assert!(d[(0, 1)].abs() < 1e-6, "odd component {}", d[(0, 1)]);
    }

    #[test]
    fn jacobian_degenerate_frame_zero() {
        // A 1-direction "frame" padded with an orthogonal copy that the
        // differential sends to (numerically) dependent images: instead,
        // test √det(JᵀJ) = 0 directly on a rank-deficient matrix by using
        // k = n with one direction of zero differential response: the
        // simplest honest case is a duplicated perturbation, which the
        // frame type rejects; so check the determinant path itself.
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let jjt = &j * j.transpose();
        assert!(f64::max(jjt.determinant(), 0.0).sqrt() < 1e-12);
    }

    #[test]
    fn jacobian_sweep_respects_bound_n3() {
        let g = preset("figure-eight").unwrap();
        let ball = orbit_ball(&g, 3.5).unwrap();
        let pool: Vec<HPoint> =
            ball.elements.iter().map(|e| e.point.clone()).collect();
        let bound = jacobian_bound(3);
        assert!((bound - 3.0f64.powf(1.5)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut max_jac: f64 = 0.0;
        let mut evaluated = 0;
        while evaluated < 100 {
            let f = random_config(&pool, 6, &mut rng);
            let frame = random_frame(f, 3, &mut rng);
            match jacobian(&frame) {
                Ok(j) => {
                    max_jac = max_jac.max(j);
                    evaluated += 1;
                }
                Err(BarycenterError::NearSingularLocus { .. }) => continue,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(
            max_jac <= bound * (1.0 + 1e-3),
            "max Jacobian {max_jac} vs bound {bound}"
        );
    }

    #[test]
    fn length_ratio_degenerate_and_short_curves() {
        let g = preset("figure-eight").unwrap();
        let ball = orbit_ball(&g, 3.5).unwrap();
        let pool: Vec<HPoint> =
            ball.elements.iter().map(|e| e.point.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let f = random_config(&pool, 6, &mut rng);
        let a = f.amplitudes();

        let constant = length_ratio_check(&f, &[a.clone(), a.clone()], 0.05).unwrap();
        assert!(constant.degenerate);
        assert_eq!(constant.ratio, 0.0);

        // Short polyline along a random tangent direction (η = 1e−3).
        let frame = random_frame(f.clone(), 1, &mut rng);
        let q = &frame.directions()[0];
        let steps = 5;
        let eta = 1e-3;
        let curve: Vec<DVector<f64>> = (0..=steps)
            .map(|k| {
                let amp = &a + q * (eta * k as f64 / steps as f64);
                amp.clone() / amp.norm()
            })
            .collect();
        let res = length_ratio_check(&f, &curve, 0.05).unwrap();
        assert!(!res.degenerate);
        assert!(res.ratio.is_finite());
        // dBar is bounded by √3·(4n/(n−1)²)^{1/2}… the directional bound for
        // a single direction is the operator bound √(4n)/(n−1) = √3 at n=3.
        let dir_bound = (4.0 * 3.0f64).sqrt() / 2.0;
        assert!(
            res.ratio <= dir_bound * 1.05,
            "ratio {} vs {}",
            res.ratio,
            dir_bound
        );
    }
}

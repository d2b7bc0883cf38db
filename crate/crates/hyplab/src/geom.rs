//! Hyperboloid model of hyperbolic n-space.
//!
//! Points live on the upper sheet of ⟨x,x⟩ = -1 in Minkowski space R^{n,1}
//! with the form ⟨x,y⟩ = -x₀y₀ + Σᵢ xᵢyᵢ. Distances come from
//! arccosh(-⟨x,y⟩), isometries are linear maps preserving the form, and the
//! exponential/logarithm maps have closed forms. Everything here is exact up
//! to floating point; drift from long isometry words is controlled by
//! re-projecting onto the sheet after every application.

use nalgebra::{DMatrix, DVector};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Hyperboloid invariant tolerance for points.
pub const POINT_TOL: f64 = 1e-12;
/// Form-preservation tolerance for isometry matrices.
pub const ISOMETRY_TOL: f64 = 1e-10;
/// Past this radius cosh eats too many of the 53 mantissa bits to trust
/// downstream tolerances.
pub const MAX_TRUSTED_RADIUS: f64 = 25.0;

/// Count of arccosh clampings whose correction exceeded 1e-9, and of
/// operations past the trusted radius. Diagnostic only.
static CLAMP_WARNINGS: AtomicU64 = AtomicU64::new(0);
static RADIUS_WARNINGS: AtomicU64 = AtomicU64::new(0);

pub fn clamp_warning_count() -> u64 {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

pub fn radius_warning_count() -> u64 {
    RADIUS_WARNINGS.load(Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("point violates hyperboloid invariant: <x,x> = {self_product}, x0 = {x0}")]
    InvalidPoint { self_product: f64, x0: f64 },
    #[error("matrix does not preserve the Minkowski form (max deviation {deviation:.3e})")]
    NotAnIsometry { deviation: f64 },
    #[error("matrix swaps the hyperboloid sheets (entry (0,0) = {entry00})")]
    SheetSwap { entry00: f64 },
    #[error("gradient singularity: distance gradient undefined at the base point")]
    GradientSingularity,
    #[error("dimension mismatch: expected ambient dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Minkowski product -x₀y₀ + Σᵢ xᵢyᵢ.
pub fn minkowski(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut s = -a[0] * b[0];
    for i in 1..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// A point on the upper sheet of the hyperboloid, i.e. a point of H^n.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoint {
    coords: DVector<f64>,
}

impl HPoint {
    /// Validating constructor; `coords` has length n+1.
    ///
    /// The sheet residual is checked in the relative form (1 + Σᵢxᵢ²)/x₀² − 1,
    /// which stays well-conditioned at large radius where the raw Minkowski
    /// self-product loses all precision to cancellation.
    pub fn new(coords: DVector<f64>) -> Result<Self, GeomError> {
        let x0 = coords[0];
        if x0 <= 0.0 {
            return Err(GeomError::InvalidPoint {
                self_product: minkowski(&coords, &coords),
                x0,
            });
        }
        let mut s = 1.0;
        for i in 1..coords.len() {
            s += coords[i] * coords[i];
        }
        let residual = s / (x0 * x0) - 1.0;
        if residual.abs() > 4.0 * POINT_TOL {
            return Err(GeomError::InvalidPoint {
                self_product: -1.0 - residual,
                x0,
            });
        }
        Ok(Self { coords })
    }

    /// Snaps onto the sheet by recomputing x₀ = √(1 + Σᵢxᵢ²) from the spatial
    /// part. The standard drift control after isometry applications and exp
    /// steps; unlike rescaling by the self-product, this has no cancellation
    /// at large radius.
    pub fn project(mut coords: DVector<f64>) -> Self {
        let mut s = 1.0;
        for i in 1..coords.len() {
            s += coords[i] * coords[i];
        }
        coords[0] = s.sqrt();
        Self { coords }
    }

    /// The basepoint (1, 0, …, 0) of H^n.
    pub fn origin(n: usize) -> Self {
        let mut c = DVector::zeros(n + 1);
        c[0] = 1.0;
        Self { coords: c }
    }

    /// Manifold dimension n (one less than the ambient dimension).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

/// A tangent vector: Minkowski-orthogonal to its base point.
#[derive(Debug, Clone)]
pub struct HTangent {
    base: HPoint,
    vec: DVector<f64>,
}

impl HTangent {
    pub fn new(base: HPoint, vec: DVector<f64>) -> Result<Self, GeomError> {
        if vec.len() != base.coords.len() {
            return Err(GeomError::DimensionMismatch {
                expected: base.coords.len(),
                got: vec.len(),
            });
        }
        let t = Self { base, vec };
        Ok(t.orthogonalized())
    }

    /// Removes any component along the base point (⟨base, vec⟩ must be 0).
    fn orthogonalized(mut self) -> Self {
        let c = minkowski(&self.base.coords, &self.vec);
        // base has <base,base> = -1, so the projection coefficient is -c.
        self.vec += &self.base.coords * c;
        self
    }

    pub fn zero(base: HPoint) -> Self {
        let n = base.coords.len();
        Self {
            base,
            vec: DVector::zeros(n),
        }
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn vec(&self) -> &DVector<f64> {
        &self.vec
    }

    /// Riemannian norm (the Minkowski form is positive on tangent vectors).
    pub fn norm(&self) -> f64 {
        minkowski(&self.vec, &self.vec).max(0.0).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            base: self.base.clone(),
            vec: &self.vec * s,
        }
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        self.scale(1.0 / n)
    }

    pub fn add(&self, other: &HTangent) -> Self {
        Self {
            base: self.base.clone(),
            vec: &self.vec + &other.vec,
        }
    }

    pub fn inner(&self, other: &HTangent) -> f64 {
        minkowski(&self.vec, &other.vec)
    }
}

/// arccosh with the argument clamped to [1, ∞); counts clampings that exceed
/// 1e-9 (near-diagonal pairs otherwise produce NaN).
fn acosh_clamped(arg: f64) -> f64 {
    if arg < 1.0 {
        if 1.0 - arg > 1e-9 {
            CLAMP_WARNINGS.fetch_add(1, Ordering::Relaxed);
        }
        0.0
    } else {
        arg.acosh()
    }
}

/// Hyperbolic distance arccosh(-⟨x,y⟩).
pub fn dist(x: &HPoint, y: &HPoint) -> f64 {
    let d = acosh_clamped(-minkowski(&x.coords, &y.coords));
    if d > MAX_TRUSTED_RADIUS {
        RADIUS_WARNINGS.fetch_add(1, Ordering::Relaxed);
    }
    d
}

/// exp_base(vec): unit-speed geodesic x cosh t + u sinh t at t = |vec|.
pub fn exp_map(v: &HTangent) -> HPoint {
    let t = v.norm();
    if t == 0.0 {
        return v.base.clone();
    }
    let u = &v.vec / t;
    HPoint::project(&v.base.coords * t.cosh() + u * t.sinh())
}

/// Inverse of `exp_map`: the tangent at x pointing to y with |log| = dist(x,y).
pub fn log_map(x: &HPoint, y: &HPoint) -> HTangent {
    let d = dist(x, y);
    if d == 0.0 {
        return HTangent::zero(x.clone());
    }
    // Unit direction (y - x cosh d)/sinh d, scaled by d.
    let u = (&y.coords - &x.coords * d.cosh()) / d.sinh();
    let t = HTangent {
        base: x.clone(),
        vec: u * d,
    };
    t.orthogonalized()
}

/// Riemannian gradient of dist(w, ·) at x: the unit vector -log_x(w)/dist.
pub fn dist_gradient(w: &HPoint, x: &HPoint) -> Result<HTangent, GeomError> {
    let d = dist(w, x);
    if d == 0.0 {
        return Err(GeomError::GradientSingularity);
    }
    Ok(log_map(x, w).scale(-1.0 / d))
}

/// Point at arclength t along the unit-speed geodesic from x with direction u.
pub fn geodesic_point(x: &HPoint, u: &HTangent, t: f64) -> HPoint {
    HPoint::project(&x.coords * t.cosh() + &u.vec * t.sinh())
}

/// An isometry of H^n: a matrix preserving the Minkowski form and the upper
/// sheet (an element of O⁺(n,1)).
#[derive(Debug, Clone, PartialEq)]
pub struct HIsometry {
    matrix: DMatrix<f64>,
}

impl HIsometry {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, GeomError> {
        let n1 = matrix.nrows();
        let mut dev: f64 = 0.0;
        // M^T J M = J, checked entrywise.
        for i in 0..n1 {
            for j in 0..n1 {
                let mut s = -matrix[(0, i)] * matrix[(0, j)];
                for k in 1..n1 {
                    s += matrix[(k, i)] * matrix[(k, j)];
                }
                let expect = if i != j {
                    0.0
                } else if i == 0 {
                    -1.0
                } else {
                    1.0
                };
                dev = dev.max((s - expect).abs());
            }
        }
        if dev > ISOMETRY_TOL {
            return Err(GeomError::NotAnIsometry { deviation: dev });
        }
        if matrix[(0, 0)] <= 0.0 {
            return Err(GeomError::SheetSwap {
                entry00: matrix[(0, 0)],
            });
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n + 1, n + 1),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    /// Applies the isometry and re-projects onto the sheet.
    pub fn apply(&self, x: &HPoint) -> HPoint {
        HPoint::project(&self.matrix * &x.coords)
    }

    /// Pushes a tangent vector forward (the differential is the matrix itself).
    pub fn apply_tangent(&self, v: &HTangent) -> HTangent {
        let base = self.apply(&v.base);
        let t = HTangent {
            base,
            vec: &self.matrix * &v.vec,
        };
        t.orthogonalized()
    }

    /// Composition self ∘ other.
    pub fn compose(&self, other: &HIsometry) -> HIsometry {
        HIsometry {
            matrix: &self.matrix * &other.matrix,
        }
    }

    /// Inverse via the form: M⁻¹ = J Mᵀ J.
    pub fn inverse(&self) -> HIsometry {
        let n1 = self.matrix.nrows();
        let mut inv = self.matrix.transpose();
        for i in 1..n1 {
            inv[(0, i)] = -inv[(0, i)];
            inv[(i, 0)] = -inv[(i, 0)];
        }
        HIsometry { matrix: inv }
    }

    /// Hyperbolic translation by length t along the coordinate axis `axis`
    /// (1-based among the spatial coordinates).
    pub fn translation(n: usize, axis: usize, t: f64) -> Self {
        let mut m = DMatrix::identity(n + 1, n + 1);
        m[(0, 0)] = t.cosh();
        m[(0, axis)] = t.sinh();
        m[(axis, 0)] = t.sinh();
        m[(axis, axis)] = t.cosh();
        Self { matrix: m }
    }

    /// Rotation by angle θ in the spatial (i, j) plane, fixing the basepoint.
    pub fn rotation(n: usize, i: usize, j: usize, theta: f64) -> Self {
        let mut m = DMatrix::identity(n + 1, n + 1);
        m[(i, i)] = theta.cos();
        m[(j, j)] = theta.cos();
        m[(i, j)] = -theta.sin();
        m[(j, i)] = theta.sin();
        Self { matrix: m }
    }

    /// The unique orientation-preserving isometry sending the orthonormal
    /// frame (p; u₁, …) to (q; w₁, …). Frames must be Lorentz-orthonormal,
    /// which `frame_at` guarantees.
    pub fn from_frames(
        p: &HPoint,
        us: &[HTangent],
        q: &HPoint,
        ws: &[HTangent],
    ) -> Result<Self, GeomError> {
        let n1 = p.coords.len();
        let mut fp = DMatrix::zeros(n1, n1);
        let mut fq = DMatrix::zeros(n1, n1);
        fp.set_column(0, &p.coords);
        fq.set_column(0, &q.coords);
        for k in 0..n1 - 1 {
            fp.set_column(k + 1, &us[k].vec);
            fq.set_column(k + 1, &ws[k].vec);
        }
        // F^T J F = J for a Lorentz frame, so F^{-1} = J F^T J.
        let mut fp_inv = fp.transpose();
        for i in 0..n1 {
            for j in 0..n1 {
                if (i == 0) != (j == 0) {
                    fp_inv[(i, j)] = -fp_inv[(i, j)];
                }
            }
        }
        Self::new(fq * fp_inv)
    }
}

/// Relative coordinate discrepancy ‖x−y‖∞ / x₀. For nearby points this is a
/// well-conditioned proxy for the hyperbolic distance; `dist` itself loses
/// half the mantissa near the diagonal (arccosh near 1).
pub fn rel_coord_diff(x: &HPoint, y: &HPoint) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..x.coords.len() {
        m = m.max((x.coords[i] - y.coords[i]).abs());
    }
    m / x.coords[0]
}

/// Completes x to a Lorentz-orthonormal frame: n tangent vectors at x,
/// pairwise orthonormal. Gram-Schmidt on the coordinate axes.
pub fn frame_at(x: &HPoint) -> Vec<HTangent> {
    let n1 = x.coords.len();
    let mut frame: Vec<HTangent> = Vec::with_capacity(n1 - 1);
    for j in 0..n1 {
        if frame.len() == n1 - 1 {
            break;
        }
        let mut v = DVector::zeros(n1);
        v[j] = 1.0;
        // Project out the base point and the previous frame vectors.
        let c = minkowski(&x.coords, &v);
        v += &x.coords * c;
        for f in &frame {
            let c = minkowski(&f.vec, &v);
            v -= &f.vec * c;
        }
        let norm2 = minkowski(&v, &v);
        if norm2 > 1e-12 {
            frame.push(HTangent {
                base: x.clone(),
                vec: v / norm2.sqrt(),
            });
        }
    }
    frame
}

/// Parallel transport of v along the geodesic from x to y.
pub fn parallel_transport(v: &HTangent, y: &HPoint) -> HTangent {
    let x = &v.base;
    let d = dist(x, y);
    if d == 0.0 {
        return HTangent {
            base: y.clone(),
            vec: v.vec.clone(),
        };
    }
    let u = log_map(x, y).normalized();
    let a = minkowski(&u.vec, &v.vec);
    // The component along the geodesic rotates in the (x, u) plane, the
    // orthogonal complement is unchanged.
    let tangent_part = &v.vec - &u.vec * a;
    let transported_dir = &u.vec * d.cosh() + &x.coords * d.sinh();
    let t = HTangent {
        base: y.clone(),
        vec: tangent_part + transported_dir * a,
    };
    t.orthogonalized()
}

/// The isometry carrying x to the origin, composed from exact primitive
/// rotations (aligning the spatial part with the first axis) and one axis
/// translation. Stays numerically orthogonal even for far points, unlike a
/// frame-matrix construction.
pub fn translate_to_origin(x: &HPoint) -> HIsometry {
    let n = x.dim();
    let mut v: Vec<f64> = (1..=n).map(|i| x.coords[i]).collect();
    let mut rot = HIsometry::identity(n);
    for k in (1..n).rev() {
        if v[k] == 0.0 {
            continue;
        }
        let theta = -v[k].atan2(v[0]);
        let g = HIsometry::rotation(n, 1, k + 1, theta);
        v[0] = v[0].hypot(v[k]);
        v[k] = 0.0;
        rot = g.compose(&rot);
    }
    // Radius from the spatial norm: asinh is well conditioned everywhere.
    let r = v[0].asinh();
    HIsometry::translation(n, 1, -r).compose(&rot)
}

/// Converts an SL(2,R) matrix acting on the upper half-plane to the
/// corresponding element of O⁺(2,1), via the action A: X ↦ A X Aᵀ on
/// symmetric 2×2 matrices X = [[x₀+x₂, x₁], [x₁, x₀-x₂]].
pub fn from_sl2r(a: f64, b: f64, c: f64, d: f64) -> Result<HIsometry, GeomError> {
    let det = a * d - b * c;
    let s = 1.0 / det.abs().sqrt();
    let (a, b, c, d) = (a * s, b * s, c * s, d * s);
    let mut m = DMatrix::zeros(3, 3);
    for (col, x) in [(0usize, [1.0, 0.0, 0.0]), (1, [0.0, 1.0, 0.0]), (2, [0.0, 0.0, 1.0])] {
        // X(e_col)
        let (x0, x1, x2) = (x[0], x[1], x[2]);
        let x11 = x0 + x2;
        let x12 = x1;
        let x22 = x0 - x2;
        // Y = A X A^T
        let y11 = a * (a * x11 + b * x12) + b * (a * x12 + b * x22);
        let y12 = c * (a * x11 + b * x12) + d * (a * x12 + b * x22);
        let y22 = c * (c * x11 + d * x12) + d * (c * x12 + d * x22);
        m[(0, col)] = (y11 + y22) / 2.0;
        m[(1, col)] = y12;
        m[(2, col)] = (y11 - y22) / 2.0;
    }
    HIsometry::new(m)
}

/// Converts an SL(2,C) matrix acting on upper half-space to the corresponding
/// element of O⁺(3,1), via A: X ↦ A X A† on Hermitian matrices
/// X = [[x₀+x₃, x₁+ix₂], [x₁-ix₂, x₀-x₃]].
pub fn from_sl2c(entries: [num_complex::Complex64; 4]) -> Result<HIsometry, GeomError> {
    use num_complex::Complex64 as C;
    let [a, b, c, d] = entries;
    let det = a * d - b * c;
    let s = det.sqrt();
    let (a, b, c, d) = (a / s, b / s, c / s, d / s);
    let mut m = DMatrix::zeros(4, 4);
    let basis = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    for (col, x) in basis.iter().enumerate() {
        let (x0, x1, x2, x3) = (x[0], x[1], x[2], x[3]);
        let x11 = C::new(x0 + x3, 0.0);
        let x12 = C::new(x1, x2);
        let x21 = x12.conj();
        let x22 = C::new(x0 - x3, 0.0);
        // Y = A X A†
        let y11 = a * (x11 * a.conj() + x12 * b.conj()) + b * (x21 * a.conj() + x22 * b.conj());
        let y12 = a * (x11 * c.conj() + x12 * d.conj()) + b * (x21 * c.conj() + x22 * d.conj());
        let y21 = c * (x11 * a.conj() + x12 * b.conj()) + d * (x21 * a.conj() + x22 * b.conj());
        let y22 = c * (x11 * c.conj() + x12 * d.conj()) + d * (x21 * c.conj() + x22 * d.conj());
        m[(0, col)] = (y11.re + y22.re) / 2.0;
        m[(1, col)] = (y12.re + y21.re) / 2.0;
        m[(2, col)] = (y12.im - y21.im) / 2.0;
        m[(3, col)] = (y11.re - y22.re) / 2.0;
    }
    HIsometry::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut impl Rng, n: usize, spread: f64) -> HPoint {
        let x = HPoint::origin(n);
        let frame = frame_at(&x);
        let mut v = HTangent::zero(x);
        for f in &frame {
            v = v.add(&f.scale(rng.gen_range(-spread..spread)));
        }
        exp_map(&v)
    }

    #[test]
    fn dist_identity_is_zero() {
        let x = HPoint::origin(2);
        assert_eq!(dist(&x, &x), 0.0);
    }

    #[test]
    fn dist_along_parametrized_geodesic() {
        // x=(1,0,0), y=(cosh 1, sinh 1, 0) are at distance 1.
        let x = HPoint::origin(2);
        let y = HPoint::new(DVector::from_vec(vec![1f64.cosh(), 1f64.sinh(), 0.0])).unwrap();
        assert_abs_diff_eq!(dist(&x, &y), 1.0, epsilon = 1e-12);
    }

    /// Independent oracle: length of the projected chord curve
    /// c(s) = project((1-s)x + sy), summed piecewise with the chordal
    /// formula 2·asinh(|x-y|_M / 2), which keeps precision on short pieces.
    fn integrated_geodesic_length(x: &HPoint, y: &HPoint, steps: usize) -> f64 {
        let mut len = 0.0;
        let mut prev = x.clone();
        for k in 1..=steps {
            let s = k as f64 / steps as f64;
            // Radial projection keeps the curve in span(x, y), hence on the
            // geodesic through x and y.
            let mix = x.coords() * (1.0 - s) + y.coords() * s;
            let q = -minkowski(&mix, &mix);
            let c = HPoint::new(mix / q.sqrt()).unwrap();
            let diff = c.coords() - prev.coords();
            let q = minkowski(&diff, &diff).max(0.0);
            len += 2.0 * (q.sqrt() / 2.0).asinh();
            prev = c;
        }
        len
    }

    #[test]
    fn dist_matches_integrated_geodesic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_point(&mut rng, 2, 2.0);
            let y = random_point(&mut rng, 2, 2.0);
            let d = dist(&x, &y);
            let quad = integrated_geodesic_length(&x, &y, 1000);
            assert!((d - quad).abs() < 1e-8, "d={d} quad={quad}");
        }
    }

    #[test]
    fn triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x = random_point(&mut rng, 3, 3.0);
            let y = random_point(&mut rng, 3, 3.0);
            let z = random_point(&mut rng, 3, 3.0);
            assert!(dist(&x, &z) <= dist(&x, &y) + dist(&y, &z) + 1e-9);
        }
    }

    #[test]
    fn log_exp_inverse_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_point(&mut rng, 2, 2.0);
            let y = random_point(&mut rng, 2, 2.0);
            let v = log_map(&x, &y);
            assert_abs_diff_eq!(v.norm(), dist(&x, &y), epsilon = 1e-10);
            let y2 = exp_map(&v);
            assert!(rel_coord_diff(&y, &y2) < 1e-9);
        }
    }

    #[test]
    fn log_at_base_is_zero() {
        let x = HPoint::origin(2);
        assert_eq!(log_map(&x, &x).norm(), 0.0);
    }

    #[test]
    fn exp_log_round_trip_long_range() {
        // Round trip stays below 1e-8 out to distance 20.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = HPoint::origin(2);
        let frame = frame_at(&x);
        for _ in 0..50 {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let t: f64 = rng.gen_range(0.1..20.0);
            let v = frame[0].scale(t * a.cos()).add(&frame[1].scale(t * a.sin()));
            let y = exp_map(&v);
            let w = log_map(&x, &y);
            let err = (v.vec() - w.vec()).norm();
            assert!(err < 1e-8, "err={err} at t={t}");
        }
    }

    #[test]
    fn gradient_is_unit_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let w = random_point(&mut rng, 2, 2.0);
            let x = random_point(&mut rng, 2, 2.0);
            if dist(&w, &x) < 1e-3 {
                continue;
            }
            let g = dist_gradient(&w, &x).unwrap();
            assert_abs_diff_eq!(g.norm(), 1.0, epsilon = 1e-10);
            // Directional derivative along the gradient must be 1.
            let h = 1e-6;
            let fd = (dist(&w, &exp_map(&g.scale(h))) - dist(&w, &exp_map(&g.scale(-h)))) / (2.0 * h);
            assert_abs_diff_eq!(fd, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn gradient_at_base_errors() {
        let x = HPoint::origin(2);
        assert!(matches!(
            dist_gradient(&x, &x),
            Err(GeomError::GradientSingularity)
        ));
    }

    #[test]
    fn gradient_at_midpoint_points_away() {
        let w = HPoint::origin(2);
        let frame = frame_at(&w);
        let mid = exp_map(&frame[0].scale(1.0));
        let g = dist_gradient(&w, &mid).unwrap();
        // The gradient at the midpoint of the geodesic from w points along
        // that geodesic, away from w.
        let dir = log_map(&mid, &exp_map(&frame[0].scale(2.0))).normalized();
        assert!(g.add(&dir.scale(-1.0)).norm() < 1e-8);
    }

    #[test]
    fn convexity_along_geodesics() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let w = random_point(&mut rng, 2, 2.0);
            let x = random_point(&mut rng, 2, 2.0);
            let u = frame_at(&x)[rng.gen_range(0..2)].clone();
            let h = 0.05;
            let mut vals = Vec::new();
            for k in -20..=20 {
                vals.push(dist(&w, &geodesic_point(&x, &u, k as f64 * h)));
            }
            for k in 1..vals.len() - 1 {
                let second = vals[k - 1] - 2.0 * vals[k] + vals[k + 1];
                assert!(second >= -1e-6, "non-convex second difference {second}");
            }
        }
    }

    #[test]
    fn isometry_identity_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let id = HIsometry::identity(2);
        let x = random_point(&mut rng, 2, 2.0);
        assert!(rel_coord_diff(&id.apply(&x), &x) < 1e-12);

        let g = HIsometry::translation(2, 1, 0.7).compose(&HIsometry::rotation(2, 1, 2, 0.3));
        let h = HIsometry::translation(2, 2, -1.1);
        let y = random_point(&mut rng, 2, 2.0);
        assert!(rel_coord_diff(&g.compose(&h).apply(&y), &g.apply(&h.apply(&y))) < 1e-10);
        // Distance preservation.
        assert_abs_diff_eq!(dist(&g.apply(&x), &g.apply(&y)), dist(&x, &y), epsilon = 1e-10);
        // Inverse.
        assert!(rel_coord_diff(&g.inverse().apply(&g.apply(&x)), &x) < 1e-10);
    }

    #[test]
    fn isometry_rejects_bad_matrix() {
        let mut m = DMatrix::identity(3, 3);
        m[(1, 1)] = 1.5;
        assert!(HIsometry::new(m).is_err());
    }

    #[test]
    fn isometry_preserves_self_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = HIsometry::translation(2, 1, 5.0).compose(&HIsometry::rotation(2, 1, 2, 1.2));
        for _ in 0..50 {
            let x = random_point(&mut rng, 2, 6.0);
            let y = g.apply(&x);
            let mut s = 1.0;
            for i in 1..y.coords().len() {
                s += y.coords()[i] * y.coords()[i];
            }
            let residual = s / (y.coords()[0] * y.coords()[0]) - 1.0;
            assert!(residual.abs() < 1e-9);
        }
    }

    #[test]
    fn sl2r_conversion_is_isometric_and_respects_composition() {
        // Translation along the imaginary axis in the half-plane is
        // diag(e^{t/2}, e^{-t/2}); its O(2,1) image translates by t.
        let t = 1.3;
        let g = from_sl2r((t / 2.0f64).exp(), 0.0, 0.0, (-t / 2.0f64).exp()).unwrap();
        let o = HPoint::origin(2);
        assert_abs_diff_eq!(dist(&o, &g.apply(&o)), t, epsilon = 1e-10);

        let a = from_sl2r(1.0, 1.0, 0.0, 1.0).unwrap();
        let b = from_sl2r(1.0, 0.0, 1.0, 1.0).unwrap();
        let ab = from_sl2r(2.0, 1.0, 1.0, 1.0).unwrap(); // product of the two
        let x = HPoint::project(DVector::from_vec(vec![1.5, 0.5, -0.9]));
        assert!(rel_coord_diff(&ab.apply(&x), &a.apply(&b.apply(&x))) < 1e-10);
    }

    #[test]
    fn sl2c_conversion_is_isometric() {
        use num_complex::Complex64 as C;
        let a = from_sl2c([C::new(1.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(1.0, 0.0)])
            .unwrap();
        let b = from_sl2c([C::new(1.0, 0.0), C::new(0.0, 1.0), C::new(0.0, 0.0), C::new(1.0, 0.0)])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_point(&mut rng, 3, 2.0);
        let y = random_point(&mut rng, 3, 2.0);
        for g in [&a, &b] {
            assert_abs_diff_eq!(dist(&g.apply(&x), &g.apply(&y)), dist(&x, &y), epsilon = 1e-10);
        }
    }

    #[test]
    fn from_frames_maps_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = random_point(&mut rng, 2, 1.5);
        let q = random_point(&mut rng, 2, 1.5);
        let us = frame_at(&p);
        let ws = frame_at(&q);
        let g = HIsometry::from_frames(&p, &us, &q, &ws).unwrap();
        assert!(rel_coord_diff(&g.apply(&p), &q) < 1e-10);
        for (u, w) in us.iter().zip(&ws) {
            let gu = g.apply_tangent(u);
            assert!((gu.vec() - w.vec()).norm() < 1e-9);
        }
    }

    #[test]
    fn parallel_transport_preserves_norm_and_direction() {
        let x = HPoint::origin(2);
        let frame = frame_at(&x);
        let y = exp_map(&frame[0].scale(1.5));
        // Transport of the geodesic direction stays the geodesic direction.
        let t = parallel_transport(&frame[0], &y);
        let fwd = log_map(&y, &exp_map(&frame[0].scale(3.0))).normalized();
        assert!(t.add(&fwd.scale(-1.0)).norm() < 1e-9);
        // Orthogonal vectors stay orthogonal and unit.
        let t2 = parallel_transport(&frame[1], &y);
        assert_abs_diff_eq!(t2.norm(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.inner(&t2), 0.0, epsilon = 1e-10);
    }
}

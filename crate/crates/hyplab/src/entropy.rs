//! Volume entropy estimators.
//!
//! For the hyperbolic metric, the entropy is the exponential growth rate of
//! orbit counts N(R) of the basepoint in the universal cover (equivalently,
//! of homotopy classes of based loops of length ≤ R), estimated by a
//! least-squares fit of log N(R) against R over a fit window.
//!
//! For conformally perturbed metrics e^{2u}g₀ with Γ-invariant u, distances
//! are approximated on a Γ-invariant mesh graph: mesh the Dirichlet domain,
//! replicate the nodes over the orbit, connect nearby nodes with edges
//! weighted by the line-integrated conformal length, and count basepoint
//! lifts by graph distance. Graph shortest paths overestimate distances by
//! O(mesh spacing), which biases the entropy estimate by a controlled
//! amount; the amplitude-0 cross-check against `entropy_orbit` bounds that
//! bias empirically.

use crate::geom::{dist, geodesic_point, log_map, HIsometry, HPoint};
use crate::lattice::{
    dirichlet_domain, orbit_ball, DirichletDomain, LatticeError, LatticeGroup, OrbitBall,
    SpatialDedup,
};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("insufficient window: only {points} count points in [{lo}, {hi}], need ≥ 4")]
    InsufficientWindow { points: usize, lo: f64, hi: f64 },
    #[error("mesh too coarse: the invariant graph is disconnected at the basepoint")]
    MeshTooCoarse,
    #[error("bump support not strictly inside the fundamental domain: radius {radius} vs local injectivity {injectivity}")]
    BumpTooWide { radius: f64, injectivity: f64 },
}

/// An entropy estimate with its regression diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Fitted growth rate (inverse length units).
    pub h: f64,
    /// Standard error of the fitted slope.
    pub stderr: f64,
    pub fit_window: (f64, f64),
    /// The full (R, N(R)) table the fit was read from.
    pub counts: Vec<(f64, usize)>,
}

/// Fits log N(R) ~ h·R + const by least squares over the window, using only
/// rows with N ≥ 1. Exactly covariant under R ↦ λR (the slope scales by 1/λ
/// to rounding).
pub fn fit_counts(
    counts: &[(f64, usize)],
    fit_window: (f64, f64),
) -> Result<EntropyEstimate, EntropyError> {
    let (lo, hi) = fit_window;
    let rows: Vec<(f64, f64)> = counts
        .iter()
        .filter(|(r, n)| *r >= lo && *r <= hi && *n >= 1)
        .map(|(r, n)| (*r, (*n as f64).ln()))
        .collect();
    if rows.len() < 4 {
        return Err(EntropyError::InsufficientWindow {
            points: rows.len(),
            lo,
            hi,
        });
    }
    let k = rows.len() as f64;
    let mean_r = rows.iter().map(|(r, _)| r).sum::<f64>() / k;
    let mean_y = rows.iter().map(|(_, y)| y).sum::<f64>() / k;
    let sxx: f64 = rows.iter().map(|(r, _)| (r - mean_r).powi(2)).sum();
    let sxy: f64 = rows
        .iter()
        .map(|(r, y)| (r - mean_r) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let ssr: f64 = rows
        .iter()
        .map(|(r, y)| (y - mean_y - slope * (r - mean_r)).powi(2))
        .sum();
    let stderr = if rows.len() > 2 {
        (ssr / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(EntropyEstimate {
        h: slope,
        stderr,
        fit_window,
        counts: counts.to_vec(),
    })
}

/// Count table of an orbit ball on an even R grid (25 points up to r_max).
pub fn count_table(ball: &OrbitBall, r_max: f64) -> Vec<(f64, usize)> {
    let grid = 24;
    (0..=grid)
        .map(|k| {
            let r = r_max * k as f64 / grid as f64;
            (r, ball.count_within(r))
        })
        .collect()
}

/// Orbit-counting entropy of the hyperbolic quotient itself.
/// `fit_window = None` defaults to [R_max/2, R_max].
pub fn entropy_orbit(
    group: &LatticeGroup,
    r_max: f64,
    fit_window: Option<(f64, f64)>,
) -> Result<EntropyEstimate, EntropyError> {
    let ball = orbit_ball(group, r_max)?;
    let window = fit_window.unwrap_or((0.5 * r_max, r_max));
    fit_counts(&count_table(&ball, r_max), window)
}

/// A Γ-invariant conformal perturbation e^{2(u+s)}g₀ of the quotient metric,
/// where u is a smooth bump of the quotient distance to a center point and s
/// is a constant shift (used for volume normalization).
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    group: LatticeGroup,
    center: HPoint,
    radius: f64,
    amplitude: f64,
    shift: f64,
    /// Orbit translates of the center, for invariant evaluation of u.
    center_translates: Vec<HPoint>,
    domain: DirichletDomain,
}

/// Radius of the orbit ball backing invariant u evaluation; u values are
/// exact for arguments within `U_EVAL_RADIUS − radius − dist(o, center)` of
/// the basepoint.
const U_EVAL_RADIUS: f64 = 9.0;

impl ConformalMetric {
    pub fn new(
        group: &LatticeGroup,
        center: &HPoint,
        radius: f64,
        amplitude: f64,
    ) -> Result<Self, EntropyError> {
        let ball = orbit_ball(group, U_EVAL_RADIUS)?;
        // The bump support must sit strictly inside one fundamental domain
        // copy, i.e. below the local injectivity radius at the center.
        let injectivity = ball
            .elements
            .iter()
            .filter(|e| !e.word.is_empty())
            .map(|e| dist(center, &e.isometry.apply(center)))
            .fold(f64::INFINITY, f64::min)
            / 2.0;
        if radius >= injectivity {
            return Err(EntropyError::BumpTooWide {
                radius,
                injectivity,
            });
        }
        let center_translates = ball
            .elements
            .iter()
            .map(|e| e.isometry.apply(center))
            .collect();
        let domain = dirichlet_domain(group, 7.0)?;
        Ok(Self {
            group: group.clone(),
            center: center.clone(),
            radius,
            amplitude,
            shift: 0.0,
            center_translates,
            domain,
        })
    }

    pub fn group(&self) -> &LatticeGroup {
        &self.group
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn domain(&self) -> &DirichletDomain {
        &self.domain
    }

    pub fn with_shift(&self, shift: f64) -> Self {
        let mut m = self.clone();
        m.shift = shift;
        m
    }

    /// u(x) + s, evaluated invariantly via the distance to the nearest
    /// center translate. Valid for x within the certified evaluation region.
    pub fn u_at(&self, x: &HPoint) -> f64 {
        if self.amplitude == 0.0 {
            return self.shift;
        }
        let mut d = f64::INFINITY;
        for c in &self.center_translates {
            let dc = dist(x, c);
            if dc < d {
                d = dc;
            }
        }
        self.shift + self.amplitude * smooth_bump(d / self.radius)
    }
}

/// The standard C^∞ cutoff: exp(1 − 1/(1 − t²)) on |t| < 1, zero outside,
/// equal to 1 at t = 0.
pub fn smooth_bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// Monte-Carlo estimate (value, stderr) of Vol(M, e^{2(u+s)}g₀) =
/// ∫_D e^{n(u+s)} dvol₀.
pub fn volume_conformal(m: &ConformalMetric, samples: usize, seed: u64) -> (f64, f64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let o = m.group.basepoint();
    let n = m.group.dim() as f64;
    let rb = m.domain.sampling_radius();
    let ball_vol = ball_volume(m.group.dim(), rb);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..samples {
        let p = crate::lattice::sample_ball_point(o, rb, &mut rng);
        let v = if m.domain.contains(&p) {
            (n * m.u_at(&p)).exp()
        } else {
            0.0
        };
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / samples as f64;
    let var = (sum2 / samples as f64 - mean * mean).max(0.0);
    (
        ball_vol * mean,
        ball_vol * (var / samples as f64).sqrt(),
    )
}

/// Volume of the hyperbolic r-ball in H^n (n = 2 or 3 closed forms; general
/// n by quadrature is not needed here).
pub fn ball_volume(n: usize, r: f64) -> f64 {
    use std::f64::consts::PI;
    match n {
        2 => 2.0 * PI * (r.cosh() - 1.0),
        3 => PI * ((2.0 * r).sinh() - 2.0 * r),
        _ => unimplemented!("ball volume only for n = 2, 3"),
    }
}

/// Rescales by a constant conformal shift so that the Monte-Carlo volume of
/// the perturbed metric matches the unperturbed one. Both volumes use the
/// same sample stream, so the ratio is much tighter than either estimate.
pub fn normalize_volume(m: &ConformalMetric, samples: usize, seed: u64) -> ConformalMetric {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let o = m.group.basepoint();
    let n = m.group.dim() as f64;
    let rb = m.domain.sampling_radius();
    let mut vol_u = 0.0;
    let mut vol_0 = 0.0;
    for _ in 0..samples {
        let p = crate::lattice::sample_ball_point(o, rb, &mut rng);
        if m.domain.contains(&p) {
            vol_u += (n * (m.u_at(&p) - m.shift)).exp();
            vol_0 += 1.0;
        }
    }
    let s = (vol_0 / vol_u).ln() / n;
    m.with_shift(s)
}

/// Wrapper giving f64 a total order for the Dijkstra heap.
#[derive(PartialEq)]
struct HeapDist(f64);
impl Eq for HeapDist {}
impl PartialOrd for HeapDist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapDist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Line-integrated conformal length of the geodesic segment [a, b]
/// (Simpson's rule on e^{u+s}).
fn conformal_edge_length(m: &ConformalMetric, a: &HPoint, b: &HPoint) -> f64 {
    let d = dist(a, b);
    if d == 0.0 {
        return 0.0;
    }
    let u = log_map(a, b).normalized();
    let weights = [1.0, 4.0, 2.0, 4.0, 1.0];
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let p = geodesic_point(a, &u, d * k as f64 / 4.0);
        acc += w * m.u_at(&p).exp();
    }
    d * acc / 12.0
}

/// Entropy of the conformally perturbed metric via the invariant mesh graph.
///
/// Nodes are mesh points of the Dirichlet domain replicated over the orbit
/// (created lazily during the shortest-path sweep); nodes within
/// 2·mesh_spacing are connected with the line-integrated conformal length as
/// edge weight. Basepoint lifts within graph distance L are counted and the
/// growth rate regressed as in `entropy_orbit`.
pub fn entropy_conformal(
    m: &ConformalMetric,
    mesh_spacing: f64,
    r_max: f64,
    fit_window: Option<(f64, f64)>,
    seed: u64,
) -> Result<EntropyEstimate, EntropyError> {
    use rand::SeedableRng;
    let group = &m.group;
    let o = group.basepoint();
    let domain = &m.domain;

    // Quasi-uniform mesh of the domain: rejection-sampled points kept when
    // at least 0.6·spacing from all previous ones; the basepoint is node 0.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_7368);
    let mut mesh: Vec<HPoint> = vec![o.clone()];
    let min_sep = 0.6 * mesh_spacing;
    for _ in 0..30_000 {
        let p = crate::lattice::sample_ball_point(o, domain.sampling_radius(), &mut rng);
        if !domain.contains(&p) {
            continue;
        }
        if mesh.iter().all(|q| dist(q, &p) >= min_sep) {
            mesh.push(p);
        }
    }
    // Cheap isolation check before the expensive edge construction: the
    // basepoint must reach some mesh point within one hop.
    if mesh[1..].iter().all(|p| dist(o, p) > 2.0 * mesh_spacing) {
        return Err(EntropyError::MeshTooCoarse);
    }
    let mesh_extent = mesh
        .iter()
        .map(|p| dist(o, p))
        .fold(0.0, f64::max);
    let mesh_u: Vec<f64> = mesh.iter().map(|p| m.u_at(p)).collect();
    let conformal_floor = mesh_u
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
        .min(m.shift);

    // Quotient-level edges (i, j, δ): mesh point i connects to the δ-translate
    // of mesh point j. δ ranges over the orbit ball large enough to cover
    // 2·mesh_spacing hops between domain copies.
    let delta_radius = 2.0 * mesh_spacing + 2.0 * mesh_extent + 0.2;
    let delta_ball = orbit_ball(group, delta_radius)?;
    let deltas: Vec<HIsometry> = delta_ball
        .elements
        .iter()
        .map(|e| e.isometry.clone())
        .collect();
    struct QuotientEdge {
        j: u32,
        delta: u32,
        weight: f64,
    }
    let mut edges: Vec<Vec<QuotientEdge>> =
        (0..mesh.len()).map(|_| Vec::new()).collect();
    for (di, delta) in deltas.iter().enumerate() {
        for (j, pj) in mesh.iter().enumerate() {
            let q = delta.apply(pj);
            for (i, pi) in mesh.iter().enumerate() {
                if di == 0 && i == j {
                    continue;
                }
                let d = dist(pi, &q);
                if d <= 2.0 * mesh_spacing {
                    edges[i].push(QuotientEdge {
                        j: j as u32,
                        delta: di as u32,
                        weight: conformal_edge_length(m, pi, &q),
                    });
                }
            }
        }
    }
    if edges[0].is_empty() {
        return Err(EntropyError::MeshTooCoarse);
    }

    // Lazily replicated lift: replicas are group elements registered by
    // their basepoint image; per replica, products with each δ are cached.
    struct Replica {
        iso: HIsometry,
        products: Vec<u32>, // replica index per δ, u32::MAX = not yet formed
    }
    let mut dedup = SpatialDedup::new();
    let mut replicas: Vec<Replica> = Vec::new();
    dedup.insert(o).ok();
    replicas.push(Replica {
        iso: HIsometry::identity(group.dim()),
        products: vec![u32::MAX; deltas.len()],
    });
    // Hyperbolic-radius cap on replicas: conformal length ≥ e^{floor}·length.
    let replica_cap = r_max * (-conformal_floor).exp() + 2.0 * mesh_extent + 1.0;

    let node_id = |map: &mut HashMap<(u32, u32), u32>, dists: &mut Vec<f64>, key: (u32, u32)| {
        *map.entry(key).or_insert_with(|| {
            dists.push(f64::INFINITY);
            (dists.len() - 1) as u32
        })
    };
    let mut node_map: HashMap<(u32, u32), u32> = HashMap::new();
    let mut node_dist: Vec<f64> = Vec::new();
    let mut heap: BinaryHeap<Reverse<(HeapDist, u32, u32, u32)>> = BinaryHeap::new();
    let start = node_id(&mut node_map, &mut node_dist, (0, 0));
    node_dist[start as usize] = 0.0;
    heap.push(Reverse((HeapDist(0.0), start, 0, 0)));

    // Graph distances of basepoint lifts (mesh index 0), one per replica.
    let mut lift_dists: Vec<f64> = Vec::new();
    while let Some(Reverse((HeapDist(d), node, rep, mi))) = heap.pop() {
        if d > node_dist[node as usize] {
            continue;
        }
        if d > r_max {
            break;
        }
        if mi == 0 {
            lift_dists.push(d);
        }
        for e in &edges[mi as usize] {
            // Resolve the replica of the neighbor's group element.
            let target_rep = {
                let cached = replicas[rep as usize].products[e.delta as usize];
                if cached != u32::MAX {
                    cached
                } else {
                    let prod = replicas[rep as usize]
                        .iso
                        .compose(&deltas[e.delta as usize]);
                    let img = prod.apply(o);
                    if dist(o, &img) > replica_cap {
                        continue;
                    }
                    let idx = match dedup.insert(&img) {
                        Ok(_) => {
                            replicas.push(Replica {
                                iso: prod,
                                products: vec![u32::MAX; deltas.len()],
                            });
                            (replicas.len() - 1) as u32
                        }
                        Err(existing) => existing as u32,
                    };
                    replicas[rep as usize].products[e.delta as usize] = idx;
                    idx
                }
            };
            let key = (target_rep, e.j);
            let nid = node_id(&mut node_map, &mut node_dist, key);
            let nd = d + e.weight;
            if nd < node_dist[nid as usize] {
                node_dist[nid as usize] = nd;
                heap.push(Reverse((HeapDist(nd), nid, target_rep, e.j)));
            }
        }
    }
    if lift_dists.len() < 2 {
        return Err(EntropyError::MeshTooCoarse);
    }

    lift_dists.sort_by(f64::total_cmp);
    let grid = 24;
    let counts: Vec<(f64, usize)> = (0..=grid)
        .map(|k| {
            let r = r_max * k as f64 / grid as f64;
            (r, lift_dists.partition_point(|&d| d <= r))
        })
        .collect();
    let window = fit_window.unwrap_or((0.5 * r_max, r_max));
    fit_counts(&counts, window)
}

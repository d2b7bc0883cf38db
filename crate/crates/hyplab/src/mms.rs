//! Finite metric measure spaces and Gromov-Prokhorov distance estimation.
//!
//! The quotient surface is discretized into weighted finite metric spaces;
//! Gromov-Prokhorov proximity is then sandwiched between lower bounds from
//! distance-distribution invariants and upper bounds from explicit
//! couplings. The Prokhorov distance itself is computed exactly (to 1e−6)
//! by bisection over a max-flow feasibility test.

use crate::entropy::ConformalMetric;
use crate::geom::{dist, exp_map, log_map, HPoint};
use crate::lattice::{
    dirichlet_domain, orbit_ball, quotient_distance, sample_ball_point, LatticeError,
    LatticeGroup,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmsError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("point budget is 2000 (N² distance computations), got {0}")]
    TooManyPoints(usize),
    #[error("need at least one point")]
    Empty,
    #[error("{0} uncertified quotient distances, first at pair {1:?}")]
    UncertifiedDistances(usize, (usize, usize)),
    #[error("invalid metric measure space: {0}")]
    InvalidSpace(String),
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error("distance-distribution order must be 1 or 2, got {0}")]
    BadOrder(usize),
    #[error("sample graph is disconnected at node {0}")]
    Disconnected(usize),
}

pub const SCHEMA_VERSION: u32 = 1;
/// Hard cap on sample size: the distance matrix costs N² quotient-distance
/// computations.
pub const MAX_POINTS: usize = 2000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub metric: String,
    pub seed: u64,
}

/// A finite metric measure space: ids, pairwise distances, probability
/// weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteMMSpace {
    pub schema_version: u32,
    pub ids: Vec<String>,
    pub dist: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl FiniteMMSpace {
    pub fn new(
        ids: Vec<String>,
        dist: Vec<Vec<f64>>,
        weights: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, MmsError> {
        let s = Self {
            schema_version: SCHEMA_VERSION,
            ids,
            dist,
            weights,
            provenance,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i][j]
    }

    pub fn diameter(&self) -> f64 {
        self.dist
            .iter()
            .flat_map(|row| row.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Checks the metric and measure axioms: symmetry, zero diagonal,
    /// triangle inequality within 1e−8, probability weights within 1e−12.
    pub fn validate(&self) -> Result<(), MmsError> {
        let n = self.ids.len();
        if n == 0 {
            return Err(MmsError::Empty);
        }
        if self.dist.len() != n
            || self.dist.iter().any(|r| r.len() != n)
            || self.weights.len() != n
        {
            return Err(MmsError::InvalidSpace("shape mismatch".into()));
        }
        for i in 0..n {
            if self.dist[i][i] != 0.0 {
                return Err(MmsError::InvalidSpace(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                if self.dist[i][j] < 0.0 {
                    return Err(MmsError::InvalidSpace(format!(
                        "negative distance at ({i},{j})"
                    )));
                }
                if (self.dist[i][j] - self.dist[j][i]).abs() > 1e-10 {
                    return Err(MmsError::InvalidSpace(format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.dist[i][j] > self.dist[i][k] + self.dist[k][j] + 1e-8 {
                        return Err(MmsError::InvalidSpace(format!(
                            "triangle violation at ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(MmsError::InvalidSpace("negative weight".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MmsError::InvalidSpace(format!(
                "weights sum to {total}"
            )));
        }
        Ok(())
    }
}

/// Which metric to discretize.
pub enum MetricSpec<'a> {
    Hyperbolic(&'a LatticeGroup),
    Conformal(&'a ConformalMetric),
}

/// Poisson-disk filler spacing for the conformal shortest-path graph.
const MESH_SPACING: f64 = 0.3;
/// Graph edge cutoff (quotient base-metric length).
const EDGE_CUTOFF: f64 = 0.65;

/// Samples N points of the quotient proportional to the metric's volume
/// density, with pairwise quotient distances and uniform weights.
pub fn sample_mms(spec: &MetricSpec, n: usize, seed: u64) -> Result<FiniteMMSpace, MmsError> {
    if n == 0 {
        return Err(MmsError::Empty);
    }
    if n > MAX_POINTS {
        return Err(MmsError::TooManyPoints(n));
    }
    let group = match spec {
        MetricSpec::Hyperbolic(g) => *g,
        MetricSpec::Conformal(m) => m.group(),
    };
    let domain = dirichlet_domain(group, 7.0)?;
    let sr = domain.sampling_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Volume-density rejection: uniform for the base metric, e^{n·u} for a
    // conformal one (bounded by its value at the bump center).
    let mut points = Vec::with_capacity(n);
    let dim = group.dim();
    while points.len() < n {
        let p = sample_ball_point(group.basepoint(), sr, &mut rng);
        if !domain.contains(&p) {
            continue;
        }
        if let MetricSpec::Conformal(m) = spec {
            let cap = m.shift() + m.amplitude().max(0.0);
            let accept = ((dim as f64) * (m.u_at(&p) - cap)).exp();
            if rng.gen::<f64>() > accept {
                continue;
            }
        }
        points.push(p);
    }

    let dist_matrix = match spec {
        MetricSpec::Hyperbolic(_) => hyperbolic_distances(group, &points)?,
        MetricSpec::Conformal(m) => conformal_distances(m, &points, seed ^ 0x9e37)?,
    };

    let metric_name = match spec {
        MetricSpec::Hyperbolic(_) => format!("hyperbolic:{dim}"),
        MetricSpec::Conformal(m) => format!(
            "conformal:amplitude={},shift={}",
            m.amplitude(),
            m.shift()
        ),
    };
    FiniteMMSpace::new(
        (0..n).map(|i| format!("p{i}")).collect(),
        dist_matrix,
        vec![1.0 / n as f64; n],
        Provenance {
            metric: metric_name,
            seed,
        },
    )
}

fn hyperbolic_distances(
    group: &LatticeGroup,
    points: &[HPoint],
) -> Result<Vec<Vec<f64>>, MmsError> {
    let ball = orbit_ball(group, 8.5)?;
    let o = group.basepoint();
    let n = points.len();
    let rows: Vec<Vec<(f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j <= i {
                        return (0.0, true);
                    }
                    let qd = quotient_distance(&ball, o, &points[i], &points[j]);
                    (qd.value, qd.certified)
                })
                .collect()
        })
        .collect();
    let mut uncertified = Vec::new();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (v, ok) = rows[i][j];
            if !ok {
                uncertified.push((i, j));
            }
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    if let Some(&first) = uncertified.first() {
        return Err(MmsError::UncertifiedDistances(uncertified.len(), first));
    }
    Ok(m)
}

/// Shortest paths on an invariant proximity graph: sample points plus
/// Poisson-disk filler nodes, edges between quotient-close pairs weighted
/// by Simpson-integrated conformal length.
fn conformal_distances(
    m: &ConformalMetric,
    points: &[HPoint],
    seed: u64,
) -> Result<Vec<Vec<f64>>, MmsError> {
    let group = m.group().clone();
    let domain = m.domain().clone();
    let sr = domain.sampling_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut nodes: Vec<HPoint> = points.to_vec();
    let mut filler_tries = 0;
    while filler_tries < 20_000 {
        filler_tries += 1;
        let p = sample_ball_point(group.basepoint(), sr, &mut rng);
        if !domain.contains(&p) {
            continue;
        }
        if nodes.iter().all(|q| dist(&p, q) > 0.6 * MESH_SPACING) {
            nodes.push(p.clone());
        }
    }

    // Quotient-aware proximity: minimize over a small orbit ball.
    let ball = orbit_ball(&group, EDGE_CUTOFF + 2.0 * sr + 0.5)?;
    let nn = nodes.len();
    let adjacency: Vec<Vec<(usize, f64)>> = (0..nn)
        .into_par_iter()
        .map(|i| {
            let mut adj = Vec::new();
            for j in 0..nn {
                if j == i {
                    continue;
                }
                let mut best = f64::INFINITY;
                let mut best_img = None;
                for e in &ball.elements {
                    let img = e.isometry.apply(&nodes[j]);
                    let d = dist(&nodes[i], &img);
                    if d < best {
                        best = d;
                        best_img = Some(img);
                    }
                }
                if best <= EDGE_CUTOFF {
                    let img = best_img.unwrap();
                    adj.push((j, conformal_length(m, &nodes[i], &img)));
                }
            }
            adj
        })
        .collect();

    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|src| dijkstra(&adjacency, src, n))
        .collect::<Result<_, _>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            // Symmetrize away float drift between the two sweeps.
            out[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
        }
    }
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    Ok(out)
}

/// Simpson 5-point line integral of e^{u+s} along the geodesic.
fn conformal_length(m: &ConformalMetric, p: &HPoint, q: &HPoint) -> f64 {
    let l = dist(p, q);
    if l == 0.0 {
        return 0.0;
    }
    let direction = log_map(p, q).scale(1.0 / l);
    let weights = [1.0, 4.0, 2.0, 4.0, 1.0];
    let mut total = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let t = k as f64 / 4.0;
        let x = exp_map(&direction.scale(t * l));
        total += w * m.u_at(&x).exp();
    }
    l * total / 12.0
}

fn dijkstra(
    adjacency: &[Vec<(usize, f64)>],
    src: usize,
    targets: usize,
) -> Result<Vec<f64>, MmsError> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct D(f64);
    impl Eq for D {}
    impl PartialOrd for D {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for D {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }

    let mut best = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    best[src] = 0.0;
    heap.push(Reverse((D(0.0), src)));
    while let Some(Reverse((D(d), i))) = heap.pop() {
        if d > best[i] {
            continue;
        }
        for &(j, w) in &adjacency[i] {
            let nd = d + w;
            if nd < best[j] {
                best[j] = nd;
                heap.push(Reverse((D(nd), j)));
            }
        }
    }
    if let Some(i) = best[..targets].iter().position(|d| !d.is_finite()) {
        return Err(MmsError::Disconnected(i));
    }
    Ok(best[..targets].to_vec())
}

// ---------------------------------------------------------------------------
// Prokhorov distance by max-flow feasibility bisection.

/// Dinic max-flow on a small network with f64 capacities.
struct FlowNetwork {
    // to, cap, reverse-edge index
    edges: Vec<(usize, f64, usize)>,
    head: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            head: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64) {
        let a = self.edges.len();
        self.edges.push((to, cap, a + 1));
        self.edges.push((from, 0.0, a));
        self.head[from].push(a);
        self.head[to].push(a + 1);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        loop {
            // BFS levels.
            let mut level = vec![usize::MAX; self.head.len()];
            level[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(i) = queue.pop_front() {
                for &e in &self.head[i] {
                    let (to, cap, _) = self.edges[e];
                    if cap > 1e-12 && level[to] == usize::MAX {
                        level[to] = level[i] + 1;
                        queue.push_back(to);
                    }
                }
            }
            if level[t] == usize::MAX {
                return flow;
            }
            // DFS blocking flow.
            let mut iter = vec![0usize; self.head.len()];
            loop {
                let pushed = self.dfs(s, t, f64::INFINITY, &level, &mut iter);
                if pushed <= 1e-12 {
                    break;
                }
                flow += pushed;
            }
        }
    }

    fn dfs(&mut self, i: usize, t: usize, limit: f64, level: &[usize], iter: &mut [usize]) -> f64 {
        if i == t {
            return limit;
        }
        while iter[i] < self.head[i].len() {
            let e = self.head[i][iter[i]];
            let (to, cap, rev) = self.edges[e];
            if cap > 1e-12 && level[to] == level[i] + 1 {
                let pushed = self.dfs(to, t, limit.min(cap), level, iter);
                if pushed > 1e-12 {
                    self.edges[e].1 -= pushed;
                    self.edges[rev].1 += pushed;
                    return pushed;
                }
            }
            iter[i] += 1;
        }
        0.0
    }
}

/// Whether μ(A) ≤ ν(A^ε) + ε for all A, by Strassen duality: the bipartite
/// ε-neighborhood network carries flow ≥ 1 − ε.
fn prokhorov_feasible(space: &FiniteMMSpace, mu: &[f64], nu: &[f64], eps: f64) -> bool {
    let n = space.len();
    let (s, t) = (2 * n, 2 * n + 1);
    let mut net = FlowNetwork::new(2 * n + 2);
    for i in 0..n {
        net.add(s, i, mu[i]);
        net.add(n + i, t, nu[i]);
    }
    for i in 0..n {
        for j in 0..n {
            if space.d(i, j) <= eps + 1e-12 {
                net.add(i, n + j, f64::INFINITY);
            }
        }
    }
    net.max_flow(s, t) >= 1.0 - eps - 1e-9
}

/// Exact Prokhorov distance between two weight vectors on a common finite
/// metric space, to 1e−6.
pub fn prokhorov(space: &FiniteMMSpace, mu: &[f64], nu: &[f64]) -> Result<f64, MmsError> {
    let n = space.len();
    if mu.len() != n || nu.len() != n {
        return Err(MmsError::InvalidSpace("weight length mismatch".into()));
    }
    for w in mu.iter().chain(nu) {
        if *w < -1e-15 {
            return Err(MmsError::InvalidSpace("negative weight".into()));
        }
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if prokhorov_feasible(space, mu, nu, 0.0) {
        return Ok(0.0);
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if prokhorov_feasible(space, mu, nu, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Distance-distribution lower bounds.

/// A weighted distribution on the line, sorted by value.
fn sorted_atoms(values: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = values.collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

fn cdf_at(atoms: &[(f64, f64)], cum: &[f64], x: f64) -> f64 {
    // cum[i] = total weight of atoms[..=i].
    let k = atoms.partition_point(|(v, _)| *v <= x);
    if k == 0 {
        0.0
    } else {
        cum[k - 1]
    }
}

/// Prokhorov distance between two distributions on ℝ (exact 1-d check over
/// atom locations, bisected to 1e−9).
pub fn prokhorov_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let a = sorted_atoms(a.iter().copied());
    let b = sorted_atoms(b.iter().copied());
    let cum = |atoms: &[(f64, f64)]| {
        let mut c = Vec::with_capacity(atoms.len());
        let mut t = 0.0;
        for (_, w) in atoms {
            t += w;
            c.push(t);
        }
        c
    };
    let ca = cum(&a);
    let cb = cum(&b);
    let feasible = |eps: f64| -> bool {
        // F_a(t) ≤ F_b(t + ε) + ε at every atom of a, and symmetrically.
        for (i, (v, _)) in a.iter().enumerate() {
            if ca[i] > cdf_at(&b, &cb, v + eps) + eps + 1e-12 {
                return false;
            }
        }
        for (i, (v, _)) in b.iter().enumerate() {
            if cb[i] > cdf_at(&a, &ca, v + eps) + eps + 1e-12 {
                return false;
            }
        }
        true
    };
    if feasible(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Distribution of d(x, x′) under the product measure.
fn pair_distance_law(x: &FiniteMMSpace) -> Vec<(f64, f64)> {
    let n = x.len();
    let mut atoms = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            atoms.push((x.d(i, j), x.weights[i] * x.weights[j]));
        }
    }
    atoms
}

/// MC triples for the order-2 invariant.
const TRIPLE_SAMPLES: usize = 300;

/// Lower bound for the Gromov-Prokhorov distance from the order-k
/// distance-distribution invariant (k = 1 exact, k = 2 by MC over i.i.d.
/// triples). The invariant's comparison constant is taken as 1
/// (conservative).
pub fn gp_lower_bound(
    x: &FiniteMMSpace,
    y: &FiniteMMSpace,
    k: usize,
    seed: u64,
) -> Result<f64, MmsError> {
    match k {
        1 => Ok(prokhorov_1d(&pair_distance_law(x), &pair_distance_law(y))),
        2 => {
            // Common random numbers: identical spaces yield identical
            // triple clouds, so the bound vanishes exactly at X = Y.
            let sample_triples = |s: &FiniteMMSpace| -> Vec<[f64; 3]> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..TRIPLE_SAMPLES)
                    .map(|_| {
                        let pick = |rng: &mut ChaCha8Rng| {
                            let r: f64 = rng.gen();
                            let mut acc = 0.0;
                            for (i, w) in s.weights.iter().enumerate() {
                                acc += w;
                                if r <= acc {
                                    return i;
                                }
                            }
                            s.len() - 1
                        };
                        let (i, j, l) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
                        let mut t = [s.d(i, j), s.d(i, l), s.d(j, l)];
                        t.sort_by(f64::total_cmp);
                        t
                    })
                    .collect()
            };
            let tx = sample_triples(x);
            let ty = sample_triples(y);
            // Prokhorov between the two empirical clouds in (ℝ³, ℓ∞).
            let m = tx.len();
            let all: Vec<[f64; 3]> = tx.iter().chain(ty.iter()).copied().collect();
            let total = all.len();
            let mut d = vec![vec![0.0; total]; total];
            for i in 0..total {
                for j in 0..total {
                    d[i][j] = (0..3)
                        .map(|c| (all[i][c] - all[j][c]).abs())
                        .fold(0.0, f64::max);
                }
            }
            let space = FiniteMMSpace::new(
                (0..total).map(|i| format!("t{i}")).collect(),
                d,
                vec![1.0 / total as f64; total],
                Provenance {
                    metric: "triple-law".into(),
                    seed,
                },
            )?;
            let mut mu = vec![0.0; total];
            let mut nu = vec![0.0; total];
            for i in 0..m {
                mu[i] = 1.0 / m as f64;
                nu[m + i] = 1.0 / m as f64;
            }
            prokhorov(&space, &mu, &nu)
        }
        other => Err(MmsError::BadOrder(other)),
    }
}

// ---------------------------------------------------------------------------
// Coupling upper bounds.

/// A transport plan between two finite metric measure spaces.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub plan: Vec<Vec<f64>>,
}

impl Coupling {
    /// The identity plan for two samples on the same underlying points.
    pub fn identity(x: &FiniteMMSpace) -> Self {
        let n = x.len();
        let mut plan = vec![vec![0.0; n]; n];
        for (i, row) in plan.iter_mut().enumerate() {
            row[i] = x.weights[i];
        }
        Self { plan }
    }

    pub fn validate(&self, x: &FiniteMMSpace, y: &FiniteMMSpace) -> Result<(), MmsError> {
        if self.plan.len() != x.len() || self.plan.iter().any(|r| r.len() != y.len()) {
            return Err(MmsError::InvalidCoupling("shape mismatch".into()));
        }
        if self
            .plan
            .iter()
            .flat_map(|r| r.iter())
            .any(|p| *p < 0.0)
        {
            return Err(MmsError::InvalidCoupling("negative mass".into()));
        }
        for (i, row) in self.plan.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - x.weights[i]).abs() > 1e-10 {
                return Err(MmsError::InvalidCoupling(format!(
                    "row {i} sums to {s}, want {}",
                    x.weights[i]
                )));
            }
        }
        for j in 0..y.len() {
            let s: f64 = self.plan.iter().map(|r| r[j]).sum();
            if (s - y.weights[j]).abs() > 1e-10 {
                return Err(MmsError::InvalidCoupling(format!(
                    "column {j} sums to {s}, want {}",
                    y.weights[j]
                )));
            }
        }
        Ok(())
    }
}

/// Upper bound for the Gromov-Prokhorov distance from an explicit plan: the
/// smallest ε such that the plan⊗plan mass of pairs with distance
/// distortion above ε is at most ε.
pub fn coupling_upper_bound(
    x: &FiniteMMSpace,
    y: &FiniteMMSpace,
    coupling: &Coupling,
) -> Result<f64, MmsError> {
    coupling.validate(x, y)?;
    let support: Vec<(usize, usize, f64)> = coupling
        .plan
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(move |(j, p)| (i, j, *p))
        })
        .collect();
    let mut distortions: Vec<(f64, f64)> = Vec::with_capacity(support.len() * support.len());
    for &(i, j, p) in &support {
        for &(k, l, q) in &support {
            distortions.push(((x.d(i, k) - y.d(j, l)).abs(), p * q));
        }
    }
    distortions.sort_by(|a, b| a.0.total_cmp(&b.0));
    // H(ε) = mass with distortion > ε is a decreasing step function; the
    // answer is the smallest ε with H(ε) ≤ ε, found by scanning the steps.
    let total: f64 = distortions.iter().map(|(_, w)| w).sum();
    let mut idx = 0;
    let mut below = 0.0;
    let mut prev_value: f64 = 0.0;
    loop {
        // On [prev_value, next_value): H = total − below.
        let h = total - below;
        let next_value = distortions.get(idx).map(|(v, _)| *v);
        let candidate = prev_value.max(h);
        match next_value {
            Some(nv) if candidate >= nv => {
                // Absorb all atoms at nv and advance.
                while idx < distortions.len() && distortions[idx].0 <= nv {
                    below += distortions[idx].1;
                    idx += 1;
                }
                prev_value = nv;
            }
            _ => return Ok(candidate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{normalize_volume, ConformalMetric};
    use crate::lattice::preset;

    fn octagon() -> LatticeGroup {
        preset("genus2-octagon").unwrap()
    }

    fn tiny_space_from(d: Vec<Vec<f64>>, n: usize) -> FiniteMMSpace {
        tiny_space(d, vec![1.0 / n as f64; n])
    }

    fn tiny_space(d: Vec<Vec<f64>>, w: Vec<f64>) -> FiniteMMSpace {
        let n = w.len();
        FiniteMMSpace::new(
            (0..n).map(|i| format!("q{i}")).collect(),
            d,
            w,
            Provenance {
                metric: "test".into(),
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn single_point_space() {
        let g = octagon();
        let s = sample_mms(&MetricSpec::Hyperbolic(&g), 1, 90).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.dist, vec![vec![0.0]]);
        assert_eq!(s.weights, vec![1.0]);
    }

    #[test]
    fn hyperbolic_sample_valid_and_bounded() {
        let g = octagon();
        let s = sample_mms(&MetricSpec::Hyperbolic(&g), 60, 91).unwrap();
        s.validate().unwrap();
        // Quotient diameter is at most twice the covering radius of the
        // Dirichlet domain.
        let domain = dirichlet_domain(&g, 7.0).unwrap();
        assert!(s.diameter() <= 2.0 * domain.sampling_radius());
    }

    #[test]
    fn sample_too_large_rejected() {
        let g = octagon();
        assert!(matches!(
            sample_mms(&MetricSpec::Hyperbolic(&g), 2001, 0),
            Err(MmsError::TooManyPoints(2001))
        ));
    }

    #[test]
    fn distance_histograms_self_consistent() {
        let g = octagon();
        let a = sample_mms(&MetricSpec::Hyperbolic(&g), 500, 92).unwrap();
        let b = sample_mms(&MetricSpec::Hyperbolic(&g), 500, 93).unwrap();
        let la = sorted_atoms(pair_distance_law(&a).into_iter());
        let lb = sorted_atoms(pair_distance_law(&b).into_iter());
        // Two-sample Kolmogorov-Smirnov over the merged support.
        let cum = |atoms: &[(f64, f64)]| {
            let mut c = Vec::with_capacity(atoms.len());
            let mut t = 0.0;
            for (_, w) in atoms {
                t += w;
                c.push(t);
            }
            c
        };
        let (ca, cb) = (cum(&la), cum(&lb));
        let mut ks: f64 = 0.0;
        for (v, _) in la.iter().chain(lb.iter()) {
            ks = ks.max((cdf_at(&la, &ca, *v) - cdf_at(&lb, &cb, *v)).abs());
        }
        assert!(ks < 0.08, "KS statistic {ks}");
    }

    #[test]
    fn conformal_sample_close_to_hyperbolic_at_small_amplitude() {
        let g = octagon();
        let m = ConformalMetric::new(&g, g.basepoint(), 1.2, 0.05).unwrap();
        let m = normalize_volume(&m, 40_000, 94);
        let s = sample_mms(&MetricSpec::Conformal(&m), 40, 95).unwrap();
        s.validate().unwrap();
        let h = sample_mms(&MetricSpec::Hyperbolic(&g), 40, 95).unwrap();
        let lb = gp_lower_bound(&s, &h, 1, 0).unwrap();
        assert!(lb < 0.2, "lower bound {lb} too large for a small bump");
    }

    #[test]
    fn prokhorov_identical_measures() {
        let s = tiny_space(
            vec![
                vec![0.0, 1.0, 2.0],
                vec![1.0, 0.0, 1.5],
                vec![2.0, 1.5, 0.0],
            ],
            vec![0.5, 0.3, 0.2],
        );
        let p = prokhorov(&s, &s.weights, &s.weights).unwrap();
        assert!(p < 1e-9);
    }

    #[test]
    fn prokhorov_point_masses() {
        for d in [0.3, 0.8, 2.5] {
            let s = tiny_space(vec![vec![0.0, d], vec![d, 0.0]], vec![0.5, 0.5]);
            let p = prokhorov(&s, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
            assert!(
                (p - d.min(1.0)).abs() < 2e-6,
                "distance {d}: got {p}"
            );
        }
    }

    /// Exhaustive-subset Prokhorov for ≤ 12 points: bisect on ε checking
    /// μ(A) ≤ ν(A^ε) + ε over every subset A, both directions.
    fn prokhorov_bruteforce(space: &FiniteMMSpace, mu: &[f64], nu: &[f64]) -> f64 {
        let n = space.len();
        assert!(n <= 12);
        let feasible = |eps: f64| -> bool {
            for mask in 1u32..(1 << n) {
                let in_a = |i: usize| mask & (1 << i) != 0;
                let enlarged = |i: usize| {
                    (0..n).any(|j| in_a(j) && space.d(i, j) <= eps + 1e-12)
                };
                let (mut ma, mut na, mut mb, mut nb) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    if in_a(i) {
                        ma += mu[i];
                        nb += nu[i];
                    }
                    if enlarged(i) {
                        na += nu[i];
                        mb += mu[i];
                    }
                }
                if ma > na + eps + 1e-12 || nb > mb + eps + 1e-12 {
                    return false;
                }
            }
            true
        };
        if feasible(0.0) {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
        let s: f64 = w.iter().sum();
        for wi in w.iter_mut() {
            *wi /= s;
        }
        w
    }

    fn random_metric(n: usize, rng: &mut ChaCha8Rng) -> FiniteMMSpace {
        // Points on a segment induce a valid metric.
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0).collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d[i][j] = (xs[i] - xs[j]).abs();
            }
        }
        tiny_space(d, vec![1.0 / n as f64; n])
    }

    #[test]
    fn prokhorov_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        for trial in 0..12 {
            let n = 3 + (trial % 8);
            let s = random_metric(n, &mut rng);
            let mu = random_weights(n, &mut rng);
            let nu = random_weights(n, &mut rng);
            let flow = prokhorov(&s, &mu, &nu).unwrap();
            let brute = prokhorov_bruteforce(&s, &mu, &nu);
            assert!(
                (flow - brute).abs() < 1e-6,
                "trial {trial}: flow {flow} vs brute {brute}"
            );
        }
    }

    #[test]
    fn prokhorov_metric_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for _ in 0..6 {
            let n = 6;
            let s = random_metric(n, &mut rng);
            let a = random_weights(n, &mut rng);
            let b = random_weights(n, &mut rng);
            let c = random_weights(n, &mut rng);
            let dab = prokhorov(&s, &a, &b).unwrap();
            let dba = prokhorov(&s, &b, &a).unwrap();
            let dbc = prokhorov(&s, &b, &c).unwrap();
            let dac = prokhorov(&s, &a, &c).unwrap();
            assert!((dab - dba).abs() < 1e-6);
            assert!(dac <= dab + dbc + 1e-6, "triangle: {dac} > {dab} + {dbc}");
        }
    }

    #[test]
    fn gp_lower_bound_identity_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(98);
        let x = random_metric(8, &mut rng);
        assert!(gp_lower_bound(&x, &x, 1, 0).unwrap() < 1e-12);
        assert!(gp_lower_bound(&x, &x, 2, 5).unwrap() < 1e-9);
        assert!(matches!(
            gp_lower_bound(&x, &x, 3, 0),
            Err(MmsError::BadOrder(3))
        ));

        let mut doubled = x.clone();
        for row in doubled.dist.iter_mut() {
            for v in row.iter_mut() {
                *v *= 2.0;
            }
        }
        let lb = gp_lower_bound(&x, &doubled, 1, 0).unwrap();
        let direct = prokhorov_1d(&pair_distance_law(&x), &pair_distance_law(&doubled));
        assert!(lb > 0.0);
        assert!((lb - direct).abs() < 1e-12);
    }

    #[test]
    fn gp_lower_bound_self_consistency() {
        let g = octagon();
        let a = sample_mms(&MetricSpec::Hyperbolic(&g), 500, 99).unwrap();
        let b = sample_mms(&MetricSpec::Hyperbolic(&g), 500, 100).unwrap();
        let lb = gp_lower_bound(&a, &b, 1, 0).unwrap();
        assert!(lb < 0.08, "self-consistency bound {lb}");
    }

    #[test]
    fn doubling_sample_size_shrinks_self_consistency() {
        let g = octagon();
        let mut ratios = Vec::new();
        for seed in 0..5u64 {
            let small_a = sample_mms(&MetricSpec::Hyperbolic(&g), 150, 200 + 2 * seed).unwrap();
            let small_b =
                sample_mms(&MetricSpec::Hyperbolic(&g), 150, 201 + 2 * seed).unwrap();
            let big_a = sample_mms(&MetricSpec::Hyperbolic(&g), 300, 300 + 2 * seed).unwrap();
            let big_b = sample_mms(&MetricSpec::Hyperbolic(&g), 300, 301 + 2 * seed).unwrap();
            let small = gp_lower_bound(&small_a, &small_b, 1, 0).unwrap();
            let big = gp_lower_bound(&big_a, &big_b, 1, 0).unwrap();
            ratios.push(big / small);
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[2];
        assert!(
            (0.25..=1.0).contains(&median),
            "median shrink ratio {median} (ratios {ratios:?})"
        );
    }

    #[test]
    fn coupling_identity_same_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let x = random_metric(10, &mut rng);
        let ub = coupling_upper_bound(&x, &x, &Coupling::identity(&x)).unwrap();
        assert!(ub < 1e-12);
    }

    #[test]
    fn coupling_uniform_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let x = random_metric(10, &mut rng);
        let lambda = 1.25;
        let mut y = x.clone();
        for row in y.dist.iter_mut() {
            for v in row.iter_mut() {
                *v *= lambda;
            }
        }
        let ub = coupling_upper_bound(&x, &y, &Coupling::identity(&x)).unwrap();
        assert!(
            ub <= (lambda - 1.0) * x.diameter() + 1e-9,
            "ub {ub} vs distortion bound {}",
            (lambda - 1.0) * x.diameter()
        );
    }

    #[test]
    fn coupling_invalid_marginals_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let x = random_metric(5, &mut rng);
        let mut c = Coupling::identity(&x);
        c.plan[0][0] += 0.1;
        assert!(matches!(
            coupling_upper_bound(&x, &x, &c),
            Err(MmsError::InvalidCoupling(_))
        ));
    }

    #[test]
    fn sandwich_consistency() {
        // The lower bound can never exceed an upper bound from any valid
        // plan.
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        for _ in 0..5 {
            let x = random_metric(9, &mut rng);
            let s = 1.0 + 0.3 * rng.gen::<f64>();
            let mut y = x.clone();
            for row in y.dist.iter_mut() {
                for v in row.iter_mut() {
                    *v *= s;
                }
            }
            let lb = gp_lower_bound(&x, &y, 1, 0).unwrap();
            let ub = coupling_upper_bound(&x, &y, &Coupling::identity(&x)).unwrap();
            assert!(lb <= ub + 1e-6, "sandwich violated: {lb} > {ub}");
        }
    }

    #[test]
    fn bump_amplitude_sweep_upper_bound_decreases() {
        // Identity-plan upper bound between base-metric and conformal
        // distances on one fixed point set shrinks with the bump amplitude.
        let g = octagon();
        let domain = dirichlet_domain(&g, 7.0).unwrap();
        let sr = domain.sampling_radius();
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        let mut points = Vec::new();
        while points.len() < 35 {
            let p = sample_ball_point(g.basepoint(), sr, &mut rng);
            if domain.contains(&p) {
                points.push(p);
            }
        }
        let make = |d: Vec<Vec<f64>>| {
            tiny_space_from(d, points.len())
        };
        let base = make(hyperbolic_distances(&g, &points).unwrap());
        let mut bounds = Vec::new();
        for amplitude in [0.4, 0.2, 0.05] {
            let m = ConformalMetric::new(&g, g.basepoint(), 1.2, amplitude).unwrap();
            let s = make(conformal_distances(&m, &points, 106).unwrap());
            let ub = coupling_upper_bound(&base, &s, &Coupling::identity(&base)).unwrap();
            bounds.push(ub);
        }
        assert!(
            bounds[0] >= bounds[2],
            "upper bounds not shrinking: {bounds:?}"
        );
    }

    #[test]
    fn json_roundtrip_with_version() {
        let g = octagon();
        let s = sample_mms(&MetricSpec::Hyperbolic(&g), 12, 106).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"schema_version\":1"));
        let back: FiniteMMSpace = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.ids, s.ids);
        assert_eq!(back.dist, s.dist);
    }
}

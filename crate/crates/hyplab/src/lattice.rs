//! Finitely generated discrete isometry groups of H^n.
//!
//! Provides orbit-ball enumeration (breadth-first over words with geometric
//! pruning and spatial dedup), Dirichlet fundamental domains at the
//! basepoint, folding of points into the domain, quotient distances, and the
//! built-in example groups:
//!
//! - `genus2-octagon`: the cocompact Fuchsian group of a genus-2 surface,
//!   side pairings of the regular hyperbolic octagon with angle sum 2π
//! - `free2`: a rank-2 Schottky group of H² (translations along orthogonal
//!   axes), free on its generators
//! - `figure-eight`: the Kleinian lattice of the figure-eight knot complement
//!   (non-cocompact, n = 3); validation only, its orbit growth exponent is
//!   still n−1 = 2
//!
//! Custom groups load from a plain text file: header `dim n model
//! {so(n,1)|sl2r|sl2c}`, then one matrix per blank-line-separated block,
//! row-major reals (complex entries as re/im pairs for `sl2c`).

use crate::geom::{
    self, dist, from_sl2c, from_sl2r, frame_at, rel_coord_diff, GeomError, HIsometry, HPoint,
    HTangent, MAX_TRUSTED_RADIUS,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use thiserror::Error;

/// Spatial dedup tolerance for orbit points, as a relative coordinate
/// discrepancy (absolute error scaled by cosh of the distance).
pub const DEDUP_TOL: f64 = 1e-7;

/// Default cap on enumerated orbit elements.
pub const DEFAULT_ORBIT_BUDGET: usize = 4_000_000;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("orbit budget exceeded at {enumerated} elements (radius {radius})")]
    OrbitBudgetExceeded { enumerated: usize, radius: f64 },
    #[error("radius {radius} exceeds the trusted radius {max}")]
    RadiusTooLarge { radius: f64, max: f64 },
    #[error("wall radius {radius} too small: empty wall set")]
    RadiusTooSmall { radius: f64 },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("generator {index} fixes the basepoint (moves it by {displacement:.3e})")]
    FixesBasepoint { index: usize, displacement: f64 },
    #[error("group file parse error: {0}")]
    Parse(String),
    #[error("failed to fold point into the fundamental domain")]
    FoldFailure,
}

/// A word in the generators, stored as generator indices.
pub type Word = Vec<usize>;

/// Renders a word like `a.B.c` (capital = inverse) for labels and reports.
pub fn word_label(word: &Word, group: &LatticeGroup) -> String {
    if word.is_empty() {
        return "e".to_string();
    }
    word.iter()
        .map(|&i| group.generator_name(i))
        .collect::<Vec<_>>()
        .join(".")
}

/// A finitely generated discrete isometry group with a fixed basepoint.
#[derive(Debug, Clone)]
pub struct LatticeGroup {
    name: String,
    dim: usize,
    /// Closed under inverses: `inverse_of[i]` is the index of generators[i]⁻¹.
    generators: Vec<HIsometry>,
    inverse_of: Vec<usize>,
    basepoint: HPoint,
}

impl LatticeGroup {
    /// Builds a group from a list of generators; inverses are appended
    /// automatically for any generator whose inverse is not already listed.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        generators: Vec<HIsometry>,
    ) -> Result<Self, LatticeError> {
        let basepoint = HPoint::origin(dim);
        let mut gens = generators;
        // Close under inverses (an involution is its own inverse).
        let mut inverse_of = vec![usize::MAX; gens.len()];
        let mut i = 0;
        while i < gens.len() {
            if inverse_of[i] == usize::MAX {
                let inv = gens[i].inverse();
                let found = gens
                    .iter()
                    .position(|g| (g.matrix() - inv.matrix()).abs().max() < 1e-9);
                match found {
                    Some(j) => {
                        inverse_of[i] = j;
                        inverse_of[j] = i;
                    }
                    None => {
                        gens.push(inv);
                        inverse_of.push(i);
                        inverse_of[i] = gens.len() - 1;
                    }
                }
            }
            i += 1;
        }
        for (i, g) in gens.iter().enumerate() {
            let d = dist(&basepoint, &g.apply(&basepoint));
            if d <= 1e-6 {
                return Err(LatticeError::FixesBasepoint {
                    index: i,
                    displacement: d,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            generators: gens,
            inverse_of,
            basepoint,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basepoint(&self) -> &HPoint {
        &self.basepoint
    }

    pub fn generators(&self) -> &[HIsometry] {
        &self.generators
    }

    pub fn inverse_index(&self, i: usize) -> usize {
        self.inverse_of[i]
    }

    /// Short display name for generator i: a, b, c, … for the first of each
    /// inverse pair, the capital letter for the inverse.
    pub fn generator_name(&self, i: usize) -> String {
        let primary = i.min(self.inverse_of[i]);
        let letter = (b'a' + (primary % 26) as u8) as char;
        if i <= self.inverse_of[i] {
            letter.to_string()
        } else {
            letter.to_ascii_uppercase().to_string()
        }
    }

    /// Largest displacement of the basepoint by a single generator.
    pub fn max_generator_displacement(&self) -> f64 {
        self.generators
            .iter()
            .map(|g| dist(&self.basepoint, &g.apply(&self.basepoint)))
            .fold(0.0, f64::max)
    }

    /// Smallest displacement of the basepoint by a single generator.
    pub fn min_generator_displacement(&self) -> f64 {
        self.generators
            .iter()
            .map(|g| dist(&self.basepoint, &g.apply(&self.basepoint)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Evaluates a word as an isometry.
    pub fn word_isometry(&self, word: &Word) -> HIsometry {
        let mut g = HIsometry::identity(self.dim);
        for &i in word {
            g = g.compose(&self.generators[i]);
        }
        g
    }
}

/// One enumerated orbit element.
#[derive(Debug, Clone)]
pub struct OrbitElement {
    pub word: Word,
    pub isometry: HIsometry,
    pub point: HPoint,
    pub dist_to_o: f64,
}

/// The orbit of the basepoint within radius R, with shortest found words.
#[derive(Debug, Clone)]
pub struct OrbitBall {
    pub radius: f64,
    pub elements: Vec<OrbitElement>,
    /// Set when the element budget was hit; the listing is then partial.
    pub truncated: bool,
}

impl OrbitBall {
    /// Number of orbit points with dist ≤ r (elements are sorted by
    /// distance, so this is a binary search).
    pub fn count_within(&self, r: f64) -> usize {
        self.elements.partition_point(|e| e.dist_to_o <= r)
    }
}

/// Spatial hash for orbit dedup, keyed by quantized Poincaré-ball
/// coordinates xᵢ/(1+x₀) (bounded, so a fixed cell size works at any radius).
pub(crate) struct SpatialDedup {
    cell: f64,
    map: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<HPoint>,
}

impl SpatialDedup {
    pub(crate) fn new() -> Self {
        Self {
            cell: 1e-9,
            map: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn ball_coords(p: &HPoint) -> Vec<f64> {
        let c = p.coords();
        (1..c.len()).map(|i| c[i] / (1.0 + c[0])).collect()
    }

    fn key(&self, ball: &[f64]) -> Vec<i64> {
        ball.iter().map(|x| (x / self.cell).floor() as i64).collect()
    }

    /// Returns the index of a duplicate if present, otherwise inserts.
    pub(crate) fn insert(&mut self, p: &HPoint) -> Result<usize, usize> {
        let ball = Self::ball_coords(p);
        let base_key = self.key(&ball);
        let n = ball.len();
        // Scan the 3^n neighborhood of the cell.
        let mut offsets = vec![0i64; n];
        loop {
            let k: Vec<i64> = base_key
                .iter()
                .zip(&offsets)
                .map(|(a, o)| a + (o - 1))
                .collect();
            if let Some(bucket) = self.map.get(&k) {
                for &idx in bucket {
                    if rel_coord_diff(&self.points[idx], p) < DEDUP_TOL {
                        return Err(idx);
                    }
                }
            }
            // Advance the mixed-radix offset counter.
            let mut carry = true;
            for o in offsets.iter_mut() {
                if carry {
                    *o += 1;
                    if *o == 3 {
                        *o = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        let idx = self.points.len();
        self.points.push(p.clone());
        self.map.entry(base_key).or_default().push(idx);
        Ok(idx)
    }
}

/// Breadth-first orbit enumeration with geometric pruning: a word is extended
/// only while its point lies within R + max generator displacement.
pub fn orbit_ball(group: &LatticeGroup, radius: f64) -> Result<OrbitBall, LatticeError> {
    orbit_ball_with_budget(group, radius, DEFAULT_ORBIT_BUDGET)
}

pub fn orbit_ball_with_budget(
    group: &LatticeGroup,
    radius: f64,
    budget: usize,
) -> Result<OrbitBall, LatticeError> {
    if radius > MAX_TRUSTED_RADIUS {
        return Err(LatticeError::RadiusTooLarge {
            radius,
            max: MAX_TRUSTED_RADIUS,
        });
    }
    let o = group.basepoint();
    let prune_radius = radius + group.max_generator_displacement();
    let mut dedup = SpatialDedup::new();
    let mut elements: Vec<OrbitElement> = Vec::new();
    let mut truncated = false;

    let id = OrbitElement {
        word: Vec::new(),
        isometry: HIsometry::identity(group.dim()),
        point: o.clone(),
        dist_to_o: 0.0,
    };
    dedup.insert(&id.point).ok();
    elements.push(id);

    // Frontier holds indices into `elements` (all within the prune radius).
    let mut frontier: Vec<usize> = vec![0];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        'outer: for &ei in &frontier {
            for (gi, g) in group.generators().iter().enumerate() {
                // Skip immediate backtracking.
                if let Some(&last) = elements[ei].word.last() {
                    if group.inverse_index(last) == gi {
                        continue;
                    }
                }
                let iso = elements[ei].isometry.compose(g);
                let point = iso.apply(o);
                let d = dist(o, &point);
                if d > prune_radius {
                    continue;
                }
                if dedup.insert(&point).is_err() {
                    continue;
                }
                if elements.len() >= budget {
                    truncated = true;
                    break 'outer;
                }
                let mut word = elements[ei].word.clone();
                word.push(gi);
                elements.push(OrbitElement {
                    word,
                    isometry: iso,
                    point,
                    dist_to_o: d,
                });
                next.push(elements.len() - 1);
            }
        }
        if truncated {
            break;
        }
        frontier = next;
    }

    let mut elements: Vec<OrbitElement> = elements
        .into_iter()
        .filter(|e| e.dist_to_o <= radius + 1e-9)
        .collect();
    elements.sort_by(|a, b| a.dist_to_o.total_cmp(&b.dist_to_o));
    if truncated {
        return Err(LatticeError::OrbitBudgetExceeded {
            enumerated: elements.len(),
            radius,
        });
    }
    Ok(OrbitBall {
        radius,
        elements,
        truncated,
    })
}

/// A Dirichlet fundamental domain at the basepoint: x ∈ D iff
/// dist(x, o) ≤ dist(x, γ·o) for every wall neighbor γ·o.
#[derive(Debug, Clone)]
pub struct DirichletDomain {
    center: HPoint,
    walls: Vec<OrbitElement>,
    bounding_radius: f64,
    sampling_radius: f64,
}

impl DirichletDomain {
    pub fn center(&self) -> &HPoint {
        &self.center
    }

    pub fn walls(&self) -> &[OrbitElement] {
        &self.walls
    }

    /// Radius of a ball around the center certified to contain the domain.
    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Smaller ball still containing the domain, measured by a dense
    /// directional scan of the boundary (2-d cocompact domains only; equals
    /// `bounding_radius` otherwise). Tightens Monte-Carlo sampling.
    pub fn sampling_radius(&self) -> f64 {
        self.sampling_radius
    }

    /// Membership, with ties tolerated up to 1e-12 toward the center (the
    /// measurable tie rule lives in `fold`, which picks the lexicographically
    /// smallest word among minimizers).
    pub fn contains(&self, x: &HPoint) -> bool {
        let d0 = dist(&self.center, x);
        if d0 > self.bounding_radius + 1e-9 {
            return false;
        }
        self.walls
            .iter()
            .all(|w| d0 <= dist(&w.point, x) + 1e-12)
    }
}

/// Builds the Dirichlet domain at the basepoint, with walls read off the
/// orbit ball of radius `wall_radius`.
pub fn dirichlet_domain(
    group: &LatticeGroup,
    wall_radius: f64,
) -> Result<DirichletDomain, LatticeError> {
    let ball = orbit_ball(group, wall_radius)?;
    let walls: Vec<OrbitElement> = ball
        .elements
        .iter()
        .filter(|e| !e.word.is_empty())
        .cloned()
        .collect();
    if walls.is_empty() {
        return Err(LatticeError::RadiusTooSmall {
            radius: wall_radius,
        });
    }
    // Any point of D is within half the nearest-neighbor distance … of no
    // wall; a safe bounding radius is half the wall radius (beyond that the
    // wall set cannot certify membership).
    let bounding_radius = wall_radius / 2.0;
    let mut domain = DirichletDomain {
        center: group.basepoint().clone(),
        walls,
        bounding_radius,
        sampling_radius: bounding_radius,
    };
    if group.dim() == 2 {
        // Directional boundary scan: for each direction, bisect for the
        // largest radius still in the domain; the circumradius plus a margin
        // for scan gaps tightens the sampling ball. Skipped when the scan
        // reaches the cap (non-cocompact domains are unbounded).
        let scan_dirs = 1440;
        let frame = frame_at(&domain.center);
        let mut max_r: f64 = 0.0;
        for k in 0..scan_dirs {
            let phi = 2.0 * PI * k as f64 / scan_dirs as f64;
            let dir = frame[0].scale(phi.cos()).add(&frame[1].scale(phi.sin()));
            let (mut lo, mut hi) = (0.0f64, bounding_radius);
            if domain.contains(&geom::exp_map(&dir.scale(hi))) {
                max_r = bounding_radius;
                break;
            }
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if domain.contains(&geom::exp_map(&dir.scale(mid))) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            max_r = max_r.max(hi);
        }
        if max_r < bounding_radius {
            domain.sampling_radius = (max_r + 0.05).min(bounding_radius);
        }
    }
    Ok(domain)
}

/// Result of folding a point into the fundamental domain.
#[derive(Debug, Clone)]
pub struct Folded {
    /// γ with γ⁻¹·x ∈ D (so x ∈ γ·D).
    pub isometry: HIsometry,
    pub word: Word,
    /// γ⁻¹·x, the representative inside D.
    pub point: HPoint,
}

/// Folds x into the Dirichlet domain: greedy descent over the wall pairings,
/// with tie-breaking by lexicographic word order on the wall set.
pub fn fold(
    group: &LatticeGroup,
    domain: &DirichletDomain,
    x: &HPoint,
) -> Result<Folded, LatticeError> {
    let o = domain.center();
    let mut current = x.clone();
    let mut word: Word = Vec::new();
    // Each step strictly reduces dist(·, o) by a definite amount, so this
    // terminates for any point that folds into the certified region.
    for _ in 0..100_000 {
        let d0 = dist(&current, o);
        let mut best: Option<(f64, usize)> = None;
        for (wi, w) in domain.walls.iter().enumerate() {
            let d = dist(&current, &w.point);
            if d < d0 - 1e-12 && best.map_or(true, |(bd, _)| d < bd - 1e-12) {
                best = Some((d, wi));
            }
        }
        match best {
            Some((_, wi)) => {
                let w = &domain.walls[wi];
                current = w.isometry.inverse().apply(&current);
                word.extend_from_slice(&w.word);
            }
            None => {
                // Local minimum over the wall set. Boundary ties resolve by
                // lexicographic word order; the empty word (identity) is
                // smallest, so tied points stay with the current copy.
                let iso = group.word_isometry(&word);
                return Ok(Folded {
                    isometry: iso,
                    word,
                    point: current,
                });
            }
        }
    }
    Err(LatticeError::FoldFailure)
}

/// A quotient distance value together with its certification status.
#[derive(Debug, Clone, Copy)]
pub struct QuotientDistance {
    pub value: f64,
    /// True when the search radius provably contains the minimizing γ.
    pub certified: bool,
}

/// dist in M = H^n/Γ: min over γ in the orbit ball of dist(p, γ·q).
pub fn quotient_distance(
    ball: &OrbitBall,
    o: &HPoint,
    p: &HPoint,
    q: &HPoint,
) -> QuotientDistance {
    let mut best = f64::INFINITY;
    for e in &ball.elements {
        let d = dist(p, &e.isometry.apply(q));
        if d < best {
            best = d;
        }
    }
    // Any γ outside the ball satisfies dist(p, γq) ≥ dist(o, γo) − dist(o,p)
    // − dist(o,q) > best when the ball radius clears that margin.
    let certified = ball.radius - dist(o, p) - dist(o, q) >= best - 1e-12;
    QuotientDistance {
        value: best,
        certified,
    }
}

/// The regular hyperbolic octagon with interior angle π/4: apothem
/// ρ = arccosh(cot π/8), paired sides, angle sum 2π at the single vertex
/// cycle. `pattern[i] = (j, label)` pairs edge i with edge j.
fn octagon_side_pairings() -> Result<Vec<HIsometry>, LatticeError> {
    let rho = cot(PI / 8.0).acosh();
    let o = HPoint::origin(2);

    // Edge midpoints m_k at angle (2k+1)π/8, distance ρ; frames (u, n) with
    // n the outward radial direction and u the counterclockwise boundary
    // tangent.
    let midpoint = |k: usize| -> (HPoint, HTangent, HTangent) {
        let phi = (2.0 * k as f64 + 1.0) * PI / 8.0;
        let frame = frame_at(&o);
        let radial = frame[0].scale(phi.cos()).add(&frame[1].scale(phi.sin()));
        let m = geom::exp_map(&radial.scale(rho));
        let n = geom::dist_gradient(&o, &m).expect("midpoint is off-center");
        // Rotate n by +π/2 at m for the boundary tangent; in the hyperboloid
        // model the spatial part rotates, the time component stays aligned.
        let u = rotate_tangent_quarter(&m, &n);
        (m, u, n)
    };

    // Pairing pattern chosen so that a, b, c, d satisfy the genus-2 surface
    // relation a·b·a⁻¹·b⁻¹·c·d·c⁻¹·d⁻¹ = id: the (j, i) orientation of the
    // second and fourth pairs replaces those generators by their inverses.
    let pairs = [(0usize, 2usize), (3, 1), (4, 6), (7, 5)];
    let mut gens = Vec::new();
    for &(i, j) in &pairs {
        let (mi, ui, ni) = midpoint(i);
        let (mj, uj, nj) = midpoint(j);
        // γ maps (m_j; u_j, n_j) to (m_i; -u_i, -n_i): interior crosses to
        // the far side of edge i, orientation preserved.
        let g = HIsometry::from_frames(
            &mj,
            &[uj, nj],
            &mi,
            &[ui.scale(-1.0), ni.scale(-1.0)],
        )?;
        gens.push(g);
    }
    Ok(gens)
}

fn cot(x: f64) -> f64 {
    1.0 / x.tan()
}

/// Rotates a unit tangent by +π/2 within the tangent plane at m.
fn rotate_tangent_quarter(m: &HPoint, v: &HTangent) -> HTangent {
    // Complete (v) to an orthonormal tangent basis and return the orthogonal
    // vector with consistent orientation det(m, v, w) > 0.
    let frame = frame_at(m);
    let a = v.inner(&frame[0]);
    let b = v.inner(&frame[1]);
    // w = -b e1 + a e2 rotates by +π/2 in the (e1, e2) frame.
    let w = frame[0].scale(-b).add(&frame[1].scale(a));
    w.normalized()
}

/// Built-in example groups.
pub fn preset(name: &str) -> Result<LatticeGroup, LatticeError> {
    match name {
        "genus2-octagon" => {
            let gens = octagon_side_pairings()?;
            LatticeGroup::new("genus2-octagon", 2, gens)
        }
        "free2" => {
            let a = HIsometry::translation(2, 1, 4.0);
            let b = HIsometry::translation(2, 2, 4.0);
            LatticeGroup::new("free2", 2, vec![a, b])
        }
        "figure-eight" => {
            let one = Complex64::new(1.0, 0.0);
            let zero = Complex64::new(0.0, 0.0);
            // ω = e^{iπ/3}; the standard parabolic generators in PSL(2, O₃).
            let omega = Complex64::new(0.5, 3f64.sqrt() / 2.0);
            let a = from_sl2c([one, one, zero, one])?;
            let b = from_sl2c([one, zero, -omega, one])?;
            LatticeGroup::new("figure-eight", 3, vec![a, b])
        }
        other => Err(LatticeError::UnknownPreset(other.to_string())),
    }
}

/// Loads a custom group file (see the module docs for the format).
pub fn load_group_file(text: &str) -> Result<LatticeGroup, LatticeError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| LatticeError::Parse("empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "dim" || parts[2] != "model" {
        return Err(LatticeError::Parse(format!(
            "bad header `{header}`; expected `dim n model {{so(n,1)|sl2r|sl2c}}`"
        )));
    }
    let dim: usize = parts[1]
        .parse()
        .map_err(|_| LatticeError::Parse(format!("bad dimension `{}`", parts[1])))?;
    let model = parts[3];

    // Collect numeric rows, blocks separated by blank lines.
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        current.push(row.map_err(|e| LatticeError::Parse(format!("bad number: {e}")))?);
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let mut gens = Vec::new();
    for block in &blocks {
        let g = match model {
            "so(n,1)" => {
                let n1 = dim + 1;
                let flat: Vec<f64> = block.iter().flatten().copied().collect();
                if flat.len() != n1 * n1 {
                    return Err(LatticeError::Parse(format!(
                        "so(n,1) block must have {} entries, found {}",
                        n1 * n1,
                        flat.len()
                    )));
                }
                HIsometry::new(DMatrix::from_row_slice(n1, n1, &flat))?
            }
            "sl2r" => {
                let flat: Vec<f64> = block.iter().flatten().copied().collect();
                if flat.len() != 4 || dim != 2 {
                    return Err(LatticeError::Parse(
                        "sl2r blocks need 4 entries and dim 2".into(),
                    ));
                }
                from_sl2r(flat[0], flat[1], flat[2], flat[3])?
            }
            "sl2c" => {
                let flat: Vec<f64> = block.iter().flatten().copied().collect();
                if flat.len() != 8 || dim != 3 {
                    return Err(LatticeError::Parse(
                        "sl2c blocks need 8 entries (re im × 4) and dim 3".into(),
                    ));
                }
                from_sl2c([
                    Complex64::new(flat[0], flat[1]),
                    Complex64::new(flat[2], flat[3]),
                    Complex64::new(flat[4], flat[5]),
                    Complex64::new(flat[6], flat[7]),
                ])?
            }
            other => {
                return Err(LatticeError::Parse(format!("unknown model `{other}`")));
            }
        };
        gens.push(g);
    }
    LatticeGroup::new("custom", dim, gens)
}

/// Uniform sample (hyperbolic area/volume measure) in the ball of the given
/// radius around a center point.
pub fn sample_ball_point(
    center: &HPoint,
    radius: f64,
    rng: &mut impl rand::Rng,
) -> HPoint {
    let n = center.dim();
    // Radial density ∝ sinh^{n-1}(r); sample by inversion for n=2, by
    // rejection against the n=2 envelope otherwise.
    let r = loop {
        match n {
            2 => {
                let u: f64 = rng.gen::<f64>();
                // CDF ∝ cosh r − 1.
                break ((radius.cosh() - 1.0) * u + 1.0).acosh();
            }
            _ => {
                let u: f64 = rng.gen::<f64>();
                let r = ((radius.cosh() - 1.0) * u + 1.0).acosh();
                // Accept with probability sinh^{n-2}(r)/sinh^{n-2}(R).
                let acc = (r.sinh() / radius.sinh()).powi(n as i32 - 2);
                if rng.gen::<f64>() < acc {
                    break r;
                }
            }
        }
    };
    // Uniform direction.
    let frame = frame_at(center);
    let mut v = HTangent::zero(center.clone());
    loop {
        let comps: Vec<f64> = (0..n).map(|_| {
            let a: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            a
        }).collect();
        let norm2: f64 = comps.iter().map(|c| c * c).sum();
        if norm2 > 1e-6 && norm2 <= 1.0 {
            for (f, c) in frame.iter().zip(&comps) {
                v = v.add(&f.scale(c / norm2.sqrt()));
            }
            break;
        }
    }
    geom::exp_map(&v.scale(r))
}

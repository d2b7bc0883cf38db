//! The truncated spherical embedding Ψ_c.
//!
//! Ψ_c sends a point x to the unit ℓ² vector with one component per orbit
//! element γ, proportional to (∫_{γD} e^{−c·dist(x,u)} dvol)^{1/2}. The
//! Γ-sum is truncated to the orbit ball of radius R_ψ; cell integrals are
//! Monte-Carlo estimates over one fixed uniform-in-D sample set translated
//! by each γ, so that all evaluations within a finite-difference stencil
//! share random numbers and the truncation re-indexes exactly under the
//! group action.
//!
//! The per-component amplitude a_γ satisfies |∇a_γ| ≤ (c/2)·a_γ pointwise,
//! so the energy bound Σ|dΨ_c(e_j)|² ≤ c²/4 survives truncation and
//! normalization; the tests measure the margin rather than assume it.

use crate::barycenter::{bar, BarycenterError, WeightedConfiguration};
use crate::geom::{dist, exp_map, frame_at, HPoint, MAX_TRUSTED_RADIUS};
use crate::lattice::{
    dirichlet_domain, orbit_ball, sample_ball_point, DirichletDomain, LatticeError, LatticeGroup,
    OrbitElement,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Barycenter(#[from] BarycenterError),
    #[error("c = {c} must exceed n−1 = {limit} for integrability")]
    SubcriticalExponent { c: f64, limit: f64 },
    #[error("truncation insufficient: tail fraction {fraction:.3e} exceeds {eps_tail:.3e}")]
    TruncationInsufficient { fraction: f64, eps_tail: f64 },
    #[error("radius {0} exceeds the trusted radius")]
    RadiusTooLarge(f64),
    #[error("need at least 10³ MC samples, got {0}")]
    TooFewSamples(usize),
    #[error("empty truncation support at the evaluation point")]
    EmptySupport,
}

/// Parameters of a truncated Ψ_c evaluation.
#[derive(Debug, Clone)]
pub struct PsiParams {
    /// Decay exponent; must exceed n−1.
    pub c: f64,
    /// Truncation radius of the orbit sum.
    pub r_psi: f64,
    /// MC samples per cell (one shared sample set).
    pub samples: usize,
    pub seed: u64,
    /// Acceptable truncation tail as a fraction of the full integral.
    pub eps_tail: f64,
}

/// Number of jackknife blocks for MC error estimates.
const JACKKNIFE_BLOCKS: usize = 10;

/// Shared evaluation context: group data, cells, and the fixed sample set.
pub struct PsiContext {
    group: LatticeGroup,
    domain: DirichletDomain,
    params: PsiParams,
    cells: Vec<OrbitElement>,
    /// Fixed uniform-by-volume samples of the Dirichlet domain.
    samples: Vec<HPoint>,
    /// MC estimate of Vol(D) from the rejection acceptance ratio.
    vol_domain: f64,
    /// Certified fraction of the full integral lost to truncation.
    tail_fraction: f64,
}

/// ∫_{H^n} e^{−c·dist} dvol (n = 2, 3 closed forms).
pub fn full_space_integral(n: usize, c: f64) -> f64 {
    use std::f64::consts::PI;
    match n {
        2 => 2.0 * PI / (c * c - 1.0),
        3 => 8.0 * PI / (c * (c * c - 4.0)),
        _ => unimplemented!("closed form only for n = 2, 3"),
    }
}

/// ∫_{dist>R} e^{−c·dist} dvol (same restriction).
pub fn tail_integral(n: usize, c: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    match n {
        2 => {
            2.0 * PI
                * (((1.0 - c) * r).exp() / (2.0 * (c - 1.0))
                    + (-(1.0 + c) * r).exp() / (2.0 * (c + 1.0)))
        }
        3 => {
            PI * (((2.0 - c) * r).exp() / (c - 2.0) + (-(2.0 + c) * r).exp() / (c + 2.0)
                - 2.0 * (-c * r).exp() / c)
        }
        _ => unimplemented!("closed form only for n = 2, 3"),
    }
}

impl PsiContext {
    /// `eval_radius` bounds dist(o, x) over intended evaluation points (the
    /// cell list must reach that much past R_ψ). Defaults to the domain
    /// sampling radius.
    pub fn new(
        group: &LatticeGroup,
        params: PsiParams,
        eval_radius: Option<f64>,
    ) -> Result<Self, EmbedError> {
        let n = group.dim();
        if params.c <= (n - 1) as f64 {
            return Err(EmbedError::SubcriticalExponent {
                c: params.c,
                limit: (n - 1) as f64,
            });
        }
        if params.samples < 1_000 {
            return Err(EmbedError::TooFewSamples(params.samples));
        }
        if params.r_psi > MAX_TRUSTED_RADIUS {
            return Err(EmbedError::RadiusTooLarge(params.r_psi));
        }
        let domain = dirichlet_domain(group, 7.0).map_err(EmbedError::Lattice)?;
        let sr = domain.sampling_radius();
        let eval_radius = eval_radius.unwrap_or(sr);
        let ball = orbit_ball(group, params.r_psi + eval_radius)?;

        // Any point of a cell within R_ψ of x is within R_ψ − sr … R_ψ + sr
        // of x, so the uncovered region certainly lies beyond R_ψ − sr.
        let r_eff = (params.r_psi - sr).max(0.0);
        let tail_fraction =
            tail_integral(n, params.c, r_eff) / full_space_integral(n, params.c);
        if tail_fraction > params.eps_tail {
            return Err(EmbedError::TruncationInsufficient {
                fraction: tail_fraction,
                eps_tail: params.eps_tail,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut samples = Vec::with_capacity(params.samples);
        let mut tried = 0usize;
        while samples.len() < params.samples {
            tried += 1;
            let p = sample_ball_point(group.basepoint(), sr, &mut rng);
            if domain.contains(&p) {
                samples.push(p);
            }
        }
        let vol_domain = crate::entropy::ball_volume(n, sr) * params.samples as f64
            / tried as f64;

        Ok(Self {
            group: group.clone(),
            domain,
            params,
            cells: ball.elements,
            samples,
            vol_domain,
            tail_fraction,
        })
    }

    pub fn params(&self) -> &PsiParams {
        &self.params
    }

    pub fn group(&self) -> &LatticeGroup {
        &self.group
    }

    pub fn domain(&self) -> &DirichletDomain {
        &self.domain
    }

    pub fn vol_domain(&self) -> f64 {
        self.vol_domain
    }

    pub fn tail_fraction(&self) -> f64 {
        self.tail_fraction
    }

    /// Indices of cells within R_ψ of x (the truncation support of psi(x)).
    fn support(&self, x: &HPoint) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| dist(x, &self.cells[i].point) <= self.params.r_psi)
            .collect()
    }

    /// Raw cell integrals at x for the given support, with per-block sums
    /// for jackknife errors. Entry [i] is (total, blocks).
    fn raw_integrals(
        &self,
        x: &HPoint,
        support: &[usize],
        metric_scale: f64,
    ) -> Vec<(f64, [f64; JACKKNIFE_BLOCKS])> {
        let c = self.params.c;
        support
            .par_iter()
            .map(|&ci| {
                let cell = &self.cells[ci];
                let mut blocks = [0.0; JACKKNIFE_BLOCKS];
                for (s, u) in self.samples.iter().enumerate() {
                    let d = dist(x, &cell.isometry.apply(u)) * metric_scale;
                    blocks[s % JACKKNIFE_BLOCKS] += (-c * d).exp();
                }
                (blocks.iter().sum(), blocks)
            })
            .collect()
    }
}

/// A truncated Ψ_c value: the weight configuration over the support orbit
/// points, with MC and truncation diagnostics.
#[derive(Debug, Clone)]
pub struct PsiValue {
    pub config: WeightedConfiguration,
    /// Absolute tail bound on the truncated part of the full integral.
    pub tail_estimate: f64,
    /// Pre-normalization integral Σ_γ ∫_{γD} e^{−c·dist} (MC, absolute).
    pub raw_total: f64,
    /// Standard error of each (normalized) weight, jackknife over blocks.
    pub weight_stderr: Vec<f64>,
}

/// Evaluates the truncated Ψ_c at x. Weights are exactly normalized; the
/// amplitude vector of the returned configuration is the unit ℓ² vector.
pub fn psi(ctx: &PsiContext, x: &HPoint) -> Result<PsiValue, EmbedError> {
    let support = ctx.support(x);
    if support.is_empty() {
        return Err(EmbedError::EmptySupport);
    }
    let raws = ctx.raw_integrals(x, &support, 1.0);
    let total: f64 = raws.iter().map(|(t, _)| t).sum();
    let scale = ctx.vol_domain / ctx.samples.len() as f64;

    // Jackknife stderr of each normalized weight.
    let j = JACKKNIFE_BLOCKS as f64;
    let mut weight_stderr = Vec::with_capacity(support.len());
    for (i, (ti, bi)) in raws.iter().enumerate() {
        let _ = i;
        let mut reps = [0.0f64; JACKKNIFE_BLOCKS];
        for b in 0..JACKKNIFE_BLOCKS {
            let tot_b: f64 = raws.iter().map(|(t, bl)| t - bl[b]).sum();
            reps[b] = (ti - bi[b]) / tot_b;
        }
        let mean: f64 = reps.iter().sum::<f64>() / j;
        let var: f64 = reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            * (j - 1.0)
            / j;
        weight_stderr.push(var.sqrt());
    }

    let support_cfg: Vec<(String, HPoint, f64)> = support
        .iter()
        .zip(&raws)
        .map(|(&ci, (t, _))| {
            let cell = &ctx.cells[ci];
            (
                crate::lattice::word_label(&cell.word, &ctx.group),
                cell.point.clone(),
                t / total,
            )
        })
        .collect();
    // Exact renormalization against accumulated rounding.
    let mut support_cfg = support_cfg;
    let s: f64 = support_cfg.iter().map(|(_, _, w)| w).sum();
    if let Some(first) = support_cfg.first_mut() {
        first.2 += 1.0 - s;
    }
    let config = WeightedConfiguration::new(support_cfg)?;
    Ok(PsiValue {
        config,
        tail_estimate: tail_integral(
            ctx.group.dim(),
            ctx.params.c,
            (ctx.params.r_psi - ctx.domain.sampling_radius()).max(0.0),
        ),
        raw_total: total * scale,
        weight_stderr,
    })
}

/// Normalized amplitude vectors over a fixed support at the FD stencil
/// points, sharing the sample set (common random numbers). Returns one
/// vector per stencil point plus per-block replicates for jackknife.
fn stencil_amplitudes(
    ctx: &PsiContext,
    points: &[HPoint],
    support: &[usize],
    metric_scale: f64,
) -> Vec<(DVector<f64>, Vec<DVector<f64>>)> {
    points
        .iter()
        .map(|p| {
            let raws = ctx.raw_integrals(p, support, metric_scale);
            let full = normalized_amplitudes(raws.iter().map(|(t, _)| *t));
            let reps = (0..JACKKNIFE_BLOCKS)
                .map(|b| normalized_amplitudes(raws.iter().map(|(t, bl)| t - bl[b])))
                .collect();
            (full, reps)
        })
        .collect()
}

fn normalized_amplitudes(raw: impl Iterator<Item = f64>) -> DVector<f64> {
    let a = DVector::from_vec(raw.map(|t| t.max(0.0).sqrt()).collect::<Vec<f64>>());
    let n = a.norm();
    a / n
}

/// An energy measurement with its jackknife error.
#[derive(Debug, Clone)]
pub struct EnergyEstimate {
    /// Σ_j |dΨ_c(e_j)|² by central differences.
    pub value: f64,
    pub jackknife_err: f64,
    /// Set when the jackknife error exceeds 20% of the value.
    pub noisy: bool,
}

/// Default FD step for energy/pullback differentials.
pub const FD_STEP: f64 = 1e-3;

/// Σ_j |dΨ_c(e_j)|² at x over a g₀-orthonormal basis, by central finite
/// differences with common random numbers. `metric_scale` evaluates in the
/// rescaled metric λ²g₀ (distances ×λ, c in units of the scaled metric).
pub fn energy(
    ctx: &PsiContext,
    x: &HPoint,
    fd_step: f64,
    metric_scale: f64,
) -> Result<EnergyEstimate, EmbedError> {
    let support = ctx.support(x);
    if support.is_empty() {
        return Err(EmbedError::EmptySupport);
    }
    let n = x.dim();
    let frame = frame_at(x);
    // Step in g₀ units so that exp_map applies; h in the scaled metric is
    // λ·(g₀ step).
    let g0_step = fd_step / metric_scale;
    let mut stencil = Vec::with_capacity(2 * n);
    for e in &frame {
        stencil.push(exp_map(&e.scale(g0_step)));
        stencil.push(exp_map(&e.scale(-g0_step)));
    }
    let amps = stencil_amplitudes(ctx, &stencil, &support, metric_scale);

    let energy_of = |pick: &dyn Fn(usize) -> DVector<f64>| -> f64 {
        let mut total = 0.0;
        for j in 0..n {
            let diff = (pick(2 * j) - pick(2 * j + 1)) / (2.0 * fd_step);
            total += diff.norm_squared();
        }
        total
    };
    let value = energy_of(&|i| amps[i].0.clone());
    let jk = JACKKNIFE_BLOCKS as f64;
    let reps: Vec<f64> = (0..JACKKNIFE_BLOCKS)
        .map(|b| energy_of(&|i| amps[i].1[b].clone()))
        .collect();
    let mean: f64 = reps.iter().sum::<f64>() / jk;
    let var = reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() * (jk - 1.0) / jk;
    let jackknife_err = var.sqrt();
    Ok(EnergyEstimate {
        value,
        jackknife_err,
        noisy: jackknife_err > 0.2 * value,
    })
}

/// A pullback-volume estimate over a volume-weighted MC point set in D.
#[derive(Debug, Clone)]
pub struct PullbackEstimate {
    /// MC estimate of ∫_D √det(Gram of FD partials) dvol.
    pub value: f64,
    pub stderr: f64,
    /// Smallest Gram eigenvalue seen across the MC points.
    pub min_gram_eigenvalue: f64,
}

/// ∫_D Jac(Ψ_c) dvol₀ by MC over `mc_points` fresh uniform points of D.
pub fn pullback_volume(
    ctx: &PsiContext,
    mc_points: usize,
    seed: u64,
) -> Result<PullbackEstimate, EmbedError> {
    let n = ctx.group.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = ctx.domain.sampling_radius();
    let mut jacs = Vec::with_capacity(mc_points);
    let mut min_eig = f64::INFINITY;
    while jacs.len() < mc_points {
        let p = sample_ball_point(ctx.group.basepoint(), sr, &mut rng);
        if !ctx.domain.contains(&p) {
            continue;
        }
        let support = ctx.support(&p);
        if support.is_empty() {
            return Err(EmbedError::EmptySupport);
        }
        let frame = frame_at(&p);
        let mut stencil = Vec::with_capacity(2 * n);
        for e in &frame {
            stencil.push(exp_map(&e.scale(FD_STEP)));
            stencil.push(exp_map(&e.scale(-FD_STEP)));
        }
        let amps = stencil_amplitudes(ctx, &stencil, &support, 1.0);
        let partials: Vec<DVector<f64>> = (0..n)
            .map(|j| (&amps[2 * j].0 - &amps[2 * j + 1].0) / (2.0 * FD_STEP))
            .collect();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = partials[i].dot(&partials[j]);
            }
        }
        min_eig = min_eig.min(gram.clone().symmetric_eigen().eigenvalues.min());
        jacs.push(gram.determinant().max(0.0).sqrt());
    }
    // Mean Jacobian over uniform-in-D points × Vol(D).
    let k = jacs.len() as f64;
    let mean = jacs.iter().sum::<f64>() / k;
    let var = jacs.iter().map(|j| (j - mean) * (j - mean)).sum::<f64>() / (k - 1.0);
    Ok(PullbackEstimate {
        value: mean * ctx.vol_domain,
        stderr: (var / k).sqrt() * ctx.vol_domain,
        min_gram_eigenvalue: min_eig,
    })
}

/// The composite Bar∘Ψ_c: returns (barycenter of psi(x), displacement from
/// x in g₀).
pub fn bar_psi(ctx: &PsiContext, x: &HPoint) -> Result<(HPoint, f64), EmbedError> {
    let value = psi(ctx, x)?;
    let b = bar(&value.config, None)?;
    let disp = dist(&b, x);
    Ok((b, disp))
}

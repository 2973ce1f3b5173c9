//! Quantitative instrumentation: KL divergence against references,
//! moments, superlevel-set components and the analytic rotation solution.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{GbeesError, Result};
use crate::grid::{CellIndex, SparseGrid, MAX_DIM};

/// Relative floor applied to approximation cells that lack support where
/// the reference has it (times the maximum approximation cell mass).
pub const KL_FLOOR_REL: f64 = 1e-12;

/// Reference cells below this relative mass are excluded from the KL
/// comparison set.
pub const KL_SUPPORT_REL: f64 = 1e-15;

/// A closed-form (or externally supplied) density used for validation.
#[derive(Clone)]
pub struct ReferenceSolution {
    eval: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    support: Option<Arc<dyn Fn(f64) -> ([f64; MAX_DIM], [f64; MAX_DIM]) + Send + Sync>>,
    pub description: String,
}

impl ReferenceSolution {
    pub fn new<F>(eval: F, description: impl Into<String>) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        ReferenceSolution {
            eval: Arc::new(eval),
            support: None,
            description: description.into(),
        }
    }

    /// Attach a bounding box (lo, hi per axis, as a function of time)
    /// that contains every point where the reference exceeds
    /// [`KL_SUPPORT_REL`] of its maximum. With a box attached, KL
    /// comparisons score reference cells even where the approximation
    /// grid has no cell, so the comparison set does not depend on the
    /// approximation's truncation threshold.
    pub fn with_support<G>(mut self, support: G) -> Self
    where
        G: Fn(f64) -> ([f64; MAX_DIM], [f64; MAX_DIM]) + Send + Sync + 'static,
    {
        self.support = Some(Arc::new(support));
        self
    }

    /// Drop the support box, restricting KL comparisons to the
    /// approximation grid's own cells (useful when fitting model
    /// parameters, where out-of-support floor penalties are noise).
    pub fn without_support(mut self) -> Self {
        self.support = None;
        self
    }

    #[inline]
    pub fn evaluate(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    #[inline]
    pub fn support_box(&self, t: f64) -> Option<([f64; MAX_DIM], [f64; MAX_DIM])> {
        self.support.as_ref().map(|s| s(t))
    }
}

/// KL divergence in bits, D(P0 || Pe) = sum P0 log2(P0 / Pe), of the
/// per-cell probability masses of `approx` from those of the reference,
/// both renormalized over the comparison set (reference cells above
/// [`KL_SUPPORT_REL`] of the reference maximum). Approximation masses
/// below the floor are floored at [`KL_FLOOR_REL`] times the maximum
/// approximation cell mass; with `floor_enabled = false`, missing
/// support is a hard error instead.
pub fn kl_divergence_bits(
    reference: &ReferenceSolution,
    t: f64,
    approx: &SparseGrid,
    floor_enabled: bool,
) -> Result<f64> {
    let geo = approx.geometry();
    let dim = approx.dim();
    let mut by_cell: BTreeMap<CellIndex, (f64, f64)> = BTreeMap::new();
    for (idx, c) in approx.iter() {
        let x = geo.center(idx);
        by_cell.insert(*idx, (reference.evaluate(&x[..dim], t), c.p));
    }
    // Cells inside the reference's support box count with zero
    // approximation mass even when the grid has truncated them away.
    if let Some((lo, hi)) = reference.support_box(t) {
        let lo_i = *geo.nearest_index(&lo[..dim]).coords();
        let hi_i = *geo.nearest_index(&hi[..dim]).coords();
        let mut cells = 1usize;
        for d in 0..dim {
            let extent = (hi_i[d] - lo_i[d] + 1).max(0) as usize;
            cells = cells.saturating_mul(extent);
        }
        if cells > 50_000_000 {
            return Err(GbeesError::Numerical(format!(
                "reference support box spans {cells} cells"
            )));
        }
        let mut c = lo_i;
        'odometer: loop {
            let idx = CellIndex::new(&c[..dim]);
            by_cell.entry(idx).or_insert_with(|| {
                let x = geo.center(&idx);
                (reference.evaluate(&x[..dim], t), 0.0)
            });
            let mut d = dim;
            loop {
                if d == 0 {
                    break 'odometer;
                }
                d -= 1;
                c[d] += 1;
                if c[d] <= hi_i[d] {
                    break;
                }
                c[d] = lo_i[d];
            }
        }
    }
    let pairs: Vec<(f64, f64)> = by_cell.values().copied().collect();
    kl_from_pairs(&pairs, floor_enabled)
}

/// KL divergence in bits between two grids over the union of their
/// supports (same geometry assumed).
pub fn kl_divergence_bits_grids(
    p0: &SparseGrid,
    pe: &SparseGrid,
    floor_enabled: bool,
) -> Result<f64> {
    let mut union: BTreeMap<CellIndex, (f64, f64)> = BTreeMap::new();
    for (idx, c) in p0.iter() {
        union.entry(*idx).or_insert((0.0, 0.0)).0 = c.p;
    }
    for (idx, c) in pe.iter() {
        union.entry(*idx).or_insert((0.0, 0.0)).1 = c.p;
    }
    let pairs: Vec<(f64, f64)> = union.values().copied().collect();
    kl_from_pairs(&pairs, floor_enabled)
}

fn kl_from_pairs(pairs: &[(f64, f64)], floor_enabled: bool) -> Result<f64> {
    let max_ref = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if !(max_ref > 0.0) {
        return Err(GbeesError::NonPositiveMass(max_ref));
    }
    let cut = KL_SUPPORT_REL * max_ref;
    let selected: Vec<(f64, f64)> = pairs.iter().copied().filter(|p| p.0 > cut).collect();
    let sum0: f64 = selected.iter().map(|p| p.0).sum();
    let sume: f64 = selected.iter().map(|p| p.1).sum();
    if !(sume > 0.0) {
        return Err(GbeesError::NonPositiveMass(sume));
    }
    let max_e = selected.iter().map(|p| p.1 / sume).fold(0.0, f64::max);
    let floor = KL_FLOOR_REL * max_e;
    let mut kl = 0.0;
    for &(m0, me) in &selected {
        let q0 = m0 / sum0;
        let mut qe = me / sume;
        if qe < floor {
            if !floor_enabled {
                return Err(GbeesError::Numerical(
                    "reference has mass where the approximation has none (flooring disabled)"
                        .into(),
                ));
            }
            qe = floor;
        }
        kl += q0 * (q0 / qe).log2();
    }
    Ok(kl.max(0.0))
}

/// The exact solution of the solid-body-rotation test: the initial
/// Gaussian rotated rigidly (clockwise, matching u = y, v = -x) about
/// the origin, with covariance inflated by 2 mu t I for isotropic
/// diffusion Q = 2 mu I. Verified at construction to integrate to unity
/// over the initial support (midpoint quadrature, 1e-6).
pub fn rotation_exact_solution(
    mean0: [f64; 2],
    sigma0: [f64; 2],
    mu: f64,
) -> Result<ReferenceSolution> {
    if sigma0.iter().any(|&s| !(s > 0.0)) {
        return Err(GbeesError::Config(
            "initial standard deviations must be positive".into(),
        ));
    }
    if mu < 0.0 {
        return Err(GbeesError::Config("mu must be nonnegative".into()));
    }
    let eval = move |x: &[f64], t: f64| -> f64 {
        // Pull the point back along the flow: rotate by +t (counter-
        // clockwise), then evaluate the diffused initial Gaussian.
        let (s, c) = t.sin_cos();
        let x0 = [x[0] * c - x[1] * s, x[0] * s + x[1] * c];
        let var = [
            sigma0[0] * sigma0[0] + 2.0 * mu * t,
            sigma0[1] * sigma0[1] + 2.0 * mu * t,
        ];
        let d0 = x0[0] - mean0[0];
        let d1 = x0[1] - mean0[1];
        let norm = 2.0 * std::f64::consts::PI * (var[0] * var[1]).sqrt();
        (-0.5 * (d0 * d0 / var[0] + d1 * d1 / var[1])).exp() / norm
    };

    // Quadrature check at t = 0 over +-8 sigma.
    let n = 400;
    let mut mass = 0.0;
    let hx = 16.0 * sigma0[0] / n as f64;
    let hy = 16.0 * sigma0[1] / n as f64;
    for i in 0..n {
        for j in 0..n {
            let x = mean0[0] - 8.0 * sigma0[0] + (i as f64 + 0.5) * hx;
            let y = mean0[1] - 8.0 * sigma0[1] + (j as f64 + 0.5) * hy;
            mass += eval(&[x, y], 0.0) * hx * hy;
        }
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(GbeesError::Numerical(format!(
            "reference does not integrate to unity: {mass}"
        )));
    }
    // Support box: the rotated mean plus 9 standard deviations per
    // axis, which contains the KL_SUPPORT_REL = 1e-15 contour (8.4
    // sigma) of the rotated Gaussian regardless of axis mixing.
    let support = move |t: f64| -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let (s, c) = t.sin_cos();
        let mean_t = [
            mean0[0] * c + mean0[1] * s,
            -mean0[0] * s + mean0[1] * c,
        ];
        let var_max = sigma0[0].max(sigma0[1]).powi(2) + 2.0 * mu * t;
        let half = 9.0 * var_max.sqrt();
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for d in 0..2 {
            lo[d] = mean_t[d] - half;
            hi[d] = mean_t[d] + half;
        }
        (lo, hi)
    };
    Ok(ReferenceSolution::new(
        eval,
        "rotated (clockwise) initial Gaussian with isotropic diffusion",
    )
    .with_support(support))
}

/// Mass and mass-weighted centroid of one edge-connected component of a
/// superlevel set.
#[derive(Clone, Debug)]
pub struct ComponentStats {
    pub mass: f64,
    pub centroid: [f64; MAX_DIM],
    pub cells: usize,
}

/// Edge-connected components of the superlevel set {p > level}, in
/// lexicographic seed order.
pub fn superlevel_component_stats(grid: &SparseGrid, level: f64) -> Vec<ComponentStats> {
    assert!(level > 0.0);
    let dim = grid.dim();
    let vol = grid.geometry().cell_volume();
    let mut visited = vec![false; grid.slab_len()];
    let mut comps = Vec::new();
    for &seed in grid.active_slots().iter() {
        if visited[seed as usize] || grid.cell(seed).p <= level {
            continue;
        }
        let mut stack = vec![seed];
        visited[seed as usize] = true;
        let mut stats = ComponentStats {
            mass: 0.0,
            centroid: [0.0; MAX_DIM],
            cells: 0,
        };
        while let Some(slot) = stack.pop() {
            let c = grid.cell(slot);
            let w = c.p * vol;
            stats.mass += w;
            stats.cells += 1;
            let x = grid.geometry().center(&c.index());
            for d in 0..dim {
                stats.centroid[d] += w * x[d];
            }
            for d in 0..dim {
                for nbr in [c.neighbor_low(d), c.neighbor_high(d)].into_iter().flatten() {
                    if !visited[nbr as usize] && grid.cell(nbr).p > level {
                        visited[nbr as usize] = true;
                        stack.push(nbr);
                    }
                }
            }
        }
        for d in 0..dim {
            stats.centroid[d] /= stats.mass;
        }
        comps.push(stats);
    }
    comps
}

/// Masses of the edge-connected components of the superlevel set
/// {p > level}, in lexicographic seed order.
pub fn superlevel_components(grid: &SparseGrid, level: f64) -> Vec<f64> {
    superlevel_component_stats(grid, level)
        .into_iter()
        .map(|c| c.mass)
        .collect()
}

/// Mass-weighted mean of cell centers and covariance.
pub fn moments(grid: &SparseGrid) -> Result<([f64; MAX_DIM], [[f64; MAX_DIM]; MAX_DIM])> {
    let mass = grid.total_mass();
    if !(mass > 0.0) {
        return Err(GbeesError::NonPositiveMass(mass));
    }
    let dim = grid.dim();
    let vol = grid.geometry().cell_volume();
    let mut mean = [0.0; MAX_DIM];
    for (idx, c) in grid.iter() {
        let x = grid.geometry().center(idx);
        let w = c.p * vol / mass;
        for d in 0..dim {
            mean[d] += w * x[d];
        }
    }
    let mut cov = [[0.0; MAX_DIM]; MAX_DIM];
    for (idx, c) in grid.iter() {
        let x = grid.geometry().center(idx);
        let w = c.p * vol / mass;
        for a in 0..dim {
            for b in 0..dim {
                cov[a][b] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    Ok((mean, cov))
}

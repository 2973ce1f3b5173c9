//! Conservation-form Godunov advancement of the PDF on the sparse grid.
//!
//! One step is a fixed sequence of passes over the active list:
//! halo expansion, CFL time step, Godunov flux initialization, corner
//! transport upwind (CTU) corrections, high-resolution TVD corrections,
//! diffusion fluxes, the conservative cell update, negative clamping and
//! pruning. All passes iterate cells in lexicographic order and write
//! results computed into per-pass buffers, so the result is bitwise
//! deterministic for any worker count.
//!
//! Stencil convention: each cell stores the flux through its *low* face
//! in every direction. A face exists iff its owning cell is in the
//! active list; density reads outside the list are zero.

use crate::error::{GbeesError, Result};
use crate::grid::{SparseGrid, MAX_DIM, NIL};
use crate::models::DynamicsModel;

/// TVD flux limiter selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limiter {
    Mc,
    VanLeer,
    /// First-order upwind (no high-resolution correction).
    None,
}

/// Limiter function phi(theta), in [0, 2] for all finite theta.
#[inline]
pub fn limiter_phi(theta: f64, kind: Limiter) -> f64 {
    match kind {
        Limiter::Mc => (0.5 * (1.0 + theta)).min(2.0).min(2.0 * theta).max(0.0),
        Limiter::VanLeer => (theta + theta.abs()) / (1.0 + theta.abs()),
        Limiter::None => 0.0,
    }
}

/// Time-step and flux-scheme parameters.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// CFL number in (0, 1].
    pub cfl_target: f64,
    /// Hard cap on the time step.
    pub dt_max: f64,
    pub limiter: Limiter,
    /// Physical diffusion coefficient per direction, mu_d = q_dd / 2.
    pub diffusion_coeff: [f64; MAX_DIM],
    /// Amount subtracted from the physical coefficient to compensate the
    /// scheme's own numerical diffusion.
    pub diffusion_compensation: f64,
}

impl SolverConfig {
    pub fn new(cfl_target: f64, dt_max: f64, limiter: Limiter) -> Result<Self> {
        if !(cfl_target > 0.0 && cfl_target <= 1.0) {
            return Err(GbeesError::Config("cfl_target must be in (0, 1]".into()));
        }
        if !(dt_max > 0.0) {
            return Err(GbeesError::Config("dt_max must be positive".into()));
        }
        Ok(SolverConfig {
            cfl_target,
            dt_max,
            limiter,
            diffusion_coeff: [0.0; MAX_DIM],
            diffusion_compensation: 0.0,
        })
    }

    /// Applied diffusion coefficient mu-bar for direction `d`.
    #[inline]
    pub fn effective_diffusion(&self, d: usize) -> f64 {
        (self.diffusion_coeff[d] - self.diffusion_compensation).max(0.0)
    }

    pub fn has_diffusion(&self) -> bool {
        (0..MAX_DIM).any(|d| self.effective_diffusion(d) > 0.0)
    }
}

/// Drift component `d` evaluated at the center of the low face of cell
/// `idx` in direction `d`.
#[inline]
pub fn face_velocity(
    model: &dyn DynamicsModel,
    geometry: &crate::grid::GridGeometry,
    idx: &crate::grid::CellIndex,
    d: usize,
) -> f64 {
    model.drift(&geometry.low_face_center(idx, d))[d]
}

/// Per-step cache of low-face velocities for every active cell, indexed
/// by slab slot, plus the sorted slot list the passes iterate over.
pub struct FaceVelocities {
    pub(crate) slots: Vec<u32>,
    vel: Vec<[f64; MAX_DIM]>,
}

impl FaceVelocities {
    pub fn compute(grid: &SparseGrid, model: &dyn DynamicsModel) -> Self {
        let slots = grid.active_slots();
        let dim = grid.dim();
        let per_slot: Vec<[f64; MAX_DIM]> = map_slots(&slots, |slot| {
            let idx = grid.cell(slot).index();
            let mut v = [0.0; MAX_DIM];
            for d in 0..dim {
                v[d] = face_velocity(model, grid.geometry(), &idx, d);
            }
            v
        });
        let mut vel = vec![[0.0; MAX_DIM]; grid.slab_len()];
        for (i, &slot) in slots.iter().enumerate() {
            vel[slot as usize] = per_slot[i];
        }
        FaceVelocities { slots, vel }
    }

    #[inline]
    pub fn low(&self, slot: u32, d: usize) -> f64 {
        self.vel[slot as usize][d]
    }
}

/// CFL-limited time step: min(dt_max, cfl * min over faces of dx/|u|).
pub fn compute_stable_dt(
    grid: &SparseGrid,
    model: &dyn DynamicsModel,
    config: &SolverConfig,
) -> Result<f64> {
    let vel = FaceVelocities::compute(grid, model);
    stable_dt_from(grid, &vel, config)
}

fn stable_dt_from(grid: &SparseGrid, vel: &FaceVelocities, config: &SolverConfig) -> Result<f64> {
    if grid.is_empty() {
        return Err(GbeesError::EmptyGrid);
    }
    let dim = grid.dim();
    let mut dt = config.dt_max;
    for &slot in &vel.slots {
        for d in 0..dim {
            let u = vel.low(slot, d).abs();
            if u > 0.0 {
                dt = dt.min(config.cfl_target * grid.geometry().spacing(d) / u);
            }
        }
    }
    Ok(dt)
}

/// F = u+ p_upwind-low + u- p_self at every stored low face; an absent
/// low neighbor reads as p = 0.
pub fn init_godunov_fluxes(grid: &mut SparseGrid, vel: &FaceVelocities) {
    let dim = grid.dim();
    let fluxes: Vec<[f64; MAX_DIM]> = map_slots(&vel.slots, |slot| {
        let c = grid.cell(slot);
        let mut f = [0.0; MAX_DIM];
        for d in 0..dim {
            let u = vel.low(slot, d);
            let p_low = match c.nbr_low[d] {
                NIL => 0.0,
                s => grid.cell(s).p,
            };
            f[d] = u.max(0.0) * p_low + u.min(0.0) * c.p;
        }
        f
    });
    write_fluxes(grid, &vel.slots, &fluxes, |cur, inc| *cur = inc);
}

/// Corner-transport-upwind corrections, gathered per stored face.
///
/// For the low face of cell c in direction d, with a = c - e_d, the four
/// transverse contributions per pair direction e are
///   F -= dt/2 * u-(face) * v-(c high e)  * dp(c high e)  / dx_e
///   F -= dt/2 * u-(face) * v+(c low e)   * dp(c low e)   / dx_e
///   F -= dt/2 * u+(face) * v-(a high e)  * dp(a high e)  / dx_e
///   F -= dt/2 * u+(face) * v+(a low e)   * dp(a low e)   / dx_e
/// which is the scatter form of the eight per-pair update formulas. For
/// n >= 3 the pairwise corrections apply independently to each of the
/// nC2 direction pairs; no triple-corner terms.
pub fn apply_ctu_corrections(grid: &mut SparseGrid, vel: &FaceVelocities, dt: f64) {
    let dim = grid.dim();
    if dim < 2 {
        return;
    }
    let incs: Vec<[f64; MAX_DIM]> = map_slots(&vel.slots, |slot| {
        let c = grid.cell(slot);
        let mut inc = [0.0; MAX_DIM];
        for d in 0..dim {
            let u = vel.low(slot, d);
            let up = u.max(0.0);
            let um = u.min(0.0);
            let mut f = 0.0;
            for e in 0..dim {
                if e == d {
                    continue;
                }
                let dy = grid.geometry().spacing(e);
                if um != 0.0 {
                    // Face owned by c's high neighbor in e.
                    if c.nbr_high[e] != NIL {
                        let hs = c.nbr_high[e];
                        let vm = vel.low(hs, e).min(0.0);
                        if vm != 0.0 {
                            f -= dt * um * vm / 2.0 * (grid.cell(hs).p - c.p) / dy;
                        }
                    }
                    // c's own low face in e.
                    let vp = vel.low(slot, e).max(0.0);
                    if vp != 0.0 {
                        let pl = match c.nbr_low[e] {
                            NIL => 0.0,
                            s => grid.cell(s).p,
                        };
                        f -= dt * um * vp / 2.0 * (c.p - pl) / dy;
                    }
                }
                if up != 0.0 {
                    if c.nbr_low[d] != NIL {
                        let a = c.nbr_low[d];
                        let ac = grid.cell(a);
                        // Corner neighbor: a's high face in e.
                        if ac.nbr_high[e] != NIL {
                            let hs = ac.nbr_high[e];
                            let vm = vel.low(hs, e).min(0.0);
                            if vm != 0.0 {
                                f -= dt * up * vm / 2.0 * (grid.cell(hs).p - ac.p) / dy;
                            }
                        }
                        // a's own low face in e.
                        let vp = vel.low(a, e).max(0.0);
                        if vp != 0.0 {
                            let pl = match ac.nbr_low[e] {
                                NIL => 0.0,
                                s => grid.cell(s).p,
                            };
                            f -= dt * up * vp / 2.0 * (ac.p - pl) / dy;
                        }
                    }
                }
            }
            inc[d] = f;
        }
        inc
    });
    write_fluxes(grid, &vel.slots, &incs, |cur, inc| *cur += inc);
}

/// High-resolution TVD corrections:
/// F += dt |u|/2 (dx/dt - |u|) (dp/dx) phi(theta), with theta the ratio
/// of the upwind-side face difference to the local face difference.
pub fn apply_high_resolution_corrections(
    grid: &mut SparseGrid,
    vel: &FaceVelocities,
    dt: f64,
    config: &SolverConfig,
) {
    if config.limiter == Limiter::None {
        return;
    }
    let dim = grid.dim();
    let incs: Vec<[f64; MAX_DIM]> = map_slots(&vel.slots, |slot| {
        let c = grid.cell(slot);
        let mut inc = [0.0; MAX_DIM];
        for d in 0..dim {
            let u = vel.low(slot, d);
            if u == 0.0 {
                continue;
            }
            let dx = grid.geometry().spacing(d);
            let p_low = match c.nbr_low[d] {
                NIL => 0.0,
                s => grid.cell(s).p,
            };
            let dp = c.p - p_low;
            // theta = 0 when the face difference vanishes; the correction
            // carries a dp factor and is zero regardless.
            let theta = if dp == 0.0 {
                0.0
            } else if u >= 0.0 {
                let dp_up = match c.nbr_low[d] {
                    NIL => 0.0,
                    a => {
                        let ac = grid.cell(a);
                        let pll = match ac.nbr_low[d] {
                            NIL => 0.0,
                            s => grid.cell(s).p,
                        };
                        ac.p - pll
                    }
                };
                dp_up / dp
            } else {
                let p_high = match c.nbr_high[d] {
                    NIL => 0.0,
                    s => grid.cell(s).p,
                };
                (p_high - c.p) / dp
            };
            let au = u.abs();
            inc[d] = dt * au / 2.0 * (dx / dt - au) * (dp / dx) * limiter_phi(theta, config.limiter);
        }
        inc
    });
    write_fluxes(grid, &vel.slots, &incs, |cur, inc| *cur += inc);
}

/// Central-difference diffusion fluxes: F -= mu_bar_d dp / dx_d, signed
/// so that the conservative update applies a discrete Laplacian
/// (smoothing) to p.
pub fn apply_diffusion_fluxes(grid: &mut SparseGrid, config: &SolverConfig) {
    if !config.has_diffusion() {
        return;
    }
    let dim = grid.dim();
    let slots = grid.active_slots();
    let incs: Vec<[f64; MAX_DIM]> = map_slots(&slots, |slot| {
        let c = grid.cell(slot);
        let mut inc = [0.0; MAX_DIM];
        for d in 0..dim {
            let mu = config.effective_diffusion(d);
            if mu == 0.0 {
                continue;
            }
            let p_low = match c.nbr_low[d] {
                NIL => 0.0,
                s => grid.cell(s).p,
            };
            inc[d] = -mu * (c.p - p_low) / grid.geometry().spacing(d);
        }
        inc
    });
    write_fluxes(grid, &slots, &incs, |cur, inc| *cur += inc);
}

/// Outcome of one completed step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub dt: f64,
    /// Mass truncated by pruning.
    pub mass_removed: f64,
    /// Mass added back by clamping negative densities to zero.
    pub mass_clamped: f64,
    pub active_cells: usize,
}

/// Advance the PDF by one time step of at most `max_dt`.
pub fn advance_step(
    grid: &mut SparseGrid,
    model: &dyn DynamicsModel,
    config: &SolverConfig,
    max_dt: f64,
) -> Result<StepOutcome> {
    if grid.is_empty() {
        return Err(GbeesError::EmptyGrid);
    }
    grid.expand_active_set();
    let vel = FaceVelocities::compute(grid, model);
    let dt = stable_dt_from(grid, &vel, config)?.min(max_dt);
    if !(dt > 0.0) {
        return Err(GbeesError::Numerical(format!("nonpositive dt {dt}")));
    }

    init_godunov_fluxes(grid, &vel);
    apply_ctu_corrections(grid, &vel, dt);
    apply_high_resolution_corrections(grid, &vel, dt, config);
    apply_diffusion_fluxes(grid, config);

    // Conservative update: the high-face flux of a cell is the low-face
    // flux of its high neighbor; no neighbor record means no stored face.
    let dim = grid.dim();
    let new_p: Vec<f64> = map_slots(&vel.slots, |slot| {
        let c = grid.cell(slot);
        let mut div = 0.0;
        for d in 0..dim {
            let f_high = match c.nbr_high[d] {
                NIL => 0.0,
                s => grid.cell(s).flux_low[d],
            };
            div += (f_high - c.flux_low[d]) / grid.geometry().spacing(d);
        }
        c.p - dt * div
    });

    let vol = grid.geometry().cell_volume();
    let mut mass_clamped = 0.0;
    for (i, &slot) in vel.slots.iter().enumerate() {
        let p = new_p[i];
        if !p.is_finite() {
            let idx = grid.cell(slot).index();
            return Err(GbeesError::Numerical(format!(
                "non-finite density {p} at cell {:?}",
                idx.coords()
            )));
        }
        if p < 0.0 {
            mass_clamped += -p * vol;
            grid.cell_mut(slot).p = 0.0;
        } else {
            grid.cell_mut(slot).p = p;
        }
    }

    let mass_removed = grid.prune_active_set();
    Ok(StepOutcome {
        dt,
        mass_removed,
        mass_clamped,
        active_cells: grid.len(),
    })
}

fn write_fluxes<F: Fn(&mut f64, f64)>(
    grid: &mut SparseGrid,
    slots: &[u32],
    incs: &[[f64; MAX_DIM]],
    apply: F,
) {
    let dim = grid.dim();
    for (i, &slot) in slots.iter().enumerate() {
        let c = grid.cell_mut(slot);
        for d in 0..dim {
            apply(&mut c.flux_low[d], incs[i][d]);
        }
    }
}

/// Map a function over the slot list, in parallel when the `parallel`
/// feature is enabled. Results are ordered by the slot list, so the
/// downstream sequential writes are identical either way.
#[cfg(feature = "parallel")]
fn map_slots<T, F>(slots: &[u32], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u32) -> T + Sync + Send,
{
    use rayon::prelude::*;
    slots.par_iter().map(|&s| f(s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_slots<T, F>(slots: &[u32], f: F) -> Vec<T>
where
    F: Fn(u32) -> T,
{
    slots.iter().map(|&s| f(s)).collect()
}

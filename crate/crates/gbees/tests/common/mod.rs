//! Dense brute-force reference used to cross-check the sparse solver.
//!
//! Re-implements the step from the flux formulas directly on a fixed
//! box of dense arrays, with the CTU corrections in their original
//! scatter form (the sparse solver gathers per stored face). Shares no
//! code with the sparse path beyond the model trait and geometry, so
//! agreement checks both the formulas and the sparse bookkeeping.

use gbees::grid::GridGeometry;
use gbees::models::DynamicsModel;
use gbees::solver::{limiter_phi, Limiter, SolverConfig};
use gbees::{CellIndex, SparseGrid, MAX_DIM};

pub struct DenseOracle {
    dim: usize,
    lo: [i32; MAX_DIM],
    n: [usize; MAX_DIM],
    geometry: GridGeometry,
    threshold: f64,
    p: Vec<f64>,
    active: Vec<bool>,
    flux: Vec<[f64; MAX_DIM]>,
    vel: Vec<[f64; MAX_DIM]>,
}

impl DenseOracle {
    /// Empty box covering `lo..=hi` per axis (inclusive).
    pub fn new(
        geometry: GridGeometry,
        threshold: f64,
        lo: &[i32],
        hi: &[i32],
    ) -> Self {
        let dim = geometry.dim();
        let mut lo_a = [0i32; MAX_DIM];
        let mut n = [1usize; MAX_DIM];
        for d in 0..dim {
            assert!(hi[d] >= lo[d]);
            lo_a[d] = lo[d];
            n[d] = (hi[d] - lo[d] + 1) as usize;
        }
        let total: usize = n.iter().product();
        DenseOracle {
            dim,
            lo: lo_a,
            n,
            geometry,
            threshold,
            p: vec![0.0; total],
            active: vec![false; total],
            flux: vec![[0.0; MAX_DIM]; total],
            vel: vec![[0.0; MAX_DIM]; total],
        }
    }

    fn index(&self, c: &[i32; MAX_DIM]) -> Option<usize> {
        let mut idx = 0usize;
        for d in 0..self.dim {
            let off = c[d] - self.lo[d];
            if off < 0 || off as usize >= self.n[d] {
                return None;
            }
            idx = idx * self.n[d] + off as usize;
        }
        Some(idx)
    }

    /// Coordinates of every box cell, lexicographic.
    fn coords_iter(&self) -> Vec<[i32; MAX_DIM]> {
        let mut out = Vec::with_capacity(self.p.len());
        let mut c = [0i32; MAX_DIM];
        for d in 0..self.dim {
            c[d] = self.lo[d];
        }
        loop {
            out.push(c);
            let mut d = self.dim;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                c[d] += 1;
                if (c[d] - self.lo[d]) < self.n[d] as i32 {
                    break;
                }
                c[d] = self.lo[d];
            }
        }
    }

    pub fn set(&mut self, coords: &[i32], p: f64) {
        let mut c = [0i32; MAX_DIM];
        c[..self.dim].copy_from_slice(coords);
        let i = self.index(&c).expect("cell outside oracle box");
        self.p[i] = p;
        self.active[i] = true;
    }

    fn at(&self, c: &[i32; MAX_DIM]) -> f64 {
        match self.index(c) {
            Some(i) if self.active[i] => self.p[i],
            _ => 0.0,
        }
    }

    fn is_active(&self, c: &[i32; MAX_DIM]) -> bool {
        self.index(c).is_some_and(|i| self.active[i])
    }

    fn step_dir(c: &[i32; MAX_DIM], d: usize, s: i32) -> [i32; MAX_DIM] {
        let mut r = *c;
        r[d] += s;
        r
    }

    /// One full solver step; returns the dt used.
    pub fn step(&mut self, model: &dyn DynamicsModel, config: &SolverConfig, max_dt: f64) -> f64 {
        let dim = self.dim;
        let all = self.coords_iter();

        // Halo expansion: edge and pairwise-corner neighbors of every
        // supra-threshold cell become active (p stays 0).
        let mut newly = Vec::new();
        for c in &all {
            let i = self.index(c).unwrap();
            if !(self.active[i] && self.p[i] > self.threshold) {
                continue;
            }
            for d in 0..dim {
                for s in [-1, 1] {
                    newly.push(Self::step_dir(c, d, s));
                }
            }
            for d1 in 0..dim {
                for d2 in (d1 + 1)..dim {
                    for s1 in [-1, 1] {
                        for s2 in [-1, 1] {
                            newly.push(Self::step_dir(&Self::step_dir(c, d1, s1), d2, s2));
                        }
                    }
                }
            }
        }
        for c in newly {
            let i = self.index(&c).expect("halo escaped the oracle box");
            self.active[i] = true;
        }

        // Low-face velocities for active cells.
        for c in &all {
            let i = self.index(c).unwrap();
            if !self.active[i] {
                continue;
            }
            let idx = CellIndex::new(&c[..dim]);
            for d in 0..dim {
                self.vel[i][d] = model.drift(&self.geometry.low_face_center(&idx, d))[d];
            }
        }

        // CFL time step.
        let mut dt = config.dt_max;
        for c in &all {
            let i = self.index(c).unwrap();
            if !self.active[i] {
                continue;
            }
            for d in 0..dim {
                let u = self.vel[i][d].abs();
                if u > 0.0 {
                    dt = dt.min(config.cfl_target * self.geometry.spacing(d) / u);
                }
            }
        }
        let dt = dt.min(max_dt);

        // Godunov initialization.
        for f in &mut self.flux {
            *f = [0.0; MAX_DIM];
        }
        for c in &all {
            let i = self.index(c).unwrap();
            if !self.active[i] {
                continue;
            }
            for d in 0..dim {
                let u = self.vel[i][d];
                let p_low = self.at(&Self::step_dir(c, d, -1));
                self.flux[i][d] = u.max(0.0) * p_low + u.min(0.0) * self.p[i];
            }
        }

        // CTU corrections, scatter form: the low face of cell s in
        // direction e (velocity v, difference dp) corrects the four
        // surrounding d-direction faces whose owner cells are active.
        for s in &all {
            let si = self.index(s).unwrap();
            if !self.active[si] {
                continue;
            }
            for e in 0..dim {
                let v = self.vel[si][e];
                let (vm, vp) = (v.min(0.0), v.max(0.0));
                let dp = self.p[si] - self.at(&Self::step_dir(s, e, -1));
                let dy = self.geometry.spacing(e);
                for d in 0..dim {
                    if d == e {
                        continue;
                    }
                    let targets = [
                        (Self::step_dir(s, e, -1), vm, false),
                        (Self::step_dir(&Self::step_dir(s, e, -1), d, 1), vm, true),
                        (*s, vp, false),
                        (Self::step_dir(s, d, 1), vp, true),
                    ];
                    for (tc, vfac, use_up) in targets {
                        let Some(ti) = self.index(&tc) else { continue };
                        if !self.active[ti] {
                            continue;
                        }
                        let u = self.vel[ti][d];
                        let ufac = if use_up { u.max(0.0) } else { u.min(0.0) };
                        self.flux[ti][d] -= dt * ufac * vfac / 2.0 * dp / dy;
                    }
                }
            }
        }

        // High-resolution TVD corrections.
        if config.limiter != Limiter::None {
            let mut incs = vec![[0.0; MAX_DIM]; self.p.len()];
            for c in &all {
                let i = self.index(c).unwrap();
                if !self.active[i] {
                    continue;
                }
                for d in 0..dim {
                    let u = self.vel[i][d];
                    if u == 0.0 {
                        continue;
                    }
                    let dx = self.geometry.spacing(d);
                    let low = Self::step_dir(c, d, -1);
                    let dp = self.p[i] - self.at(&low);
                    let theta = if dp == 0.0 {
                        0.0
                    } else if u >= 0.0 {
                        (self.at(&low) - self.at(&Self::step_dir(c, d, -2))) / dp
                    } else {
                        (self.at(&Self::step_dir(c, d, 1)) - self.p[i]) / dp
                    };
                    incs[i][d] = dt * u.abs() / 2.0 * (dx / dt - u.abs()) * (dp / dx)
                        * limiter_phi(theta, config.limiter);
                }
            }
            for c in &all {
                let i = self.index(c).unwrap();
                for d in 0..dim {
                    self.flux[i][d] += incs[i][d];
                }
            }
        }

        // Diffusion fluxes.
        for c in &all {
            let i = self.index(c).unwrap();
            if !self.active[i] {
                continue;
            }
            for d in 0..dim {
                let mu = config.effective_diffusion(d);
                if mu == 0.0 {
                    continue;
                }
                let dp = self.p[i] - self.at(&Self::step_dir(c, d, -1));
                self.flux[i][d] -= mu * dp / self.geometry.spacing(d);
            }
        }

        // Conservative update with clamping.
        let mut new_p = self.p.clone();
        for c in &all {
            let i = self.index(c).unwrap();
            if !self.active[i] {
                continue;
            }
            let mut div = 0.0;
            for d in 0..dim {
                let hi = Self::step_dir(c, d, 1);
                let f_high = match self.index(&hi) {
                    Some(j) if self.active[j] => self.flux[j][d],
                    _ => 0.0,
                };
                div += (f_high - self.flux[i][d]) / self.geometry.spacing(d);
            }
            new_p[i] = (self.p[i] - dt * div).max(0.0);
        }
        self.p = new_p;

        // Prune: keep supra cells, their present edge neighbors, and
        // corners reachable through a present intermediate cell.
        let mut keep = vec![false; self.p.len()];
        for c in &all {
            let i = self.index(c).unwrap();
            if !(self.active[i] && self.p[i] > self.threshold) {
                continue;
            }
            keep[i] = true;
            for d in 0..dim {
                for s in [-1, 1] {
                    if let Some(j) = self.index(&Self::step_dir(c, d, s)) {
                        if self.active[j] {
                            keep[j] = true;
                        }
                    }
                }
            }
            for d1 in 0..dim {
                for d2 in (d1 + 1)..dim {
                    for s1 in [-1, 1] {
                        for s2 in [-1, 1] {
                            let corner =
                                Self::step_dir(&Self::step_dir(c, d1, s1), d2, s2);
                            let via1 = self.is_active(&Self::step_dir(c, d1, s1));
                            let via2 = self.is_active(&Self::step_dir(c, d2, s2));
                            if via1 || via2 {
                                if let Some(j) = self.index(&corner) {
                                    if self.active[j] {
                                        keep[j] = true;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for i in 0..self.p.len() {
            if self.active[i] && !keep[i] {
                self.active[i] = false;
                self.p[i] = 0.0;
            }
        }

        dt
    }

    /// Assert the sparse grid and the oracle agree on the active set and
    /// on every density to `tol`.
    pub fn assert_matches(&self, grid: &SparseGrid, tol: f64, label: &str) {
        let mut sparse_count = 0;
        for (idx, cell) in grid.iter() {
            sparse_count += 1;
            let mut c = [0i32; MAX_DIM];
            c[..self.dim].copy_from_slice(&idx.coords()[..self.dim]);
            let i = self
                .index(&c)
                .unwrap_or_else(|| panic!("{label}: sparse cell {c:?} outside oracle box"));
            assert!(
                self.active[i],
                "{label}: sparse cell {c:?} missing from oracle active set"
            );
            let diff = (cell.p - self.p[i]).abs();
            assert!(
                diff <= tol,
                "{label}: density mismatch at {c:?}: sparse {} dense {} (diff {diff:e})",
                cell.p,
                self.p[i]
            );
        }
        let dense_count = self.active.iter().filter(|a| **a).count();
        assert_eq!(
            sparse_count, dense_count,
            "{label}: active-set sizes differ"
        );
    }
}

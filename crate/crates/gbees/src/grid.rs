//! Sparse active-cell list over phase space.
//!
//! Cells are kept in an ordered map keyed by lexicographically ordered
//! integer indices, mirroring the C++ STL `map` approach: every cell record
//! carries direct links to its two neighbors in each coordinate direction,
//! so the flux stencil never has to search the map. The list holds every
//! cell above the probability threshold plus its halo: the 2n edge
//! neighbors and the 4 corner neighbors per pair of directions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{GbeesError, Result};

/// Maximum phase-space dimension supported by the fixed-size cell records.
pub const MAX_DIM: usize = 3;

/// Sentinel for an absent neighbor link.
pub const NIL: u32 = u32::MAX;

/// Location of a cell on the conceptually infinite Cartesian lattice.
///
/// Unused trailing components are always zero, so the derived ordering is
/// lexicographic on the first `dim` components (first by i, then j, then k).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct CellIndex([i32; MAX_DIM]);

impl CellIndex {
    pub fn new(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM);
        let mut c = [0i32; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        CellIndex(c)
    }

    #[inline]
    pub fn coords(&self) -> &[i32; MAX_DIM] {
        &self.0
    }

    /// Index shifted by `step` cells along direction `d`.
    #[inline]
    pub fn offset(&self, d: usize, step: i32) -> Self {
        let mut c = self.0;
        c[d] += step;
        CellIndex(c)
    }
}

/// Uniform Cartesian lattice geometry: spacing and anchor.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    dim: usize,
    spacing: [f64; MAX_DIM],
    origin: [f64; MAX_DIM],
}

impl GridGeometry {
    pub fn new(dim: usize, spacing: &[f64], origin: &[f64]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GbeesError::Config(format!(
                "dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if spacing.len() != dim || origin.len() != dim {
            return Err(GbeesError::Config(
                "spacing/origin length must match dimension".into(),
            ));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(GbeesError::Config("spacing must be positive".into()));
        }
        let mut sp = [1.0; MAX_DIM];
        let mut or = [0.0; MAX_DIM];
        sp[..dim].copy_from_slice(spacing);
        or[..dim].copy_from_slice(origin);
        Ok(GridGeometry {
            dim,
            spacing: sp,
            origin: or,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn spacing(&self, d: usize) -> f64 {
        self.spacing[d]
    }

    #[inline]
    pub fn origin(&self) -> &[f64; MAX_DIM] {
        &self.origin
    }

    /// Phase-space coordinates of the cell center.
    #[inline]
    pub fn center(&self, idx: &CellIndex) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dim {
            x[d] = self.origin[d] + idx.coords()[d] as f64 * self.spacing[d];
        }
        x
    }

    /// Center of the low face of cell `idx` in direction `d`.
    #[inline]
    pub fn low_face_center(&self, idx: &CellIndex, d: usize) -> [f64; MAX_DIM] {
        let mut x = self.center(idx);
        x[d] -= 0.5 * self.spacing[d];
        x
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// Nearest lattice index to a phase-space point.
    pub fn nearest_index(&self, x: &[f64]) -> CellIndex {
        let mut c = [0i32; MAX_DIM];
        for d in 0..self.dim {
            c[d] = ((x[d] - self.origin[d]) / self.spacing[d]).round() as i32;
        }
        CellIndex(c)
    }
}

/// One active-cell record: density, per-direction low-face flux
/// accumulators and neighbor links (slab slot ids, [`NIL`] if absent).
#[derive(Clone, Debug)]
pub struct Cell {
    pub(crate) idx: CellIndex,
    pub p: f64,
    pub flux_low: [f64; MAX_DIM],
    pub(crate) nbr_low: [u32; MAX_DIM],
    pub(crate) nbr_high: [u32; MAX_DIM],
}

impl Cell {
    #[inline]
    pub fn index(&self) -> CellIndex {
        self.idx
    }

    #[inline]
    pub fn neighbor_low(&self, d: usize) -> Option<u32> {
        (self.nbr_low[d] != NIL).then_some(self.nbr_low[d])
    }

    #[inline]
    pub fn neighbor_high(&self, d: usize) -> Option<u32> {
        (self.nbr_high[d] != NIL).then_some(self.nbr_high[d])
    }
}

/// Ordered sparse map from [`CellIndex`] to cell records, with
/// threshold-driven activation and pruning.
pub struct SparseGrid {
    geometry: GridGeometry,
    threshold: f64,
    map: BTreeMap<CellIndex, u32>,
    slab: Vec<Cell>,
    free: Vec<u32>,
}

impl SparseGrid {
    pub fn new(geometry: GridGeometry, threshold: f64) -> Self {
        assert!(threshold >= 0.0);
        SparseGrid {
            geometry,
            threshold,
            map: BTreeMap::new(),
            slab: Vec::new(),
            free: Vec::new(),
        }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    #[inline]
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, eps: f64) {
        assert!(eps >= 0.0);
        self.threshold = eps;
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.map.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Slab capacity; slot ids are always `< slab_len()`.
    #[inline]
    pub fn slab_len(&self) -> usize {
        self.slab.len()
    }

    #[inline]
    pub fn cell(&self, slot: u32) -> &Cell {
        &self.slab[slot as usize]
    }

    #[inline]
    pub fn cell_mut(&mut self, slot: u32) -> &mut Cell {
        &mut self.slab[slot as usize]
    }

    #[inline]
    pub fn slot_of(&self, idx: &CellIndex) -> Option<u32> {
        self.map.get(idx).copied()
    }

    #[inline]
    pub fn get(&self, idx: &CellIndex) -> Option<&Cell> {
        self.slot_of(idx).map(|s| self.cell(s))
    }

    /// Cells in strictly increasing lexicographic index order.
    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &Cell)> {
        self.map.iter().map(|(k, &s)| (k, &self.slab[s as usize]))
    }

    /// Slot ids in lexicographic index order. This is the canonical
    /// iteration order for all solver passes, which keeps floating-point
    /// accumulation deterministic.
    pub fn active_slots(&self) -> Vec<u32> {
        self.map.values().copied().collect()
    }

    /// Insert a cell, wiring both directions of every edge-neighbor link
    /// that resolves to an existing record. Idempotent: an existing cell
    /// keeps its density.
    pub fn insert_cell(&mut self, idx: CellIndex, p0: f64) -> u32 {
        debug_assert!(p0 >= 0.0);
        if let Some(&slot) = self.map.get(&idx) {
            return slot;
        }
        let slot = match self.free.pop() {
            Some(s) => s,
            None => {
                self.slab.push(Cell {
                    idx,
                    p: 0.0,
                    flux_low: [0.0; MAX_DIM],
                    nbr_low: [NIL; MAX_DIM],
                    nbr_high: [NIL; MAX_DIM],
                });
                (self.slab.len() - 1) as u32
            }
        };
        {
            let c = &mut self.slab[slot as usize];
            c.idx = idx;
            c.p = p0;
            c.flux_low = [0.0; MAX_DIM];
            c.nbr_low = [NIL; MAX_DIM];
            c.nbr_high = [NIL; MAX_DIM];
        }
        for d in 0..self.geometry.dim {
            if let Some(&lo) = self.map.get(&idx.offset(d, -1)) {
                self.slab[slot as usize].nbr_low[d] = lo;
                self.slab[lo as usize].nbr_high[d] = slot;
            }
            if let Some(&hi) = self.map.get(&idx.offset(d, 1)) {
                self.slab[slot as usize].nbr_high[d] = hi;
                self.slab[hi as usize].nbr_low[d] = slot;
            }
        }
        self.map.insert(idx, slot);
        slot
    }

    /// Remove a cell, nulling all links into it. Returns its density.
    fn remove_cell(&mut self, idx: &CellIndex) -> Option<f64> {
        let slot = self.map.remove(idx)?;
        let (nbr_low, nbr_high, p) = {
            let c = &self.slab[slot as usize];
            (c.nbr_low, c.nbr_high, c.p)
        };
        for d in 0..self.geometry.dim {
            if nbr_low[d] != NIL {
                self.slab[nbr_low[d] as usize].nbr_high[d] = NIL;
            }
            if nbr_high[d] != NIL {
                self.slab[nbr_high[d] as usize].nbr_low[d] = NIL;
            }
        }
        self.free.push(slot);
        Some(p)
    }

    /// Cell at `idx + s1*e_d1 + s2*e_d2`, reached by following two links
    /// (the neighbor cell of a neighbor cell). `s1`, `s2` are `+1`/`-1`.
    ///
    /// Panics if `d1 == d2`.
    pub fn corner_neighbor(
        &self,
        idx: &CellIndex,
        d1: usize,
        d2: usize,
        s1: i32,
        s2: i32,
    ) -> Option<&Cell> {
        assert!(d1 != d2, "corner_neighbor requires distinct directions");
        let slot = self.slot_of(idx)?;
        let hop1 = self.link(slot, d1, s1)?;
        let hop2 = self.link(hop1, d2, s2)?;
        Some(self.cell(hop2))
    }

    #[inline]
    fn link(&self, slot: u32, d: usize, sign: i32) -> Option<u32> {
        let c = &self.slab[slot as usize];
        let s = if sign > 0 { c.nbr_high[d] } else { c.nbr_low[d] };
        (s != NIL).then_some(s)
    }

    /// Ensure every supra-threshold cell has its full halo: 2n edge
    /// neighbors plus the 4 corner neighbors in each of the nC2 direction
    /// pairs. New cells start at p = 0.
    pub fn expand_active_set(&mut self) {
        let dim = self.geometry.dim;
        let mut missing: Vec<CellIndex> = Vec::new();
        for (idx, &slot) in &self.map {
            if self.slab[slot as usize].p <= self.threshold {
                continue;
            }
            let c = &self.slab[slot as usize];
            for d in 0..dim {
                if c.nbr_low[d] == NIL {
                    missing.push(idx.offset(d, -1));
                }
                if c.nbr_high[d] == NIL {
                    missing.push(idx.offset(d, 1));
                }
            }
            for d1 in 0..dim {
                for d2 in (d1 + 1)..dim {
                    for s1 in [-1, 1] {
                        for s2 in [-1, 1] {
                            let corner = idx.offset(d1, s1).offset(d2, s2);
                            if !self.map.contains_key(&corner) {
                                missing.push(corner);
                            }
                        }
                    }
                }
            }
        }
        missing.sort_unstable();
        missing.dedup();
        for idx in missing {
            self.insert_cell(idx, 0.0);
        }
    }

    /// Remove every cell at or below the threshold that is not in the
    /// halo of any supra-threshold cell. Returns the truncated mass
    /// `sum(p) * cellVolume` of the removed cells.
    pub fn prune_active_set(&mut self) -> f64 {
        let dim = self.geometry.dim;
        let mut keep = vec![false; self.slab.len()];
        for &slot in self.map.values() {
            if self.slab[slot as usize].p <= self.threshold {
                continue;
            }
            keep[slot as usize] = true;
            let c = self.slab[slot as usize].clone();
            for d in 0..dim {
                if c.nbr_low[d] != NIL {
                    keep[c.nbr_low[d] as usize] = true;
                }
                if c.nbr_high[d] != NIL {
                    keep[c.nbr_high[d] as usize] = true;
                }
            }
            // Corners via both two-hop routes, in case one edge is missing.
            for d1 in 0..dim {
                for d2 in (d1 + 1)..dim {
                    for s1 in [-1i32, 1] {
                        for s2 in [-1i32, 1] {
                            let hop = self
                                .link_from(&c, d1, s1)
                                .and_then(|m| self.link(m, d2, s2))
                                .or_else(|| {
                                    self.link_from(&c, d2, s2)
                                        .and_then(|m| self.link(m, d1, s1))
                                });
                            if let Some(s) = hop {
                                keep[s as usize] = true;
                            }
                        }
                    }
                }
            }
        }
        let doomed: Vec<CellIndex> = self
            .map
            .iter()
            .filter(|(_, &s)| !keep[s as usize])
            .map(|(idx, _)| *idx)
            .collect();
        let vol = self.geometry.cell_volume();
        let mut removed = 0.0;
        for idx in doomed {
            if let Some(p) = self.remove_cell(&idx) {
                removed += p * vol;
            }
        }
        removed
    }

    #[inline]
    fn link_from(&self, c: &Cell, d: usize, sign: i32) -> Option<u32> {
        let s = if sign > 0 { c.nbr_high[d] } else { c.nbr_low[d] };
        (s != NIL).then_some(s)
    }

    /// Discrete integral of the PDF: `sum(p) * cellVolume`.
    pub fn total_mass(&self) -> f64 {
        let vol = self.geometry.cell_volume();
        self.map
            .values()
            .map(|&s| self.slab[s as usize].p)
            .sum::<f64>()
            * vol
    }

    /// Plain-text snapshot: one row per active cell in lexicographic
    /// order (index components, center coordinates, p).
    pub fn write_snapshot<W: std::io::Write>(&self, w: &mut W, t: f64) -> Result<()> {
        let dim = self.geometry.dim;
        let mut spacing = String::new();
        for d in 0..dim {
            if d > 0 {
                spacing.push(',');
            }
            let _ = write!(spacing, "{}", self.geometry.spacing[d]);
        }
        let mut origin = String::new();
        for d in 0..dim {
            if d > 0 {
                origin.push(',');
            }
            let _ = write!(origin, "{}", self.geometry.origin[d]);
        }
        writeln!(
            w,
            "# t={} dim={} spacing={} origin={} threshold={} mass={}",
            t,
            dim,
            spacing,
            origin,
            self.threshold,
            self.total_mass()
        )?;
        for (idx, cell) in self.iter() {
            let x = self.geometry.center(idx);
            for d in 0..dim {
                write!(w, "{} ", idx.coords()[d])?;
            }
            for d in 0..dim {
                write!(w, "{} ", x[d])?;
            }
            writeln!(w, "{}", cell.p)?;
        }
        Ok(())
    }

    /// Parse a snapshot previously written by [`write_snapshot`].
    ///
    /// [`write_snapshot`]: SparseGrid::write_snapshot
    pub fn read_snapshot<R: std::io::BufRead>(r: &mut R) -> Result<(Self, f64)> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut t = 0.0;
        let mut dim = 0usize;
        let mut spacing: Vec<f64> = Vec::new();
        let mut origin: Vec<f64> = Vec::new();
        let mut threshold = 0.0;
        for tok in header.trim_start_matches('#').split_whitespace() {
            let Some((k, v)) = tok.split_once('=') else {
                continue;
            };
            let bad = |e: std::num::ParseFloatError| GbeesError::Config(e.to_string());
            match k {
                "t" => t = v.parse().map_err(bad)?,
                "dim" => {
                    dim = v
                        .parse()
                        .map_err(|e: std::num::ParseIntError| GbeesError::Config(e.to_string()))?
                }
                "spacing" => {
                    spacing = v
                        .split(',')
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(bad)?
                }
                "origin" => {
                    origin = v
                        .split(',')
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(bad)?
                }
                "threshold" => threshold = v.parse().map_err(bad)?,
                _ => {}
            }
        }
        let geometry = GridGeometry::new(dim, &spacing, &origin)?;
        let mut grid = SparseGrid::new(geometry, threshold);
        let mut buf = String::new();
        loop {
            buf.clear();
            if r.read_line(&mut buf)? == 0 {
                break;
            }
            let line = &buf;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 * dim + 1 {
                return Err(GbeesError::Config(format!(
                    "snapshot row has {} fields, expected {}",
                    toks.len(),
                    2 * dim + 1
                )));
            }
            let mut coords = [0i32; MAX_DIM];
            for d in 0..dim {
                coords[d] = toks[d]
                    .parse()
                    .map_err(|e: std::num::ParseIntError| GbeesError::Config(e.to_string()))?;
            }
            let p: f64 = toks[2 * dim]
                .parse()
                .map_err(|e: std::num::ParseFloatError| GbeesError::Config(e.to_string()))?;
            grid.insert_cell(CellIndex(coords), p);
        }
        Ok((grid, t))
    }

    /// Panics unless every neighbor link is mutually consistent and
    /// resolves exactly to map membership. Test support.
    pub fn check_link_invariants(&self) {
        for (idx, &slot) in &self.map {
            let c = &self.slab[slot as usize];
            assert_eq!(c.idx, *idx);
            for d in 0..self.geometry.dim {
                let lo_idx = idx.offset(d, -1);
                match self.map.get(&lo_idx) {
                    Some(&lo) => {
                        assert_eq!(c.nbr_low[d], lo, "low link mismatch at {idx:?} d={d}");
                        assert_eq!(self.slab[lo as usize].nbr_high[d], slot);
                    }
                    None => assert_eq!(c.nbr_low[d], NIL),
                }
                let hi_idx = idx.offset(d, 1);
                match self.map.get(&hi_idx) {
                    Some(&hi) => {
                        assert_eq!(c.nbr_high[d], hi, "high link mismatch at {idx:?} d={d}");
                        assert_eq!(self.slab[hi as usize].nbr_low[d], slot);
                    }
                    None => assert_eq!(c.nbr_high[d], NIL),
                }
            }
        }
    }

    /// Panics unless every supra-threshold cell has its complete halo.
    /// Test support (brute-force scan, independent of the links).
    pub fn check_halo_coverage(&self) {
        let dim = self.geometry.dim;
        for (idx, &slot) in &self.map {
            if self.slab[slot as usize].p <= self.threshold {
                continue;
            }
            for d in 0..dim {
                for s in [-1, 1] {
                    assert!(
                        self.map.contains_key(&idx.offset(d, s)),
                        "missing edge neighbor of {idx:?}"
                    );
                }
            }
            for d1 in 0..dim {
                for d2 in (d1 + 1)..dim {
                    for s1 in [-1, 1] {
                        for s2 in [-1, 1] {
                            assert!(
                                self.map.contains_key(&idx.offset(d1, s1).offset(d2, s2)),
                                "missing corner neighbor of {idx:?}"
                            );
                        }
                    }
                }
            }
        }
    }
}

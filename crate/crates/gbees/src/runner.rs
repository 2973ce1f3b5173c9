//! Scenario driver: initial condition, time loop, measurement updates,
//! snapshot and diagnostics emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bayes::{bayes_update, normalize, read_schedule, MeasurementEvent};
use crate::config::{ModelKind, ReferenceKind, RunConfig, SyntheticMeasurements};
use crate::diagnostics::{kl_divergence_bits, superlevel_components, moments, ReferenceSolution};
use crate::diagnostics::rotation_exact_solution;
use crate::error::{GbeesError, Result};
use crate::grid::{CellIndex, GridGeometry, SparseGrid, MAX_DIM};
use crate::models::{
    DynamicsModel, GaussianMeasurementModel, LorenzModel, ObservationMap, RotationModel,
};
use crate::solver::{advance_step, SolverConfig};

pub fn build_model(cfg: &RunConfig) -> Box<dyn DynamicsModel> {
    match cfg.model {
        ModelKind::Rotation => Box::new(RotationModel),
        ModelKind::Lorenz { sigma, b, r } => Box::new(LorenzModel { sigma, b, r }),
    }
}

pub fn build_solver_config(cfg: &RunConfig) -> Result<SolverConfig> {
    let mut sc = SolverConfig::new(cfg.cfl, cfg.dt_max, cfg.limiter)?;
    for d in 0..cfg.dim {
        sc.diffusion_coeff[d] = cfg.diffusion[d];
    }
    sc.diffusion_compensation = cfg.diffusion_compensation;
    Ok(sc)
}

/// Populate a grid with a diagonal Gaussian sampled at cell centers
/// within `support_radius` standard deviations of the mean (per axis),
/// expand the halo and normalize to unit mass.
pub fn initialize_gaussian(cfg: &RunConfig) -> Result<SparseGrid> {
    let origin: Vec<f64> = cfg.origin.clone().unwrap_or_else(|| cfg.ic_mean.clone());
    let geometry = GridGeometry::new(cfg.dim, &cfg.spacing, &origin)?;
    let mut grid = SparseGrid::new(geometry, cfg.threshold);

    let mut half = [0i64; MAX_DIM];
    for d in 0..cfg.dim {
        half[d] = (cfg.support_radius * cfg.ic_std[d] / cfg.spacing[d]).floor() as i64;
    }
    // Offset of the mean from the lattice anchor, in cells.
    let mut mean_cell = [0i32; MAX_DIM];
    for d in 0..cfg.dim {
        mean_cell[d] = ((cfg.ic_mean[d] - origin[d]) / cfg.spacing[d]).round() as i32;
    }

    let mut idx = vec![0i64; cfg.dim];
    for d in 0..cfg.dim {
        idx[d] = -half[d];
    }
    let norm: f64 = (0..cfg.dim)
        .map(|d| 1.0 / (cfg.ic_std[d] * (2.0 * std::f64::consts::PI).sqrt()))
        .product();
    'fill: loop {
        let mut coords = [0i32; MAX_DIM];
        for d in 0..cfg.dim {
            coords[d] = mean_cell[d] + idx[d] as i32;
        }
        let ci = CellIndex::new(&coords[..cfg.dim]);
        let x = grid.geometry().center(&ci);
        let mut expo = 0.0;
        let mut inside = true;
        for d in 0..cfg.dim {
            let z = (x[d] - cfg.ic_mean[d]) / cfg.ic_std[d];
            if z.abs() > cfg.support_radius {
                inside = false;
                break;
            }
            expo -= 0.5 * z * z;
        }
        if inside {
            grid.insert_cell(ci, norm * expo.exp());
        }
        // Advance the odometer.
        for d in 0..cfg.dim {
            idx[d] += 1;
            if idx[d] <= half[d] {
                continue 'fill;
            }
            idx[d] = -half[d];
        }
        break;
    }
    if grid.is_empty() || !(grid.total_mass() > 0.0) {
        return Err(GbeesError::Config(
            "initial support is empty; decrease spacing or increase support_radius".into(),
        ));
    }
    grid.expand_active_set();
    normalize(&mut grid)?;
    Ok(grid)
}

/// Classical fixed-step RK4 for the deterministic truth trajectory.
fn rk4_step(model: &dyn DynamicsModel, x: &[f64; MAX_DIM], dt: f64) -> [f64; MAX_DIM] {
    let add = |a: &[f64; MAX_DIM], b: &[f64; MAX_DIM], s: f64| {
        let mut r = *a;
        for d in 0..MAX_DIM {
            r[d] += s * b[d];
        }
        r
    };
    let k1 = model.drift(x);
    let k2 = model.drift(&add(x, &k1, dt / 2.0));
    let k3 = model.drift(&add(x, &k2, dt / 2.0));
    let k4 = model.drift(&add(x, &k3, dt));
    let mut r = *x;
    for d in 0..MAX_DIM {
        r[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
    }
    r
}

/// Generate synthetic measurements of one state component from a
/// deterministic truth trajectory, with seeded Gaussian noise.
pub fn synthesize_measurements(
    cfg: &RunConfig,
    spec: &SyntheticMeasurements,
    model: &dyn DynamicsModel,
    seed: u64,
) -> Result<Vec<MeasurementEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = [0.0; MAX_DIM];
    x[..cfg.dim].copy_from_slice(&spec.truth_start);
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut k = 1u64;
    while (k as f64) * spec.period <= cfg.t_final + 1e-12 {
        let tk = (k as f64) * spec.period;
        // Integrate to tk in substeps no larger than dt_max.
        let n = ((tk - t) / cfg.dt_max).ceil().max(1.0) as usize;
        let h = (tk - t) / n as f64;
        for _ in 0..n {
            x = rk4_step(model, &x, h);
        }
        t = tk;
        // Box-Muller on two uniforms keeps the dependency surface small.
        let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
        let noise = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        let y = x[spec.component] + spec.noise_std * noise;
        events.push(MeasurementEvent {
            time: tk,
            y: vec![y],
            model: GaussianMeasurementModel::new(
                ObservationMap::Components(vec![spec.component]),
                vec![spec.noise_std],
            )?,
        });
        k += 1;
    }
    Ok(events)
}

fn build_reference(cfg: &RunConfig) -> Result<Option<ReferenceSolution>> {
    match &cfg.reference {
        None => Ok(None),
        Some(ReferenceKind::RotationExact { mu }) => Ok(Some(rotation_exact_solution(
            [cfg.ic_mean[0], cfg.ic_mean[1]],
            [cfg.ic_std[0], cfg.ic_std[1]],
            *mu,
        )?)),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub steps: usize,
    pub final_time: f64,
    pub final_mass: f64,
    pub active_cells: usize,
    pub mass_removed_total: f64,
    pub mass_clamped_total: f64,
    pub measurements_applied: usize,
    pub snapshots_written: usize,
    pub wall_seconds: f64,
}

/// Execute the full scenario: repeated solver steps shortened to land
/// exactly on measurement and snapshot times, Bayes updates at
/// measurement times, snapshot and diagnostics emission.
pub fn run_scenario(cfg: &RunConfig, out_dir: &Path) -> Result<(RunSummary, SparseGrid)> {
    std::fs::create_dir_all(out_dir)?;
    let started = std::time::Instant::now();

    let model = build_model(cfg);
    let solver_cfg = build_solver_config(cfg)?;
    let reference = build_reference(cfg)?;
    let mut grid = initialize_gaussian(cfg)?;

    let measurements: Vec<MeasurementEvent> = if let Some(path) = &cfg.measurement_schedule {
        let component = cfg
            .measurements
            .as_ref()
            .map(|m| m.component)
            .unwrap_or(cfg.dim - 1);
        read_schedule(path, ObservationMap::Components(vec![component]))?
    } else if let Some(spec) = &cfg.measurements {
        synthesize_measurements(cfg, spec, model.as_ref(), cfg.seed)?
    } else {
        Vec::new()
    };

    let diag_path = out_dir.join("diagnostics.csv");
    let mut diag = BufWriter::new(File::create(&diag_path)?);
    write!(diag, "t,dt,active_cells,total_mass,mass_removed_cum")?;
    for d in 0..cfg.dim {
        write!(diag, ",mean_{d}")?;
    }
    writeln!(diag, ",component_count,kl_bits")?;

    let mut summary = RunSummary::default();
    let mut t = 0.0f64;
    let mut mi = 0usize;
    let mut si = 0usize;
    let eps_t = 1e-12;

    let write_snapshot = |grid: &SparseGrid, t: f64, si: &mut usize| -> Result<()> {
        let path = out_dir.join(format!("snapshot_{:04}.txt", *si));
        let mut w = BufWriter::new(File::create(path)?);
        grid.write_snapshot(&mut w, t)?;
        *si += 1;
        Ok(())
    };

    let emit_diag = |grid: &SparseGrid,
                         t: f64,
                         dt: f64,
                         removed_cum: f64,
                         diag: &mut BufWriter<File>|
     -> Result<()> {
        let (mean, _) = moments(grid)?;
        let comps = superlevel_components(grid, cfg.component_level);
        write!(
            diag,
            "{t},{dt},{},{},{removed_cum}",
            grid.len(),
            grid.total_mass()
        )?;
        for d in 0..cfg.dim {
            write!(diag, ",{}", mean[d])?;
        }
        match &reference {
            Some(r) => {
                let kl = kl_divergence_bits(r, t, grid, true)?;
                writeln!(diag, ",{},{kl}", comps.len())?;
            }
            None => writeln!(diag, ",{},", comps.len())?,
        }
        Ok(())
    };

    if cfg.snapshot_times.first().is_some_and(|&s| s <= eps_t) {
        write_snapshot(&grid, 0.0, &mut si)?;
        summary.snapshots_written += 1;
    }
    // Skip any snapshot times already handled at t = 0.
    let mut snap_cursor = cfg
        .snapshot_times
        .iter()
        .position(|&s| s > eps_t)
        .unwrap_or(cfg.snapshot_times.len());

    emit_diag(&grid, 0.0, 0.0, 0.0, &mut diag)?;

    while t < cfg.t_final - eps_t {
        let next_meas = measurements.get(mi).map(|m| m.time);
        let next_snap = cfg.snapshot_times.get(snap_cursor).copied();
        let mut target = cfg.t_final;
        if let Some(tm) = next_meas {
            target = target.min(tm);
        }
        if let Some(ts) = next_snap {
            target = target.min(ts);
        }
        let max_dt = target - t;
        let out = advance_step(&mut grid, model.as_ref(), &solver_cfg, max_dt)?;
        if out.dt == max_dt {
            t = target;
        } else {
            t += out.dt;
        }
        summary.steps += 1;
        summary.mass_removed_total += out.mass_removed;
        summary.mass_clamped_total += out.mass_clamped;

        while mi < measurements.len() && measurements[mi].time <= t + eps_t {
            bayes_update(&mut grid, &measurements[mi])?;
            mi += 1;
            summary.measurements_applied += 1;
        }
        while snap_cursor < cfg.snapshot_times.len() && cfg.snapshot_times[snap_cursor] <= t + eps_t
        {
            write_snapshot(&grid, t, &mut si)?;
            snap_cursor += 1;
            summary.snapshots_written += 1;
        }
        if summary.steps % cfg.diag_every == 0 || t >= cfg.t_final - eps_t {
            emit_diag(&grid, t, out.dt, summary.mass_removed_total, &mut diag)?;
        }
    }
    diag.flush()?;

    summary.final_time = t;
    summary.final_mass = grid.total_mass();
    summary.active_cells = grid.len();
    summary.wall_seconds = started.elapsed().as_secs_f64();
    Ok((summary, grid))
}

//! End-to-end acceptance gate: one check per shipping criterion, each
//! printed as a single pass/fail line. Run with
//! `cargo test --test acceptance`.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use gbees::bayes::{bayes_update, normalize, MeasurementEvent};
use gbees::config::RunConfig;
use gbees::diagnostics::{
    kl_divergence_bits, moments, rotation_exact_solution, superlevel_component_stats,
};
use gbees::grid::{CellIndex, GridGeometry};
use gbees::models::{ConstantModel, GaussianMeasurementModel, ObservationMap};
use gbees::runner::{build_model, build_solver_config, initialize_gaussian, synthesize_measurements};
use gbees::solver::{advance_step, Limiter, SolverConfig};
use gbees::{DynamicsModel, RotationModel, SparseGrid};

use common::DenseOracle;

fn main() {
    let criteria: &[(&str, fn() -> String)] = &[
        ("1 convergence order", c1_convergence_order),
        ("2 conservation", c2_conservation),
        ("3 tvd", c3_tvd),
        ("4 rotation validation", c4_rotation_validation),
        ("5 lorenz open-loop", c5_lorenz_open),
        ("6 lorenz measured", c6_lorenz_measured),
        ("7 sparse-dense equivalence", c7_sparse_dense),
        ("8 bayes correctness", c8_bayes),
        ("9 diffusion correctness", c9_diffusion),
    ];
    // Optional positional filter: run only criteria whose name contains
    // the given substring (harness flags starting with '-' are ignored).
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0usize;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(check);
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {name}: pass ({detail}) [{secs:.1}s]"),
            Err(payload) => {
                failures += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                println!("criterion {name}: FAIL ({msg}) [{secs:.1}s]");
            }
        }
    }
    std::panic::set_hook(default_hook);
    if failures > 0 {
        println!("{failures} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}

/// Step repeatedly until `t_final`, landing on it exactly.
fn run_to(grid: &mut SparseGrid, model: &dyn DynamicsModel, cfg: &SolverConfig, t_final: f64) {
    let mut t = 0.0;
    while t < t_final - 1e-12 {
        let out = advance_step(grid, model, cfg, t_final - t).unwrap();
        if out.dt == t_final - t {
            break;
        }
        t += out.dt;
    }
}

// Criterion 1: 1D advection of a smooth Gaussian at fixed CFL converges
// with L1 order in [1.8, 2.2] across N = 100/200/400, under 10 s.
fn c1_convergence_order() -> String {
    let started = Instant::now();
    let u = 1.0;
    let t_final = 0.5;
    let sigma = 0.15;
    let mut errors = Vec::new();
    for n in [100usize, 200, 400] {
        let h = 1.0 / n as f64;
        let geo = GridGeometry::new(1, &[h], &[0.0]).unwrap();
        let mut g = SparseGrid::new(geo, 0.0);
        let m = (0.75 / h) as i32;
        for i in -m..=m {
            let x = i as f64 * h;
            g.insert_cell(CellIndex::new(&[i]), (-x * x / (2.0 * sigma * sigma)).exp());
        }
        let cfg = SolverConfig::new(0.9, 1.0, Limiter::Mc).unwrap();
        run_to(&mut g, &ConstantModel::new(1, &[u]), &cfg, t_final);
        let mut err = 0.0;
        for (idx, c) in g.iter() {
            let x = idx.coords()[0] as f64 * h - u * t_final;
            err += (c.p - (-x * x / (2.0 * sigma * sigma)).exp()).abs() * h;
        }
        errors.push(err);
    }
    let o1 = (errors[0] / errors[1]).log2();
    let o2 = (errors[1] / errors[2]).log2();
    for o in [o1, o2] {
        assert!(
            (1.8..=2.2).contains(&o),
            "L1 order {o:.3} outside [1.8, 2.2] (orders {o1:.3}, {o2:.3})"
        );
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 10.0, "runtime {secs:.1}s exceeds 10 s");
    format!("L1 orders {o1:.2} and {o2:.2}")
}

// Criterion 2: 2D rotation with threshold 0 on a domain containing the
// full support keeps |total mass - 1| < 1e-10 for 1000 steps, under 60 s.
fn c2_conservation() -> String {
    let started = Instant::now();
    let cfg = RunConfig::from_str_pairs(
        "model = rotation\nspacing = 0.01\nthreshold = 0\ndt_max = 0.001\n\
         ic_std = 0.07\nsupport_radius = 6\nt_final = 1\n",
    )
    .unwrap();
    let mut grid = initialize_gaussian(&cfg).unwrap();
    let solver_cfg = build_solver_config(&cfg).unwrap();
    let mut worst = 0.0f64;
    for step in 0..1000 {
        advance_step(&mut grid, &RotationModel, &solver_cfg, f64::INFINITY).unwrap();
        let drift = (grid.total_mass() - 1.0).abs();
        worst = worst.max(drift);
        assert!(
            drift < 1e-10,
            "mass drift {drift:.3e} at step {} exceeds 1e-10",
            step + 1
        );
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "runtime {secs:.1}s exceeds 60 s");
    format!("max |mass-1| = {worst:.2e} over 1000 steps, {} cells", grid.len())
}

// Criterion 3: 1D step profile stays TVD with both limiters and inside
// its initial bounds, under 5 s.
fn c3_tvd() -> String {
    let started = Instant::now();
    for kind in [Limiter::Mc, Limiter::VanLeer] {
        let h = 0.02;
        let geo = GridGeometry::new(1, &[h], &[0.0]).unwrap();
        let mut g = SparseGrid::new(geo, 0.0);
        for i in -40..=40i32 {
            g.insert_cell(
                CellIndex::new(&[i]),
                if (-10..=10).contains(&i) { 1.0 } else { 0.0 },
            );
        }
        let cfg = SolverConfig::new(0.8, 1.0, kind).unwrap();
        let model = ConstantModel::new(1, &[1.0]);
        let tv = |g: &SparseGrid| -> f64 {
            let mut ps = vec![0.0];
            ps.extend(g.iter().map(|(_, c)| c.p));
            ps.push(0.0);
            ps.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
        };
        let mut prev = tv(&g);
        for step in 0..100 {
            advance_step(&mut g, &model, &cfg, f64::INFINITY).unwrap();
            let now = tv(&g);
            assert!(
                now <= prev + 1e-12,
                "{kind:?}: TV grew {prev:.6} -> {now:.6} at step {step}"
            );
            prev = now;
            for (_, c) in g.iter() {
                assert!(
                    c.p >= -1e-12 && c.p <= 1.0 + 1e-12,
                    "{kind:?}: density {} outside initial bounds",
                    c.p
                );
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 5.0, "runtime {secs:.1}s exceeds 5 s");
    "TV nonincreasing, bounds held, MC and van Leer".into()
}

const ROT_MEAN: [f64; 2] = [0.3, 0.0];
const ROT_STD: f64 = 0.05;

fn rotation_run(threshold: f64, support_radius: f64) -> SparseGrid {
    let cfg = RunConfig::from_str_pairs(&format!(
        "model = rotation\nspacing = 0.01\nthreshold = {threshold}\ndt_max = 0.001\n\
         ic_mean = {}, {}\nic_std = {ROT_STD}\nsupport_radius = {support_radius}\n\
         limiter = vanleer\nt_final = 1\n",
        ROT_MEAN[0], ROT_MEAN[1]
    ))
    .unwrap();
    let mut grid = initialize_gaussian(&cfg).unwrap();
    let solver_cfg = build_solver_config(&cfg).unwrap();
    run_to(
        &mut grid,
        &RotationModel,
        &solver_cfg,
        2.0 * std::f64::consts::PI,
    );
    grid
}

// Criterion 4: one full revolution at the published settings. KL against
// the undiffused analytic solution lands in [0.03, 0.20] bits, is stable
// under threshold refinement to 1e-16 (within 20%), and the best-fit
// isotropic diffusion is within 3x of 4e-5.
fn c4_rotation_validation() -> String {
    let t = 2.0 * std::f64::consts::PI;
    let grid3 = rotation_run(1e-3, 6.0);
    let reference = rotation_exact_solution(ROT_MEAN, [ROT_STD, ROT_STD], 0.0).unwrap();
    let kl3 = kl_divergence_bits(&reference, t, &grid3, true).unwrap();
    assert!(
        (0.03..=0.20).contains(&kl3),
        "KL {kl3:.4} bits outside [0.03, 0.20]"
    );

    let grid16 = rotation_run(1e-16, 10.0);
    let kl16 = kl_divergence_bits(&reference, t, &grid16, true).unwrap();
    assert!(
        (kl16 - kl3).abs() <= 0.2 * kl3,
        "KL at threshold 1e-16 is {kl16:.4} bits, more than 20% from {kl3:.4}"
    );

    // Best-fit isotropic diffusion by second-moment matching: isotropic
    // diffusion inflates each variance by 2 mu t, so the axis-averaged
    // variance excess over the exact solution estimates mu directly.
    // (A KL-argmin fit is degenerate here: the numerical spreading is
    // anisotropic, so diffusing the reference isotropically trades core
    // fit against shoulder fit and the argmin collapses to zero.)
    let (_, cov) = moments(&grid3).unwrap();
    let excess = (cov[0][0] - ROT_STD * ROT_STD) + (cov[1][1] - ROT_STD * ROT_STD);
    let mu_star = excess / (4.0 * t);
    assert!(
        (4e-5 / 3.0..=4e-5 * 3.0).contains(&mu_star),
        "best-fit mu {mu_star:.2e} outside 3x of 4e-5"
    );
    format!("KL {kl3:.3} bits (1e-16 rerun {kl16:.3}), best-fit mu {mu_star:.1e}")
}

struct LorenzOpen {
    wall: f64,
    cells: usize,
    lobes: Vec<(f64, f64)>, // (x1 centroid, mass) per component
}

fn lorenz_open() -> &'static LorenzOpen {
    static OPEN: OnceLock<LorenzOpen> = OnceLock::new();
    OPEN.get_or_init(|| {
        let cfg = RunConfig::from_str_pairs(
            "model = lorenz\nspacing = 0.25\nthreshold = 1e-6\ndt_max = 0.001\nt_final = 1\n",
        )
        .unwrap();
        let model = build_model(&cfg);
        let solver_cfg = build_solver_config(&cfg).unwrap();
        let mut grid = initialize_gaussian(&cfg).unwrap();
        let t0 = Instant::now();
        run_to(&mut grid, model.as_ref(), &solver_cfg, 1.0);
        let wall = t0.elapsed().as_secs_f64();
        let lobes = superlevel_component_stats(&grid, 0.005)
            .into_iter()
            .map(|c| (c.centroid[0], c.mass))
            .collect();
        LorenzOpen {
            wall,
            cells: grid.len(),
            lobes,
        }
    })
}

// Criterion 5: open-loop Lorenz run reaches t=1 with an active-cell
// count in [15k, 150k] and a PDF split into two lobes on opposite sides
// of the x3 axis, within 10 minutes.
fn c5_lorenz_open() -> String {
    let open = lorenz_open();
    assert!(
        (15_000..=150_000).contains(&open.cells),
        "active cells {} outside [15000, 150000]",
        open.cells
    );
    assert!(
        open.lobes.len() == 2,
        "superlevel 0.005 has {} components, expected 2 ({:?})",
        open.lobes.len(),
        open.lobes
    );
    let (a, b) = (open.lobes[0].0, open.lobes[1].0);
    assert!(
        a * b < 0.0,
        "lobe x1 centroids {a:.2} and {b:.2} do not straddle the x3 axis"
    );
    assert!(
        open.wall < 600.0,
        "runtime {:.1}s exceeds 10 minutes",
        open.wall
    );
    format!(
        "{} cells, lobes at x1 = {a:.1} and {b:.1}, {:.1}s",
        open.cells, open.wall
    )
}

// Criterion 6: the same run with x3 measurements every 0.001 keeps the
// PDF small ([1k, 20k] cells), renormalized to 1e-12 after every update,
// and at least 5x faster than the open-loop run.
fn c6_lorenz_measured() -> String {
    let open_wall = lorenz_open().wall;
    let cfg = RunConfig::from_str_pairs(
        "model = lorenz\nspacing = 0.25\nthreshold = 1e-6\ndt_max = 0.001\nt_final = 1\n\
         measurement_period = 0.001\nmeasurement_component = 2\nmeasurement_noise_std = 1\n",
    )
    .unwrap();
    let model = build_model(&cfg);
    let solver_cfg = build_solver_config(&cfg).unwrap();
    let events =
        synthesize_measurements(&cfg, cfg.measurements.as_ref().unwrap(), model.as_ref(), cfg.seed)
            .unwrap();
    let mut grid = initialize_gaussian(&cfg).unwrap();
    let t0 = Instant::now();
    let mut t = 0.0;
    let mut worst = 0.0f64;
    for ev in &events {
        while t < ev.time - 1e-12 {
            let out = advance_step(&mut grid, model.as_ref(), &solver_cfg, ev.time - t).unwrap();
            if out.dt == ev.time - t {
                break;
            }
            t += out.dt;
        }
        t = ev.time;
        bayes_update(&mut grid, ev).unwrap();
        let drift = (grid.total_mass() - 1.0).abs();
        worst = worst.max(drift);
        assert!(drift < 1e-12, "mass drift {drift:.2e} after update at t={t}");
    }
    let wall = t0.elapsed().as_secs_f64();
    assert!(
        (1_000..=20_000).contains(&grid.len()),
        "active cells {} outside [1000, 20000]",
        grid.len()
    );
    assert!(
        wall * 5.0 <= open_wall,
        "measured run {wall:.1}s is not 5x faster than open loop {open_wall:.1}s"
    );
    format!(
        "{} cells, worst mass drift {worst:.1e}, {wall:.1}s vs {open_wall:.1}s open loop",
        grid.len()
    )
}

// Criterion 7: ten steps on fully-active 8x8 (2D rotation + diffusion)
// and 6x6x6 (3D Lorenz) blocks match the dense scatter-form oracle
// cell-for-cell to 1e-13.
fn c7_sparse_dense() -> String {
    // 2D: rotation with anisotropic diffusion.
    {
        let geo = GridGeometry::new(2, &[0.05, 0.05], &[0.3, 0.0]).unwrap();
        let mut grid = SparseGrid::new(geo.clone(), 0.0);
        let mut oracle = DenseOracle::new(geo, 0.0, &[-17, -17], &[16, 16]);
        for i in -4..=3i32 {
            for j in -4..=3i32 {
                let p = 1.0 / (1.0 + 0.3 * (i * i + j * j) as f64);
                grid.insert_cell(CellIndex::new(&[i, j]), p);
                oracle.set(&[i, j], p);
            }
        }
        let mut cfg = SolverConfig::new(0.5, 0.01, Limiter::Mc).unwrap();
        cfg.diffusion_coeff = [1e-3, 2e-3, 0.0];
        for step in 0..10 {
            let out = advance_step(&mut grid, &RotationModel, &cfg, f64::INFINITY).unwrap();
            let dt = oracle.step(&RotationModel, &cfg, f64::INFINITY);
            assert_eq!(out.dt, dt, "2D dt mismatch at step {step}");
            oracle.assert_matches(&grid, 1e-13, &format!("2D step {step}"));
        }
    }
    // 3D: Lorenz, van Leer limiter.
    {
        let geo = GridGeometry::new(3, &[0.25; 3], &[-11.5, -10.0, 9.5]).unwrap();
        let mut grid = SparseGrid::new(geo.clone(), 0.0);
        let mut oracle = DenseOracle::new(geo, 0.0, &[-16; 3], &[15; 3]);
        for i in -3..=2i32 {
            for j in -3..=2i32 {
                for k in -3..=2i32 {
                    let p = (-0.1 * (i * i + j * j + k * k) as f64).exp();
                    grid.insert_cell(CellIndex::new(&[i, j, k]), p);
                    oracle.set(&[i, j, k], p);
                }
            }
        }
        let model = gbees::LorenzModel::standard();
        let cfg = SolverConfig::new(0.5, 0.001, Limiter::VanLeer).unwrap();
        for step in 0..10 {
            let out = advance_step(&mut grid, &model, &cfg, f64::INFINITY).unwrap();
            let dt = oracle.step(&model, &cfg, f64::INFINITY);
            assert_eq!(out.dt, dt, "3D dt mismatch at step {step}");
            oracle.assert_matches(&grid, 1e-13, &format!("3D step {step}"));
        }
    }
    "8x8 rotation and 6x6x6 Lorenz agree to 1e-13 for 10 steps".into()
}

// Criterion 8: conjugate-Gaussian posterior to 1e-10 and bitwise
// invariance under a uniform likelihood.
fn c8_bayes() -> String {
    // Conjugate product N(m0, s0^2) x N(y; x, sy^2).
    let h = 0.01;
    let (m0, s0) = (0.2, 0.3);
    let (y, sy) = (0.5, 0.2);
    let geo = GridGeometry::new(1, &[h], &[0.0]).unwrap();
    let mut g = SparseGrid::new(geo, 0.0);
    for i in -200..=300 {
        let x = i as f64 * h;
        g.insert_cell(
            CellIndex::new(&[i]),
            (-(x - m0) * (x - m0) / (2.0 * s0 * s0)).exp(),
        );
    }
    normalize(&mut g).unwrap();
    let event = MeasurementEvent {
        time: 0.0,
        y: vec![y],
        model: GaussianMeasurementModel::new(ObservationMap::Components(vec![0]), vec![sy])
            .unwrap(),
    };
    bayes_update(&mut g, &event).unwrap();
    let s2 = 1.0 / (1.0 / (s0 * s0) + 1.0 / (sy * sy));
    let m = s2 * (m0 / (s0 * s0) + y / (sy * sy));
    let exact_mass: f64 = g
        .iter()
        .map(|(idx, _)| {
            let x = idx.coords()[0] as f64 * h;
            (-(x - m) * (x - m) / (2.0 * s2)).exp()
        })
        .sum::<f64>()
        * h;
    let mut worst = 0.0f64;
    for (idx, c) in g.iter() {
        let x = idx.coords()[0] as f64 * h;
        let exact = (-(x - m) * (x - m) / (2.0 * s2)).exp() / exact_mass;
        worst = worst.max((c.p - exact).abs());
    }
    assert!(worst < 1e-10, "conjugate posterior error {worst:.2e}");

    // Uniform likelihood leaves a normalized PDF bitwise unchanged.
    let geo = GridGeometry::new(1, &[0.5], &[0.0]).unwrap();
    let mut g = SparseGrid::new(geo, 0.0);
    g.insert_cell(CellIndex::new(&[0]), 0.8);
    g.insert_cell(CellIndex::new(&[1]), 1.2);
    normalize(&mut g).unwrap();
    let before: Vec<(CellIndex, f64)> = g.iter().map(|(i, c)| (*i, c.p)).collect();
    let uniform = MeasurementEvent {
        time: 0.0,
        y: vec![3.0],
        model: GaussianMeasurementModel::new(
            ObservationMap::Custom(std::sync::Arc::new(|_x: &[f64]| vec![0.0])),
            vec![1.0],
        )
        .unwrap(),
    };
    bayes_update(&mut g, &uniform).unwrap();
    for (idx, p) in before {
        let after = g.get(&idx).unwrap().p;
        assert!(
            after == p,
            "uniform likelihood changed p bitwise: {p:e} -> {after:e}"
        );
    }
    format!("conjugate error {worst:.1e}, uniform update bitwise")
}

// Criterion 9: zero-velocity diffusion matches the heat-kernel-widened
// Gaussian with L1 error dropping at second order under one refinement.
fn c9_diffusion() -> String {
    let mu = 0.02;
    let sigma0 = 0.1;
    let t_final = 0.5;
    let mut errors = Vec::new();
    for h in [0.02, 0.01] {
        let geo = GridGeometry::new(1, &[h], &[0.0]).unwrap();
        let mut g = SparseGrid::new(geo, 0.0);
        let m = (8.0 * sigma0 / h) as i32;
        let norm = 1.0 / (sigma0 * (2.0 * std::f64::consts::PI).sqrt());
        for i in -m..=m {
            let x = i as f64 * h;
            g.insert_cell(
                CellIndex::new(&[i]),
                norm * (-x * x / (2.0 * sigma0 * sigma0)).exp(),
            );
        }
        // Explicit diffusion needs dt ~ dx^2; the CFL rule only covers
        // advection, so cap dt directly.
        let mut cfg = SolverConfig::new(0.9, 0.2 * h * h / mu, Limiter::None).unwrap();
        cfg.diffusion_coeff = [mu, 0.0, 0.0];
        run_to(&mut g, &ConstantModel::new(1, &[0.0]), &cfg, t_final);
        let s2 = sigma0 * sigma0 + 2.0 * mu * t_final;
        let norm_t = 1.0 / (s2 * 2.0 * std::f64::consts::PI).sqrt();
        let mut err = 0.0;
        for (idx, c) in g.iter() {
            let x = idx.coords()[0] as f64 * h;
            err += (c.p - norm_t * (-x * x / (2.0 * s2)).exp()).abs() * h;
        }
        errors.push(err);
    }
    let order = (errors[0] / errors[1]).log2();
    assert!(
        (1.8..=2.2).contains(&order),
        "L1 order {order:.3} outside [1.8, 2.2] (errors {:.3e} -> {:.3e})",
        errors[0],
        errors[1]
    );
    format!("L1 order {order:.2} ({:.1e} -> {:.1e})", errors[0], errors[1])
}

//! Measurement updates: Bayes' rule on the sparse PDF and renormalization.

use std::io::BufRead;
use std::path::Path;

use crate::error::{GbeesError, Result};
use crate::grid::SparseGrid;
use crate::models::{GaussianMeasurementModel, ObservationMap};

/// A time-stamped observation with its likelihood model.
#[derive(Clone)]
pub struct MeasurementEvent {
    pub time: f64,
    pub y: Vec<f64>,
    pub model: GaussianMeasurementModel,
}

/// Multiply the PDF by the measurement likelihood and renormalize to
/// unit mass. Likelihoods are accumulated in log space and exponentiated
/// after subtracting the per-update maximum, so sharp likelihoods over
/// many cells do not underflow. Returns the normalization constant
/// C = sum(likelihood * p) * cellVolume (the pre-normalization mass).
///
/// The active set is pruned before the final renormalization, since
/// the likelihood can push cells below the threshold; renormalizing
/// last keeps the posterior mass at unity. Halo expansion is left to
/// the next propagation step, which always rebuilds it first.
pub fn bayes_update(grid: &mut SparseGrid, event: &MeasurementEvent) -> Result<f64> {
    if grid.is_empty() {
        return Err(GbeesError::EmptyGrid);
    }
    let slots = grid.active_slots();
    let log_liks: Vec<f64> = {
        let g = &*grid;
        map_slots(&slots, |slot| {
            let x = g.geometry().center(&g.cell(slot).index());
            event.model.log_likelihood(&event.y, &x[..g.dim()])
        })
    };
    let max_ll = log_liks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_ll.is_finite() {
        return Err(GbeesError::Numerical(format!(
            "non-finite log likelihood at t={}",
            event.time
        )));
    }
    let weights: Vec<f64> = log_liks.iter().map(|&ll| (ll - max_ll).exp()).collect();
    let vol = grid.geometry().cell_volume();
    let scaled_mass: f64 = slots
        .iter()
        .zip(&weights)
        .map(|(&slot, &w)| w * grid.cell(slot).p)
        .sum::<f64>()
        * vol;
    if !(scaled_mass > 0.0) {
        return Err(GbeesError::ZeroLikelihood { time: event.time });
    }
    for (&slot, &w) in slots.iter().zip(&weights) {
        let c = grid.cell_mut(slot);
        c.p = w * c.p / scaled_mass;
    }
    grid.prune_active_set();
    normalize(grid)?;
    Ok(scaled_mass * max_ll.exp())
}

/// Divide all densities by the total mass. Returns the prior mass.
pub fn normalize(grid: &mut SparseGrid) -> Result<f64> {
    let mass = grid.total_mass();
    if !(mass > 0.0) {
        return Err(GbeesError::NonPositiveMass(mass));
    }
    let slots = grid.active_slots();
    for slot in slots {
        grid.cell_mut(slot).p /= mass;
    }
    Ok(mass)
}

/// Read a measurement schedule: one row per event,
/// `t  y1 [y2 ...]  noiseStd1 [noiseStd2 ...]`, `#` comments.
/// The observation map is shared by all events; the number of observed
/// components is inferred from the row width.
pub fn read_schedule(path: &Path, observation: ObservationMap) -> Result<Vec<MeasurementEvent>> {
    let file = std::fs::File::open(path)?;
    let mut events = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|e| {
                    GbeesError::Config(format!("schedule line {}: {e}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() < 3 || vals.len() % 2 == 0 {
            return Err(GbeesError::Config(format!(
                "schedule line {}: expected t followed by k observations and k noise stds",
                lineno + 1
            )));
        }
        let k = (vals.len() - 1) / 2;
        let t = vals[0];
        if t < last_t {
            return Err(GbeesError::Config(format!(
                "schedule line {}: measurement times must be nondecreasing",
                lineno + 1
            )));
        }
        last_t = t;
        let y = vals[1..1 + k].to_vec();
        let noise_std = vals[1 + k..].to_vec();
        events.push(MeasurementEvent {
            time: t,
            y,
            model: GaussianMeasurementModel::new(observation.clone(), noise_std)?,
        });
    }
    Ok(events)
}

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

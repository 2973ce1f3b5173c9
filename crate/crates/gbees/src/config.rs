//! Plain-text run configuration: one `key = value` per line, `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{GbeesError, Result};
use crate::solver::Limiter;

#[derive(Clone, Debug)]
pub enum ModelKind {
    Rotation,
    Lorenz { sigma: f64, b: f64, r: f64 },
}

/// Synthetic measurement generation: the truth trajectory is integrated
/// from `truth_start` and observed in one state component at a fixed
/// period with seeded Gaussian noise.
#[derive(Clone, Debug)]
pub struct SyntheticMeasurements {
    pub component: usize,
    pub noise_std: f64,
    pub period: f64,
    pub truth_start: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum ReferenceKind {
    /// Analytic rotation solution with the given isotropic diffusion mu.
    RotationExact { mu: f64 },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub spacing: Vec<f64>,
    /// Lattice anchor; defaults to the initial-condition mean.
    pub origin: Option<Vec<f64>>,
    pub threshold: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub limiter: Limiter,
    /// Physical diffusion coefficient mu per axis.
    pub diffusion: Vec<f64>,
    pub diffusion_compensation: f64,
    pub ic_mean: Vec<f64>,
    pub ic_std: Vec<f64>,
    /// Initial support half-width, in standard deviations per axis.
    pub support_radius: f64,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    /// Path to a measurement schedule file (rows `t y... std...`).
    pub measurement_schedule: Option<PathBuf>,
    /// Synthetic measurements, used when no schedule file is given.
    pub measurements: Option<SyntheticMeasurements>,
    pub reference: Option<ReferenceKind>,
    /// Superlevel used for the lobe/component count diagnostic.
    pub component_level: f64,
    /// Emit a diagnostics row every this many steps.
    pub diag_every: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GbeesError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str_pairs(&text)
    }

    pub fn from_str_pairs(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GbeesError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_map(kv)
    }

    fn from_map(kv: BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(k).map(String::as_str);
        let parse_f64 = |k: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|e| GbeesError::Config(format!("{k}: {e}")))
        };
        let parse_list = |k: &str, v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|s| parse_f64(k, s.trim()))
                .collect::<Result<Vec<f64>>>()
        };

        let model = match get("model").unwrap_or("") {
            "rotation" => ModelKind::Rotation,
            "lorenz" => ModelKind::Lorenz {
                sigma: get("sigma").map_or(Ok(4.0), |v| parse_f64("sigma", v))?,
                b: get("b").map_or(Ok(1.0), |v| parse_f64("b", v))?,
                r: get("r").map_or(Ok(48.0), |v| parse_f64("r", v))?,
            },
            other => {
                return Err(GbeesError::Config(format!(
                    "model must be `rotation` or `lorenz`, got `{other}`"
                )))
            }
        };
        let dim = match model {
            ModelKind::Rotation => 2,
            ModelKind::Lorenz { .. } => 3,
        };

        let broadcast = |k: &str, v: Vec<f64>| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; dim]),
                n if n == dim => Ok(v),
                n => Err(GbeesError::Config(format!(
                    "{k}: expected 1 or {dim} values, got {n}"
                ))),
            }
        };

        let spacing = broadcast(
            "spacing",
            parse_list("spacing", get("spacing").unwrap_or("0.1"))?,
        )?;
        let origin = match get("origin") {
            None | Some("auto") => None,
            Some(v) => Some(broadcast("origin", parse_list("origin", v)?)?),
        };
        let default_mean = match model {
            ModelKind::Rotation => vec![0.3, 0.0],
            // Defaults chosen to start on the attractor near one wing.
            ModelKind::Lorenz { .. } => vec![-8.0, -14.5, -9.0],
        };
        let ic_mean = match get("ic_mean") {
            Some(v) => broadcast("ic_mean", parse_list("ic_mean", v)?)?,
            None => default_mean,
        };
        let ic_std = match get("ic_std") {
            Some(v) => broadcast("ic_std", parse_list("ic_std", v)?)?,
            None => match model {
                ModelKind::Rotation => vec![0.07; dim],
                ModelKind::Lorenz { .. } => vec![1.0; dim],
            },
        };
        let diffusion = match get("diffusion") {
            Some(v) => broadcast("diffusion", parse_list("diffusion", v)?)?,
            None => vec![0.0; dim],
        };

        let limiter = match get("limiter").unwrap_or("mc") {
            "mc" => Limiter::Mc,
            "vanleer" | "van_leer" => Limiter::VanLeer,
            "none" => Limiter::None,
            other => {
                return Err(GbeesError::Config(format!(
                    "limiter must be mc, vanleer or none, got `{other}`"
                )))
            }
        };

        let t_final = parse_f64(
            "t_final",
            get("t_final")
                .ok_or_else(|| GbeesError::Config("t_final is required".into()))?,
        )?;

        let mut snapshot_times = match get("snapshot_times") {
            Some(v) => parse_list("snapshot_times", v)?,
            None => Vec::new(),
        };
        if let Some(v) = get("snapshot_every") {
            let every = parse_f64("snapshot_every", v)?;
            if !(every > 0.0) {
                return Err(GbeesError::Config("snapshot_every must be positive".into()));
            }
            let mut t = 0.0;
            while t <= t_final + 1e-12 {
                snapshot_times.push(t.min(t_final));
                t += every;
            }
        }
        snapshot_times.sort_by(f64::total_cmp);
        snapshot_times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let measurement_schedule = get("measurement_schedule").map(PathBuf::from);
        let measurements = match get("measurement_period") {
            Some(v) => {
                let period = parse_f64("measurement_period", v)?;
                let truth_start = match get("truth_start") {
                    Some(v) => broadcast("truth_start", parse_list("truth_start", v)?)?,
                    None => ic_mean.clone(),
                };
                Some(SyntheticMeasurements {
                    component: get("measurement_component")
                        .map_or(Ok(dim - 1), |v| {
                            v.parse()
                                .map_err(|e| GbeesError::Config(format!("measurement_component: {e}")))
                        })?,
                    noise_std: get("measurement_noise_std")
                        .map_or(Ok(1.0), |v| parse_f64("measurement_noise_std", v))?,
                    period,
                    truth_start,
                })
            }
            None => None,
        };

        let reference = match get("reference") {
            None | Some("none") => None,
            Some("rotation_exact") => Some(ReferenceKind::RotationExact {
                mu: get("reference_mu").map_or(Ok(0.0), |v| parse_f64("reference_mu", v))?,
            }),
            Some(other) => {
                return Err(GbeesError::Config(format!(
                    "reference must be `rotation_exact` or `none`, got `{other}`"
                )))
            }
        };

        let cfg = RunConfig {
            model,
            dim,
            spacing,
            origin,
            threshold: parse_f64("threshold", get("threshold").unwrap_or("1e-6"))?,
            cfl: parse_f64("cfl", get("cfl").unwrap_or("0.5"))?,
            dt_max: parse_f64("dt_max", get("dt_max").unwrap_or("0.001"))?,
            limiter,
            diffusion,
            diffusion_compensation: parse_f64(
                "diffusion_compensation",
                get("diffusion_compensation").unwrap_or("0"),
            )?,
            ic_mean,
            ic_std,
            support_radius: parse_f64("support_radius", get("support_radius").unwrap_or("4"))?,
            t_final,
            snapshot_times,
            measurement_schedule,
            measurements,
            reference,
            component_level: parse_f64(
                "component_level",
                get("component_level").unwrap_or("0.005"),
            )?,
            diag_every: get("diag_every")
                .map_or(Ok(1usize), |v| {
                    v.parse()
                        .map_err(|e| GbeesError::Config(format!("diag_every: {e}")))
                })?,
            seed: get("seed").map_or(Ok(42u64), |v| {
                v.parse()
                    .map_err(|e| GbeesError::Config(format!("seed: {e}")))
            })?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GbeesError::Config(m.into()));
        if !(self.t_final > 0.0) {
            return bad("t_final must be positive");
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad("spacing must be positive");
        }
        if !(self.threshold >= 0.0) {
            return bad("threshold must be nonnegative");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl must be in (0, 1]");
        }
        if !(self.dt_max > 0.0) {
            return bad("dt_max must be positive");
        }
        if self.ic_std.iter().any(|&s| !(s > 0.0)) {
            return bad("ic_std must be positive");
        }
        if !(self.support_radius > 0.0) {
            return bad("support_radius must be positive");
        }
        if self
            .snapshot_times
            .iter()
            .any(|&t| t < 0.0 || t > self.t_final + 1e-12)
        {
            return bad("snapshot times must lie within [0, t_final]");
        }
        if self.diag_every == 0 {
            return bad("diag_every must be at least 1");
        }
        if let Some(m) = &self.measurements {
            if m.component >= self.dim {
                return bad("measurement_component out of range");
            }
            if !(m.period > 0.0) || !(m.noise_std > 0.0) {
                return bad("measurement period and noise std must be positive");
            }
        }
        if let Some(ReferenceKind::RotationExact { mu }) = &self.reference {
            if *mu < 0.0 {
                return bad("reference_mu must be nonnegative");
            }
            if !matches!(self.model, ModelKind::Rotation) {
                return bad("reference rotation_exact requires the rotation model");
            }
        }
        Ok(())
    }
}

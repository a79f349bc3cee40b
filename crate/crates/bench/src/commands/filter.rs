use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use cdt_core::filters::{run_filter, FilterKind, FilterOptions, GirfConfig, Guide, RunRecord};
use cdt_core::models::Scenario;
use cdt_core::neural::{Checkpoint, ControlNetworks};
use cdt_core::oracle::KalmanMode;
use cdt_core::rng::{derive_seed, tag};
use cdt_core::sde::TimeGrid;
use rayon::prelude::*;

use super::{checkpoint_name, simulate_dataset, RunOptions};
use crate::config::{ExperimentConfig, FilterName, LoadedConfig, ParamPoint, SchemeName};
use crate::obsfile::ObservationFile;
use crate::row;
use crate::table::Table;

pub const RESULTS_HEADER: [&str; 19] = [
    "config_hash",
    "master_seed",
    "data_seed",
    "run_seed",
    "model",
    "filter",
    "dim",
    "sigma_y",
    "theta4",
    "noise_multiple",
    "K",
    "M",
    "repetition",
    "mean_ess",
    "mean_ess_fraction",
    "min_ess",
    "log_evidence",
    "kalman_discretized",
    "kalman_continuous",
];

pub const SUMMARY_HEADER: [&str; 21] = [
    "config_hash",
    "master_seed",
    "data_seed",
    "model",
    "filter",
    "dim",
    "sigma_y",
    "theta4",
    "noise_multiple",
    "K",
    "M",
    "repetitions",
    "mean_ess",
    "mean_ess_fraction",
    "elbo",
    "var_log_evidence",
    "se_elbo",
    "reference_filter",
    "elbo_gap",
    "kalman_discretized",
    "kalman_continuous",
];

/// One filter pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub data_seed: u64,
    pub run_seed: u64,
    pub filter: FilterName,
    pub dim: usize,
    pub sigma_y: Option<f64>,
    pub theta4: Option<f64>,
    pub noise_multiple: f64,
    pub k: usize,
    pub m: usize,
    pub repetition: usize,
    pub mean_ess: f64,
    pub mean_ess_fraction: f64,
    pub min_ess: f64,
    pub log_evidence: f64,
    pub kalman_discretized: Option<f64>,
    pub kalman_continuous: Option<f64>,
}

/// Statistics over the repetitions of one (filter, setting) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub data_seed: u64,
    pub filter: FilterName,
    pub dim: usize,
    pub sigma_y: Option<f64>,
    pub theta4: Option<f64>,
    pub noise_multiple: f64,
    pub k: usize,
    pub m: usize,
    pub repetitions: usize,
    pub mean_ess: f64,
    pub mean_ess_fraction: f64,
    /// Mean of `log p̂`.
    pub elbo: f64,
    /// Sample variance of `log p̂` (denominator R - 1; 0 when R = 1).
    pub var_log_evidence: f64,
    pub se_elbo: f64,
    pub reference: Option<FilterName>,
    pub elbo_gap: Option<f64>,
    pub kalman_discretized: Option<f64>,
    pub kalman_continuous: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

impl FilterOutcome {
    pub fn summary_for(&self, filter: FilterName, noise_multiple: f64) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.filter == filter && s.noise_multiple == noise_multiple)
    }

    pub fn log_evidences(&self, filter: FilterName, noise_multiple: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.filter == filter && r.noise_multiple == noise_multiple)
            .map(|r| r.log_evidence)
            .collect()
    }
}

/// Data set and parameter point; identifies matched settings across filters.
type Setting = (u64, usize, Option<u64>, Option<u64>, usize);

fn setting(data_seed: u64, dim: usize, sigma_y: Option<f64>, theta4: Option<f64>, m: usize) -> Setting {
    (data_seed, dim, sigma_y.map(f64::to_bits), theta4.map(f64::to_bits), m)
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut s, mut n) = (0.0, 0);
    for x in xs {
        s += x;
        n += 1;
    }
    (s / n as f64, n)
}

/// Group rows into summary cells, in first-appearance order.
pub fn summarize(rows: &[ResultRow], reference: Option<FilterName>) -> Vec<SummaryRow> {
    let mut order: Vec<Vec<&ResultRow>> = Vec::new();
    let mut index: HashMap<(Setting, FilterName), usize> = HashMap::new();
    for r in rows {
        let key = (setting(r.data_seed, r.dim, r.sigma_y, r.theta4, r.m), r.filter);
        let slot = *index.entry(key).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[slot].push(r);
    }
    let mut summary: Vec<SummaryRow> = order
        .iter()
        .map(|cell| {
            let first = cell[0];
            let (elbo, n) = mean(cell.iter().map(|r| r.log_evidence));
            let var = if n > 1 {
                cell.iter().map(|r| (r.log_evidence - elbo).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            SummaryRow {
                data_seed: first.data_seed,
                filter: first.filter,
                dim: first.dim,
                sigma_y: first.sigma_y,
                theta4: first.theta4,
                noise_multiple: first.noise_multiple,
                k: first.k,
                m: first.m,
                repetitions: n,
                mean_ess: mean(cell.iter().map(|r| r.mean_ess)).0,
                mean_ess_fraction: mean(cell.iter().map(|r| r.mean_ess_fraction)).0,
                elbo,
                var_log_evidence: var,
                se_elbo: (var / n as f64).sqrt(),
                reference,
                elbo_gap: None,
                kalman_discretized: first.kalman_discretized,
                kalman_continuous: first.kalman_continuous,
            }
        })
        .collect();
    if let Some(reference) = reference {
        let key = |s: &SummaryRow| setting(s.data_seed, s.dim, s.sigma_y, s.theta4, s.m);
        let reference_elbo: HashMap<Setting, f64> = summary
            .iter()
            .filter(|s| s.filter == reference)
            .map(|s| (key(s), s.elbo))
            .collect();
        for s in &mut summary {
            s.elbo_gap = reference_elbo.get(&key(s)).map(|r| s.elbo - r);
        }
    }
    summary
}

/// A data set to filter, with where it came from.
struct Dataset {
    seed: u64,
    noise_multiple: f64,
    observations: Vec<Vec<f64>>,
}

enum Driver<'a> {
    Plain(FilterName),
    Learned(&'a ControlNetworks),
    Girf(GirfConfig),
}

/// Load and check every checkpoint needed by the learned filters, before
/// any filter runs.
fn load_checkpoints(
    cfg: &ExperimentConfig,
    scenarios: &[(ParamPoint, Scenario)],
    grid: &TimeGrid,
    options: &RunOptions,
) -> Result<HashMap<(usize, SchemeName), ControlNetworks>> {
    let mut loaded = HashMap::new();
    let schemes: Vec<SchemeName> = cfg.filter.filters.iter().filter_map(|f| f.learned_scheme()).collect();
    let source = options.checkpoint.clone().unwrap_or_else(|| options.out_dir.clone());
    for (point, scenario) in scenarios {
        for &scheme in &schemes {
            let label = point.label(&scenario.name);
            let path = if source.is_dir() {
                source.join(checkpoint_name(&label, scheme))
            } else {
                source.clone()
            };
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            let n = &ckpt.networks;
            let m = &ckpt.meta;
            let mismatch = |what: &str, want: String, got: String| {
                anyhow::anyhow!(
                    "checkpoint {} does not match {label}: {what} is {got}, expected {want}",
                    path.display()
                )
            };
            if n.state_dim() != scenario.state_dim() {
                return Err(mismatch("state dimension", scenario.state_dim().to_string(), n.state_dim().to_string()));
            }
            if n.obs_dim() != scenario.obs_dim() {
                return Err(mismatch("observation dimension", scenario.obs_dim().to_string(), n.obs_dim().to_string()));
            }
            if (n.horizon() - grid.horizon()).abs() > 1e-12 {
                return Err(mismatch("horizon", grid.horizon().to_string(), n.horizon().to_string()));
            }
            if m.model != scenario.name {
                return Err(mismatch("model", scenario.name.clone(), m.model.clone()));
            }
            if m.observation != scenario.observation.describe() {
                return Err(mismatch("observation model", scenario.observation.describe(), m.observation.clone()));
            }
            if m.scheme != scheme.scheme().name() {
                return Err(mismatch("scheme", scheme.scheme().name().into(), m.scheme.clone()));
            }
            loaded.insert((point.index, scheme), ckpt.networks);
        }
    }
    Ok(loaded)
}

/// Run every filter of the config over its repetitions and write
/// `results.csv`, `summary.csv` and the `results_timings.csv` sidecar.
pub fn cmd_filter(config: &LoadedConfig, options: &RunOptions) -> Result<FilterOutcome> {
    let out = options.prepare_out_dir()?.to_path_buf();
    let cfg = &config.config;
    let master = options.master_seed(config);
    let grid = cfg.time_grid()?;
    let filters = &cfg.filter.filters;

    let file = options.observations.as_deref().map(ObservationFile::load).transpose()?;
    let mut scenarios = Vec::new();
    for point in cfg.points() {
        let scenario = cfg.scenario(&point, master)?;
        if let Some(f) = &file {
            ensure!(
                f.model == scenario.name,
                "observations file is for model {}, config is {}",
                f.model,
                scenario.name
            );
            ensure!(
                f.state_dim == scenario.state_dim() && f.obs_dim == scenario.obs_dim(),
                "observations file has d={} (obs {}), model {} has d={} (obs {})",
                f.state_dim,
                f.obs_dim,
                point.label(&scenario.name),
                scenario.state_dim(),
                scenario.obs_dim()
            );
            for (k, y) in f.observations.iter().enumerate() {
                scenario
                    .observation
                    .validate(y)
                    .with_context(|| format!("observation {} of the observations file", k + 1))?;
            }
        }
        scenarios.push((point, scenario));
    }
    let networks = load_checkpoints(cfg, &scenarios, &grid, options)?;
    for f in filters {
        if let Some(schedule) = f.girf_schedule() {
            cfg.filter.girf_config(&grid, schedule).validate(&grid)?;
        }
    }

    let mut rows = Vec::new();
    let mut timings = Table::new(&["row", "filter", "K", "M", "repetition", "wall_seconds"]);
    let start = Instant::now();
    for (point, scenario) in &scenarios {
        let label = point.label(&scenario.name);
        let mut datasets = Vec::new();
        if filters.is_empty() {
            // nothing to run
        } else if let Some(f) = &file {
            datasets.push(Dataset {
                seed: f.seed,
                noise_multiple: f.noise_multiple,
                observations: f.observations.clone(),
            });
        } else {
            for &multiple in &cfg.filter.noise_multiples {
                for &k in &cfg.filter.observations {
                    let (file, _) = simulate_dataset(cfg, point, scenario, k, multiple, master)?;
                    datasets.push(Dataset {
                        seed: file.seed,
                        noise_multiple: multiple,
                        observations: file.observations,
                    });
                }
            }
        }

        for data in &datasets {
            let k = data.observations.len();
            let m = cfg.filter.particles_for(k);
            let kalman = match &scenario.ou {
                Some(oracle) => (
                    Some(oracle.kalman_evidence(&data.observations, KalmanMode::Discretized { step: grid.step() })?),
                    Some(oracle.kalman_evidence(&data.observations, KalmanMode::Continuous)?),
                ),
                None => (None, None),
            };
            for &filter in filters {
                let driver = match (filter.learned_scheme(), filter.girf_schedule()) {
                    (Some(scheme), _) => Driver::Learned(&networks[&(point.index, scheme)]),
                    (_, Some(schedule)) => Driver::Girf(cfg.filter.girf_config(&grid, schedule)),
                    _ => Driver::Plain(filter),
                };
                let kind = match &driver {
                    Driver::Learned(n) => FilterKind::Auxiliary(*n as &dyn Guide),
                    Driver::Girf(g) => FilterKind::Girf(g),
                    Driver::Plain(FilterName::Bpf) => FilterKind::Bootstrap,
                    Driver::Plain(FilterName::FaApf) => FilterKind::FullyAdaptedOu(KalmanMode::Continuous),
                    Driver::Plain(FilterName::FaApfDiscretized) => {
                        FilterKind::FullyAdaptedOu(KalmanMode::Discretized { step: grid.step() })
                    }
                    Driver::Plain(FilterName::ExactApf) => FilterKind::Auxiliary(scenario.oracle()? as &dyn Guide),
                    Driver::Plain(other) => bail!("unhandled filter {}", other.name()),
                };
                let runs: Vec<Result<(u64, RunRecord, f64)>> = (0..cfg.filter.repetitions)
                    .into_par_iter()
                    .map(|rep| {
                        let run_seed = derive_seed(
                            master,
                            &[
                                tag::REPETITION,
                                point.index as u64,
                                k as u64,
                                data.noise_multiple.to_bits(),
                                rep as u64,
                            ],
                        );
                        let options = FilterOptions {
                            particles: m,
                            grid,
                            resampling: cfg.filter.resampling,
                            seed: run_seed,
                        };
                        let t = Instant::now();
                        let record = run_filter(kind, scenario, &data.observations, &options).with_context(|| {
                            format!(
                                "{} on {label}, K={k}, noise multiple {}, repetition {rep} (seed {run_seed})",
                                filter.name(),
                                data.noise_multiple
                            )
                        })?;
                        Ok((run_seed, record, t.elapsed().as_secs_f64()))
                    })
                    .collect();
                for (rep, run) in runs.into_iter().enumerate() {
                    let (run_seed, record, wall) = run?;
                    timings.push(row![rows.len(), filter.name(), k, m, rep, wall]);
                    rows.push(ResultRow {
                        data_seed: data.seed,
                        run_seed,
                        filter,
                        dim: point.dim,
                        sigma_y: point.sigma_y,
                        theta4: point.theta4,
                        noise_multiple: data.noise_multiple,
                        k,
                        m,
                        repetition: rep,
                        mean_ess: record.mean_ess(),
                        mean_ess_fraction: record.mean_ess_fraction(),
                        min_ess: record.ess.iter().copied().fold(m as f64, f64::min),
                        log_evidence: record.log_evidence,
                        kalman_discretized: kalman.0,
                        kalman_continuous: kalman.1,
                    });
                }
                options.say(format!(
                    "{label} {} K={k} M={m} noise x{}: {} repetitions",
                    filter.name(),
                    data.noise_multiple,
                    cfg.filter.repetitions
                ));
            }
        }
    }

    let summary = summarize(&rows, cfg.filter.reference);
    let model = cfg.model_name();
    let mut results = Table::new(&RESULTS_HEADER);
    for r in &rows {
        results.push(row![
            config.hash,
            master,
            r.data_seed,
            r.run_seed,
            model,
            r.filter.name(),
            r.dim,
            r.sigma_y,
            r.theta4,
            r.noise_multiple,
            r.k,
            r.m,
            r.repetition,
            r.mean_ess,
            r.mean_ess_fraction,
            r.min_ess,
            r.log_evidence,
            r.kalman_discretized,
            r.kalman_continuous
        ]);
    }
    let mut table = Table::new(&SUMMARY_HEADER);
    for s in &summary {
        table.push(row![
            config.hash,
            master,
            s.data_seed,
            model,
            s.filter.name(),
            s.dim,
            s.sigma_y,
            s.theta4,
            s.noise_multiple,
            s.k,
            s.m,
            s.repetitions,
            s.mean_ess,
            s.mean_ess_fraction,
            s.elbo,
            s.var_log_evidence,
            s.se_elbo,
            s.reference.map(|f| f.name().to_string()),
            s.elbo_gap,
            s.kalman_discretized,
            s.kalman_continuous
        ]);
    }
    let results_path = out.join("results.csv");
    let summary_path = out.join("summary.csv");
    results.write(&results_path)?;
    table.write(&summary_path)?;
    timings.write(&out.join("results_timings.csv"))?;
    options.say(format!(
        "{} filter runs in {:.2} s -> {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        results_path.display()
    ));
    Ok(FilterOutcome {
        rows,
        summary,
        results_path,
        summary_path,
    })
}

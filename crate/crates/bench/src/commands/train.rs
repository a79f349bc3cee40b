use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use cdt_core::filters::Guide;
use cdt_core::neural::{Checkpoint, CheckpointMeta, ControlNetworks, InputScaling};
use cdt_core::oracle::OuClosedForm;
use cdt_core::rng::{derive_seed, stream, tag};
use cdt_core::train::{train_with, TrainConfig};

use super::RunOptions;
use crate::config::{LoadedConfig, ModelConfig, SchemeName};
use crate::row;
use crate::table::Table;

/// 99.9% standard normal quantile.
const Z_999: f64 = 3.090_232_306_167_813;
const OVERLAY_TIMES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub label: String,
    pub scheme: SchemeName,
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    pub wall_seconds: f64,
}

pub fn checkpoint_name(label: &str, scheme: SchemeName) -> String {
    format!("{label}_{}.ckpt.json", scheme.scheme().name())
}

/// Train every (parameter point, scheme) pair of the config.
pub fn cmd_train(config: &LoadedConfig, options: &RunOptions) -> Result<Vec<TrainOutcome>> {
    let out = options.prepare_out_dir()?.to_path_buf();
    let cfg = &config.config;
    let master = options.master_seed(config);
    let grid = cfg.time_grid()?;
    let iterations = options.iterations.unwrap_or(cfg.train.iterations);
    let mut timings = Table::new(&["label", "scheme", "iteration", "elapsed_seconds"]);
    let mut outcomes = Vec::new();

    for point in cfg.points() {
        let scenario = cfg.scenario(&point, master)?;
        let label = point.label(&scenario.name);
        // Both schemes of a point share initialization and noise.
        let seed = derive_seed(master, &[tag::TRAIN, point.index as u64]);
        let scaling = match cfg.network.scaling_samples {
            0 => InputScaling::identity(scenario.state_dim(), scenario.obs_dim()),
            n => InputScaling::from_training(&scenario.training, n, &mut stream(seed, &[tag::NETWORK_INIT, 1]))?,
        };
        let initial = ControlNetworks::init(
            scenario.state_dim(),
            scenario.obs_dim(),
            grid.horizon(),
            cfg.network.spec(),
            scaling,
            &mut stream(seed, &[tag::NETWORK_INIT]),
        )?;

        for &scheme in &cfg.train.schemes {
            let train_config = TrainConfig {
                n_iterations: iterations,
                j_obs: cfg.train.j_obs,
                j_mini: cfg.train.j_mini,
                scheme: scheme.scheme(),
                grid,
                adam: cfg.train.adam(),
                seed,
            };
            let meta = |iterations| CheckpointMeta {
                model: scenario.name.clone(),
                observation: scenario.observation.describe(),
                scheme: scheme.scheme().name().into(),
                iterations,
                seed,
            };
            let name = checkpoint_name(&label, scheme);
            let stem = name.trim_end_matches(".ckpt.json").to_string();
            let periodic_dir = out.join(format!("{stem}_checkpoints"));
            let every = cfg.train.checkpoint_every;

            let start = Instant::now();
            let (networks, trace) = train_with(initial.clone(), &train_config, &scenario, |i, _, nets| {
                let done = i + 1;
                if every > 0 && done % every == 0 {
                    std::fs::create_dir_all(&periodic_dir)?;
                    let path = periodic_dir.join(format!("iter_{done:06}.ckpt.json"));
                    Checkpoint {
                        networks: nets.clone(),
                        meta: meta(done),
                    }
                    .save(&path)?;
                    timings.push(row![label, scheme.scheme().name(), done, start.elapsed().as_secs_f64()]);
                }
                Ok(())
            })
            .with_context(|| format!("training {stem}"))?;
            let wall = start.elapsed().as_secs_f64();
            if every == 0 || !iterations.is_multiple_of(every) {
                timings.push(row![label, scheme.scheme().name(), iterations, wall]);
            }

            let path = out.join(&name);
            Checkpoint {
                networks: networks.clone(),
                meta: meta(iterations),
            }
            .save(&path)?;
            let mut losses = Table::new(&["iteration", "loss"]);
            for (i, l) in trace.losses.iter().enumerate() {
                losses.push(row![i + 1, *l]);
            }
            losses.write(&out.join(format!("{stem}_loss.csv")))?;

            if let (Some(oracle), ModelConfig::Ou { .. }, true) = (&scenario.ou, &cfg.model, cfg.train.overlay) {
                if oracle.dim() == 1 {
                    write_overlay(&out.join(format!("{stem}_overlay.csv")), &networks, oracle)?;
                }
            }
            options.say(format!(
                "trained {stem}: {iterations} iterations in {wall:.2} s, final loss {}",
                trace.losses.last().map_or("n/a".into(), |l| format!("{l:.6}"))
            ));
            outcomes.push(TrainOutcome {
                label: label.clone(),
                scheme,
                checkpoint: path,
                losses: trace.losses,
                wall_seconds: wall,
            });
        }
    }
    timings.write(&out.join("train_timings.csv"))?;
    Ok(outcomes)
}

/// Network value and control against the closed forms on an x grid, at a
/// typical (median) and an extreme (99.9% quantile) observation.
fn write_overlay(path: &Path, networks: &ControlNetworks, oracle: &OuClosedForm) -> Result<()> {
    let sd_y = (0.5 + oracle.sigma_y().powi(2)).sqrt();
    let mut table = Table::new(&["quantity", "y_kind", "y", "t", "x", "network", "oracle"]);
    let (mut c_net, mut c_opt) = ([0.0], [0.0]);
    for (kind, y) in [("typical", 0.0), ("extreme", Z_999 * sd_y)] {
        for i in 0..=60 {
            let x = -3.0 + 0.1 * i as f64;
            table.push(row![
                "value",
                kind,
                y,
                0.0,
                x,
                networks.initial_value(&[x], &[y])?,
                oracle.value(&[x], &[y], 0.0)?
            ]);
        }
        for t in OVERLAY_TIMES {
            let t = t * oracle.horizon();
            for i in 0..=60 {
                let x = -3.0 + 0.1 * i as f64;
                networks.control(&[x], &[y], t, &mut c_net);
                oracle.optimal_control(&[x], &[y], t, &mut c_opt)?;
                table.push(row!["control", kind, y, t, x, c_net[0], c_opt[0]]);
            }
        }
    }
    table.write(path)
}

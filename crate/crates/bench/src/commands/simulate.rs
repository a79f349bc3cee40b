use std::path::PathBuf;

use anyhow::{Context, Result};

use super::{simulate_dataset, RunOptions};
use crate::config::LoadedConfig;
use crate::row;
use crate::table::Table;

/// Write one observations file, plus the latent path as CSV, for every
/// parameter point, K and noise multiple. Returns the observation files.
pub fn cmd_simulate(config: &LoadedConfig, options: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = options.prepare_out_dir()?;
    let cfg = &config.config;
    let master = options.master_seed(config);
    let mut written = Vec::new();
    for point in cfg.points() {
        let scenario = cfg.scenario(&point, master)?;
        let label = point.label(&scenario.name);
        for &multiple in &cfg.filter.noise_multiples {
            for &k in &cfg.filter.observations {
                let (file, data) = simulate_dataset(cfg, &point, &scenario, k, multiple, master)?;
                let stem = format!("{label}_nm{multiple}_K{k}");
                let path = out.join(format!("{stem}.obs"));
                std::fs::write(&path, file.render()).with_context(|| format!("writing {}", path.display()))?;

                let mut header = vec!["k".to_string()];
                header.extend((1..=scenario.state_dim()).map(|i| format!("x{i}")));
                let mut latent = Table::new(&header);
                for (i, x) in std::iter::once(&data.initial).chain(&data.latent).enumerate() {
                    let mut r = row![i];
                    r.extend(x.iter().map(f64::to_string));
                    latent.push(r);
                }
                latent.write(&out.join(format!("{stem}_latent.csv")))?;
                options.say(format!("wrote {} ({k} observations, seed {})", path.display(), file.seed));
                written.push(path);
            }
        }
    }
    Ok(written)
}

//! Portable observations file: `# key=value` header lines followed by one
//! whitespace-separated observation vector per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

pub const MAGIC: &str = "cdt-observations v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFile {
    pub model: String,
    pub state_dim: usize,
    pub obs_dim: usize,
    /// Parameters of the generating observation model, e.g. `sigma_y=0.5`.
    pub params: String,
    pub noise_multiple: f64,
    pub seed: u64,
    pub observations: Vec<Vec<f64>>,
}

impl ObservationFile {
    pub fn render(&self) -> String {
        let mut out = format!("# {MAGIC}\n");
        let fields: [(&str, String); 6] = [
            ("model", self.model.clone()),
            ("state_dim", self.state_dim.to_string()),
            ("obs_dim", self.obs_dim.to_string()),
            ("params", self.params.clone()),
            ("noise_multiple", self.noise_multiple.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in fields {
            writeln!(out, "# {k}={v}").unwrap();
        }
        writeln!(out, "# K={}", self.observations.len()).unwrap();
        for y in &self.observations {
            let line: Vec<String> = y.iter().map(f64::to_string).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_start_matches('#').trim() == MAGIC => {}
            _ => bail!("not an observations file (missing `# {MAGIC}` header)"),
        }
        let mut header = BTreeMap::new();
        let mut observations = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .with_context(|| format!("line {}: header entries are key=value", i + 1))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            } else if !line.is_empty() {
                let y = line
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .with_context(|| format!("line {}: bad number", i + 1))?;
                observations.push(y);
            }
        }
        let get = |k: &str| header.get(k).with_context(|| format!("header is missing {k}"));
        let file = Self {
            model: get("model")?.clone(),
            state_dim: get("state_dim")?.parse().context("state_dim")?,
            obs_dim: get("obs_dim")?.parse().context("obs_dim")?,
            params: get("params")?.clone(),
            noise_multiple: get("noise_multiple")?.parse().context("noise_multiple")?,
            seed: get("seed")?.parse().context("seed")?,
            observations,
        };
        let k: usize = get("K")?.parse().context("K")?;
        ensure!(
            k == file.observations.len(),
            "header declares K={k} but the file has {} observations",
            file.observations.len()
        );
        if let Some(bad) = file.observations.iter().position(|y| y.len() != file.obs_dim) {
            bail!("observation {} does not have obs_dim={} entries", bad + 1, file.obs_dim);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}

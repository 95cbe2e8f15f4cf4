//! Run settings shared by every subcommand.
//!
//! Each setting may come from a flag or from the TOML file named by
//! `--config`; a flag always wins over the file.

use clap::Args;
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Network description (JSON).
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Scenario file; excludes the generation settings.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Number of scenarios to generate.
    #[arg(long)]
    pub count: Option<usize>,
    /// Peak line failure probability of generated scenarios, in [0, 1].
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Spatial spread of the failure field; defaults to a quarter of the
    /// network's bounding-box diagonal.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// qc, dc or both.
    #[arg(long)]
    pub mode: Option<String>,
    /// Offer FACTS and phase-shifter options.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub devices: Option<bool>,
    /// Angle-difference limit of active lines, in degrees.
    #[arg(long)]
    pub theta_u: Option<f64>,
    /// Load multipliers, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub load_scale: Option<Vec<f64>>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Relative MILP gap.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Cone feasibility tolerance of the cutting-plane loop.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Concurrent scenario subproblems; defaults to the available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Cap on cutting-plane rounds per solve.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Record wall times in traces and study rows; makes outputs vary
    /// between runs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),*) => {
        Settings { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Settings {
    /// Flags in `self` override values from `file`.
    pub fn over(self, file: Settings) -> Settings {
        overlay!(
            self, file, net, scenarios, count, percentile, sigma, seed, mode, devices, theta_u, load_scale, out,
            gap, tol, workers, max_iters, timing
        )
    }

    pub fn from_toml(text: &str) -> Result<Settings, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = Settings::from_toml("net = \"a.json\"\ngap = 0.01\nload-scale = [1.0, 1.25]\n").unwrap();
        let flags = Settings {
            gap: Some(0.002),
            ..Default::default()
        };
        let s = flags.over(file);
        assert_eq!(s.gap, Some(0.002));
        assert_eq!(s.net, Some(PathBuf::from("a.json")));
        assert_eq!(s.load_scale, Some(vec![1.0, 1.25]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Settings::from_toml("nets = \"a.json\"").is_err());
    }
}

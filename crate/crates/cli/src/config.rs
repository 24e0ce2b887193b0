use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fbm,
    Solve,
    Malliavin,
    VerifyCov,
    Holder,
    KernelDump,
    Acceptance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fbm => "fbm",
            Self::Solve => "solve",
            Self::Malliavin => "malliavin",
            Self::VerifyCov => "verify-cov",
            Self::Holder => "holder",
            Self::KernelDump => "kernel-dump",
            Self::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(rename = "H")]
    pub hurst: f64,
    #[serde(rename = "N")]
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub output_path: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Fbm,
            hurst: 0.5,
            n_steps: 256,
            n_paths: 100,
            seed: 0,
            tol: 1e-8,
            output_path: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

/// Every field optional: the shape of a config file and of the flag set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub command: Option<Command>,
    #[serde(rename = "H")]
    pub hurst: Option<f64>,
    #[serde(rename = "N")]
    pub n_steps: Option<usize>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub format: Option<Format>,
}

impl PartialConfig {
    /// Fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            command: over.command.or(self.command),
            hurst: over.hurst.or(self.hurst),
            n_steps: over.n_steps.or(self.n_steps),
            n_paths: over.n_paths.or(self.n_paths),
            seed: over.seed.or(self.seed),
            tol: over.tol.or(self.tol),
            output_path: over.output_path.or(self.output_path),
            format: over.format.or(self.format),
        }
    }

    /// Fills defaults and validates.
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let d = RunConfig::default();
        let cfg = RunConfig {
            command: self.command.unwrap_or(d.command),
            hurst: self.hurst.unwrap_or(d.hurst),
            n_steps: self.n_steps.unwrap_or(d.n_steps),
            n_paths: self.n_paths.unwrap_or(d.n_paths),
            seed: self.seed.unwrap_or(d.seed),
            tol: self.tol.unwrap_or(d.tol),
            output_path: self.output_path.unwrap_or(d.output_path),
            format: self.format.unwrap_or(d.format),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(CliError::Usage(format!("H = {} must lie in (0, 1)", self.hurst)));
        }
        if self.n_steps < 4 || !self.n_steps.is_power_of_two() {
            return Err(CliError::Usage(format!(
                "N = {} must be a power of two, at least 4",
                self.n_steps
            )));
        }
        if self.n_paths < 1 {
            return Err(CliError::Usage("n_paths must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(CliError::Usage(format!("tol = {} must be positive", self.tol)));
        }
        Ok(())
    }
}

/// Parses a JSON config file without filling defaults.
pub fn read_partial(path: &Path) -> Result<PartialConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Reads, fills defaults and validates a JSON config file.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    read_partial(path)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        let p: PartialConfig =
            serde_json::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
        p.resolve()
    }

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.hurst, cfg.n_steps, cfg.n_paths, cfg.seed), (0.5, 256, 100, 0));
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = parse(r#"{"H": 1.2}"#).unwrap_err().to_string();
        assert!(err.contains("H"), "{err}");
        let err = parse(r#"{"N": 100}"#).unwrap_err().to_string();
        assert!(err.contains("N"), "{err}");
        let err = parse(r#"{"n_paths": 0}"#).unwrap_err().to_string();
        assert!(err.contains("n_paths"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse(r#"{"hurst": 0.3}"#).unwrap_err().to_string();
        assert!(err.contains("hurst"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let file: PartialConfig = serde_json::from_str(r#"{"H": 0.3, "N": 64, "seed": 5}"#).unwrap();
        let flags = PartialConfig {
            hurst: Some(0.8),
            ..Default::default()
        };
        let cfg = file.overlay(flags).resolve().unwrap();
        assert_eq!((cfg.hurst, cfg.n_steps, cfg.seed, cfg.n_paths), (0.8, 64, 5, 100));
    }

    #[test]
    fn load_config_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"command": "verify-cov", "format": "json"}"#).unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.command, Command::VerifyCov);
        assert_eq!(cfg.format, Format::Json);
        assert!(load_config(&dir.path().join("missing.json")).is_err());
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(load_config(&path), Err(CliError::Usage(_))));
    }
}

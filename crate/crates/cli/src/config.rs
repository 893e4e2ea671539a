//! Optional TOML configuration. Precedence: flag > FORGE_SEED (seed only) >
//! config file > built-in default.

use crate::CliError;
use forge_core::pipeline::PipelineConfig;
use std::path::Path;

pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = crate::io::read_text(path)?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

/// A flag value that falls back to the configured one.
pub trait Resolve<T> {
    fn resolve(self, configured: T) -> T;
}

impl<T> Resolve<T> for Option<T> {
    fn resolve(self, configured: T) -> T {
        self.unwrap_or(configured)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg: PipelineConfig = toml::from_str("root_seed = 9\n[weight]\ngamma = 0.25\n").unwrap();
        assert_eq!(cfg.root_seed, 9);
        assert_eq!(cfg.weight.gamma, 0.25);
        assert_eq!(cfg.build, PipelineConfig::default().build);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[weight]\ngama = 0.25\n").is_err());
    }

    #[test]
    fn flag_wins() {
        assert_eq!(Some(3).resolve(5), 3);
        assert_eq!(None.resolve(5), 5);
    }
}

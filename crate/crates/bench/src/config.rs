use std::path::{Path, PathBuf};

use gatherconv::catalog::{layer_catalog, load_catalog, select_layers};
use gatherconv::{BlockingConfig, DeviceSpec, LayerCatalogEntry};

use crate::{BenchError, Result};

/// Overrides the default device-spec path for `bench`.
pub const DEVICE_SPEC_ENV: &str = "GATHERCONV_DEVICE_SPEC";

pub const DEFAULT_VERIFY_MINIBATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(BenchError::Config(format!("unknown format {other:?}, expected json or csv"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Layer ids such as `alexnet/conv2`, or `all`.
    pub layers: Vec<String>,
    /// Replaces the catalog minibatch when set.
    pub minibatch: Option<usize>,
    pub repeat: usize,
    pub threads: usize,
    pub seed: u64,
    pub blocking: BlockingConfig,
    pub device_spec: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    /// Test hook: corrupt one weight of this layer before the blocked run.
    pub fault_layer: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layers: vec!["all".into()],
            minibatch: None,
            repeat: 5,
            threads: 1,
            seed: 42,
            blocking: BlockingConfig::default(),
            device_spec: None,
            catalog: None,
            out: None,
            format: ReportFormat::Json,
            fault_layer: None,
        }
    }
}

/// Splits `a,b , c` into ids; empty items are dropped.
pub fn parse_layer_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 {
            return Err(BenchError::Config("repeat must be at least 1".into()));
        }
        if self.minibatch == Some(0) {
            return Err(BenchError::Config("minibatch must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(BenchError::Config("threads must be at least 1".into()));
        }
        self.blocking.validate()?;
        Ok(())
    }

    /// Selected catalog entries with the minibatch override applied.
    pub fn selected_layers(&self, default_minibatch: Option<usize>) -> Result<Vec<LayerCatalogEntry>> {
        self.validate()?;
        if self.layers.is_empty() {
            return Err(BenchError::Config("no layers selected".into()));
        }
        let catalog = match &self.catalog {
            Some(path) => load_catalog(path)?,
            None => layer_catalog(),
        };
        let mut selected = select_layers(&catalog, &self.layers)?;
        if selected.is_empty() {
            return Err(BenchError::Config("no layers selected".into()));
        }
        if let Some(nb) = self.minibatch.or(default_minibatch) {
            for entry in &mut selected {
                entry.shape = entry.shape.with_minibatch(nb);
            }
        }
        Ok(selected)
    }

    /// Explicit path, then the environment variable.
    pub fn device_spec_path(&self) -> Option<PathBuf> {
        self.device_spec
            .clone()
            .or_else(|| std::env::var_os(DEVICE_SPEC_ENV).map(PathBuf::from))
    }

    pub fn load_device(&self) -> Result<DeviceSpec> {
        let path = self.device_spec_path().ok_or_else(|| {
            BenchError::Config(format!(
                "no device spec: pass --device-spec <path> or set {DEVICE_SPEC_ENV} \
                 (a JSON file {{\"label\", \"fma_lanes\", \"clock_hz\"}}; examples in configs/)"
            ))
        })?;
        Ok(DeviceSpec::load(Path::new(&path))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_list_parsing() {
        assert_eq!(parse_layer_list("alexnet/conv1, overfeat/L2"), vec!["alexnet/conv1", "overfeat/L2"]);
        assert!(parse_layer_list("").is_empty());
        assert!(parse_layer_list(" , ").is_empty());
    }

    #[test]
    fn empty_selection_is_an_error() {
        let cfg = RunConfig { layers: vec![], ..RunConfig::default() };
        let err = cfg.selected_layers(None).unwrap_err();
        assert!(err.to_string().contains("no layers selected"));
    }

    #[test]
    fn minibatch_override() {
        let cfg = RunConfig { layers: vec!["alexnet/conv3".into()], ..RunConfig::default() };
        assert_eq!(cfg.selected_layers(None).unwrap()[0].shape.nb, 128);
        assert_eq!(cfg.selected_layers(Some(8)).unwrap()[0].shape.nb, 8);
        let cfg = RunConfig { minibatch: Some(3), ..cfg };
        assert_eq!(cfg.selected_layers(Some(8)).unwrap()[0].shape.nb, 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig { repeat: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { minibatch: Some(0), ..RunConfig::default() }.validate().is_err());
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
    }
}

//! Run configuration: one TOML file, then `BIOPAY_*` environment overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biopay_core::ingest::{CameraConfig, CameraRegistry, DetectConfig, RetryPolicy, DEFAULT_CONF_THRESHOLD};
use biopay_core::ingest::smtp::{DEFAULT_MAX_MESSAGE_BYTES, DEFAULT_SMTP_PORT};
use biopay_core::geom::DEFAULT_NMS_IOU;
use biopay_core::ledger::{Durability, Granularity, InsufficientFunds, PayoutPolicy, DEFAULT_INITIAL_CREDIT};
use biopay_core::{BLANK_LABEL, DEFAULT_SPECIES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: String,
    pub smtp_port: u16,
    pub http_port: u16,
    pub image_dir: PathBuf,
    pub audit_log: Option<PathBuf>,
    pub max_message_bytes: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: "127.0.0.1".into(),
            smtp_port: DEFAULT_SMTP_PORT,
            http_port: 8080,
            image_dir: PathBuf::from("data/images"),
            audit_log: None,
            max_message_bytes: DEFAULT_MAX_MESSAGE_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Fixture,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub backend: BackendKind,
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub workers: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        DetectorConfig {
            backend: BackendKind::Fixture,
            url: None,
            timeout_ms: 10_000,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_threshold: DEFAULT_NMS_IOU,
            max_attempts: retry.max_attempts,
            initial_backoff_ms: retry.initial_backoff.as_millis() as u64,
            max_backoff_ms: retry.max_backoff.as_millis() as u64,
            workers: 4,
        }
    }
}

impl DetectorConfig {
    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            conf_threshold: self.conf_threshold,
            nms_threshold: self.nms_threshold,
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                initial_backoff: std::time::Duration::from_millis(self.initial_backoff_ms),
                max_backoff: std::time::Duration::from_millis(self.max_backoff_ms),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub journal: Option<PathBuf>,
    pub durability: Durability,
    pub snapshot_every: u64,
    pub initial_credit: u64,
    pub unit_amount: u64,
    pub granularity: Granularity,
    pub insufficient_funds: InsufficientFunds,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        let p = PayoutPolicy::default();
        LedgerConfig {
            journal: None,
            durability: Durability::Fsync,
            snapshot_every: 1000,
            initial_credit: DEFAULT_INITIAL_CREDIT,
            unit_amount: p.unit_amount,
            granularity: p.granularity,
            insufficient_funds: p.insufficient_funds,
        }
    }
}

impl LedgerConfig {
    pub fn policy(&self) -> PayoutPolicy {
        PayoutPolicy {
            unit_amount: self.unit_amount,
            granularity: self.granularity,
            insufficient_funds: self.insufficient_funds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciesConfig {
    pub roster: Vec<String>,
    pub blank: String,
}

impl Default for SpeciesConfig {
    fn default() -> Self {
        SpeciesConfig { roster: DEFAULT_SPECIES.iter().map(|s| s.to_string()).collect(), blank: BLANK_LABEL.into() }
    }
}

impl SpeciesConfig {
    /// Species followed by the blank label; the class index order used in
    /// every evaluation report.
    pub fn classes(&self) -> Vec<String> {
        self.roster.iter().cloned().chain([self.blank.clone()]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub per_class: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig { per_class: 29, folds: 10, seed: 2022 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gateway: GatewayConfig,
    pub detector: DetectorConfig,
    pub ledger: LedgerConfig,
    pub species: SpeciesConfig,
    pub folds: FoldConfig,
    pub cameras: Vec<CameraConfig>,
}

fn ratio_ok(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        bail!("{name} must lie in [0, 1], got {v}");
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (defaults when `None`), applies the process environment,
    /// and validates.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| anyhow::anyhow!("{key}: cannot parse {v:?}"))
        }
        for (key, v) in vars {
            let Some(name) = key.strip_prefix("BIOPAY_") else { continue };
            match name {
                "BIND" => self.gateway.bind = v,
                "SMTP_PORT" => self.gateway.smtp_port = parse(&key, &v)?,
                "HTTP_PORT" => self.gateway.http_port = parse(&key, &v)?,
                "IMAGE_DIR" => self.gateway.image_dir = v.into(),
                "MAX_MESSAGE_BYTES" => self.gateway.max_message_bytes = parse(&key, &v)?,
                "BACKEND" => {
                    self.detector.backend = match v.as_str() {
                        "fixture" => BackendKind::Fixture,
                        "http" => BackendKind::Http,
                        _ => bail!("{key}: expected fixture or http, got {v:?}"),
                    }
                }
                "BACKEND_URL" => self.detector.url = Some(v),
                "CONF_THRESHOLD" => self.detector.conf_threshold = parse(&key, &v)?,
                "NMS_THRESHOLD" => self.detector.nms_threshold = parse(&key, &v)?,
                "JOURNAL" => self.ledger.journal = Some(v.into()),
                "UNIT_AMOUNT" => self.ledger.unit_amount = parse(&key, &v)?,
                "GRANULARITY" => {
                    self.ledger.granularity = match v.as_str() {
                        "per_instance" => Granularity::PerInstance,
                        "per_image" => Granularity::PerImage,
                        _ => bail!("{key}: expected per_instance or per_image, got {v:?}"),
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.species;
        if s.roster.is_empty() {
            bail!("species roster is empty");
        }
        let mut seen = BTreeSet::new();
        for name in s.roster.iter().chain([&s.blank]) {
            if name.trim().is_empty() {
                bail!("species roster contains an empty name");
            }
            if !seen.insert(name.as_str()) {
                bail!("species {name:?} appears twice in the roster");
            }
        }
        if seen.contains(biopay_core::ledger::GUARDIAN) {
            bail!("\"{}\" is reserved for the guardian account", biopay_core::ledger::GUARDIAN);
        }
        ratio_ok("conf_threshold", self.detector.conf_threshold)?;
        ratio_ok("nms_threshold", self.detector.nms_threshold)?;
        if self.ledger.unit_amount == 0 {
            bail!("unit_amount must be at least 1 penny");
        }
        if self.detector.backend == BackendKind::Http && self.detector.url.is_none() {
            bail!("the http detector backend needs detector.url");
        }
        if self.folds.folds == 0 || self.folds.per_class == 0 {
            bail!("folds and per_class must be positive");
        }
        self.camera_registry().map_err(anyhow::Error::msg)?;
        Ok(())
    }

    pub fn camera_registry(&self) -> Result<CameraRegistry, String> {
        if self.cameras.is_empty() {
            Ok(CameraRegistry::open())
        } else {
            CameraRegistry::with_cameras(self.cameras.iter().cloned())
        }
    }

    /// SHA-256 of the effective configuration, for report provenance.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.species.classes().len(), 13);
        assert_eq!(c.ledger.initial_credit, 10_000);
        assert_eq!(c.detector.conf_threshold, 0.5);
    }

    #[test]
    fn duplicate_species_refused() {
        let c = RunConfig::from_toml("[species]\nroster = [\"Papio sp\", \"Panthera leo\", \"Papio sp\"]\n").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("twice"));
        let c = RunConfig::from_toml("[species]\nroster = [\"Blank\"]\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut c = RunConfig::from_toml("[gateway]\nsmtp_port = 25\n[ledger]\nunit_amount = 10\n").unwrap();
        assert_eq!(c.gateway.smtp_port, 25);
        c.apply_env([
            ("BIOPAY_SMTP_PORT".to_string(), "2626".to_string()),
            ("BIOPAY_GRANULARITY".to_string(), "per_image".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ])
        .unwrap();
        assert_eq!(c.gateway.smtp_port, 2626);
        assert_eq!(c.ledger.policy(), PayoutPolicy::ten_pence().with_granularity(Granularity::PerImage));
        assert!(c.apply_env([("BIOPAY_HTTP_PORT".to_string(), "x".to_string())]).is_err());
    }

    #[test]
    fn thresholds_checked_and_digest_stable() {
        let c = RunConfig::from_toml("[detector]\nconf_threshold = 1.5\n").unwrap();
        assert!(c.validate().is_err());
        assert_eq!(RunConfig::default().digest(), RunConfig::default().digest());
        let mut other = RunConfig::default();
        other.folds.seed = 1;
        assert_ne!(other.digest(), RunConfig::default().digest());
        assert!(RunConfig::from_toml("[detector]\nbogus = 1\n").is_err());
    }
}

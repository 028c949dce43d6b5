use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vesselid::augment::AugmentConfig;
use vesselid::dataset::write_atomic;
use vesselid::pipeline::{ClassifyConfig, DetectConfig, EvalConfig};
use vesselid::scorers::ScorerBinding;
use vesselid::{Error, GenusCatalog, Result};

/// Everything a run depends on besides its command-line arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Genus list, one per line; the nine default genera when unset.
    pub catalog: Option<PathBuf>,
    pub detect: DetectConfig,
    pub classify: ClassifyConfig,
    pub evaluate: EvalConfig,
    pub augment: AugmentConfig,
    pub scorers: Scorers,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset"),
            catalog: None,
            detect: DetectConfig::default(),
            classify: ClassifyConfig::default(),
            evaluate: EvalConfig::default(),
            augment: AugmentConfig::default(),
            scorers: Scorers::default(),
        }
    }
}

/// Scorer overrides. Unset means the in-tree baselines: the threshold
/// detector with `detect.detector`, and a classifier trained on the split's
/// train partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scorers {
    pub detector: Option<ScorerBinding>,
    pub classifier: Option<ScorerBinding>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
        for b in [&cfg.scorers.detector, &cfg.scorers.classifier].into_iter().flatten() {
            b.validate()?;
        }
        Ok(cfg)
    }

    pub fn catalog(&self) -> Result<GenusCatalog> {
        match &self.catalog {
            Some(p) => GenusCatalog::load(p),
            None => Ok(GenusCatalog::default()),
        }
    }

    /// SHA-256 of the canonical JSON form, so equal configs hash equally no
    /// matter how the file was written.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: &'a RunConfig,
    pub args: Vec<String>,
}

/// Writes `<out>/manifests/<command>.json`.
pub fn write_manifest(out: &Path, command: &str, seed: u64, cfg: &RunConfig) -> Result<()> {
    let dir = out.join("manifests");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: cfg.hash(),
        config: cfg,
        args: std::env::args().skip(1).collect(),
    };
    write_atomic(&dir.join(format!("{command}.json")), serde_json::to_string_pretty(&m)?.as_bytes())
}

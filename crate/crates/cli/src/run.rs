use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vipnet::config::{fingerprint, InferenceConfig, ModelConfig, TrainConfig};
use vipnet::eval::EvalOptions;
use vipnet::synth::CorpusOptions;
use vipnet::VipError;

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Vip(VipError),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Vip(e) if e.is_user_error() => 1,
            CliError::Vip(_) | CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Vip(e) => write!(f, "{e}"),
            CliError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<VipError> for CliError {
    fn from(e: VipError) -> Self {
        CliError::Vip(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub split: [f64; 3],
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { count: 100, split: [0.8, 0.1, 0.1] }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    model: ModelConfig,
    train: TrainConfig,
    inference: InferenceConfig,
    corpus: CorpusOptions,
    synth: SynthSection,
    eval: EvalOptions,
}

/// The effective configuration of one command. Output paths are excluded so
/// that identical runs into different directories fingerprint identically.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub corpus: CorpusOptions,
    pub synth: SynthSection,
    pub eval: EvalOptions,
    /// Command-specific options and input paths.
    pub options: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn load(command: &str, file: Option<&Path>, seed_flag: Option<u64>) -> CliResult<Self> {
        let fc: FileConfig = match file {
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let env_seed = match std::env::var("VIP_SEED") {
            Ok(s) => Some(s.trim().parse::<u64>().map_err(|_| CliError::Usage(format!("VIP_SEED `{s}` is not an unsigned integer")))?),
            Err(_) => None,
        };
        let seed = seed_flag.or(env_seed).or(fc.seed).unwrap_or(0);
        let mut model = fc.model;
        let mut train = fc.train;
        model.seed = seed;
        train.seed = seed;
        Ok(Self {
            schema_version: OUTPUT_SCHEMA_VERSION,
            command: command.into(),
            seed,
            model,
            train,
            inference: fc.inference,
            corpus: fc.corpus,
            synth: fc.synth,
            eval: fc.eval,
            options: BTreeMap::new(),
        })
    }

    pub fn option(&mut self, key: &str, value: impl Serialize) {
        self.options.insert(key.into(), serde_json::to_value(value).expect("option serialises"));
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }

    /// Dumps the effective config under `out` and prints the fingerprint.
    pub fn announce(&self, out: Option<&Path>) -> CliResult<String> {
        let fp = self.fingerprint();
        if let Some(out) = out {
            fs::create_dir_all(out).map_err(|e| VipError::io(out, e))?;
            write_json(&out.join("effective_config.json"), &serde_json::json!({ "fingerprint": fp, "config": self }))?;
        }
        println!("config fingerprint: {fp}");
        Ok(fp)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| VipError::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| VipError::io(path, e).into())
}

/// A JSON output with its schema version.
#[derive(Serialize)]
pub struct Versioned<'a, T: Serialize> {
    pub schema_version: u32,
    pub fingerprint: &'a str,
    #[serde(flatten)]
    pub body: T,
}

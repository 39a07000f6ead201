use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sae_embed::gateway::{DiskCache, GatewayConfig, HttpProvider, MockProvider, ProviderConfig, TemplateStore};
use sae_embed::Gateway;

use crate::commands::{BenchArgs, ClusterArgs, CorrArgs, DiffArgs, EmbedArgs, EvalArgs, RetrieveArgs, SynthArgs};
use crate::error::{CliError, CliResult};

pub const DEFAULT_OUT: &str = "sae-embed-out";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalArgs {
    /// TOML config file; flags given on the command line win over it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for reports and data files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the deterministic offline gateway.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Skip malformed catalog lines instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub provider: Option<ProviderConfig>,
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub payload_budget: Option<usize>,
}

/// On-disk config: global keys at the top level, one table per subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mock: bool,
    pub threads: Option<usize>,
    pub lenient: bool,
    pub gateway: GatewaySection,
    pub embed: EmbedArgs,
    pub diff: DiffArgs,
    pub corr: CorrArgs,
    pub cluster: ClusterArgs,
    pub retrieve: RetrieveArgs,
    pub synth: SynthArgs,
    pub eval: EvalArgs,
    pub bench_cooc: BenchArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn global(&self) -> GlobalArgs {
        GlobalArgs {
            config: None,
            out: self.out.clone(),
            seed: self.seed,
            mock: self.mock,
            threads: self.threads,
            lenient: self.lenient,
        }
    }
}

fn unset(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => true,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

/// Field-wise overlay: every field set in `top` replaces the one in `base`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, top: &T) -> CliResult<T> {
    let err = |e: serde_json::Error| CliError::internal(format!("config merge: {e}"));
    let mut merged = serde_json::to_value(base).map_err(err)?;
    let top = serde_json::to_value(top).map_err(err)?;
    if let (Value::Object(m), Value::Object(t)) = (&mut merged, top) {
        for (k, v) in t {
            if !unset(&v) {
                m.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(err)
}

/// Resolved settings handed to a subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub global: GlobalArgs,
    pub gateway: GatewaySection,
}

impl Context {
    pub fn out_dir(&self) -> PathBuf {
        self.global.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn seed(&self) -> u64 {
        self.global.seed.unwrap_or(0)
    }

    pub fn max_in_flight(&self) -> usize {
        self.gateway.max_in_flight.unwrap_or(4)
    }

    pub fn build_gateway(&self) -> CliResult<Gateway> {
        let mut config = GatewayConfig::default();
        if let Some(b) = self.gateway.payload_budget {
            config.payload_budget = b;
        }
        let gw = if self.global.mock {
            Gateway::new(Box::new(MockProvider::default()), config)
        } else {
            let provider = self.gateway.provider.clone().ok_or_else(|| {
                CliError::input("no gateway provider configured; pass --mock or add [gateway.provider] to the config")
            })?;
            config.retries = provider.retries;
            let templates = match &self.gateway.templates_dir {
                Some(d) => TemplateStore::with_dir(d),
                None => TemplateStore::builtin(),
            };
            Gateway::new(Box::new(HttpProvider::new(provider, templates)?), config)
        };
        Ok(match &self.gateway.cache_dir {
            Some(d) => gw.with_disk_cache(DiskCache::open(d)?),
            None => gw,
        })
    }

    /// Settings block embedded in every report.
    pub fn resolved<T: Serialize>(&self, command: &str, args: &T, uses_gateway: bool) -> Value {
        let mut v = serde_json::json!({
            "global": self.global,
            command: args,
        });
        if uses_gateway {
            v["gateway"] = serde_json::json!({
                "mock": self.global.mock,
                "provider": self.gateway.provider,
                "max_in_flight": self.max_in_flight(),
            });
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = CorrArgs {
            npmi_min: Some(0.7),
            sim_max: Some(0.1),
            ..Default::default()
        };
        let flags = CorrArgs {
            npmi_min: Some(0.9),
            ..Default::default()
        };
        let m = overlay(&file, &flags).unwrap();
        assert_eq!(m.npmi_min, Some(0.9));
        assert_eq!(m.sim_max, Some(0.1));
    }

    #[test]
    fn file_parses_sections() {
        let text = r#"
            seed = 7
            mock = true
            [corr]
            npmi_min = 0.8
            [gateway]
            max_in_flight = 2
            [gateway.provider]
            endpoint = "http://localhost:1"
            model = "m"
        "#;
        let f: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(f.global().seed, Some(7));
        assert!(f.global().mock);
        assert_eq!(f.corr.npmi_min, Some(0.8));
        assert_eq!(f.gateway.provider.unwrap().api_key_env, "SAE_EMBED_API_KEY");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("sede = 1").is_err());
        assert!(toml::from_str::<FileConfig>("[corr]\nnpmi = 0.8").is_err());
    }
}

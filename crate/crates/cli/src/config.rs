//! Run configuration: config file values overlaid by command-line flags, and
//! the resolved snapshot written next to every run's outputs.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Failure;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Master seed; each module draws from its own named sub-stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Run on a single thread.
    #[arg(long, global = true, num_args = 0, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Worker threads for parallel loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl GlobalArgs {
    pub fn resolve_defaults(&mut self) {
        self.seed.get_or_insert(0);
        self.precision.get_or_insert(Precision::F64);
        self.deterministic.get_or_insert(false);
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Seed of the sub-stream `name`.
    pub fn stream(&self, name: &str) -> u64 {
        substream(self.seed(), name)
    }

    /// Builds the global thread pool.
    pub fn install_threads(&self) -> Result<(), Failure> {
        let threads = if self.deterministic == Some(true) { Some(1) } else { self.threads };
        if let Some(n) = threads {
            if n == 0 {
                return Err(Failure::Input("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Input(format!("thread pool: {e}")))?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over the seed mixed with an FNV-1a hash of `name`.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn read_config_file(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Failure::Input(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(Failure::Input(format!("{}: {e}", path.display()))),
    }
}

/// Values set on the command line replace those from the file.
pub fn overlay<A: Serialize + DeserializeOwned>(flags: &A, file: &Map<String, Value>) -> Result<A, Failure> {
    let mut merged = file.clone();
    match serde_json::to_value(flags).map_err(|e| Failure::Input(e.to_string()))? {
        Value::Object(m) => {
            for (k, v) in m {
                if !v.is_null() {
                    merged.insert(k, v);
                }
            }
        }
        _ => unreachable!("argument structs serialize to objects"),
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::Input(format!("config: {e}")))
}

/// Writes `resolved_<command>.json` into `dir`.
pub fn write_snapshot<A: Serialize>(dir: &Path, command: &str, global: &GlobalArgs, args: &A) -> Result<PathBuf, Failure> {
    let mut out = Map::new();
    out.insert("command".into(), Value::String(command.into()));
    for v in [serde_json::to_value(global), serde_json::to_value(args)] {
        if let Value::Object(m) = v.map_err(|e| Failure::Input(e.to_string()))? {
            out.extend(m);
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("resolved_{command}.json"));
    let text = serde_json::to_string_pretty(&Value::Object(out)).map_err(|e| Failure::Input(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(path)
}

//! Config files, flag overrides and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use groupdro::benchmark::DatasetSource;
use groupdro::datagen::SyntheticSpec;
use groupdro::optimizer::OptimizerConfig;
use groupdro::ArchSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success,
    Usage,
    Runtime,
    Partial,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(match e {
            Exit::Success => 0,
            Exit::Usage => 1,
            Exit::Runtime => 2,
            Exit::Partial => 3,
        })
    }
}

#[derive(Debug)]
pub struct Failure {
    pub code: Exit,
    pub error: anyhow::Error,
}

/// Tags an error with the exit code it should produce.
pub trait Stage<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: Exit::Usage,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: Exit::Runtime,
            error: e.into(),
        })
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub spec: SyntheticSpec,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default = "yes")]
    pub balanced_eval: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetSource,
    pub arch: ArchSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Save the parameters every this many checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A JSON object read from `path`, or an empty one.
pub fn load_object(path: Option<&Path>) -> anyhow::Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if !v.is_object() {
        return Err(anyhow!("{} must contain a JSON object", path.display()));
    }
    Ok(v)
}

/// Sets the dotted `key` in `root`, creating intermediate objects.
pub fn set(root: &mut Value, key: &str, value: impl Serialize) {
    let value = serde_json::to_value(value).expect("flag values serialize");
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return;
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
}

pub fn set_opt<T: Serialize>(root: &mut Value, key: &str, value: Option<T>) {
    if let Some(v) = value {
        set(root, key, v);
    }
}

pub fn parse<T: DeserializeOwned>(v: Value) -> anyhow::Result<T> {
    serde_json::from_value(v).map_err(|e| anyhow!("invalid config: {e}"))
}

/// Fills fields missing from `optimizer` with the library defaults.
pub fn fill_optimizer_defaults(root: &mut Value) {
    let Value::Object(defaults) =
        serde_json::to_value(OptimizerConfig::default()).expect("config serializes")
    else {
        unreachable!("structs serialize to objects")
    };
    let Some(obj) = root.as_object_mut() else {
        return;
    };
    let opt = obj
        .entry("optimizer")
        .or_insert_with(|| Value::Object(Map::new()));
    if let Value::Object(opt) = opt {
        for (k, v) in defaults {
            opt.entry(k).or_insert(v);
        }
    }
}

/// Points `dataset` at `dir/{train,val,test}.csv`.
pub fn set_data_dir(root: &mut Value, dir: &Path) {
    let csv = DatasetSource::Csv {
        train: dir.join("train.csv"),
        val: dir.join("val.csv"),
        test: dir.join("test.csv"),
    };
    set(root, "dataset", csv);
}

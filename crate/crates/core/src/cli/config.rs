use crate::degrade::{config_at_severity, CompressionMode, DegradationConfig};
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::objective::TrainConfig;
use crate::tiling::TilingConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use toml::{Table, Value};

/// Degradation settings exposed on the command line; expanded through the
/// severity schedule at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeSettings {
    pub severity: f64,
    pub compression: CompressionMode,
    /// Shell template for the external codec (`{input}`, `{output}`,
    /// `{crf}`, `{fps}`).
    pub codec_command: String,
}

impl Default for DegradeSettings {
    fn default() -> Self {
        Self { severity: 2.0, compression: CompressionMode::Proxy, codec_command: String::new() }
    }
}

impl DegradeSettings {
    pub fn resolve(&self, seed: u64) -> Result<DegradationConfig> {
        let mut cfg = config_at_severity(self.severity, seed)?;
        cfg.compression.mode = self.compression;
        if !self.codec_command.is_empty() {
            cfg.compression.command = Some(self.codec_command.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Severity of the metrics pass.
    pub severity: f64,
    /// Base seed of the per-clip degradations.
    pub seed: u64,
    pub warmup_runs: usize,
    pub timed_runs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { severity: 2.0, seed: 1000, warmup_runs: 3, timed_runs: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degrade: DegradeSettings,
    pub tiling: TilingConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            degrade: DegradeSettings::default(),
            tiling: TilingConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

/// One `--set key=value` (or flag-derived) override and the value it
/// replaced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppliedOverride {
    pub key: String,
    pub value: toml::Value,
    pub replaced: Option<toml::Value>,
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub overrides: Vec<AppliedOverride>,
}

pub fn defaults_toml() -> String {
    toml::to_string_pretty(&RunConfig::default()).expect("defaults serialize")
}

fn defaults_tree() -> Table {
    Table::try_from(RunConfig::default()).expect("defaults serialize")
}

fn join(prefix: &str, k: &str) -> String {
    if prefix.is_empty() {
        k.to_string()
    } else {
        format!("{prefix}.{k}")
    }
}

fn all_keys(t: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let key = join(prefix, k);
        if let Value::Table(sub) = v {
            all_keys(sub, &key, out);
        }
        out.push(key);
    }
}

fn suggest(key: &str) -> String {
    let mut keys = Vec::new();
    all_keys(&defaults_tree(), "", &mut keys);
    let best = keys
        .iter()
        .map(|k| (strsim::levenshtein(k, key), k))
        .min_by_key(|(d, _)| *d)
        .filter(|(d, _)| *d <= key.len().max(3) / 2);
    match best {
        Some((_, k)) => format!("unknown configuration key `{key}`; did you mean `{k}`?"),
        None => format!("unknown configuration key `{key}`"),
    }
}

/// Rejects keys of `t` that the defaults do not have.
fn check_known(t: &Table, reference: &Table, prefix: &str) -> Result<()> {
    for (k, v) in t {
        let key = join(prefix, k);
        match (reference.get(k), v) {
            (None, _) => return Err(Error::Config(suggest(&key))),
            (Some(Value::Table(r)), Value::Table(sub)) => check_known(sub, r, &key)?,
            _ => {}
        }
    }
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Checks leaf types against the defaults, widening integers where a
/// float is expected.
fn check_types(t: &mut Table, reference: &Table, prefix: &str) -> Result<()> {
    for (k, v) in t.iter_mut() {
        let key = join(prefix, k);
        let Some(r) = reference.get(k) else { continue };
        match (r, &mut *v) {
            (Value::Table(rt), Value::Table(sub)) => check_types(sub, rt, &key)?,
            (Value::Float(_), Value::Integer(i)) => *v = Value::Float(*i as f64),
            (Value::Array(ra), Value::Array(items)) => {
                if let Some(proto) = ra.first() {
                    for item in items.iter_mut() {
                        match (proto, &*item) {
                            (Value::Float(_), Value::Integer(i)) => *item = Value::Float(*i as f64),
                            (p, x) if p.type_str() != x.type_str() => {
                                return Err(Error::Config(format!(
                                    "`{key}` expects an array of {}, got an element of type {}",
                                    p.type_str(),
                                    x.type_str()
                                )))
                            }
                            _ => {}
                        }
                    }
                }
            }
            (r, v) if r.type_str() != v.type_str() => {
                return Err(Error::Config(format!("`{key}` expects {}, got {}", r.type_str(), v.type_str())))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Parses the right-hand side of an override as TOML, falling back to a
/// bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn set_path(t: &mut Table, key: &str, value: Value) -> Result<Option<Value>> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut cur = t;
    for p in parents {
        cur = match cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(sub) => sub,
            _ => return Err(Error::Config(format!("`{key}`: `{p}` is not a section"))),
        };
    }
    Ok(cur.insert(last.to_string(), value))
}

/// Deep-merges defaults, the optional config file and `key=value`
/// overrides (later wins), rejecting unknown keys with a suggestion.
pub fn resolve_config(file: Option<&Path>, overrides: &[String]) -> Result<Resolved> {
    let reference = defaults_tree();
    let mut tree = reference.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        check_known(&t, &reference, "")?;
        merge(&mut tree, t);
    }
    let mut applied = Vec::new();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` must look like key=value")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("override `{o}` has an empty key")));
        }
        let value = parse_value(v.trim());
        let mut probe = Table::new();
        set_path(&mut probe, key, value.clone())?;
        check_known(&probe, &reference, "")?;
        let replaced = set_path(&mut tree, key, value.clone())?;
        applied.push(AppliedOverride { key: key.into(), value, replaced });
    }
    check_types(&mut tree, &reference, "")?;
    let config: RunConfig = Value::Table(tree)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("configuration: {}", e.message())))?;
    config.model.validate()?;
    config.train.validate()?;
    config.tiling.plan(config.tiling.tile.max(1), config.tiling.tile.max(1))?;
    Ok(Resolved { config, overrides: applied })
}

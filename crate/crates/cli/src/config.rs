//! Layered run configuration: defaults, then `--config`, then `--seed`,
//! then each `--set key=value` in order.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use evcoref::digest::sha256_hex;

use crate::error::CliError;

/// Fully resolved configuration and the hash of its canonical JSON.
pub struct Resolved<T> {
    pub config: T,
    pub hash: String,
}

pub fn resolve<T>(
    defaults: &T,
    file: Option<&Path>,
    seed: &[(&str, Value)],
    sets: &[String],
) -> Result<Resolved<T>, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(defaults).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let overlay: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, overlay);
    }
    for (path, v) in seed {
        set_path(&mut value, path, v.clone())?;
    }
    for assignment in sets {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("`--set {assignment}` is not key=value")))?;
        // bare words are taken as strings
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    let config: T = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    let canonical = serde_json::to_vec(&config).expect("config serializes");
    Ok(Resolved {
        hash: sha256_hex(&canonical),
        config,
    })
}

/// Recursive object merge; non-objects in `overlay` replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, dotted: &str, new: Value) -> Result<(), CliError> {
    if dotted.is_empty() || dotted.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad key `{dotted}`")));
    }
    let mut cur = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Map::new());
            } else {
                return Err(CliError::Config(format!("`{}` is not an object", parts[..i].join("."))));
            }
        }
        let obj = cur.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last part")
}

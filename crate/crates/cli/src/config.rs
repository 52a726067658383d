use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use ravenforge::{Error, Result};

/// Layers `defaults`, then the config-file object, then explicitly given
/// flags, and deserializes the result.  Unknown keys are rejected by the
/// target type.
pub fn resolve<C, F>(file: Option<&Path>, flags: &F) -> Result<C>
where
    C: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = object(serde_json::to_value(C::default())?, "defaults")?;
    if let Some(path) = file {
        let text = std::fs::read(path)?;
        let v: Value = serde_json::from_slice(&text)
            .map_err(|e| Error::param(format!("config file {}: {e}", path.display())))?;
        merged.extend(object(v, "config file")?);
    }
    for (k, v) in object(serde_json::to_value(flags)?, "flags")? {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::param(format!("configuration: {e}")))
}

fn object(v: Value, what: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(Error::param(format!("{what} must be a JSON object, got {other}"))),
    }
}

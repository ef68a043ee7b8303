//! JSON configuration documents with dotted `key=value` overrides.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Start from `base` (or the type's defaults), apply each override, then
/// decode. Override values are parsed as JSON and fall back to a bare
/// string. Unknown keys are rejected by the target type.
pub fn layered<T>(base: Option<&str>, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut doc = match base {
        Some(text) => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
        None => serde_json::to_value(T::default())?,
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        set_path(&mut doc, key, value)?;
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

fn set_path(doc: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a config field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

//! Versioned JSON documents.
//!
//! Every persisted artifact (models, network parameters, configs, annotations)
//! is wrapped in an envelope `{"kind": ..., "version": ..., "body": ...}`. The
//! reader checks the kind and version before touching the body, so an old or
//! foreign document fails with an explicit error instead of a parse mismatch.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    body: T,
}

pub fn to_string<T: Serialize>(kind: &str, version: u32, body: &T) -> Result<String> {
    let env = Envelope {
        kind: kind.to_string(),
        version,
        body,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_str<T: DeserializeOwned>(text: &str, kind: &str, version: u32) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found_kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found_kind != kind {
        return Err(Error::invalid(format!(
            "expected a `{kind}` document, found `{found_kind}`"
        )));
    }
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::invalid("document has no version field"))? as u32;
    if found != version {
        return Err(Error::UnsupportedVersion {
            kind: kind.to_string(),
            found,
            expected: version,
        });
    }
    let body = value
        .get("body")
        .cloned()
        .ok_or_else(|| Error::invalid("document has no body"))?;
    Ok(serde_json::from_value(body)?)
}

pub fn write<T: Serialize>(path: &Path, kind: &str, version: u32, body: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, to_string(kind, version, body)?)?;
    Ok(())
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<T> {
    let text = fs::read_to_string(path)?;
    from_str(&text, kind, version)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_other_versions_and_kinds() {
        let text = to_string("thing", 1, &vec![1, 2, 3]).unwrap();
        let back: Vec<i32> = from_str(&text, "thing", 1).unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        assert!(matches!(
            from_str::<Vec<i32>>(&text, "thing", 2),
            Err(Error::UnsupportedVersion {
                found: 1,
                expected: 2,
                ..
            })
        ));
        assert!(matches!(
            from_str::<Vec<i32>>(&text, "other", 1),
            Err(Error::InvalidInput(_))
        ));
    }
}

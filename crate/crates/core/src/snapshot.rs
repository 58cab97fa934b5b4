//! Versioned JSON snapshot helpers shared by dataset/model/report persistence.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Current on-disk schema for all JSON artifacts.
pub(crate) const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    payload: T,
}

pub(crate) fn save_versioned<T: Serialize>(path: &Path, payload: &T) -> Result<()> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        payload,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CoreError::Serde(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub(crate) fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let doc: Versioned<T> = serde_json::from_str(&text)
        .map_err(|e| CoreError::Serde(format!("{}: {e}", path.display())))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(CoreError::SchemaVersion {
            expected: SCHEMA_VERSION,
            found: doc.schema_version,
        });
    }
    Ok(doc.payload)
}

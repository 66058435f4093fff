//! Versioned on-disk artifacts: a one-line JSON header followed by one JSON body line.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "pdkt";

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
struct Header {
    format: String,
    kind: String,
    version: u32,
}

pub fn save<T: Serialize>(path: &Path, kind: &str, version: u32, body: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let header = Header {
        format: FORMAT.into(),
        kind: kind.into(),
        version,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    out.push_str(&serde_json::to_string(body)?);
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    let (head, body) = text.split_once('\n').unwrap_or((&text, ""));
    let expected = format!("{FORMAT}/{kind}/v{version}");
    let mismatch = |found: String| Error::Version {
        path: path.display().to_string(),
        expected: expected.clone(),
        found,
    };
    let header: Header =
        serde_json::from_str(head).map_err(|_| mismatch(head.chars().take(80).collect()))?;
    if header.format != FORMAT || header.kind != kind || header.version != version {
        return Err(mismatch(format!(
            "{}/{}/v{}",
            header.format, header.kind, header.version
        )));
    }
    serde_json::from_str(body.trim_end()).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 2,
        msg: e.to_string(),
    })
}

//! JSON reports. Keys follow struct declaration order and maps are sorted,
//! so identical values always serialize to identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_report<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

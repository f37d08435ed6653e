//! JSON-lines helpers shared by the manifest, prediction and quality formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads non-blank lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// True when the line is a `{"header": true, ...}` metadata object.
pub fn is_header(value: &serde_json::Value) -> bool {
    value.get("header").and_then(|v| v.as_bool()) == Some(true)
}

pub fn parse_line<T: DeserializeOwned>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::format(path, line_no, e.to_string()))
}

/// Parses every line into a JSON value, dropping header objects.
pub fn read_values(path: &Path) -> Result<Vec<(usize, serde_json::Value)>> {
    let mut out = Vec::new();
    for (no, line) in read_lines(path)? {
        let value: serde_json::Value = parse_line(path, no, &line)?;
        if !is_header(&value) {
            out.push((no, value));
        }
    }
    Ok(out)
}

pub fn write_lines<T: Serialize>(path: &Path, header: Option<&serde_json::Value>, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if let Some(h) = header {
        serde_json::to_writer(&mut w, h).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

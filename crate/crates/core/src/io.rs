//! Two-column CSV tables with `# key=value` provenance comments, and atomic
//! file writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `contents` to a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::argument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = match dir {
        Some(d) => d.join(tmp_name),
        None => PathBuf::from(tmp_name),
    };
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_table(
    path: &Path,
    comments: &[(String, String)],
    header: &str,
    body: &str,
) -> Result<()> {
    let mut out = String::new();
    for (k, v) in comments {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str(header);
    out.push('\n');
    out.push_str(body);
    write_atomic(path, out.as_bytes())
}

pub struct Table {
    pub comments: BTreeMap<String, String>,
    pub rows: Vec<(f64, f64)>,
}

/// Reads a two-column numeric CSV whose first non-comment line must equal
/// `header`.
pub fn read_table(path: &Path, header: &str) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut comments = BTreeMap::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.trim().split_once('=') {
                comments.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line.trim() != header {
                return Err(parse_err(
                    line_no,
                    format!("expected header '{header}', found '{}'", line.trim()),
                ));
            }
            seen_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let (a, b) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => return Err(parse_err(line_no, "expected exactly two columns".into())),
        };
        let x: f64 = a
            .parse()
            .map_err(|_| parse_err(line_no, format!("cannot parse '{a}' as a number")))?;
        let y: f64 = b
            .parse()
            .map_err(|_| parse_err(line_no, format!("cannot parse '{b}' as a number")))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(parse_err(line_no, "non-finite value".into()));
        }
        rows.push((x, y));
    }
    if !seen_header {
        return Err(parse_err(1, format!("missing header '{header}'")));
    }
    Ok(Table { comments, rows })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("cannot serialize record: {e}")))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn bytes_sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

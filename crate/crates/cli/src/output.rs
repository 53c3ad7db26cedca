use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Pretty JSON with a trailing newline, wrapped with the command that made it.
pub fn json_doc<T: Serialize>(command: &str, seed: Option<u64>, result: &T) -> String {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        command: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        result: &'a T,
    }
    let mut s = serde_json::to_string_pretty(&Doc { command, seed, result }).expect("output serializes");
    s.push('\n');
    s
}

/// `path,value` rows for every leaf of a JSON document.
pub fn flat_csv<T: Serialize>(value: &T) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, x, out);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), x, out);
                }
            }
            Value::Number(n) => {
                let cell = match n.as_f64() {
                    Some(f) if n.is_f64() => num(f),
                    _ => n.to_string(),
                };
                let _ = writeln!(out, "{},{cell}", quote(prefix));
            }
            Value::Bool(b) => {
                let _ = writeln!(out, "{},{b}", quote(prefix));
            }
            Value::String(s) => {
                let _ = writeln!(out, "{},{}", quote(prefix), quote(s));
            }
            Value::Null => {
                let _ = writeln!(out, "{},", quote(prefix));
            }
        }
    }
    let v = serde_json::to_value(value).expect("output serializes");
    let mut out = String::from("key,value\n");
    walk("", &v, &mut out);
    out
}

/// Write through a temp file in the target directory, then rename over the target.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Destination for a single artifact: a file when `--out` is set, stdout otherwise.
pub fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(contents.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

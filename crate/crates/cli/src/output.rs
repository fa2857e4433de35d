//! Number formatting, atomic file output and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

use crate::config::ConfigFile;
use crate::CliError;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// JSON number with 17 significant digits; non-finite values become `null`.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Value::Number(fmt_f64(x).parse::<Number>().expect("formatted float is a JSON number"))
}

/// Rewrites every non-integer number in `v` with 17 significant digits.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s.into_bytes()
}

/// Where the primary output goes.
#[derive(Debug, Clone)]
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn new(out: Option<PathBuf>) -> Self {
        out.map_or(Sink::Stdout, Sink::File)
    }

    /// Sidecar path: `<out>.<suffix>`, or `<subcommand>.<suffix>` in the
    /// working directory when writing to stdout.
    pub fn sidecar(&self, subcommand: &str, suffix: &str) -> PathBuf {
        match self {
            Sink::File(p) => {
                let mut s = p.clone().into_os_string();
                s.push(format!(".{suffix}"));
                PathBuf::from(s)
            }
            Sink::Stdout => PathBuf::from(format!("{subcommand}.{suffix}")),
        }
    }
}

/// Outputs collected in memory and committed together, so a failed run
/// leaves no partial files behind.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Vec<u8>,
}

impl OutputSet {
    pub fn primary(&mut self, sink: &Sink, bytes: Vec<u8>) {
        match sink {
            Sink::Stdout => self.stdout.extend_from_slice(&bytes),
            Sink::File(p) => self.files.push((p.clone(), bytes)),
        }
    }

    pub fn file(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn commit(self) -> Result<(), CliError> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .map_err(|e| CliError::Io(format!("cannot create file in {}: {e}", dir.display())))?;
            tmp.write_all(bytes)
                .and_then(|_| tmp.as_file().sync_all())
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        }
        if !self.stdout.is_empty() {
            let mut out = std::io::stdout().lock();
            out.write_all(&self.stdout)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))?;
        }
        Ok(())
    }
}

/// Resolved config plus provenance; re-ingests as a config file.
pub fn manifest(cfg: &ConfigFile, subcommand: &str, wall_ms: Value, simulations: u64) -> Value {
    let mut doc = match serde_json::to_value(cfg).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config is a JSON object"),
    };
    let timestamp = time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default();
    let mut m = Map::new();
    m.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("timestamp".into(), timestamp.into());
    m.insert("subcommand".into(), subcommand.into());
    m.insert("wall_ms".into(), wall_ms);
    m.insert("simulations".into(), simulations.into());
    doc.insert("manifest".into(), Value::Object(m));
    canonical(Value::Object(doc))
}

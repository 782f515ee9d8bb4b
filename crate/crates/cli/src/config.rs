//! Config files, flag overlays, list arguments and run outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Numbers given as `a,b,c`, an inclusive integer range `a..b`, or
/// `start:stop:step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct List(pub Vec<f64>);

impl FromStr for List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (num(a)?, num(b)?);
            if a.fract() != 0.0 || b.fract() != 0.0 || b < a {
                return Err(format!("range {s:?} needs integer bounds with start <= end"));
            }
            return Ok(List((a as i64..=b as i64).map(|v| v as f64).collect()));
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 {
            let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || b < a {
                return Err(format!("range {s:?} needs a positive step and start <= stop"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            return Ok(List((0..=n).map(|k| a + k as f64 * step).collect()));
        }
        let v = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() {
            return Err("empty list".into());
        }
        Ok(List(v))
    }
}

/// Parsed `--config` file. Manifests written by earlier runs are accepted.
#[derive(Debug, Default)]
pub struct ConfigFile {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub params: Option<Value>,
}

pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let obj = v
        .as_object()
        .ok_or_else(|| CliError::Input(format!("{}: config must be a JSON object", path.display())))?;
    let seed = match obj.get("seed") {
        None | Some(Value::Null) => None,
        Some(s) => Some(
            s.as_u64()
                .ok_or_else(|| CliError::Input("config seed must be a non-negative integer".into()))?,
        ),
    };
    let format = match obj.get("format") {
        None | Some(Value::Null) => None,
        Some(f) => Some(serde_json::from_value(f.clone()).map_err(|e| CliError::Input(format!("config format: {e}")))?),
    };
    Ok(ConfigFile {
        command: obj.get("command").and_then(Value::as_str).map(str::to_owned),
        seed,
        format,
        params: obj.get("params").cloned(),
    })
}

/// Defaults, then config-file params, then flags that were given.
pub fn resolve<P, F>(command: &str, config: &ConfigFile, flags: &F) -> Result<P, CliError>
where
    P: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    if let Some(c) = &config.command {
        if c != command {
            return Err(CliError::Input(format!("config is for '{c}', not '{command}'")));
        }
    }
    let mut base = match serde_json::to_value(P::default())? {
        Value::Object(m) => m,
        _ => unreachable!("parameter sets serialize to objects"),
    };
    if let Some(p) = &config.params {
        let p = p
            .as_object()
            .ok_or_else(|| CliError::Input("config params must be an object".into()))?;
        overlay(&mut base, p, true)?;
    }
    if let Value::Object(f) = serde_json::to_value(flags)? {
        overlay(&mut base, &f, false)?;
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Input(format!("parameters: {e}")))
}

fn overlay(base: &mut Map<String, Value>, top: &Map<String, Value>, strict: bool) -> Result<(), CliError> {
    for (k, v) in top {
        if strict && !base.contains_key(k) {
            return Err(CliError::Input(format!("unknown parameter '{k}'")));
        }
        if !v.is_null() || strict {
            base.insert(k.clone(), v.clone());
        }
    }
    Ok(())
}

/// Seed precedence: flag, config, NVSPEC_SEED, 0.
pub fn resolve_seed(flag: Option<u64>, config: &ConfigFile) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config.seed) {
        return Ok(s);
    }
    match std::env::var("NVSPEC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("NVSPEC_SEED={s:?} is not a non-negative integer"))),
        Err(_) => Ok(0),
    }
}

/// Files of one run. Tables are rendered as CSV or JSON per `format`.
pub struct Output {
    dir: PathBuf,
    format: Format,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    pub fn table<F>(&mut self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> nvspec::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let file = match self.format {
            Format::Csv => format!("{name}.csv"),
            Format::Json => {
                buf = csv_to_json(&buf)?;
                format!("{name}.json")
            }
        };
        self.write_file(file, &buf)
    }

    pub fn manifest<P: Serialize, R: Serialize>(&mut self, command: &str, seed: u64, params: &P, results: &R) -> Result<(), CliError> {
        self.files.push("manifest.json".into());
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            format: self.format,
            params,
            results,
            outputs: &self.files,
        };
        let mut text = serde_json::to_vec_pretty(&m)?;
        text.push(b'\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn write_file(&mut self, file: String, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(file);
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a, P, R> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    format: Format,
    params: &'a P,
    results: &'a R,
    outputs: &'a [String],
}

fn csv_to_json(bytes: &[u8]) -> Result<Vec<u8>, CliError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
        let obj: Map<String, Value> = headers
            .iter()
            .zip(rec.iter())
            .map(|(h, cell)| (h.to_owned(), cell_value(cell)))
            .collect();
        rows.push(Value::Object(obj));
    }
    let mut out = serde_json::to_vec_pretty(&rows)?;
    out.push(b'\n');
    Ok(out)
}

fn cell_value(cell: &str) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = cell.parse::<i64>() {
        return Value::from(i);
    }
    match cell.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::from(f),
        _ => Value::from(cell),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_forms() {
        assert_eq!("1..4".parse::<List>().unwrap().0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!("11:17:2".parse::<List>().unwrap().0, vec![11.0, 13.0, 15.0, 17.0]);
        assert_eq!("0.5, 2".parse::<List>().unwrap().0, vec![0.5, 2.0]);
        assert!("4..1".parse::<List>().is_err());
        assert!("1:2:0".parse::<List>().is_err());
        assert!("x".parse::<List>().is_err());
    }

    #[derive(Serialize, Deserialize, Default, Debug, PartialEq)]
    #[serde(default)]
    struct P {
        a: f64,
        b: u32,
    }

    #[derive(Serialize)]
    struct F {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<f64>,
    }

    #[test]
    fn flags_win_over_config() {
        let cfg = ConfigFile {
            params: Some(serde_json::json!({"a": 1.0, "b": 7})),
            ..ConfigFile::default()
        };
        let p: P = resolve("x", &cfg, &F { a: Some(2.0) }).unwrap();
        assert_eq!(p, P { a: 2.0, b: 7 });
        let p: P = resolve("x", &cfg, &F { a: None }).unwrap();
        assert_eq!(p, P { a: 1.0, b: 7 });
    }

    #[test]
    fn unknown_keys_and_wrong_command_are_rejected() {
        let cfg = ConfigFile {
            params: Some(serde_json::json!({"c": 1})),
            ..ConfigFile::default()
        };
        assert!(resolve::<P, _>("x", &cfg, &F { a: None }).is_err());
        let cfg = ConfigFile {
            command: Some("y".into()),
            ..ConfigFile::default()
        };
        assert!(resolve::<P, _>("x", &cfg, &F { a: None }).is_err());
    }

    #[test]
    fn json_cells() {
        let j = csv_to_json(b"a,b,c\n1,2.5,\n").unwrap();
        let v: Value = serde_json::from_slice(&j).unwrap();
        assert_eq!(v, serde_json::json!([{"a": 1, "b": 2.5, "c": null}]));
    }
}

//! Structural checks for the files the commands write.
//!
//! Each known file name maps to the fields (JSON) or columns (CSV) it must
//! carry. [`check_dir`] validates every known file under an output
//! directory.

use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Number,
    OptNumber,
    Bool,
    Str,
    Array,
    Object,
}

impl Kind {
    fn matches(self, v: &Value) -> bool {
        match self {
            Kind::Number => v.is_number(),
            Kind::OptNumber => v.is_number() || v.is_null(),
            Kind::Bool => v.is_boolean(),
            Kind::Str => v.is_string(),
            Kind::Array => v.is_array(),
            Kind::Object => v.is_object(),
        }
    }
}

type Fields = &'static [(&'static str, Kind)];

const GRADCHECK: Fields = &[
    ("eps", Kind::Number),
    ("threshold", Kind::Number),
    ("fault", Kind::Str),
    ("groups", Kind::Array),
    ("max_rel_error", Kind::Number),
    ("failed_groups", Kind::Array),
    ("passed", Kind::Bool),
];
const GRAD_GROUP: Fields = &[
    ("group", Kind::Str),
    ("tensors", Kind::Number),
    ("elements", Kind::Number),
    ("max_rel_error", Kind::Number),
    ("passed", Kind::Bool),
];
const RECON: Fields = &[
    ("threshold", Kind::Number),
    ("rows", Kind::Array),
    ("max_error", Kind::Number),
    ("failures", Kind::Array),
    ("passed", Kind::Bool),
];
const RECON_ROW: Fields = &[
    ("L", Kind::Number),
    ("wavelet", Kind::Str),
    ("J", Kind::Number),
    ("max_error", Kind::Number),
];
const RUN: Fields = &[
    ("pe", Kind::Str),
    ("seed", Kind::Number),
    ("dataset", Kind::Str),
    ("num_parameters", Kind::Number),
    ("pe_parameters", Kind::Number),
    ("history", Kind::Object),
    ("final_accuracy", Kind::Number),
];
const HISTORY: Fields = &[("epochs", Kind::Array), ("final_accuracy", Kind::Number)];
const EPOCH: Fields = &[
    ("epoch", Kind::Number),
    ("train_loss", Kind::Number),
    ("test_accuracy", Kind::OptNumber),
];
const SUMMARY: Fields = &[
    ("pe", Kind::Str),
    ("dataset", Kind::Str),
    ("seeds", Kind::Array),
    ("accuracies", Kind::Array),
    ("mean_accuracy", Kind::Number),
    ("std_accuracy", Kind::Number),
    ("config", Kind::Object),
];
const ABLATE: Fields = &[
    ("dataset", Kind::Str),
    ("seeds", Kind::Array),
    ("rows", Kind::Array),
    ("config", Kind::Object),
];
const ABLATE_ROW: Fields = &[
    ("variant", Kind::Str),
    ("accuracies", Kind::Array),
    ("mean_accuracy", Kind::Number),
    ("std_accuracy", Kind::Number),
    ("pe_parameters", Kind::Number),
];

/// CSV header and, per column, whether it must parse as a number (empty
/// cells allowed where `Some(true)`).
type Columns = &'static [(&'static str, Option<bool>)];

const ABLATE_CSV: Columns = &[
    ("variant", None),
    ("mean_accuracy", Some(false)),
    ("std_accuracy", Some(false)),
    ("seeds", None),
];
const ABLATE_TIMING_CSV: Columns = &[("variant", None), ("seed", Some(false)), ("wall_seconds", Some(false))];
const BENCH_CSV: Columns = &[
    ("pe", None),
    ("L", Some(false)),
    ("median_seconds", Some(false)),
    ("ratio_vs_half_L", Some(true)),
];
const TRADEOFF_CSV: Columns = &[
    ("variant", None),
    ("mean_accuracy", Some(false)),
    ("L", Some(true)),
    ("median_seconds", Some(false)),
    ("overhead_vs_sinusoidal", Some(false)),
];

fn fail(path: &Path, message: String) -> Error {
    Error::Parse {
        location: path.display().to_string(),
        message,
    }
}

fn check_fields(path: &Path, at: &str, v: &Value, fields: Fields) -> Result<()> {
    let obj = v
        .as_object()
        .ok_or_else(|| fail(path, format!("{at}: expected an object")))?;
    for &(name, kind) in fields {
        match obj.get(name) {
            Some(x) if kind.matches(x) => {}
            Some(x) => return Err(fail(path, format!("{at}.{name}: expected {kind:?}, found {x}"))),
            None => return Err(fail(path, format!("{at}: missing field '{name}'"))),
        }
    }
    Ok(())
}

fn check_items(path: &Path, at: &str, v: &Value, key: &str, fields: Fields) -> Result<()> {
    for (i, item) in v[key].as_array().into_iter().flatten().enumerate() {
        check_fields(path, &format!("{at}.{key}[{i}]"), item, fields)?;
    }
    Ok(())
}

/// Validates a JSON document against the layout of the named output file.
pub fn check_json(path: &Path, v: &Value) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    match name {
        "gradcheck.json" => {
            check_fields(path, "$", v, GRADCHECK)?;
            check_items(path, "$", v, "groups", GRAD_GROUP)
        }
        "recon.json" => {
            check_fields(path, "$", v, RECON)?;
            check_items(path, "$", v, "rows", RECON_ROW)?;
            check_items(path, "$", v, "failures", RECON_ROW)
        }
        "run.json" => {
            check_fields(path, "$", v, RUN)?;
            check_fields(path, "$.history", &v["history"], HISTORY)?;
            check_items(path, "$.history", &v["history"], "epochs", EPOCH)
        }
        "summary.json" => check_fields(path, "$", v, SUMMARY),
        "ablate.json" => {
            check_fields(path, "$", v, ABLATE)?;
            check_items(path, "$", v, "rows", ABLATE_ROW)
        }
        "timing.json" => match v.as_object() {
            Some(o) if o.values().all(Value::is_number) => Ok(()),
            _ => Err(fail(path, "expected an object of numbers".into())),
        },
        _ => Err(fail(path, "not a known output file".into())),
    }
}

/// Validates CSV text against the layout of the named output file.
pub fn check_csv(path: &Path, text: &str) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let columns = match name {
        "ablate.csv" => ABLATE_CSV,
        "ablate_timing.csv" => ABLATE_TIMING_CSV,
        "bench.csv" => BENCH_CSV,
        "tradeoff.csv" => TRADEOFF_CSV,
        _ => return Err(fail(path, "not a known output file".into())),
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| fail(path, e.to_string()))?.clone();
    let expected: Vec<&str> = columns.iter().map(|c| c.0).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(fail(path, format!("header {header:?}, expected {expected:?}")));
    }
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| fail(path, format!("row {}: {e}", i + 2)))?;
        for (cell, &(col, numeric)) in row.iter().zip(columns) {
            let ok = match numeric {
                None => true,
                Some(allow_empty) => (allow_empty && cell.is_empty()) || cell.parse::<f64>().is_ok(),
            };
            if !ok {
                return Err(fail(
                    path,
                    format!("row {}, column {col}: '{cell}' is not a number", i + 2),
                ));
            }
        }
    }
    Ok(())
}

/// Validates one output file by name.
pub fn check_file(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).map_err(|e| fail(path, e.to_string()))?;
        check_json(path, &v)
    } else {
        check_csv(path, &text)
    }
}

const KNOWN: [&str; 10] = [
    "gradcheck.json",
    "recon.json",
    "run.json",
    "summary.json",
    "timing.json",
    "ablate.json",
    "ablate.csv",
    "ablate_timing.csv",
    "bench.csv",
    "tradeoff.csv",
];

/// Validates every known output file under `dir`, one level of `seed_*`
/// subdirectories included. Returns the files checked, sorted.
pub fn check_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        if path.is_dir() && name.starts_with("seed_") {
            let run = path.join("run.json");
            if run.exists() {
                found.push(run);
            }
        } else if KNOWN.contains(&name.as_str()) {
            found.push(path);
        }
    }
    found.sort();
    for path in &found {
        check_file(path)?;
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_cells() {
        let p = Path::new("bench.csv");
        check_csv(
            p,
            "pe,L,median_seconds,ratio_vs_half_L\ndywpe,1024,0.1,\ndywpe,2048,0.2,2\n",
        )
        .unwrap();
        assert!(check_csv(p, "pe,L,median_seconds\n").is_err());
        assert!(check_csv(p, "pe,L,median_seconds,ratio_vs_half_L\ndywpe,x,0.1,\n").is_err());
        assert!(check_csv(Path::new("other.csv"), "a\n").is_err());
    }

    #[test]
    fn json_fields() {
        let p = Path::new("recon.json");
        let good = serde_json::json!({
            "threshold": 1e-9, "max_error": 0.0, "passed": true, "failures": [],
            "rows": [{"L": 8, "wavelet": "haar", "J": 1, "max_error": 0.0}]
        });
        check_json(p, &good).unwrap();
        let mut bad = good.clone();
        bad["rows"][0]["J"] = Value::from("one");
        let err = check_json(p, &bad).unwrap_err().to_string();
        assert!(err.contains("rows[0].J"), "{err}");
        assert!(check_json(Path::new("timing.json"), &serde_json::json!({"seed_1": "x"})).is_err());
    }
}

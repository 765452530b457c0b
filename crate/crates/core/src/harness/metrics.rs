use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::config::Experiment;
use crate::error::{Error, Result};

/// Keys every record carries.
pub const REQUIRED_KEYS: [&str; 5] = ["experiment", "variant", "seed", "step", "kind"];

/// Keys that never name a metric.
const RESERVED: [&str; 7] = ["experiment", "variant", "seed", "step", "kind", "stage", "epoch"];

/// One JSON-lines metrics event.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    fields: Map<String, Value>,
}

/// Identity of one seed's run, stamped on every record.
#[derive(Clone, Debug, PartialEq)]
pub struct RunContext {
    pub experiment: Experiment,
    pub variant: String,
    pub seed: u64,
}

impl RunContext {
    pub fn record(&self, step: u64, kind: &str) -> Record {
        let mut fields = Map::new();
        fields.insert("experiment".into(), self.experiment.name().into());
        fields.insert("variant".into(), self.variant.clone().into());
        fields.insert("seed".into(), self.seed.into());
        fields.insert("step".into(), step.into());
        fields.insert("kind".into(), kind.into());
        Record { fields }
    }

    /// `<experiment>_<variant>_seed<seed>.jsonl`
    pub fn file_name(&self) -> String {
        format!("{}_{}_seed{}.jsonl", self.experiment, self.variant, self.seed)
    }
}

impl Record {
    /// Adds a scalar metric; non-finite values are a numerical failure.
    pub fn num(mut self, key: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("metric value"));
        }
        self.fields.insert(key.into(), value.into());
        Ok(self)
    }

    pub fn int(mut self, key: &str, value: u64) -> Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub fn value(mut self, key: &str, value: Value) -> Self {
        self.fields.insert(key.into(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.get(key)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.fields.get(key).and_then(Value::as_f64)
    }

    pub fn kind(&self) -> &str {
        self.fields["kind"].as_str().unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.fields["seed"].as_u64().unwrap_or_default()
    }

    pub fn step(&self) -> u64 {
        self.fields["step"].as_u64().unwrap_or_default()
    }

    pub fn experiment(&self) -> &str {
        self.fields["experiment"].as_str().unwrap_or_default()
    }

    /// Scalar metrics in key order. A `stage` field suffixes each name
    /// with `_stage<l>`.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let suffix = self
            .fields
            .get("stage")
            .and_then(Value::as_u64)
            .map(|l| format!("_stage{l}"))
            .unwrap_or_default();
        self.fields
            .iter()
            .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
            .filter_map(|(k, v)| match v {
                Value::Number(n) => n.as_f64().map(|x| (format!("{k}{suffix}"), x)),
                _ => None,
            })
            .collect()
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.fields)?)
    }

    /// Parses one line and checks the required keys and their types.
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let Value::Object(fields) = value else {
            return Err("record is not a JSON object".into());
        };
        for key in REQUIRED_KEYS {
            let v = fields.get(key).ok_or_else(|| format!("missing key {key:?}"))?;
            let ok = match key {
                "seed" | "step" => v.is_u64(),
                _ => v.is_string(),
            };
            if !ok {
                return Err(format!("key {key:?} has the wrong type"));
            }
        }
        Ok(Record { fields })
    }
}

/// Writes one record per line with LF endings.
pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        w.write_all(r.to_line()?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a JSON-lines file.
pub fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Record::parse(l).map_err(|reason| Error::CorruptRecord {
                location: format!("{}:{}", path.display(), i + 1),
                reason,
            })
        })
        .collect()
}

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::models::Split;

pub const TRACE_HEADER: &str =
    "step,epoch,split,loss,accuracy,effective_lr,grad_norm,velocity_norm,lambda_max,aeos_threshold";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Jsonl,
}

/// One trace row. Training rows carry the step diagnostics; evaluation
/// rows carry only loss and accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub epoch: u64,
    pub split: Split,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub effective_lr: Option<f64>,
    pub grad_norm: Option<f64>,
    pub velocity_norm: Option<f64>,
    pub lambda_max: Option<f64>,
    pub aeos_threshold: Option<f64>,
}

impl TraceRecord {
    pub fn eval(step: u64, epoch: u64, split: Split, loss: f64, accuracy: Option<f64>) -> Self {
        Self {
            step,
            epoch,
            split,
            loss,
            accuracy,
            effective_lr: None,
            grad_norm: None,
            velocity_norm: None,
            lambda_max: None,
            aeos_threshold: None,
        }
    }

    fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.loss),
            self.accuracy,
            self.effective_lr,
            self.grad_norm,
            self.velocity_norm,
            self.lambda_max,
            self.aeos_threshold,
        ]
    }

    fn from_values(step: u64, epoch: u64, split: Split, v: [Option<f64>; 7]) -> Result<Self, HarnessError> {
        Ok(Self {
            step,
            epoch,
            split,
            loss: v[0].ok_or_else(|| HarnessError::Trace("loss is required".into()))?,
            accuracy: v[1],
            effective_lr: v[2],
            grad_norm: v[3],
            velocity_norm: v[4],
            lambda_max: v[5],
            aeos_threshold: v[6],
        })
    }
}

const VALUE_COLUMNS: [&str; 7] =
    ["loss", "accuracy", "effective_lr", "grad_norm", "velocity_norm", "lambda_max", "aeos_threshold"];

/// 17 significant digits, enough to recover every f64 exactly.
fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn parse_split(s: &str) -> Result<Split, HarnessError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(HarnessError::Trace(format!("unknown split {other:?}"))),
    }
}

fn csv_line(r: &TraceRecord) -> String {
    let mut line = format!("{},{},{}", r.step, r.epoch, r.split.as_str());
    for v in r.values() {
        line.push(',');
        if let Some(x) = v {
            line.push_str(&fmt_num(x));
        }
    }
    line
}

fn json_line(r: &TraceRecord) -> String {
    let mut line = format!("{{\"step\":{},\"epoch\":{},\"split\":\"{}\"", r.step, r.epoch, r.split.as_str());
    for (name, v) in VALUE_COLUMNS.iter().zip(r.values()) {
        let _ = match v {
            None => write!(line, ",\"{name}\":null"),
            Some(x) if x.is_finite() => write!(line, ",\"{name}\":{}", fmt_num(x)),
            Some(x) => write!(line, ",\"{name}\":\"{}\"", fmt_num(x)),
        };
    }
    line.push('}');
    line
}

pub fn render_csv(rows: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_line(r));
        out.push('\n');
    }
    out
}

pub fn render_jsonl(rows: &[TraceRecord]) -> String {
    rows.iter().map(|r| json_line(r) + "\n").collect()
}

pub fn parse_csv(text: &str) -> Result<Vec<TraceRecord>, HarnessError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => return Err(HarnessError::Trace(format!("unexpected header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 10 {
                return Err(HarnessError::Trace(format!("row {} has {} cells", i + 1, cells.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| HarnessError::Trace(format!("row {}: {e}", i + 1)));
            let mut vals = [None; 7];
            for (slot, cell) in vals.iter_mut().zip(&cells[3..]) {
                if !cell.is_empty() {
                    *slot = Some(cell.parse::<f64>().map_err(|e| HarnessError::Trace(format!("row {}: {e}", i + 1)))?);
                }
            }
            TraceRecord::from_values(int(cells[0])?, int(cells[1])?, parse_split(cells[2])?, vals)
        })
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceRecord>, HarnessError> {
    use serde_json::Value;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = |m: &str| HarnessError::Trace(format!("line {}: {m}", i + 1));
            let obj: serde_json::Map<String, Value> =
                serde_json::from_str(line).map_err(|e| err(&e.to_string()))?;
            let int = |k: &str| obj.get(k).and_then(Value::as_u64).ok_or_else(|| err(k));
            let split = obj.get("split").and_then(Value::as_str).ok_or_else(|| err("split"))?;
            let mut vals = [None; 7];
            for (slot, name) in vals.iter_mut().zip(VALUE_COLUMNS) {
                *slot = match obj.get(name) {
                    None | Some(Value::Null) => None,
                    Some(Value::Number(n)) => n.as_f64(),
                    Some(Value::String(s)) => Some(s.parse::<f64>().map_err(|_| err(name))?),
                    Some(_) => return Err(err(name)),
                };
            }
            TraceRecord::from_values(int("step")?, int("epoch")?, parse_split(split)?, vals)
        })
        .collect()
}

/// Streaming trace writer.
pub struct TraceWriter {
    path: PathBuf,
    format: TraceFormat,
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path, format: TraceFormat) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = Self { path: path.to_path_buf(), format, out: BufWriter::new(file) };
        if format == TraceFormat::Csv {
            w.line(TRACE_HEADER.to_string())?;
        }
        Ok(w)
    }

    fn line(&mut self, s: String) -> Result<(), HarnessError> {
        writeln!(self.out, "{s}").map_err(|e| HarnessError::io(&self.path, e))
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<(), HarnessError> {
        let s = match self.format {
            TraceFormat::Csv => csv_line(r),
            TraceFormat::Jsonl => json_line(r),
        };
        self.line(s)
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.out.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

pub fn emit_trace(rows: &[TraceRecord], format: TraceFormat, path: &Path) -> Result<(), HarnessError> {
    let mut w = TraceWriter::create(path, format)?;
    rows.iter().try_for_each(|r| w.write(r))?;
    w.finish()
}

//! Per-epoch metrics and their CSV form:
//!
//! ```text
//! epoch,train_loss,val_acc,epoch_seconds
//! 1,2.2913,0.15,0.84
//! test_acc,0.21
//! total_params,44832
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so parsing the CSV
//! recovers the log exactly. An empty `val_acc` means no validation set.

use crate::error::{Error, Result};

pub const HEADER: &str = "epoch,train_loss,val_acc,epoch_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<EpochRow>,
    pub test_acc: f64,
    pub total_params: usize,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.rows {
            let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{val},{}\n", r.epoch, r.train_loss, r.epoch_seconds));
        }
        out.push_str(&format!("test_acc,{}\ntotal_params,{}\n", self.test_acc, self.total_params));
        out
    }

    /// The CSV with the timing column blanked: the deterministic part of a run.
    pub fn to_csv_without_timing(&self) -> String {
        let mut copy = self.clone();
        copy.rows.iter_mut().for_each(|r| r.epoch_seconds = 0.0);
        copy.to_csv()
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(err(1, format!("expected header `{HEADER}`"))),
        }
        let num = |line: usize, s: &str| s.parse::<f64>().map_err(|_| err(line, format!("bad number `{s}`")));
        let (mut rows, mut test_acc, mut total_params) = (Vec::new(), None, None);
        for (line, l) in lines.filter(|(_, l)| !l.is_empty()) {
            let cells: Vec<&str> = l.split(',').collect();
            match cells[..] {
                ["test_acc", v] => test_acc = Some(num(line, v)?),
                ["total_params", v] => {
                    total_params = Some(v.parse().map_err(|_| err(line, format!("bad count `{v}`")))?)
                }
                [e, loss, val, secs] => rows.push(EpochRow {
                    epoch: e.parse().map_err(|_| err(line, format!("bad epoch `{e}`")))?,
                    train_loss: num(line, loss)?,
                    val_acc: if val.is_empty() { None } else { Some(num(line, val)?) },
                    epoch_seconds: num(line, secs)?,
                }),
                _ => return Err(err(line, format!("unexpected row `{l}`"))),
            }
        }
        Ok(MetricsLog {
            rows,
            test_acc: test_acc.ok_or_else(|| err(0, "missing test_acc row".into()))?,
            total_params: total_params.ok_or_else(|| err(0, "missing total_params row".into()))?,
        })
    }
}

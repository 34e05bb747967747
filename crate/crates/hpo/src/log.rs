//! Append-only JSONL study log. Replaying a study against its log skips every
//! evaluation that was already recorded, which is how interrupted studies
//! resume.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::space::Point;
use crate::study::TrialStatus;
use crate::{HpoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub trial: usize,
    pub bracket: u32,
    pub point: Point,
    pub status: TrialStatus,
    /// Set on evaluation records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub(crate) type Outcome = std::result::Result<f64, String>;

pub struct StudyLog {
    path: PathBuf,
    file: File,
    records: Vec<LogRecord>,
}

impl StudyLog {
    /// Opens or creates `path`. A torn final line from an interrupted write is
    /// discarded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| HpoError::Log {
            path: path.display().to_string(),
            message,
        };
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.split(b'\n').enumerate() {
                let line = line?;
                let complete_len = line.len() as u64 + 1;
                let text = String::from_utf8_lossy(&line);
                if text.trim().is_empty() {
                    valid_len += complete_len;
                    continue;
                }
                match serde_json::from_str::<LogRecord>(&text) {
                    Ok(r) => {
                        records.push(r);
                        valid_len += complete_len;
                    }
                    Err(e) => {
                        // only the last line may be torn
                        let rest = std::fs::metadata(&path)?.len();
                        if valid_len + complete_len < rest {
                            return Err(err(format!("line {}: {e}", i + 1)));
                        }
                        break;
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let len = file.metadata()?.len();
        if len > valid_len {
            file.set_len(valid_len)?;
        } else if len < valid_len {
            // last record parsed but lacks its newline
            file.write_all(b"\n")?;
        }
        Ok(Self { path, file, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn append(&mut self, record: LogRecord) -> Result<()> {
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.records.push(record);
        Ok(())
    }

    /// Number of distinct trials seen in the log.
    pub fn trial_count(&self) -> usize {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.trial).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub(crate) fn memo(&self) -> Memo {
        let mut memo = Memo::default();
        for r in &self.records {
            memo.points.entry(r.trial).or_insert_with(|| r.point.clone());
            if let Some(b) = r.budget {
                let outcome = match (&r.value, &r.error) {
                    (Some(v), None) => Ok(*v),
                    (_, Some(e)) => Err(e.clone()),
                    (None, None) => continue,
                };
                memo.outcomes.insert((r.trial, b.to_bits()), outcome);
            }
        }
        memo
    }
}

#[derive(Default)]
pub(crate) struct Memo {
    pub points: HashMap<usize, Point>,
    pub outcomes: HashMap<(usize, u64), Outcome>,
}

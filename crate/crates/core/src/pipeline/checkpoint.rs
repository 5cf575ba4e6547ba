//! Append-only JSONL checkpoint: a header line carrying the run fingerprint,
//! then one line per completed (video_id, myth) pair.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{FinalLabel, PairKey, PipelineError};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    version: u32,
}

pub(crate) struct Checkpoint {
    path: PathBuf,
    writer: BufWriter<File>,
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Checkpoint(format!("{}: {e}", path.display()))
}

impl Checkpoint {
    /// Open `path`, loading completed pairs when it exists. The file is
    /// rewritten compactly so a torn trailing line from a crash is dropped.
    pub(crate) fn open(
        path: &Path,
        fingerprint: &str,
    ) -> Result<(Self, BTreeMap<PairKey, FinalLabel>), PipelineError> {
        let done = if path.exists() { read(path, fingerprint)? } else { BTreeMap::new() };
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut cp = Self { path: path.to_path_buf(), writer: BufWriter::new(file) };
        let header = Header { fingerprint: fingerprint.to_string(), version: FORMAT_VERSION };
        cp.write_line(&serde_json::to_string(&header).expect("header serializes"))?;
        cp.append(done.values())?;
        Ok((cp, done))
    }

    pub(crate) fn append<'a>(&mut self, labels: impl IntoIterator<Item = &'a FinalLabel>) -> Result<(), PipelineError> {
        for label in labels {
            let line = serde_json::to_string(label).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
            self.write_line(&line)?;
        }
        self.writer.flush().map_err(|e| io_err(&self.path, e))?;
        self.writer.get_ref().sync_data().map_err(|e| io_err(&self.path, e))
    }

    fn write_line(&mut self, line: &str) -> Result<(), PipelineError> {
        writeln!(self.writer, "{line}").map_err(|e| io_err(&self.path, e))
    }
}

/// Completed pairs from an existing checkpoint. Unresolved pairs are
/// dropped so a resumed run retries them.
fn read(path: &Path, fingerprint: &str) -> Result<BTreeMap<PairKey, FinalLabel>, PipelineError> {
    let file = OpenOptions::new().read(true).open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(line) => {
            let line = line.map_err(|e| io_err(path, e))?;
            serde_json::from_str(&line).map_err(|e| PipelineError::Checkpoint(format!("bad header: {e}")))?
        }
        None => return Ok(BTreeMap::new()),
    };
    if header.fingerprint != fingerprint {
        return Err(PipelineError::FingerprintMismatch { expected: fingerprint.to_string(), found: header.fingerprint });
    }
    let lines: Vec<String> = lines.collect::<Result<_, _>>().map_err(|e| io_err(path, e))?;
    let mut done = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<FinalLabel>(line) {
            Ok(label) if !label.unresolved => {
                done.insert((label.video_id.clone(), label.myth), label);
            }
            Ok(_) => {}
            Err(e) if i + 1 == lines.len() => warn!("dropping torn checkpoint line: {e}"),
            Err(e) => return Err(PipelineError::Checkpoint(format!("line {}: {e}", i + 2))),
        }
    }
    Ok(done)
}

//! Line-delimited D_f files: a header line, then one JSON record per sample.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FineTuneBuffer, FineTuneSample};
use crate::envs::{ActionVec, Observation};
use crate::error::{CovrError, Result};

pub const DF_FORMAT: &str = "covr-df";
pub const DF_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    episode: u64,
    step: usize,
    #[serde(rename = "return")]
    g: f64,
    reward: f64,
    #[serde(default)]
    q_value: Option<f64>,
    action: [f64; 2],
    obs: Vec<f64>,
    /// Present only in curated output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

pub fn write_df(path: &Path, buffer: &FineTuneBuffer) -> Result<()> {
    write_records(path, buffer.samples.iter().map(|s| (s, None)))
}

/// Writes the selected samples with their fine-tune weights attached.
pub fn write_curated(path: &Path, buffer: &FineTuneBuffer, selected: &[usize], weights: &[f64]) -> Result<()> {
    if selected.len() != weights.len() {
        return Err(CovrError::dimension("curated weights", selected.len(), weights.len()));
    }
    write_records(
        path,
        selected.iter().zip(weights).map(|(&i, &w)| (&buffer.samples[i], Some(w))),
    )
}

fn write_records<'a>(path: &Path, rows: impl Iterator<Item = (&'a FineTuneSample, Option<f64>)>) -> Result<()> {
    let io = |e| CovrError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        format: DF_FORMAT.into(),
        version: DF_VERSION,
    };
    let line = serde_json::to_string(&header).expect("header serializes");
    writeln!(w, "{line}").map_err(io)?;
    for (s, weight) in rows {
        let rec = Record {
            episode: s.episode,
            step: s.step,
            g: s.g,
            reward: s.reward,
            q_value: s.q_value,
            action: s.action.0,
            obs: s.obs.pixels(),
            weight,
        };
        let line = serde_json::to_string(&rec).map_err(|e| CovrError::format(DF_FORMAT, e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_df(path: &Path) -> Result<FineTuneBuffer> {
    let file = File::open(path).map_err(|e| CovrError::io(path, e))?;
    let parse = |line: usize, message: String| CovrError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut buffer = FineTuneBuffer::new();
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse(1, "missing header".into()))?;
    let first = first.map_err(|e| CovrError::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse(1, e.to_string()))?;
    if header.format != DF_FORMAT || header.version != DF_VERSION {
        return Err(parse(
            1,
            format!("expected {DF_FORMAT} v{DF_VERSION}, found {} v{}", header.format, header.version),
        ));
    }
    for (i, line) in lines {
        let line = line.map_err(|e| CovrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(i + 1, e.to_string()))?;
        let obs = Observation::from_pixels(&rec.obs).map_err(|e| parse(i + 1, e.to_string()))?;
        buffer
            .push(FineTuneSample {
                obs,
                action: ActionVec(rec.action),
                g: rec.g,
                reward: rec.reward,
                q_value: rec.q_value,
                episode: rec.episode,
                step: rec.step,
            })
            .map_err(|e| parse(i + 1, e.to_string()))?;
    }
    Ok(buffer)
}

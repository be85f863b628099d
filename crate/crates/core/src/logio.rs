//! Columnar run logs: one flat binary of f64 matrices plus a JSON sidecar
//! describing what is in it. Training episode dumps and tracking runs share
//! this container so downstream tooling only parses one format.
//!
//! A log is written as `<stem>.bin` + `<stem>.json`. The binary holds each
//! channel's matrix in column-major order, little-endian f64, concatenated
//! in sidecar order. The sidecar fields:
//!
//! - `format`: always `"rctrack-log-v1"`.
//! - `dt`: integration step of the run the log came from.
//! - `seed`: master seed of that run.
//! - `channels`: list of `{name, rows, cols, offset, row_labels}`, where
//!   `offset` is the byte position of the channel in the binary and
//!   `row_labels` (possibly empty) names the rows.
//! - `extra`: free-form string map for anything run-specific (trajectory
//!   name, rmse values, config echoes). Sorted keys, so reruns with the
//!   same inputs produce byte-identical sidecars.
//!
//! Values are stored exactly (bit patterns survive a round trip, NaN
//! included). Logs are an I/O boundary and always hold `f64`, whatever
//! scalar the producing code ran in.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_FORMAT: &str = "rctrack-log-v1";

/// Upper bound on a single channel's element count when reading; rejects
/// sidecars that would ask for absurd allocations.
const ELEMS_LIMIT: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    /// Names the rows, or empty when rows have no individual meaning.
    pub row_labels: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Channel {
    pub fn new(name: impl Into<String>, data: DMatrix<f64>) -> Self {
        Self {
            name: name.into(),
            row_labels: Vec::new(),
            data,
        }
    }

    pub fn with_labels(
        name: impl Into<String>,
        labels: &[&str],
        data: DMatrix<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            row_labels: labels.iter().map(|s| s.to_string()).collect(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub dt: f64,
    pub seed: u64,
    pub channels: Vec<Channel>,
    pub extra: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    dt: f64,
    seed: u64,
    channels: Vec<ChannelMeta>,
    extra: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ChannelMeta {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
    row_labels: Vec<String>,
}

impl RunLog {
    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    fn validate(&self) -> Result<()> {
        for c in &self.channels {
            if !c.row_labels.is_empty() && c.row_labels.len() != c.data.nrows() {
                return Err(Error::InvalidParam(format!(
                    "channel {:?} has {} row labels for {} rows",
                    c.name,
                    c.row_labels.len(),
                    c.data.nrows()
                )));
            }
        }
        Ok(())
    }

    /// Writes `<stem>.bin` and `<stem>.json`, returning both paths.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        self.validate()?;
        let bin_path = stem.with_extension("bin");
        let json_path = stem.with_extension("json");

        let mut metas = Vec::with_capacity(self.channels.len());
        let mut offset = 0u64;
        {
            let mut w = BufWriter::new(File::create(&bin_path)?);
            for c in &self.channels {
                metas.push(ChannelMeta {
                    name: c.name.clone(),
                    rows: c.data.nrows(),
                    cols: c.data.ncols(),
                    offset,
                    row_labels: c.row_labels.clone(),
                });
                for v in c.data.as_slice() {
                    w.write_f64::<LittleEndian>(*v)?;
                }
                offset += (c.data.len() * 8) as u64;
            }
            w.flush()?;
        }

        let sidecar = Sidecar {
            format: LOG_FORMAT.into(),
            dt: self.dt,
            seed: self.seed,
            channels: metas,
            extra: self.extra.clone(),
        };
        let mut w = BufWriter::new(File::create(&json_path)?);
        serde_json::to_writer_pretty(&mut w, &sidecar)
            .map_err(|e| Error::Format(format!("sidecar encode: {e}")))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok((bin_path, json_path))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let bin_path = stem.with_extension("bin");
        let json_path = stem.with_extension("json");

        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(&json_path)?))
            .map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?;
        if sidecar.format != LOG_FORMAT {
            return Err(Error::Format(format!(
                "{}: format {:?}, expected {:?}",
                json_path.display(),
                sidecar.format,
                LOG_FORMAT
            )));
        }

        let mut r = BufReader::new(File::open(&bin_path)?);
        let mut channels = Vec::with_capacity(sidecar.channels.len());
        let mut pos = 0u64;
        for m in &sidecar.channels {
            if m.offset != pos {
                return Err(Error::Format(format!(
                    "{}: channel {:?} at offset {}, expected {} (channels must be contiguous)",
                    json_path.display(),
                    m.name,
                    m.offset,
                    pos
                )));
            }
            let elems = m
                .rows
                .checked_mul(m.cols)
                .filter(|&n| n <= ELEMS_LIMIT)
                .ok_or_else(|| {
                    Error::Format(format!(
                        "{}: channel {:?} claims {}x{} elements",
                        json_path.display(),
                        m.name,
                        m.rows,
                        m.cols
                    ))
                })?;
            let mut buf = vec![0f64; elems];
            r.read_f64_into::<LittleEndian>(&mut buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::Format(format!(
                        "{}: too short for channel {:?} ({}x{} f64 at offset {})",
                        bin_path.display(),
                        m.name,
                        m.rows,
                        m.cols,
                        m.offset
                    ))
                } else {
                    Error::Io(e)
                }
            })?;
            pos += (elems * 8) as u64;
            if !m.row_labels.is_empty() && m.row_labels.len() != m.rows {
                return Err(Error::Format(format!(
                    "{}: channel {:?} has {} row labels for {} rows",
                    json_path.display(),
                    m.name,
                    m.row_labels.len(),
                    m.rows
                )));
            }
            channels.push(Channel {
                name: m.name.clone(),
                row_labels: m.row_labels.clone(),
                data: DMatrix::from_column_slice(m.rows, m.cols, &buf),
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format(format!(
                "{}: {} bytes of trailing data after the last channel",
                bin_path.display(),
                // The exact surplus is not worth a stat call; one byte proves it.
                "at least 1"
            )));
        }
        Ok(Self {
            dt: sidecar.dt,
            seed: sidecar.seed,
            channels,
            extra: sidecar.extra,
        })
    }
}

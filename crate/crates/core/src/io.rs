//! On-disk formats: the array container used for checkpoints and sample
//! stores, metrics and chain CSVs, and JSON manifests.
//!
//! Container layout: the 6-byte magic `LFLOW1`, a little-endian `u64` header
//! length, a JSON header, then every array as raw little-endian `f64` in the
//! order the header lists them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::ParameterSet;
use crate::sampler::ChainRecord;
use crate::training::{EpochRecord, Trainer, TrainerState};

pub const MAGIC: &[u8; 6] = b"LFLOW1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    arrays: Vec<ArrayEntry>,
    meta: serde_json::Value,
}

/// Named arrays plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, ArrayD<f64>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, array: ArrayD<f64>) {
        self.arrays.push((name.to_string(), array));
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("container has no array {name:?}")))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, a)| ArrayEntry {
                    name: n.clone(),
                    shape: a.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, a) in &self.arrays {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an LFLOW1 container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 30 {
            return Err(Error::Format(format!("header length {len} is implausible")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut buf = [0u8; 8];
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let a = ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
                .map_err(|e| Error::Format(e.to_string()))?;
            arrays.push((entry.name, a));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last array".into()));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write then rename so a crash never leaves a truncated file behind
        let tmp = path.with_extension("partial");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const SAMPLES_KIND: &str = "samples";

/// Parameters, Adam moments and trainer scalars.
pub fn checkpoint(trainer: &Trainer) -> Result<Container> {
    let state = trainer.state();
    let meta = serde_json::json!({
        "model": trainer.flow.kind(),
        "trainer": state,
    });
    let mut c = Container::new(CHECKPOINT_KIND, meta);
    for p in trainer.flow.params().iter() {
        c.push(&format!("param/{}", p.name), p.value.clone());
    }
    for (i, p) in trainer.flow.params().iter().enumerate() {
        c.push(&format!("adam_m/{}", p.name), trainer.adam.m[i].clone());
        c.push(&format!("adam_v/{}", p.name), trainer.adam.v[i].clone());
    }
    Ok(c)
}

pub fn restore_trainer(c: &Container) -> Result<Trainer> {
    if c.kind != CHECKPOINT_KIND {
        return Err(Error::Format(format!("expected a checkpoint, found {:?}", c.kind)));
    }
    let state: TrainerState = serde_json::from_value(
        c.meta
            .get("trainer")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint lacks trainer state".into()))?,
    )?;
    let fresh = crate::training::build_model(&state.config)?;
    let mut params = ParameterSet::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for p in fresh.params().iter() {
        params.insert(&p.name, c.get(&format!("param/{}", p.name))?.clone())?;
        m.push(c.get(&format!("adam_m/{}", p.name))?.clone());
        v.push(c.get(&format!("adam_v/{}", p.name))?.clone());
    }
    Trainer::restore(state, params, m, v)
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    checkpoint(trainer)?.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    restore_trainer(&Container::load(path)?)
}

/// Chain states with acceptance flags and per-step log-densities.
pub fn sample_store(rec: &ChainRecord, meta: serde_json::Value) -> Container {
    let mut c = Container::new(SAMPLES_KIND, meta);
    c.push("samples", rec.samples.clone().into_dyn());
    c.push(
        "accepted",
        ArrayD::from_shape_vec(IxDyn(&[rec.len()]), rec.accepted.iter().map(|&a| a as u8 as f64).collect())
            .expect("length"),
    );
    c.push("log_q", ArrayD::from_shape_vec(IxDyn(&[rec.len()]), rec.log_q.clone()).expect("length"));
    c.push("log_p", ArrayD::from_shape_vec(IxDyn(&[rec.len()]), rec.log_p.clone()).expect("length"));
    c
}

/// The `(n, sites)` sample matrix of a sample store.
pub fn samples_of(c: &Container) -> Result<Array2<f64>> {
    if c.kind != SAMPLES_KIND {
        return Err(Error::Format(format!("expected a sample store, found {:?}", c.kind)));
    }
    c.get("samples")?
        .clone()
        .into_dimensionality()
        .map_err(|e| Error::Format(e.to_string()))
}

pub const METRICS_HEADER: [&str; 5] = ["epoch", "loss", "ess", "lr", "seconds"];

/// Appends epoch rows, writing the header when the file is new.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists() && std::fs::metadata(path)?.len() > 0;
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            inner.write_record(METRICS_HEADER)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &EpochRecord) -> Result<()> {
        self.inner.serialize(r)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Serialize)]
struct ChainRow {
    step: usize,
    accepted: u8,
    log_q: f64,
    log_p: f64,
}

pub fn write_chain_csv(rec: &ChainRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..rec.len() {
        w.serialize(ChainRow {
            step: i,
            accepted: rec.accepted[i] as u8,
            log_q: rec.log_q[i],
            log_p: rec.log_p[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

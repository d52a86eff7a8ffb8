//! Labeled dataset generation and the `OBDOA1` container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header:  b"OBDOA1" | version u16 | N u32 | M u32 | K u32
//!          | fov_min f64 | fov_max f64 | step f64 | count u64
//! record:  y: N x (i8 re, i8 im) | s_star: M x f32 | beta_star: M x f32
//!          | snr_db f32 | doas: K x f64
//! ```
//!
//! Records have a fixed size, so record `i` starts at
//! `HEADER_LEN + i * record_len`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, GridSpec, C64};
use crate::sim::{
    derive_seed, label_sample, random_coeff, rng_from_seed, simulate_snapshot, snr_to_sigma,
    OneBitSnapshot, SourceScene,
};

pub const DATASET_MAGIC: &[u8; 6] = b"OBDOA1";
pub const DATASET_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 6 + 2 + 3 * 4 + 3 * 8 + 8;

pub const TRAIN_FILE: &str = "train.obdoa";
pub const VAL_FILE: &str = "val.obdoa";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub snapshot: OneBitSnapshot,
    pub s_star: Vec<f64>,
    /// Signed gap labels in degrees.
    pub beta_star: Vec<f64>,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub geometry: ArrayGeometry,
    pub grid: GridSpec,
    pub num_sources: usize,
    pub snr_set_db: Vec<f64>,
    pub count: usize,
    pub split: f64,
    /// Off-grid offsets are drawn from `U(-max_offset_deg, max_offset_deg)`.
    pub max_offset_deg: f64,
    pub coeff_min: f64,
    pub coeff_max: f64,
}

impl DatasetConfig {
    pub fn new(geometry: ArrayGeometry, count: usize) -> Self {
        Self {
            geometry,
            grid: GridSpec::default(),
            num_sources: 2,
            snr_set_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            count,
            split: 0.9,
            max_offset_deg: 1.0,
            coeff_min: 0.5,
            coeff_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let k = self.num_sources;
        if k == 0 || k >= self.geometry.len() || k > self.grid.len() {
            return Err(Error::Config(format!(
                "{k} sources with N = {}, M = {}",
                self.geometry.len(),
                self.grid.len()
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Config(format!("split {} outside (0, 1]", self.split)));
        }
        if self.snr_set_db.is_empty() || self.snr_set_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR set must be non-empty and finite".into()));
        }
        if !(self.max_offset_deg >= 0.0 && self.max_offset_deg <= self.grid.half_step()) {
            return Err(Error::Config(format!(
                "offset range {} exceeds half the grid interval",
                self.max_offset_deg
            )));
        }
        if !(0.0 <= self.coeff_min && self.coeff_min < self.coeff_max) {
            return Err(Error::Config("coefficient range must satisfy 0 <= min < max".into()));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        ((self.count as f64) * self.split).round() as usize
    }
}

/// Draws the scene for sample `index` and simulates it. Grid indices are
/// distinct, offsets that leave the field of view or snap to a neighbouring
/// grid point are redrawn.
pub fn generate_sample(cfg: &DatasetConfig, seed: u64, index: u64) -> Result<LabeledSample> {
    let mut rng = rng_from_seed(derive_seed(seed, &[index, 0]));
    let grid = &cfg.grid;
    let snr_db = cfg.snr_set_db[rng.random_range(0..cfg.snr_set_db.len())];
    let indices = sample(&mut rng, grid.len(), cfg.num_sources).into_vec();
    let mut doas = Vec::with_capacity(cfg.num_sources);
    for &m in &indices {
        let center = grid.point(m);
        let theta = loop {
            let offset = if cfg.max_offset_deg > 0.0 {
                rng.random_range(-cfg.max_offset_deg..=cfg.max_offset_deg)
            } else {
                0.0
            };
            let theta = center + offset;
            if grid.nearest_index(theta) == Some(m) {
                break theta;
            }
        };
        doas.push(theta);
    }
    let coeffs = (0..cfg.num_sources)
        .map(|_| random_coeff(&mut rng, cfg.coeff_min, cfg.coeff_max))
        .collect();
    let scene = SourceScene {
        doas,
        coeffs,
        sigma: snr_to_sigma(snr_db),
    };
    let snapshot = simulate_snapshot(&cfg.geometry, &scene, derive_seed(seed, &[index, 1]))?;
    let (s_star, beta_star) = label_sample(&scene, grid)?;
    Ok(LabeledSample {
        snapshot,
        s_star,
        beta_star,
        snr_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u16,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub grid: GridSpec,
    pub count: u64,
}

impl DatasetHeader {
    pub fn record_len(&self) -> usize {
        2 * self.n + 8 * self.m + 4 + 8 * self.k
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        for v in [self.n, self.m, self.k] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in [self.grid.fov_min_deg, self.grid.fov_max_deg, self.grid.step_deg] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.count.to_le_bytes())?;
        Ok(())
    }

    fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf = [0u8; HEADER_LEN];
        r.read_exact(&mut buf)
            .map_err(|_| Error::CorruptDataset("truncated header".into()))?;
        if &buf[..6] != DATASET_MAGIC {
            return Err(Error::CorruptDataset("bad magic".into()));
        }
        let version = u16::from_le_bytes([buf[6], buf[7]]);
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let grid = GridSpec::new(f64_at(20), f64_at(28), f64_at(36))
            .map_err(|e| Error::CorruptDataset(e.to_string()))?;
        let header = Self {
            version,
            n: u32_at(8),
            m: u32_at(12),
            k: u32_at(16),
            grid,
            count: u64::from_le_bytes(buf[44..52].try_into().unwrap()),
        };
        if header.m != grid.len() {
            return Err(Error::CorruptDataset(format!(
                "M = {} disagrees with grid ({} points)",
                header.m,
                grid.len()
            )));
        }
        Ok(header)
    }
}

/// One record as stored on disk (labels at f32 precision).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub y: Vec<C64>,
    pub s_star: Vec<f32>,
    pub beta_star: Vec<f32>,
    pub snr_db: f32,
    pub doas: Vec<f64>,
}

impl DatasetRecord {
    pub fn snapshot(&self) -> OneBitSnapshot {
        OneBitSnapshot {
            y: DVector::from_column_slice(&self.y),
            scene: None,
        }
    }
}

fn encode_record(sample: &LabeledSample, out: &mut Vec<u8>) {
    for z in sample.snapshot.y.iter() {
        out.push(z.re as i8 as u8);
        out.push(z.im as i8 as u8);
    }
    for &v in &sample.s_star {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &sample.beta_star {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(sample.snr_db as f32).to_le_bytes());
    if let Some(scene) = &sample.snapshot.scene {
        for &d in &scene.doas {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
}

fn decode_record(h: &DatasetHeader, buf: &[u8]) -> Result<DatasetRecord> {
    let mut y = Vec::with_capacity(h.n);
    for pair in buf[..2 * h.n].chunks_exact(2) {
        let (re, im) = (pair[0] as i8, pair[1] as i8);
        if re.abs() != 1 || im.abs() != 1 {
            return Err(Error::CorruptDataset(format!("measurement entry ({re}, {im})")));
        }
        y.push(C64::new(re as f64, im as f64));
    }
    let mut off = 2 * h.n;
    let mut f32s = |count: usize| {
        let v: Vec<f32> = buf[off..off + 4 * count]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        off += 4 * count;
        v
    };
    let s_star = f32s(h.m);
    let beta_star = f32s(h.m);
    let snr_db = f32s(1)[0];
    let doas = buf[off..off + 8 * h.k]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(DatasetRecord {
        y,
        s_star,
        beta_star,
        snr_db,
        doas,
    })
}

fn write_split(
    cfg: &DatasetConfig,
    seed: u64,
    range: std::ops::Range<usize>,
    path: &Path,
) -> Result<()> {
    const CHUNK: usize = 4096;
    let header = DatasetHeader {
        version: DATASET_VERSION,
        n: cfg.geometry.len(),
        m: cfg.grid.len(),
        k: cfg.num_sources,
        grid: cfg.grid,
        count: range.len() as u64,
    };
    let mut w = BufWriter::new(File::create(path)?);
    header.write(&mut w)?;
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        let chunk: Vec<Vec<u8>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let sample = generate_sample(cfg, seed, i as u64)?;
                let mut buf = Vec::with_capacity(header.record_len());
                encode_record(&sample, &mut buf);
                Ok(buf)
            })
            .collect::<Result<_>>()?;
        for rec in chunk {
            w.write_all(&rec)?;
        }
        start = end;
    }
    w.flush()?;
    Ok(())
}

/// Writes `train.obdoa` and `val.obdoa` under `out_dir`. Sample `i` depends
/// only on `(seed, i)`, so the output does not depend on thread count.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let n_train = cfg.train_count();
    let train = out_dir.join(TRAIN_FILE);
    let val = out_dir.join(VAL_FILE);
    write_split(cfg, seed, 0..n_train, &train)?;
    write_split(cfg, seed, n_train..cfg.count, &val)?;
    Ok((train, val))
}

pub struct DatasetReader {
    header: DatasetHeader,
    reader: BufReader<File>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut reader = BufReader::new(file);
        let header = DatasetHeader::read(&mut reader)?;
        let expected = HEADER_LEN as u64 + header.count * header.record_len() as u64;
        if file_len != expected {
            return Err(Error::CorruptDataset(format!(
                "file has {file_len} bytes, header implies {expected}"
            )));
        }
        Ok(Self { header, reader })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn read(&mut self, index: usize) -> Result<DatasetRecord> {
        if index >= self.len() {
            return Err(Error::CorruptDataset(format!(
                "record {index} out of range ({} records)",
                self.len()
            )));
        }
        let rl = self.header.record_len();
        self.reader
            .seek(SeekFrom::Start((HEADER_LEN + index * rl) as u64))?;
        let mut buf = vec![0u8; rl];
        self.reader.read_exact(&mut buf)?;
        decode_record(&self.header, &buf)
    }

    pub fn read_all(&mut self) -> Result<Vec<DatasetRecord>> {
        (0..self.len()).map(|i| self.read(i)).collect()
    }
}

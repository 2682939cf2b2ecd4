//! The "SGDS" binary record file.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"SGDS"
//! version u32           1 = single-target records, 2 = multi-target records
//! count   u32
//! record (v1):
//!   vehicle_count u16
//!   per vehicle   16 x 2 f64 history
//!   edge_count    u16, then (dst u16, src u16) per edge
//!   future        10 x 2 f64
//!   segment       u16 len + UTF-8, target_id u64, frame u32
//! record (v2): as v1 but instead of the single future block:
//!   target_count  u16, then per target: node u16 + 10 x 2 f64 future
//! ```
//!
//! Round-trips are bit-exact; floats are stored with their full f64 payload.

use super::{Sample, SampleMeta, TargetTruth, T_FUT, T_HIST};
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SGDS";

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u16(&mut self, v: u16) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn string(&mut self, s: &str) -> Result<()> {
        let bytes = s.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format("string exceeds u16 length".to_string()));
        }
        self.u16(bytes.len() as u16)?;
        Ok(self.0.write_all(bytes)?)
    }
    fn points<const N: usize>(&mut self, pts: &[[f64; 2]; N]) -> Result<()> {
        for p in pts {
            self.f64(p[0])?;
            self.f64(p[1])?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let mut buf = vec![0u8; len];
        self.0.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 string".to_string()))
    }
    fn points<const N: usize>(&mut self) -> Result<[[f64; 2]; N]> {
        let mut out = [[0.0; 2]; N];
        for p in &mut out {
            p[0] = self.f64()?;
            p[1] = self.f64()?;
        }
        Ok(out)
    }
}

/// Writes a record file; picks version 1 when every sample uses the
/// single-target layout, version 2 otherwise.
pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let v1 = samples.iter().all(|s| s.is_single_target());
    let mut w = Writer(BufWriter::new(File::create(path)?));
    w.0.write_all(MAGIC)?;
    w.u32(if v1 { 1 } else { 2 })?;
    w.u32(samples.len() as u32)?;
    for s in samples {
        s.validate()?;
        w.u16(s.histories.len() as u16)?;
        for h in &s.histories {
            w.points(h)?;
        }
        w.u16(s.edges.len() as u16)?;
        for &(d, src) in s.edges.edges() {
            w.u16(d as u16)?;
            w.u16(src as u16)?;
        }
        if v1 {
            w.points(&s.targets[0].future)?;
        } else {
            w.u16(s.targets.len() as u16)?;
            for t in &s.targets {
                w.u16(t.node as u16)?;
                w.points(&t.future)?;
            }
        }
        w.string(&s.meta.segment)?;
        w.u64(s.meta.target_id)?;
        w.u32(s.meta.frame)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    let magic: [u8; 4] = r.bytes()?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not an SGDS file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != 1 && version != 2 {
        return Err(Error::Format(format!("unsupported SGDS version {version}")));
    }
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let vehicles = r.u16()? as usize;
        let mut histories = Vec::with_capacity(vehicles);
        for _ in 0..vehicles {
            histories.push(r.points::<T_HIST>()?);
        }
        let n_edges = r.u16()? as usize;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let d = r.u16()? as usize;
            let s = r.u16()? as usize;
            edges.push((d, s));
        }
        let targets = if version == 1 {
            vec![TargetTruth {
                node: 0,
                future: r.points::<T_FUT>()?,
            }]
        } else {
            let m = r.u16()? as usize;
            (0..m)
                .map(|_| {
                    Ok(TargetTruth {
                        node: r.u16()? as usize,
                        future: r.points::<T_FUT>()?,
                    })
                })
                .collect::<Result<_>>()?
        };
        let sample = Sample {
            histories,
            edges: EdgeSet::new(vehicles, edges)?,
            targets,
            meta: SampleMeta {
                segment: r.string()?,
                target_id: r.u64()?,
                frame: r.u32()?,
            },
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Seeded uniform split into a `val_size` validation set and the remaining
/// training set, written as two record files. Within each file, samples keep
/// their original relative order.
pub fn split_and_serialize(
    samples: &[Sample],
    seed: u64,
    val_size: usize,
    train_path: &Path,
    val_path: &Path,
) -> Result<(usize, usize)> {
    if samples.len() <= val_size {
        return Err(Error::contract(format!(
            "need more than {val_size} samples to split, got {}",
            samples.len()
        )));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut val_idx = idx[..val_size].to_vec();
    val_idx.sort_unstable();
    let mut in_val = vec![false; samples.len()];
    for &i in &val_idx {
        in_val[i] = true;
    }
    let train: Vec<Sample> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !in_val[*i])
        .map(|(_, s)| s.clone())
        .collect();
    let val: Vec<Sample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    write_samples(train_path, &train)?;
    write_samples(val_path, &val)?;
    Ok((train.len(), val.len()))
}

//! "SGTR" parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    b"SGTR"
//! version  u32 (1)
//! variant  u16 len + UTF-8 name
//! d_emb    u32
//! d_head   u32
//! epoch    u32           completed training epochs
//! count    u32           named tensors
//! tensor:  name (u16 len + UTF-8), rank u32, extents u64 x rank,
//!          data f64 x product(extents)
//! ```
//!
//! Model weights use their canonical names; optimizer state rides along under
//! the `optim.` prefix so an interrupted run resumes exactly.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::tensor::{ParamSet, Tensor};
use crate::train::AdamState;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SGTR";
const VERSION: u32 = 1;

pub struct Saved {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: u32,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save(path: &Path, params: &ModelParams, adam: Option<&AdamState>, epoch: u32) -> Result<()> {
    let tensors = params.tensors();
    let mut count = tensors.len();
    if adam.is_some() {
        count += 2 * tensors.len() + 1; // moments plus the step counter
    }

    let tmp = path.with_extension("sgtr.tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let vname = params.variant.name().as_bytes();
        w.write_all(&(vname.len() as u16).to_le_bytes())?;
        w.write_all(vname)?;
        w.write_all(&(params.cfg.d_emb as u32).to_le_bytes())?;
        w.write_all(&(params.cfg.d_head as u32).to_le_bytes())?;
        w.write_all(&epoch.to_le_bytes())?;
        w.write_all(&(count as u32).to_le_bytes())?;
        for (name, t) in &tensors {
            write_tensor(&mut w, name, t.shape(), t.data())?;
        }
        if let Some(a) = adam {
            for (i, (name, t)) in tensors.iter().enumerate() {
                write_tensor(&mut w, &format!("optim.m.{name}"), t.shape(), &a.m[i])?;
                write_tensor(&mut w, &format!("optim.v.{name}"), t.shape(), &a.v[i])?;
            }
            write_tensor(&mut w, "optim.step", &[1], &[a.step as f64])?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct RawReader<R: Read>(R);

impl<R: Read> RawReader<R> {
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
    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let mut buf = vec![0u8; len];
        self.0.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 name".to_string()))
    }
}

pub fn load(path: &Path) -> Result<Saved> {
    let mut r = RawReader(std::io::BufReader::new(std::fs::File::open(path)?));
    let magic: [u8; 4] = r.bytes()?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not an SGTR checkpoint",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let variant: Variant = r.string()?.parse()?;
    let cfg = ModelConfig {
        d_emb: r.u32()? as usize,
        d_head: r.u32()? as usize,
    };
    let epoch = r.u32()?;
    let count = r.u32()? as usize;

    let mut named: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.bytes()?));
        }
        named.insert(name, Tensor::new(shape, data)?);
    }

    let mut params = ModelParams::init(variant, cfg, 0);
    for (name, t) in params.tensors_mut() {
        let stored = named
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
        if stored.shape() != t.shape() {
            return Err(Error::Format(format!(
                "tensor {name}: stored shape {:?} != expected {:?}",
                stored.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(stored.data());
        t.zero_grad();
    }

    let adam = if named.contains_key("optim.step") {
        let mut a = AdamState::new(&params, 0.001);
        a.step = named["optim.step"].data()[0] as u64;
        for (i, (name, t)) in params.tensors().iter().enumerate() {
            for (which, buf) in [("m", &mut a.m[i]), ("v", &mut a.v[i])] {
                let key = format!("optim.{which}.{name}");
                let stored = named
                    .get(&key)
                    .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))?;
                if stored.shape() != t.shape() {
                    return Err(Error::Format(format!("{key}: wrong shape")));
                }
                buf.copy_from_slice(stored.data());
            }
        }
        Some(a)
    } else {
        None
    };

    Ok(Saved {
        params,
        adam,
        epoch,
    })
}

//! Binary checkpoints.
//!
//! Layout, all little-endian: magic `EXRG`, `u32` format version, `u32`
//! blob count, then blobs sorted by name. Each blob is `u32` name length,
//! UTF-8 name, `u8` dtype, `u32` rank, `u64` per dimension, `u64` byte
//! length, raw data. Dtypes: 1 = f64, 2 = f32, 3 = u64 scalar, 4 = UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Real, Tensor};

use super::adam::Adam;
use super::config::{Stage, TrainConfig};

pub const MAGIC: &[u8; 4] = b"EXRG";
pub const FORMAT_VERSION: u32 = 1;

const DT_F64: u8 = 1;
const DT_F32: u8 = 2;
const DT_U64: u8 = 3;
const DT_TEXT: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
enum Blob {
    Tensor(Tensor),
    U64(u64),
    Text(String),
}

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn from_adam(adam: &Adam, params: &Params) -> Self {
        let moments = params
            .names()
            .iter()
            .zip(adam.m.iter().zip(&adam.v))
            .map(|(n, (m, v))| (n.clone(), (m.clone(), v.clone())))
            .collect();
        OptimizerState { t: adam.t, moments }
    }

    /// Merges the moments of several optimizers; `t` is the largest count.
    pub fn merge(parts: &[OptimizerState]) -> Self {
        let mut out = OptimizerState {
            t: 0,
            moments: BTreeMap::new(),
        };
        for p in parts {
            out.t = out.t.max(p.t);
            out.moments.extend(p.moments.clone());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Configuration of the most recent stage.
    pub config: TrainConfig,
    /// Optimizer steps taken across all stages.
    pub step: u64,
    /// Completed stages in order.
    pub stages: Vec<Stage>,
    pub megnet: Params,
    pub regnet: Option<Params>,
    pub optimizer: Option<OptimizerState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }
}

fn encode(blobs: &BTreeMap<String, Blob>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, blobs.len() as u32);
    for (name, blob) in blobs {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        match blob {
            Blob::Tensor(t) => {
                let (dtype, width) = if std::mem::size_of::<Real>() == 8 {
                    (DT_F64, 8)
                } else {
                    (DT_F32, 4)
                };
                out.push(dtype);
                put_u32(&mut out, t.ndim() as u32);
                for &d in t.shape() {
                    put_u64(&mut out, d as u64);
                }
                put_u64(&mut out, (t.numel() * width) as u64);
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Blob::U64(v) => {
                out.push(DT_U64);
                put_u32(&mut out, 0);
                put_u64(&mut out, 8);
                put_u64(&mut out, *v);
            }
            Blob::Text(s) => {
                out.push(DT_TEXT);
                put_u32(&mut out, 1);
                put_u64(&mut out, s.len() as u64);
                put_u64(&mut out, s.len() as u64);
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Blob>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = r.u32()?;
    let mut blobs = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("blob name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let byte_len = r.len()?;
        let data = r.take(byte_len)?;
        let numel: usize = shape.iter().product();
        let bad_len = || Error::Format(format!("blob {name}: {byte_len} bytes for shape {shape:?}"));
        let blob = match dtype {
            DT_F64 => {
                if byte_len != numel * 8 {
                    return Err(bad_len());
                }
                let v = data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Real)
                    .collect();
                Blob::Tensor(Tensor::new(shape, v)?)
            }
            DT_F32 => {
                if byte_len != numel * 4 {
                    return Err(bad_len());
                }
                let v = data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as Real)
                    .collect();
                Blob::Tensor(Tensor::new(shape, v)?)
            }
            DT_U64 if byte_len == 8 => Blob::U64(u64::from_le_bytes(data.try_into().expect("8 bytes"))),
            DT_TEXT => Blob::Text(
                std::str::from_utf8(data)
                    .map_err(|_| Error::Format(format!("blob {name} is not UTF-8")))?
                    .to_string(),
            ),
            _ => return Err(Error::Format(format!("blob {name}: unknown dtype {dtype}"))),
        };
        if blobs.insert(name.clone(), blob).is_some() {
            return Err(Error::Format(format!("duplicate blob {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last blob".into()));
    }
    Ok(blobs)
}

impl Checkpoint {
    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs = BTreeMap::new();
        blobs.insert("meta.config".to_string(), Blob::Text(self.config.to_text()));
        blobs.insert("meta.step".to_string(), Blob::U64(self.step));
        let stages: Vec<&str> = self.stages.iter().map(|s| s.as_str()).collect();
        blobs.insert("meta.stages".to_string(), Blob::Text(stages.join(",")));
        let sets = std::iter::once(&self.megnet).chain(self.regnet.as_ref());
        for params in sets {
            for (n, t) in params.iter() {
                blobs.insert(n.to_string(), Blob::Tensor(t.clone()));
            }
        }
        if let Some(opt) = &self.optimizer {
            blobs.insert("adam.t".to_string(), Blob::U64(opt.t));
            for (n, (m, v)) in &opt.moments {
                blobs.insert(format!("adam.m/{n}"), Blob::Tensor(m.clone()));
                blobs.insert(format!("adam.v/{n}"), Blob::Tensor(v.clone()));
            }
        }
        encode(&blobs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let blobs = decode(bytes)?;
        let text = |k: &str| match blobs.get(k) {
            Some(Blob::Text(s)) => Ok(s.clone()),
            _ => Err(Error::Format(format!("checkpoint lacks text blob {k}"))),
        };
        let config = TrainConfig::parse(&text("meta.config")?)?;
        let step = match blobs.get("meta.step") {
            Some(Blob::U64(v)) => *v,
            _ => return Err(Error::Format("checkpoint lacks meta.step".into())),
        };
        let stages = text("meta.stages")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Stage>>>()?;
        let mut megnet = Params::new();
        let mut regnet = Params::new();
        let mut moments: BTreeMap<String, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
        let mut t = None;
        for (name, blob) in &blobs {
            match (name.as_str(), blob) {
                (n, Blob::Tensor(x)) if n.starts_with("megnet.") => megnet.insert(n, x.clone()),
                (n, Blob::Tensor(x)) if n.starts_with("regnet.") => regnet.insert(n, x.clone()),
                (n, Blob::Tensor(x)) if n.starts_with("adam.m/") => {
                    moments.entry(n[7..].to_string()).or_default().0 = Some(x.clone())
                }
                (n, Blob::Tensor(x)) if n.starts_with("adam.v/") => {
                    moments.entry(n[7..].to_string()).or_default().1 = Some(x.clone())
                }
                ("adam.t", Blob::U64(v)) => t = Some(*v),
                (n, _) if n.starts_with("meta.") => {}
                (n, _) => return Err(Error::Format(format!("unexpected blob {n}"))),
            }
        }
        let optimizer = match t {
            Some(t) => Some(OptimizerState {
                t,
                moments: moments
                    .into_iter()
                    .map(|(n, mv)| match mv {
                        (Some(m), Some(v)) => Ok((n, (m, v))),
                        _ => Err(Error::Format(format!("incomplete moments for {n}"))),
                    })
                    .collect::<Result<_>>()?,
            }),
            None if moments.is_empty() => None,
            None => return Err(Error::Format("moments without adam.t".into())),
        };
        if megnet.is_empty() {
            return Err(Error::Format("checkpoint has no megnet parameters".into()));
        }
        Ok(Checkpoint {
            config,
            step,
            stages,
            megnet,
            regnet: (!regnet.is_empty()).then_some(regnet),
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut megnet = Params::new();
        megnet.insert("megnet.b", Tensor::from_fn([2, 3], |i| i as Real * 0.1));
        megnet.insert("megnet.a", Tensor::full([1], -2.0));
        let mut regnet = Params::new();
        regnet.insert("regnet.x", Tensor::full([4], 0.25));
        let mut moments = BTreeMap::new();
        moments.insert("regnet.x".to_string(), (Tensor::full([4], 1e-3), Tensor::full([4], 1e-6)));
        Checkpoint {
            config: TrainConfig::for_stage(Stage::Regnet),
            step: 42,
            stages: vec![Stage::Megnet, Stage::Regnet],
            megnet,
            regnet: Some(regnet),
            optimizer: Some(OptimizerState { t: 7, moments }),
        }
    }

    #[test]
    fn bytes_roundtrip_is_identical() {
        let c = sample();
        let b = c.to_bytes();
        assert_eq!(&b[..4], MAGIC);
        let back = Checkpoint::from_bytes(&b).unwrap();
        assert_eq!(back.to_bytes(), b);
        assert_eq!(back.step, 42);
        assert_eq!(back.stages, c.stages);
        assert_eq!(back.megnet.get("megnet.b"), c.megnet.get("megnet.b"));
        assert_eq!(back.optimizer, c.optimizer);
    }

    #[test]
    fn rejects_corruption() {
        let b = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = b;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}

//! Binary checkpoints.
//!
//! Layout (little-endian): magic `RCKP`, version `u16`, the network
//! configuration as length-prefixed TOML text, named parameter buffers,
//! batch-norm running statistics, then the optimizer state.

use std::fs;
use std::path::Path;

use super::net::{BnRunning, Param, ResNet, ResNetConfig};
use super::optim::AdamW;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCKP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ResNetConfig,
    pub params: Vec<Param>,
    pub bn: Vec<BnRunning>,
    pub optimizer: AdamW,
    pub epoch: u32,
}

impl Checkpoint {
    pub fn capture(model: &ResNet, opt: &AdamW, epoch: usize) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().to_vec(),
            bn: model.bn_running().to_vec(),
            optimizer: opt.clone(),
            epoch: epoch as u32,
        }
    }

    pub fn model(&self) -> Result<ResNet> {
        ResNet::from_parts(self.config.clone(), self.params.clone(), self.bn.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u16(VERSION);
        let cfg = toml::to_string(&self.config).map_err(|e| Error::Internal(format!("config encoding: {e}")))?;
        w.str(&cfg);
        w.u32(self.params.len() as u32);
        for p in &self.params {
            w.str(&p.name);
            w.u32(p.value.shape().len() as u32);
            for d in p.value.shape() {
                w.u32(*d as u32);
            }
            w.f32s(p.value.data());
        }
        w.u32(self.bn.len() as u32);
        for b in &self.bn {
            w.str(&b.name);
            w.u32(b.mean.len() as u32);
            w.f32s(&b.mean);
            w.f32s(&b.var);
        }
        let o = &self.optimizer;
        w.u64(o.step);
        for v in [o.lr, o.beta1, o.beta2, o.eps, o.weight_decay] {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
        w.u32(o.m.len() as u32);
        for (m, v) in o.m.iter().zip(&o.v) {
            w.u32(m.len() as u32);
            w.f32s(m);
            w.f32s(v);
        }
        w.u32(self.epoch);
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let config: ResNetConfig =
            toml::from_str(&r.str()?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let nd = r.u32()? as usize;
            let shape = (0..nd).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            let value = Tensor::new(&shape, r.f32s(len)?)?;
            params.push(Param { name, value });
        }
        let n = r.u32()? as usize;
        let mut bn = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let c = r.u32()? as usize;
            bn.push(BnRunning {
                name,
                mean: r.f32s(c)?,
                var: r.f32s(c)?,
            });
        }
        let step = r.u64()?;
        let mut f = [0f64; 5];
        for v in &mut f {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
        let k = r.u32()? as usize;
        let (mut m, mut v) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for _ in 0..k {
            let len = r.u32()? as usize;
            m.push(r.f32s(len)?);
            v.push(r.f32s(len)?);
        }
        let epoch = r.u32()?;
        if r.at != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.at)));
        }
        let ck = Self {
            config,
            params,
            bn,
            optimizer: AdamW {
                lr: f[0],
                beta1: f[1],
                beta2: f[2],
                eps: f[3],
                weight_decay: f[4],
                step,
                m,
                v,
            },
            epoch,
        };
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.b.len() - self.at < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("non-UTF-8 name in checkpoint".into()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("buffer too large".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

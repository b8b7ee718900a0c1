//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DPLSTCK\0" | version u32 | config sha256 [32] | config text (u32 len + utf8)
//! | iteration u64
//! | tensors: u32 count, each { name, rank u8, dims u64 × rank, f64 × numel }
//! | integers: u32 count, each { name, u64 }
//! | reals:    u32 count, each { name, f64 }
//! | flags:    u32 count, each { name, u32 len, u8 × len }
//! | sha256 of everything above [32]
//! ```
//!
//! Names are `u32 len + utf8`. Reals are stored by bit pattern, so a
//! restored trainer continues bit for bit.

use std::collections::VecDeque;
use std::path::Path;

use diffplast_core::training::{Adam, CueTrainer, PpoTrainer, ValueHead};
use diffplast_core::{Network, Shape, Tensor};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MAGIC: &[u8; 8] = b"DPLSTCK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("config hash mismatch: {0}")]
    ConfigMismatch(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config: String,
    pub iteration: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub integers: Vec<(String, u64)>,
    pub reals: Vec<(String, f64)>,
    pub flags: Vec<(String, Vec<bool>)>,
}

fn put_name(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("name is not utf-8".into()))
    }

    fn count(&mut self, min_item: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.buf.len() - self.pos {
            return Err(CheckpointError::Truncated);
        }
        Ok(n)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(self.config_hash);
        put_name(&mut out, &self.config);
        out.extend(self.iteration.to_le_bytes());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_name(&mut out, name);
            let sh = t.shape();
            out.push(sh.rank() as u8);
            for &d in sh.dims() {
                out.extend((d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend(v.to_bits().to_le_bytes());
            }
        }
        out.extend((self.integers.len() as u32).to_le_bytes());
        for (name, v) in &self.integers {
            put_name(&mut out, name);
            out.extend(v.to_le_bytes());
        }
        out.extend((self.reals.len() as u32).to_le_bytes());
        for (name, v) in &self.reals {
            put_name(&mut out, name);
            out.extend(v.to_bits().to_le_bytes());
        }
        out.extend((self.flags.len() as u32).to_le_bytes());
        for (name, bits) in &self.flags {
            put_name(&mut out, name);
            out.extend((bits.len() as u32).to_le_bytes());
            out.extend(bits.iter().map(|&b| b as u8));
        }
        let digest = Sha256::digest(&out);
        out.extend(digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let mut r = Reader { buf, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        if buf.len() < r.pos + 32 {
            return Err(CheckpointError::Truncated);
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: body, pos: r.pos };
        let mut ck = Checkpoint { config_hash: r.take(32)?.try_into().unwrap(), ..Default::default() };
        ck.config = r.name()?;
        ck.iteration = r.u64()?;
        for _ in 0..r.count(5)? {
            let name = r.name()?;
            let shape = match r.u8()? {
                0 => Shape::SCALAR,
                1 => Shape::vector(r.u64()? as usize),
                2 => {
                    let rows = r.u64()? as usize;
                    Shape::matrix(rows, r.u64()? as usize)
                }
                k => return Err(CheckpointError::Malformed(format!("tensor `{name}` has rank {k}"))),
            };
            let n = shape.numel();
            if n.saturating_mul(8) > body.len() - r.pos {
                return Err(CheckpointError::Truncated);
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            ck.tensors.push((name, Tensor::new(shape, data)));
        }
        for _ in 0..r.count(12)? {
            let name = r.name()?;
            ck.integers.push((name, r.u64()?));
        }
        for _ in 0..r.count(12)? {
            let name = r.name()?;
            ck.reals.push((name, r.f64()?));
        }
        for _ in 0..r.count(8)? {
            let name = r.name()?;
            let n = r.u32()? as usize;
            ck.flags.push((name, r.take(n)?.iter().map(|&b| b != 0).collect()));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// The embedded config, checked against the stored hash.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::parse(&self.config, "<checkpoint>")
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if cfg.hash() != self.config_hash {
            return Err(CheckpointError::ConfigMismatch("embedded config does not match its hash".into()));
        }
        Ok(cfg)
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor `{name}`")))
    }

    fn integer(&self, name: &str) -> Result<u64> {
        self.integers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing integer `{name}`")))
    }

    fn real(&self, name: &str) -> Result<f64> {
        self.reals
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing real `{name}`")))
    }

    fn flag_list(&self, name: &str) -> Result<&[bool]> {
        self.flags
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| CheckpointError::Malformed(format!("missing flags `{name}`")))
    }

    fn header(cfg: &ExperimentConfig, iteration: usize) -> Self {
        Checkpoint { config_hash: cfg.hash(), config: cfg.to_toml(), iteration: iteration as u64, ..Default::default() }
    }

    fn push_network(&mut self, net: &Network) {
        for (name, t) in net.named_tensors() {
            self.tensors.push((name, t.clone()));
        }
    }

    fn push_adam(&mut self, prefix: &str, names: &[String], adam: &Adam) {
        for (name, m) in names.iter().zip(&adam.m) {
            self.tensors.push((format!("{prefix}.m.{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(&adam.v) {
            self.tensors.push((format!("{prefix}.v.{name}"), v.clone()));
        }
        self.integers.push((format!("{prefix}.t"), adam.t));
    }

    fn read_adam(&self, prefix: &str, names: &[String], adam: &mut Adam) -> Result<()> {
        for (i, name) in names.iter().enumerate() {
            adam.m[i] = self.shaped(&format!("{prefix}.m.{name}"), adam.m[i].shape())?;
            adam.v[i] = self.shaped(&format!("{prefix}.v.{name}"), adam.v[i].shape())?;
        }
        adam.t = self.integer(&format!("{prefix}.t"))?;
        Ok(())
    }

    fn shaped(&self, name: &str, want: Shape) -> Result<Tensor> {
        let t = self.tensor(name)?;
        if t.shape() != want {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` has shape {}, expected {want}", t.shape())));
        }
        Ok(t.clone())
    }

    /// Overwrites every parameter of `net` with the stored tensors.
    pub fn restore_network(&self, net: &mut Network) -> Result<()> {
        let names: Vec<(String, Shape)> = net.named_tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        for ((name, shape), slot) in names.iter().zip(net.tensors_mut()) {
            *slot = self.shaped(name, *shape)?;
        }
        Ok(())
    }

    pub fn from_cue(cfg: &ExperimentConfig, tr: &CueTrainer) -> Self {
        let mut ck = Self::header(cfg, tr.iteration);
        ck.push_network(&tr.net);
        let names = param_names(&tr.net);
        ck.push_adam("adam", &names, &tr.adam);
        ck.reals.push(("baseline".into(), tr.baseline));
        ck.flags.push(("recent".into(), tr.recent.iter().copied().collect()));
        ck
    }

    pub fn restore_cue(&self, tr: &mut CueTrainer) -> Result<()> {
        self.restore_network(&mut tr.net)?;
        let names = param_names(&tr.net);
        self.read_adam("adam", &names, &mut tr.adam)?;
        tr.baseline = self.real("baseline")?;
        tr.recent = self.flag_list("recent")?.iter().copied().collect::<VecDeque<bool>>();
        tr.iteration = self.iteration as usize;
        Ok(())
    }

    pub fn from_ppo(cfg: &ExperimentConfig, tr: &PpoTrainer) -> Self {
        let mut ck = Self::header(cfg, tr.update);
        let l = &tr.learner;
        ck.push_network(&l.net);
        let names = param_names(&l.net);
        ck.push_adam("adam", &names, &l.adam);
        ck.tensors.push(("value.w".into(), l.value.w.clone()));
        ck.tensors.push(("value.b".into(), l.value.b.clone()));
        ck.push_adam("value_adam", &value_names(), &l.value_adam);
        ck.reals.push(("best_eval".into(), tr.best_eval));
        ck.flags.push(("reached_target".into(), vec![tr.reached_target]));
        ck
    }

    pub fn restore_ppo(&self, tr: &mut PpoTrainer) -> Result<()> {
        let l = &mut tr.learner;
        self.restore_network(&mut l.net)?;
        let names = param_names(&l.net);
        self.read_adam("adam", &names, &mut l.adam)?;
        l.value = ValueHead {
            w: self.shaped("value.w", l.value.w.shape())?,
            b: self.shaped("value.b", l.value.b.shape())?,
        };
        self.read_adam("value_adam", &value_names(), &mut l.value_adam)?;
        tr.best_eval = self.real("best_eval")?;
        tr.reached_target = self.flag_list("reached_target")?.first().copied().unwrap_or(false);
        tr.update = self.iteration as usize;
        Ok(())
    }
}

fn param_names(net: &Network) -> Vec<String> {
    net.named_tensors().into_iter().map(|(n, _)| n).collect()
}

fn value_names() -> Vec<String> {
    vec!["value.w".into(), "value.b".into()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_hash: [7; 32],
            config: "seed = 1".into(),
            iteration: 42,
            tensors: vec![
                ("s".into(), Tensor::scalar(-0.0)),
                ("v".into(), Tensor::vector(vec![1.5, f64::MIN_POSITIVE])),
                ("m".into(), Tensor::matrix(2, 1, vec![3.0, -4.25])),
            ],
            integers: vec![("t".into(), u64::MAX)],
            reals: vec![("b".into(), 0.1 + 0.2)],
            flags: vec![("r".into(), vec![true, false, true])],
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.tensors[0].1.item().to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Magic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version(9))));
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Checksum)));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 40]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }
}

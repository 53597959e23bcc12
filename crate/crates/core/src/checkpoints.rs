//! Historical parameter snapshots.
//!
//! The store keeps checkpoints in push order. `BackK(k)` resolves by push
//! position, so it survives gaps in step ids; `ById` looks up the exact id.
//! An optional auxiliary id is pinned and never evicted.
//!
//! On disk each checkpoint is one file `ckpt_<step_id>.bin`:
//!
//! ```text
//! magic    8 bytes  "MDCKPT01"
//! n_layers u32 LE
//! layers   n_layers x (in u32 LE, out u32 LE)
//! step_id  u64 LE
//! n_values u64 LE
//! values   n_values x f64 LE
//! ```

use std::collections::VecDeque;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numcore::{ModelShape, ParamState};

const MAGIC: &[u8; 8] = b"MDCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step_id: u64,
    pub params: ParamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    ById(u64),
    /// The entry `k` pushes before the newest one.
    BackK(usize),
    Auxiliary,
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::ById(id) => write!(f, "by_id({id})"),
            Selector::BackK(k) => write!(f, "back_{k}"),
            Selector::Auxiliary => write!(f, "auxiliary"),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    ordinal: usize,
    ckpt: Checkpoint,
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointStore {
    entries: VecDeque<Entry>,
    capacity: Option<usize>,
    auxiliary_id: Option<u64>,
    pushes: usize,
}

impl CheckpointStore {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("checkpoint capacity must be positive".into()));
        }
        Ok(Self {
            capacity: Some(capacity),
            ..Self::default()
        })
    }

    pub fn set_auxiliary(&mut self, id: Option<u64>) {
        self.auxiliary_id = id;
    }

    pub fn auxiliary_id(&self) -> Option<u64> {
        self.auxiliary_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.ckpt.step_id).collect()
    }

    pub fn newest(&self) -> Option<&Checkpoint> {
        self.entries.back().map(|e| &e.ckpt)
    }

    /// Appends a deep copy of `params` under `step_id`.
    pub fn record(&mut self, step_id: u64, params: &ParamState) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if step_id <= last.ckpt.step_id {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint step id {step_id} not greater than last id {}",
                    last.ckpt.step_id
                )));
            }
        }
        self.entries.push_back(Entry {
            ordinal: self.pushes,
            ckpt: Checkpoint {
                step_id,
                params: params.clone(),
            },
        });
        self.pushes += 1;
        if let Some(cap) = self.capacity {
            while self.entries.len() > cap {
                let aux = self.auxiliary_id;
                match self.entries.iter().position(|e| Some(e.ckpt.step_id) != aux) {
                    Some(i) => {
                        self.entries.remove(i);
                    }
                    None => break,
                }
            }
        }
        Ok(())
    }

    fn find(&self, sel: Selector) -> Option<&Checkpoint> {
        match sel {
            Selector::ById(id) => self
                .entries
                .iter()
                .find(|e| e.ckpt.step_id == id)
                .map(|e| &e.ckpt),
            Selector::BackK(k) => {
                let newest = self.entries.back()?.ordinal;
                let target = newest.checked_sub(k)?;
                self.entries
                    .iter()
                    .find(|e| e.ordinal == target)
                    .map(|e| &e.ckpt)
            }
            Selector::Auxiliary => self.find(Selector::ById(self.auxiliary_id?)),
        }
    }

    /// Returns an owned copy of the selected checkpoint.
    pub fn fetch(&self, sel: Selector) -> Result<Checkpoint> {
        self.find(sel)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("{sel} (store holds ids {:?})", self.ids())))
    }

    pub fn fetch_params(&self, sel: Selector) -> Result<ParamState> {
        self.fetch(sel).map(|c| c.params)
    }

    /// Writes every checkpoint into `dir` as `ckpt_<id>.bin`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for e in &self.entries {
            write_checkpoint(&checkpoint_path(dir, e.ckpt.step_id), &e.ckpt)?;
        }
        Ok(())
    }

    /// Loads every `ckpt_<id>.bin` in `dir`, ordered by id.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<(u64, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if let Some(id) = name
                .strip_prefix("ckpt_")
                .and_then(|r| r.strip_suffix(".bin"))
                .and_then(|r| r.parse::<u64>().ok())
            {
                files.push((id, path));
            }
        }
        files.sort();
        let mut store = Self::unbounded();
        for (_, path) in files {
            let c = read_checkpoint(&path)?;
            store.record(c.step_id, &c.params)?;
        }
        Ok(store)
    }
}

pub fn checkpoint_path(dir: &Path, step_id: u64) -> PathBuf {
    dir.join(format!("ckpt_{step_id}.bin"))
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let dims = c.params.shape().layer_dims();
    let mut buf = Vec::with_capacity(8 + 4 + dims.len() * 8 + 16 + c.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &(i, o) in dims {
        buf.extend_from_slice(&(i as u32).to_le_bytes());
        buf.extend_from_slice(&(o as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.step_id.to_le_bytes());
    buf.extend_from_slice(&(c.params.len() as u64).to_le_bytes());
    for v in c.params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let n_layers = cur.u32()? as usize;
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        dims.push((cur.u32()? as usize, cur.u32()? as usize));
    }
    let shape = ModelShape::new(dims)?;
    let step_id = cur.u64()?;
    let n_values = cur.u64()? as usize;
    if n_values != shape.n_params() {
        return Err(Error::Format(format!(
            "checkpoint holds {n_values} values, shape needs {}",
            shape.n_params()
        )));
    }
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
    }
    if cur.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        step_id,
        params: ParamState::new(shape, values)?,
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(c))?;
    f.sync_all()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

//! Binary checkpoint format.
//!
//! ```text
//! "AMZS"  u16 version
//! config:   in_channels u32, depth u32, base_width u32, out_channels u32, dropout_p f64
//! state:    adam_t u64, dropout cursor, shuffle cursor   (cursor = seed u64, stream u64, word_pos u128)
//! history:  count u32, then per record epoch u32 and six f64
//!           (train_loss, val_loss, train_acc, val_acc, lr, wall_time)
//! names:    count u32, then per name a u32 byte length and UTF-8 bytes
//! tensors:  count u32, then per tensor name index u32, rank u8,
//!           extents u32 x rank, payload f32 x product(extents)
//! crc32     u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Tensor names are the parameter
//! names, `<bn>.running_mean` / `<bn>.running_var`, and `adam.m.<param>` /
//! `adam.v.<param>`.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{RngCursor, Tensor};
use crate::unet::{UNetConfig, UNetModel};

use super::adam::AdamState;
use super::history::{EpochRecord, TrainHistory};

pub const MAGIC: &[u8; 4] = b"AMZS";
pub const VERSION: u16 = 1;

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: UNetModel<f32>,
    pub adam: AdamState<f32>,
    pub history: TrainHistory,
    pub dropout_rng: RngCursor,
    pub shuffle_rng: RngCursor,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit in u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn cursor(&mut self, c: RngCursor) {
        self.u64(c.seed);
        self.u64(c.stream);
        self.buf.extend_from_slice(&c.word_pos.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    fn cursor(&mut self, what: &str) -> Result<RngCursor> {
        Ok(RngCursor {
            seed: self.u64(what)?,
            stream: self.u64(what)?,
            word_pos: u128::from_le_bytes(self.array(what)?),
        })
    }
    fn fail<T>(&self, at: usize, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: at,
            reason: reason.into(),
        })
    }
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let params = self.model.params();
        let mut out: Vec<(String, &Tensor<f32>)> =
            params.iter().map(|(_, n, t)| (n.to_string(), t)).collect();
        out.extend(self.model.buffers());
        for (i, (_, name, _)) in params.iter().enumerate() {
            out.push((format!("adam.m.{name}"), &self.adam.m[i]));
            out.push((format!("adam.v.{name}"), &self.adam.v[i]));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u16(VERSION);
        let c = self.model.config();
        w.u32(c.in_channels)?;
        w.u32(c.depth)?;
        w.u32(c.base_width)?;
        w.u32(c.out_channels)?;
        w.f64(c.dropout_p);
        w.u64(self.adam.t);
        w.cursor(self.dropout_rng);
        w.cursor(self.shuffle_rng);
        w.u32(self.history.len())?;
        for r in &self.history.records {
            w.u32(r.epoch)?;
            for v in [r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.lr, r.wall_time] {
                w.f64(v);
            }
        }
        let tensors = self.tensors();
        w.u32(tensors.len())?;
        for (name, _) in &tensors {
            w.u32(name.len())?;
            w.buf.extend_from_slice(name.as_bytes());
        }
        w.u32(tensors.len())?;
        for (i, (_, t)) in tensors.iter().enumerate() {
            w.u32(i)?;
            w.u8(t.rank() as u8);
            for &e in t.shape() {
                w.u32(e)?;
            }
            for v in t.data() {
                w.buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&w.buf);
        w.buf.extend_from_slice(&crc.to_le_bytes());
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return r.fail(0, "bad magic, expected \"AMZS\"");
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return r.fail(4, format!("unsupported version {version}"));
        }
        if bytes.len() < r.pos + 4 {
            return r.fail(bytes.len(), "truncated: no checksum");
        }
        let body = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body]) != stored {
            return r.fail(body, "checksum mismatch");
        }
        let mut r = Reader {
            buf: &bytes[..body],
            pos: r.pos,
        };

        let at = r.pos;
        let config = UNetConfig {
            in_channels: r.u32("config")?,
            depth: r.u32("config")?,
            base_width: r.u32("config")?,
            out_channels: r.u32("config")?,
            dropout_p: r.f64("config")?,
        };
        let mut model = UNetModel::<f32>::uninitialized(config).or_else(|e| r.fail(at, e.to_string()))?;
        let adam_t = r.u64("optimizer step")?;
        let dropout_rng = r.cursor("dropout cursor")?;
        let shuffle_rng = r.cursor("shuffle cursor")?;

        let mut history = TrainHistory::default();
        for _ in 0..r.u32("history length")? {
            let at = r.pos;
            let epoch = r.u32("history")?;
            let mut v = [0.0; 6];
            for slot in &mut v {
                *slot = r.f64("history")?;
            }
            let record = EpochRecord {
                epoch,
                train_loss: v[0],
                val_loss: v[1],
                train_acc: v[2],
                val_acc: v[3],
                lr: v[4],
                wall_time: v[5],
            };
            history.push(record).or_else(|e| r.fail(at, e.to_string()))?;
        }

        let mut names = Vec::new();
        for _ in 0..r.u32("name count")? {
            let at = r.pos;
            let len = r.u32("name length")?;
            let raw = r.take(len, "name")?;
            match std::str::from_utf8(raw) {
                Ok(s) => names.push(s.to_string()),
                Err(_) => return r.fail(at, "name is not valid UTF-8"),
            }
        }
        let mut tensors: HashMap<String, Tensor<f32>> = HashMap::new();
        for _ in 0..r.u32("tensor count")? {
            let at = r.pos;
            let index = r.u32("tensor name index")?;
            let Some(name) = names.get(index) else {
                return r.fail(at, format!("name index {index} out of range"));
            };
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")?);
            }
            let count = crate::tensor::validate_shape(&shape).or_else(|e| r.fail(at, e.to_string()))?;
            let raw = r.take(count.saturating_mul(4), "tensor payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
                return r.fail(at, format!("duplicate tensor {name}"));
            }
        }
        if r.pos != r.buf.len() {
            return r.fail(r.pos, "trailing bytes before checksum");
        }

        let end = r.pos;
        let mut take = |name: &str| -> Result<Tensor<f32>> {
            tensors
                .remove(name)
                .ok_or_else(|| Error::Format {
                    offset: end,
                    reason: format!("missing tensor {name}"),
                })
        };
        let param_names: Vec<(crate::tensor::ParamId, String)> =
            model.params().iter().map(|(id, n, _)| (id, n.to_string())).collect();
        let mut adam = AdamState::new(model.params())?;
        adam.t = adam_t;
        let wrap = |e: Error| Error::Format {
            offset: end,
            reason: e.to_string(),
        };
        for (i, (id, name)) in param_names.iter().enumerate() {
            model.params_mut().set_value(*id, take(name)?).map_err(wrap)?;
            for (slot, prefix) in [(&mut adam.m[i], "adam.m."), (&mut adam.v[i], "adam.v.")] {
                let t = take(&format!("{prefix}{name}"))?;
                if t.shape() != slot.shape() {
                    return Err(wrap(Error::shape(format!("{prefix}{name} has shape {:?}", t.shape()))));
                }
                *slot = t;
            }
        }
        let buffer_names: Vec<String> = model.buffers().into_iter().map(|(n, _)| n).collect();
        for name in buffer_names {
            let t = take(&name)?;
            model.set_buffer(&name, t).map_err(wrap)?;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(wrap(Error::contract(format!("unexpected tensor {extra}"))));
        }
        Ok(Self {
            model,
            adam,
            history,
            dropout_rng,
            shuffle_rng,
        })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

//! Single-file little-endian named-tensor container.
//!
//! Layout: `b"PHYSIOME1"`, `u32` version, `u32` modality count, `u32` sample
//! count, then tensor records until end of file. A record is a `u32` name
//! length, the UTF-8 name, a `u8` dtype code, a `u8` rank, `rank` x `u64`
//! dims and the raw payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::types::{ModalityBatch, SignalWindow};

pub const MAGIC: &[u8; 9] = b"PHYSIOME1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::I64(_) => 1,
            TensorData::U8(_) => 2,
            TensorData::F64(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let t = Self { name: name.into(), shape, data };
        let n: usize = t.shape.iter().product();
        if n != t.data.len() {
            return Err(Error::Shape(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.data.len())));
        }
        Ok(t)
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            _ => Err(Error::Corrupt(format!("tensor {} is not f64", self.name))),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Ok(v),
            _ => Err(Error::Corrupt(format!("tensor {} is not i64", self.name))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            _ => Err(Error::Corrupt(format!("tensor {} is not u8", self.name))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub n_modalities: u32,
    pub n_samples: u32,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))
    }

    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.n_modalities.to_le_bytes());
        out.extend_from_slice(&self.n_samples.to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.code());
            out.push(t.shape.len() as u8);
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            t.data.write_payload(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::NotContainer);
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let n_modalities = r.u32()?;
        let n_samples = r.u32()?;
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
            let code = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Corrupt(format!("tensor {name} shape overflows")))?;
            let data = match code {
                0 => TensorData::F32(r.chunks::<4>(n)?.map(f32::from_le_bytes).collect()),
                1 => TensorData::I64(r.chunks::<8>(n)?.map(i64::from_le_bytes).collect()),
                2 => TensorData::U8(r.take(n)?.to_vec()),
                3 => TensorData::F64(r.chunks::<8>(n)?.map(f64::from_le_bytes).collect()),
                c => return Err(Error::Corrupt(format!("tensor {name} has unknown dtype code {c}"))),
            };
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { n_modalities, n_samples, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn chunks<const W: usize>(&mut self, n: usize) -> Result<impl Iterator<Item = [u8; W]> + 'a> {
        let len = n.checked_mul(W).ok_or_else(|| Error::Corrupt("payload size overflows".into()))?;
        Ok(self.take(len)?.chunks_exact(W).map(|c| c.try_into().expect("exact chunk")))
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
}

pub fn write_container(path: impl AsRef<Path>, c: &Container) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&c.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    Container::from_bytes(&fs::read(path)?)
}

/// Packs a dataset as named tensors: `labels` (i64, -1 for none),
/// `availability` (u8 `[n, M]`), `subjects/lengths` + `subjects/utf8`, and
/// per modality `modality/<m>/sample_rate_hz` and `modality/<m>/samples`
/// (f64 `[n, L]`, zero-filled where unavailable).
pub fn dataset_to_container(ds: &ModalityBatch) -> Container {
    let n = ds.len();
    let m_count = ds.n_modalities();
    let mut c = Container { n_modalities: m_count as u32, n_samples: n as u32, tensors: Vec::new() };
    let labels = ds.labels().iter().map(|l| l.map_or(-1, |v| v as i64)).collect();
    c.push(NamedTensor { name: "labels".into(), shape: vec![n], data: TensorData::I64(labels) });
    let avail = ds.availability().into_iter().flatten().map(u8::from).collect();
    c.push(NamedTensor { name: "availability".into(), shape: vec![n, m_count], data: TensorData::U8(avail) });
    let subjects: Vec<&str> = (0..n).map(|i| ds.subject(i)).collect();
    let lengths = subjects.iter().map(|s| s.len() as i64).collect();
    let utf8: Vec<u8> = subjects.concat().into_bytes();
    c.push(NamedTensor { name: "subjects/lengths".into(), shape: vec![n], data: TensorData::I64(lengths) });
    c.push(NamedTensor { name: "subjects/utf8".into(), shape: vec![utf8.len()], data: TensorData::U8(utf8) });
    for m in 0..m_count {
        let (len, rate) = ds.column_shape(m).unwrap_or((0, 0.0));
        let mut samples = vec![0.0; n * len];
        for i in 0..n {
            if let Some(w) = ds.window(i, m) {
                samples[i * len..(i + 1) * len].copy_from_slice(&w.samples);
            }
        }
        c.push(NamedTensor {
            name: format!("modality/{m}/sample_rate_hz"),
            shape: vec![1],
            data: TensorData::F64(vec![rate]),
        });
        c.push(NamedTensor { name: format!("modality/{m}/samples"), shape: vec![n, len], data: TensorData::F64(samples) });
    }
    c
}

pub fn dataset_from_container(c: &Container) -> Result<ModalityBatch> {
    let n = c.n_samples as usize;
    let m_count = c.n_modalities as usize;
    let expect = |t: &NamedTensor, shape: &[usize]| -> Result<()> {
        if t.shape != shape {
            return Err(Error::Corrupt(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.shape, shape)));
        }
        Ok(())
    };
    let labels_t = c.get("labels")?;
    expect(labels_t, &[n])?;
    let labels: Vec<Option<usize>> = labels_t.as_i64()?.iter().map(|&l| (l >= 0).then_some(l as usize)).collect();
    let avail_t = c.get("availability")?;
    expect(avail_t, &[n, m_count])?;
    let avail = avail_t.as_u8()?;
    let lengths_t = c.get("subjects/lengths")?;
    expect(lengths_t, &[n])?;
    let utf8 = c.get("subjects/utf8")?.as_u8()?;
    let mut subjects = Vec::with_capacity(n);
    let mut pos = 0usize;
    for &l in lengths_t.as_i64()? {
        let end = pos + l.max(0) as usize;
        let s = utf8.get(pos..end).ok_or_else(|| Error::Corrupt("subject table truncated".into()))?;
        subjects.push(String::from_utf8(s.to_vec()).map_err(|_| Error::Corrupt("subject id is not UTF-8".into()))?);
        pos = end;
    }
    let mut windows: Vec<Vec<Option<SignalWindow>>> = vec![vec![None; m_count]; n];
    for m in 0..m_count {
        let rate = c.get(&format!("modality/{m}/sample_rate_hz"))?.as_f64()?[0];
        let samples_t = c.get(&format!("modality/{m}/samples"))?;
        if samples_t.shape.len() != 2 || samples_t.shape[0] != n {
            return Err(Error::Corrupt(format!("modality {m} samples have shape {:?}", samples_t.shape)));
        }
        let len = samples_t.shape[1];
        let data = samples_t.as_f64()?;
        for i in 0..n {
            if avail[i * m_count + m] != 0 {
                windows[i][m] = Some(SignalWindow {
                    samples: data[i * len..(i + 1) * len].to_vec(),
                    sample_rate_hz: rate,
                    modality_id: m,
                    subject_id: subjects[i].clone(),
                    label: labels[i],
                });
            }
        }
    }
    ModalityBatch::new(m_count, windows, labels)
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &ModalityBatch) -> Result<()> {
    write_container(path, &dataset_to_container(ds))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<ModalityBatch> {
    dataset_from_container(&read_container(path)?)
}

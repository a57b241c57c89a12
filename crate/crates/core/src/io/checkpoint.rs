//! Single-file checkpoint: `GSVT` magic, version, a UTF-8 manifest and a
//! little-endian `f32` payload with every tensor 64-byte aligned.

use std::fmt::Write as _;
use std::path::Path;

use gsvit_tensor::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Module, Role};

pub const MAGIC: &[u8; 4] = b"GSVT";
pub const VERSION: u32 = 1;
const ALIGN: usize = 64;
const HEADER: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f32>,
    pub tunable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
    /// Config snapshot in the config text format.
    pub config: String,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".into()
    } else {
        shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok().filter(|&d: &usize| d > 0)).collect()
}

fn tensor_crc(t: &Tensor<f32>) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in t.data() {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

struct Layout {
    manifest: String,
    payload_start: usize,
    offsets: Vec<usize>,
    total: usize,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self { entries: Vec::new(), config: config.into() }
    }

    /// Appends every tensor of `m` under `prefix`. Buffers are stored as not tunable.
    pub fn add_module(&mut self, prefix: &str, m: &dyn Module<f32>) {
        m.visit(prefix, &mut |name, t, role| {
            self.entries.push(Entry {
                name: name.to_string(),
                tensor: t.clone(),
                tunable: role == Role::Param && t.requires_grad(),
            });
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Copies stored values into `m`. Every tensor of `m` must be present
    /// with a matching shape; the first mismatch is reported.
    pub fn load_module(&self, prefix: &str, m: &mut dyn Module<f32>) -> Result<()> {
        let mut err = None;
        m.visit_mut(prefix, &mut |name, t, _| {
            if err.is_some() {
                return;
            }
            match self.get(name) {
                None => err = Some(format!("tensor '{name}' missing from checkpoint")),
                Some(e) if e.tensor.shape() != t.shape() => {
                    err = Some(format!(
                        "tensor '{name}' has shape {:?} in checkpoint, model expects {:?}",
                        e.tensor.shape(),
                        t.shape()
                    ))
                }
                Some(e) => t.data_mut().copy_from_slice(e.tensor.data()),
            }
        });
        match err {
            Some(m) => Err(Error::Checkpoint(m)),
            None => Ok(()),
        }
    }

    pub fn param_counts(&self) -> (usize, usize) {
        let total = self.entries.iter().map(|e| e.tensor.numel()).sum();
        let tunable = self.entries.iter().filter(|e| e.tunable).map(|e| e.tensor.numel()).sum();
        (total, tunable)
    }

    fn layout(&self) -> Result<Layout> {
        let mut offsets = Vec::with_capacity(self.entries.len());
        let mut off = 0usize;
        for e in &self.entries {
            offsets.push(off);
            off = align(off + e.tensor.numel() * 4);
        }
        let payload_len = match (self.entries.last(), offsets.last()) {
            (Some(e), Some(&o)) => o + e.tensor.numel() * 4,
            _ => 0,
        };
        let mut m = String::new();
        writeln!(m, "tensors = {}", self.entries.len()).expect("string write");
        for (e, o) in self.entries.iter().zip(&offsets) {
            if e.name.is_empty() || e.name.chars().any(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("invalid tensor name '{}'", e.name)));
            }
            writeln!(
                m,
                "tensor {} shape={} tunable={} offset={} bytes={} crc32={:08x}",
                e.name,
                shape_text(e.tensor.shape()),
                u8::from(e.tunable),
                o,
                e.tensor.numel() * 4,
                tensor_crc(&e.tensor)
            )
            .expect("string write");
        }
        m.push_str("[config]\n");
        m.push_str(&self.config);
        if !self.config.is_empty() && !self.config.ends_with('\n') {
            m.push('\n');
        }
        m.push_str("[end]\n");
        let payload_start = if self.entries.is_empty() { HEADER + m.len() } else { align(HEADER + m.len()) };
        Ok(Layout { manifest: m, payload_start, offsets, total: payload_start + payload_len })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let l = self.layout()?;
        let mut out = Vec::with_capacity(l.total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(l.manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(l.manifest.as_bytes());
        for (e, &o) in self.entries.iter().zip(&l.offsets) {
            out.resize(l.payload_start + o, 0);
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        debug_assert_eq!(out.len(), l.total);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: String| Error::Checkpoint(m);
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(corrupt("not a GSVT checkpoint".into()));
        }
        if bytes.len() < HEADER {
            return Err(corrupt(format!("truncated header: expected {HEADER} bytes, found {}", bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let mend = HEADER.checked_add(mlen).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            corrupt(format!("truncated manifest: expected {} bytes, found {}", HEADER.saturating_add(mlen), bytes.len()))
        })?;
        let manifest = std::str::from_utf8(&bytes[HEADER..mend]).map_err(|_| corrupt("manifest is not UTF-8".into()))?;

        let mut lines = manifest.lines();
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("tensors = "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| corrupt("manifest lacks tensor count".into()))?;
        struct Record {
            name: String,
            shape: Vec<usize>,
            tunable: bool,
            offset: usize,
            bytes: usize,
            crc: u32,
        }
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let line = lines.next().ok_or_else(|| corrupt(format!("manifest lists {i} of {count} tensors")))?;
            let bad = || corrupt(format!("malformed manifest line '{line}'"));
            let mut parts = line.split(' ');
            if parts.next() != Some("tensor") {
                return Err(bad());
            }
            let name = parts.next().ok_or_else(bad)?.to_string();
            let mut field = |key: &str| -> Result<&str> { parts.next().and_then(|p| p.strip_prefix(key)).ok_or_else(bad) };
            let shape = parse_shape(field("shape=")?).ok_or_else(bad)?;
            let tunable = match field("tunable=")? {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            let offset = field("offset=")?.parse().map_err(|_| bad())?;
            let nbytes = field("bytes=")?.parse().map_err(|_| bad())?;
            let crc = u32::from_str_radix(field("crc32=")?, 16).map_err(|_| bad())?;
            records.push(Record { name, shape, tunable, offset, bytes: nbytes, crc });
        }
        if lines.next() != Some("[config]") {
            return Err(corrupt("manifest lacks [config] section".into()));
        }
        let mut config = String::new();
        let mut closed = false;
        for l in lines.by_ref() {
            if l == "[end]" {
                closed = true;
                break;
            }
            config.push_str(l);
            config.push('\n');
        }
        if !closed {
            return Err(corrupt("manifest config section is not terminated".into()));
        }

        let payload_start = if records.is_empty() { mend } else { align(mend) };
        let mut expected_off = 0usize;
        let mut prev: Option<usize> = None;
        for s in &records {
            if prev.is_some_and(|p| s.offset <= p) || s.offset != expected_off {
                return Err(corrupt(format!("tensor '{}' has offset {} (expected {expected_off})", s.name, s.offset)));
            }
            if s.bytes != s.shape.iter().product::<usize>() * 4 {
                return Err(corrupt(format!("tensor '{}' byte size {} disagrees with its shape", s.name, s.bytes)));
            }
            prev = Some(s.offset);
            expected_off = align(s.offset + s.bytes);
        }
        let expected_len = match records.last() {
            Some(s) => payload_start + s.offset + s.bytes,
            None => mend,
        };
        if bytes.len() != expected_len {
            return Err(corrupt(format!(
                "payload size mismatch: expected {expected_len} bytes in total, found {}",
                bytes.len()
            )));
        }
        let mut entries = Vec::with_capacity(records.len());
        for s in records {
            let start = payload_start + s.offset;
            let raw = &bytes[start..start + s.bytes];
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let tensor = Tensor::new(s.shape, data)?;
            if tensor_crc(&tensor) != s.crc {
                return Err(corrupt(format!("tensor '{}' is corrupted: checksum mismatch", s.name)));
            }
            entries.push(Entry { name: s.name, tensor, tunable: s.tunable });
        }
        Ok(Self { entries, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Human-readable listing of the manifest.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            writeln!(s, "{}\t{}\t{}", e.name, shape_text(e.tensor.shape()), if e.tunable { "tunable" } else { "frozen" })
                .expect("string write");
        }
        let (total, tunable) = self.param_counts();
        writeln!(s, "tensors = {}", self.entries.len()).expect("string write");
        writeln!(s, "values_total = {total}").expect("string write");
        writeln!(s, "values_tunable = {tunable}").expect("string write");
        s
    }
}

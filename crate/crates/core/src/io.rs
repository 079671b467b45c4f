//! DPND dataset and DPNW weight files: little-endian, CRC32-terminated.

use std::fs;
use std::path::Path;

use dpn_tensor::Tensor;
use thiserror::Error;

use crate::env::{Dataset, EnvKind, Episode};

pub const DATASET_MAGIC: &[u8; 4] = b"DPND";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"DPNW";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes before the first episode record.
pub const DATASET_HEADER_LEN: usize = 23;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} unexpected bytes after the last record")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    Invalid(String),
}

type FResult<T> = std::result::Result<T, FormatError>;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.0.reserve(v.len() * 4);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        self.0
    }
}

fn u16_field(v: usize, what: &str) -> FResult<u16> {
    u16::try_from(v).map_err(|_| FormatError::Invalid(format!("{what} {v} exceeds u16")))
}

fn u32_field(v: usize, what: &str) -> FResult<u32> {
    u32::try_from(v).map_err(|_| FormatError::Invalid(format!("{what} {v} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Length of the record area (the CRC trailer is excluded).
    end: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> FResult<&'a [u8]> {
        if self.end - self.pos < n {
            return Err(FormatError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> FResult<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> FResult<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &'static str) -> FResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &'static str) -> FResult<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or(FormatError::Truncated(what))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn remaining(&self) -> usize {
        self.end - self.pos
    }
}

/// Checks magic and version, and returns a reader over the record area.
fn open<'a>(buf: &'a [u8], magic: &[u8; 4]) -> FResult<Reader<'a>> {
    if buf.len() < 4 || &buf[..4] != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&buf[..buf.len().min(4)]).into_owned(),
        });
    }
    if buf.len() < 12 {
        return Err(FormatError::Truncated("header"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    Ok(Reader { buf, pos: 8, end: buf.len() - 4 })
}

fn verify_crc(buf: &[u8]) -> FResult<()> {
    let split = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[split..].try_into().unwrap());
    let computed = crc32fast::hash(&buf[..split]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(())
}

pub fn encode_dataset(ds: &Dataset) -> FResult<Vec<u8>> {
    let mut w = Writer(Vec::with_capacity(dataset_size(ds)));
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(ds.kind.code());
    for (v, what) in [
        (ds.channels, "channels"),
        (ds.height, "height"),
        (ds.width, "width"),
        (ds.action_dim, "action dim"),
        (ds.state_dim, "state dim"),
    ] {
        w.u16(u16_field(v, what)?);
    }
    w.u32(u32_field(ds.episodes.len(), "episode count")?);
    for (i, ep) in ds.episodes.iter().enumerate() {
        let l = ep.actions.len() / ds.action_dim.max(1);
        if ep.actions.len() != l * ds.action_dim
            || ep.observations.len() != (l + 1) * ds.obs_len()
            || ep.states.len() != (l + 1) * ds.state_dim
        {
            return Err(FormatError::Invalid(format!("episode {i} violates observation count = action count + 1")));
        }
        w.u32(u32_field(l, "episode length")?);
        w.f32s(&ep.observations);
        w.f32s(&ep.actions);
        w.f32s(&ep.states);
    }
    Ok(w.finish())
}

/// Exact encoded size: header, per-episode length word and payload, CRC.
pub fn dataset_size(ds: &Dataset) -> usize {
    let per: usize = ds
        .episodes
        .iter()
        .map(|ep| 4 + 4 * (ep.observations.len() + ep.actions.len() + ep.states.len()))
        .sum();
    DATASET_HEADER_LEN + per + 4
}

pub fn decode_dataset(buf: &[u8]) -> FResult<Dataset> {
    let mut r = open(buf, DATASET_MAGIC)?;
    let code = r.u8("env kind")?;
    let kind = EnvKind::from_code(code).ok_or_else(|| FormatError::Invalid(format!("env kind {code}")))?;
    let channels = r.u16("channels")? as usize;
    let height = r.u16("height")? as usize;
    let width = r.u16("width")? as usize;
    let action_dim = r.u16("action dim")? as usize;
    let state_dim = r.u16("state dim")? as usize;
    let count = r.u32("episode count")? as usize;
    let obs_len = channels * height * width;
    let mut episodes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let l = r.u32("episode length")? as usize;
        let observations = r.f32s((l + 1) * obs_len, "observations")?;
        let actions = r.f32s(l * action_dim, "actions")?;
        let states = r.f32s((l + 1) * state_dim, "states")?;
        episodes.push(Episode { observations, actions, states });
    }
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    verify_crc(buf)?;
    Ok(Dataset {
        kind,
        channels,
        height,
        width,
        action_dim,
        state_dim,
        episodes,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> crate::Result<()> {
    let bytes = encode_dataset(ds)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> crate::Result<Dataset> {
    let bytes = fs::read(path)?;
    Ok(decode_dataset(&bytes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Dpn,
    Vae,
    Inverse,
    Upn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Dpn, ModelKind::Vae, ModelKind::Inverse, ModelKind::Upn];

    pub fn code(self) -> u8 {
        match self {
            ModelKind::Dpn => 0,
            ModelKind::Vae => 1,
            ModelKind::Inverse => 2,
            ModelKind::Upn => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dpn => "dpn",
            ModelKind::Vae => "vae",
            ModelKind::Inverse => "inverse",
            ModelKind::Upn => "upn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected dpn, vae, inverse or upn)"))
    }
}

/// Decoded DPNW contents. Parameters are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub kind: ModelKind,
    pub config_json: String,
    pub blocks: Vec<(String, Tensor)>,
}

pub fn encode_weights(file: &WeightsFile) -> FResult<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(WEIGHTS_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(file.kind.code());
    w.u32(u32_field(file.config_json.len(), "config length")?);
    w.0.extend_from_slice(file.config_json.as_bytes());
    for (name, t) in &file.blocks {
        w.u32(u32_field(name.len(), "name length")?);
        w.0.extend_from_slice(name.as_bytes());
        w.u32(u32_field(t.shape().len(), "rank")?);
        for &d in t.shape() {
            w.u32(u32_field(d, "dimension")?);
        }
        let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        w.f32s(&data);
    }
    Ok(w.finish())
}

pub fn decode_weights(buf: &[u8]) -> FResult<WeightsFile> {
    let mut r = open(buf, WEIGHTS_MAGIC)?;
    let code = r.u8("model kind")?;
    let kind = ModelKind::from_code(code).ok_or_else(|| FormatError::Invalid(format!("model kind {code}")))?;
    let len = r.u32("config length")? as usize;
    let config_json = String::from_utf8(r.take(len, "config")?.to_vec())
        .map_err(|_| FormatError::Invalid("config is not UTF-8".into()))?;
    let mut blocks = Vec::new();
    while r.remaining() > 0 {
        let n = r.u32("block name length")? as usize;
        let name = String::from_utf8(r.take(n, "block name")?.to_vec())
            .map_err(|_| FormatError::Invalid("block name is not UTF-8".into()))?;
        let rank = r.u32("block rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("block shape")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(FormatError::Truncated("block data"))?;
        let data = r.f32s(numel, "block data")?.into_iter().map(f64::from).collect();
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
        blocks.push((name, t));
    }
    verify_crc(buf)?;
    Ok(WeightsFile { kind, config_json, blocks })
}

pub fn save_weights(file: &WeightsFile, path: &Path) -> crate::Result<()> {
    let bytes = encode_weights(file)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> crate::Result<WeightsFile> {
    let bytes = fs::read(path)?;
    Ok(decode_weights(&bytes)?)
}

//! Binary model checkpoints with bit-exact round trips.
//!
//! Layout, little-endian throughout:
//! ```text
//! magic "HNR1" | version u32 | fingerprint u64
//! config: 9 x u32 architecture fields | feat_dim u32 | bits_per_symbol u32
//! param count u32
//! per param: name_len u32 | name utf8 | ndim u32 | dims u64 x ndim | f64 data
//! optimizer flag u8 (0 = absent):
//!   step u64 | tensor count u32 | per tensor: len u64 | m f64s | v f64s
//! ```
//! The fingerprint hashes the model architecture, grid geometry,
//! constellation, receive antenna count and code identity; loading for
//! inference verifies it against the active config.

use std::fmt;
use std::io::Read;

use super::{CodeRef, ExperimentConfig};
use crate::diffcore::Array;
use crate::hnr::{HnrConfig, Model};

const MAGIC: &[u8; 4] = b"HNR1";
const VERSION: u32 = 1;

/// Serialized optimizer state (step count plus first/second moments).
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug)]
pub enum CheckpointError {
    BadMagic,
    VersionMismatch { found: u32 },
    Truncated,
    FingerprintMismatch { expected: u64, found: u64 },
    Corrupt(String),
    Io(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::VersionMismatch { found } => {
                write!(f, "checkpoint version {found}, expected {VERSION}")
            }
            CheckpointError::Truncated => write!(f, "checkpoint file is truncated"),
            CheckpointError::FingerprintMismatch { expected, found } => write!(
                f,
                "checkpoint fingerprint {found:#018x} does not match the active config {expected:#018x}"
            ),
            CheckpointError::Corrupt(s) => write!(f, "corrupt checkpoint: {s}"),
            CheckpointError::Io(s) => write!(f, "io error: {s}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fingerprint of everything a checkpoint must agree with to be usable.
pub fn compute_fingerprint(cfg: &ExperimentConfig, hnr: &HnrConfig) -> u64 {
    let code_id = match &cfg.code {
        CodeRef::None => "none".to_string(),
        CodeRef::Regular { n, dv, dc, seed } => format!("regular:{n}:{dv}:{dc}:{seed}"),
        CodeRef::Alist(path) => {
            let text = std::fs::read_to_string(path).unwrap_or_default();
            format!("alist:{:#018x}", fnv1a64(text.as_bytes()))
        }
    };
    let canon = format!(
        "v{VERSION};hnr:{},{},{},{},{},{},{},{},{};grid:{},{},{},{},{:?},{};mod:{};rx:{};code:{}",
        hnr.num_blocks,
        hnr.num_heads,
        hnr.embed_dim,
        hnr.ffn_dim,
        hnr.gnn_embed_dim,
        hnr.gnn_msg_dim,
        hnr.gnn_hidden,
        hnr.cn_mlp_layers,
        hnr.mp_iters,
        cfg.grid.fft_size,
        cfg.grid.guards[0],
        cfg.grid.guards[1],
        cfg.grid.num_symbols,
        cfg.grid.pilot_symbol_indices,
        cfg.grid.dc_null,
        cfg.modulation,
        cfg.chan.num_rx,
        code_id,
    );
    fnv1a64(canon.as_bytes())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serialize a model (and optionally optimizer state) to bytes.
pub fn checkpoint_bytes(model: &Model, fingerprint: u64, opt: Option<&OptState>) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(fingerprint);
    for v in [
        model.config.num_blocks,
        model.config.num_heads,
        model.config.embed_dim,
        model.config.ffn_dim,
        model.config.gnn_embed_dim,
        model.config.gnn_msg_dim,
        model.config.gnn_hidden,
        model.config.cn_mlp_layers,
        model.config.mp_iters,
        model.feat_dim,
        model.bits_per_symbol,
    ] {
        w.u32(v as u32);
    }

    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit(|name, arr| {
        entries.push((name.to_string(), arr.shape.clone(), arr.data.clone()));
    });
    w.u32(entries.len() as u32);
    for (name, shape, data) in &entries {
        w.u32(name.len() as u32);
        w.buf.extend_from_slice(name.as_bytes());
        w.u32(shape.len() as u32);
        for &d in shape {
            w.u64(d as u64);
        }
        w.f64s(data);
    }

    match opt {
        None => w.buf.push(0),
        Some(state) => {
            w.buf.push(1);
            w.u64(state.step);
            w.u32(state.moments.len() as u32);
            for (m, v) in &state.moments {
                w.u64(m.len() as u64);
                w.f64s(m);
                w.f64s(v);
            }
        }
    }
    w.buf
}

/// Write a checkpoint file.
pub fn save_checkpoint(
    path: &str,
    model: &Model,
    fingerprint: u64,
    opt: Option<&OptState>,
) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_bytes(model, fingerprint, opt))
        .map_err(|e| CheckpointError::Io(format!("{path}: {e}")))
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parse checkpoint bytes back into a model. The caller decides whether to
/// verify the returned fingerprint.
pub fn checkpoint_from_bytes(
    bytes: &[u8],
) -> Result<(Model, u64, Option<OptState>), CheckpointError> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let fingerprint = r.u64()?;
    let mut fields = [0usize; 11];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let config = HnrConfig {
        num_blocks: fields[0],
        num_heads: fields[1],
        embed_dim: fields[2],
        ffn_dim: fields[3],
        gnn_embed_dim: fields[4],
        gnn_msg_dim: fields[5],
        gnn_hidden: fields[6],
        cn_mlp_layers: fields[7],
        mp_iters: fields[8],
    };
    let feat_dim = fields[9];
    let bits_per_symbol = fields[10];

    let count = r.u32()? as usize;
    let mut entries = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("non-utf8 parameter name".into()))?;
        let ndim = r.u32()? as usize;
        if ndim > 2 {
            return Err(CheckpointError::Corrupt(format!("{name}: {ndim}-d parameter")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let data = r.f64s(len)?;
        entries.insert(
            name.clone(),
            Array::new(shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?,
        );
    }

    // build a model skeleton, then fill every parameter by name
    let mut model = Model::init(&config, feat_dim, bits_per_symbol, 0)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut missing = Vec::new();
    model.visit_mut(|name, arr| match entries.remove(name) {
        Some(loaded) if loaded.shape == arr.shape => *arr = loaded,
        Some(loaded) => missing.push(format!(
            "{name}: shape {:?} vs expected {:?}",
            loaded.shape, arr.shape
        )),
        None => missing.push(format!("{name}: missing")),
    });
    if !missing.is_empty() {
        return Err(CheckpointError::Corrupt(missing.join("; ")));
    }
    if !entries.is_empty() {
        let extra: Vec<String> = entries.keys().cloned().collect();
        return Err(CheckpointError::Corrupt(format!("unknown parameters: {extra:?}")));
    }

    let flag = r.take(1)?[0];
    let opt = match flag {
        0 => None,
        1 => {
            let step = r.u64()?;
            let tensors = r.u32()? as usize;
            let mut moments = Vec::with_capacity(tensors);
            for _ in 0..tensors {
                let len = r.u64()? as usize;
                let m = r.f64s(len)?;
                let v = r.f64s(len)?;
                moments.push((m, v));
            }
            Some(OptState { step, moments })
        }
        other => return Err(CheckpointError::Corrupt(format!("bad optimizer flag {other}"))),
    };
    if r.at != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    Ok((model, fingerprint, opt))
}

/// Load a checkpoint file without fingerprint verification.
pub fn load_checkpoint(path: &str) -> Result<(Model, u64, Option<OptState>), CheckpointError> {
    let mut file =
        std::fs::File::open(path).map_err(|e| CheckpointError::Io(format!("{path}: {e}")))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| CheckpointError::Io(format!("{path}: {e}")))?;
    checkpoint_from_bytes(&bytes)
}

/// Load and verify against the active config for inference use.
pub fn load_for_inference(
    path: &str,
    cfg: &ExperimentConfig,
) -> Result<Model, CheckpointError> {
    let (model, found, _) = load_checkpoint(path)?;
    let expected = compute_fingerprint(cfg, &model.config);
    if expected != found {
        return Err(CheckpointError::FingerprintMismatch { expected, found });
    }
    Ok(model)
}

//! Checkpoint files.
//!
//! Layout: `"VFSC"`, `u8` version, `u64` metadata length, UTF-8 JSON
//! metadata, `u32` entry count, then per entry a `u16` name length, the
//! name, and one tensor in the VFST encoding. All integers little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vfs_tensor::io::{decode_from, encode, Cursor};
use vfs_tensor::{AnyTensor, Tensor, TensorError};

use crate::error::{Error, Result};
use crate::model::encoder::{HeadSpec, ModelConfig};
use crate::model::params::NamedTensors;
use crate::model::state::SiameseState;
use crate::objectives::{NegativeBank, Regime};
use crate::rng::RngState;

pub const MAGIC: &[u8; 4] = b"VFSC";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BankMeta {
    capacity: usize,
    dim: usize,
    len: usize,
    cursor: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    step: u64,
    regime: Regime,
    heads: HeadSpec,
    model: ModelConfig,
    rng: RngState,
    bank: Option<BankMeta>,
}

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Tensor(TensorError::Format {
        offset,
        msg: msg.into(),
    })
}

pub fn encode_checkpoint(state: &SiameseState) -> Result<Vec<u8>> {
    let meta = Meta {
        step: state.step,
        regime: state.regime,
        heads: state.heads,
        model: state.model.clone(),
        rng: RngState::capture(&state.rng),
        bank: state.bank.as_ref().map(|b| BankMeta {
            capacity: b.capacity(),
            dim: b.dim(),
            len: b.len(),
            cursor: b.cursor(),
        }),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut entries: Vec<(String, &Tensor<f32>)> = Vec::new();
    let groups: [(&str, Option<&NamedTensors<f32>>); 4] = [
        ("param", Some(&state.params)),
        ("buffer", Some(&state.buffers)),
        ("velocity", Some(&state.velocity)),
        ("target", state.target.as_ref()),
    ];
    for (prefix, set) in groups {
        if let Some(set) = set {
            entries.extend(set.iter().map(|(n, t)| (format!("{}/{}", prefix, n), t)));
        }
    }
    let bank_tensor = state.bank.as_ref().map(|b| {
        Tensor::new(vec![b.capacity(), b.dim()], b.raw_entries().to_vec()).expect("bank shape")
    });
    if let Some(t) = &bank_tensor {
        entries.push(("bank/entries".into(), t));
    }

    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.extend_from_slice(&encode(t)?);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SiameseState> {
    let mut cur = Cursor::new(bytes, 0);
    if cur.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic, expected VFSC"));
    }
    let version = cur.u8("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported checkpoint version {}", version)));
    }
    let len = cur.u64("metadata length")? as usize;
    let at = cur.offset();
    let meta: Meta = serde_json::from_slice(cur.take(len, "metadata")?)
        .map_err(|e| format_err(at, format!("metadata: {}", e)))?;
    let count = cur.u32("entry count")?;

    let mut params = NamedTensors::new();
    let mut buffers = NamedTensors::new();
    let mut velocity = NamedTensors::new();
    let mut target = NamedTensors::new();
    let mut bank_entries = None;
    for _ in 0..count {
        let at = cur.offset();
        let nlen = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(nlen, "name")?)
            .map_err(|_| format_err(at, "entry name is not UTF-8"))?
            .to_string();
        let at = cur.offset();
        let t = match decode_from(&mut cur)? {
            AnyTensor::F32(t) => t,
            other => return Err(format_err(at, format!("{} has dtype {:?}", name, other.dtype()))),
        };
        let (prefix, rest) = name
            .split_once('/')
            .ok_or_else(|| format_err(at, format!("entry name {} has no group", name)))?;
        match prefix {
            "param" => params.insert(rest, t),
            "buffer" => buffers.insert(rest, t),
            "velocity" => velocity.insert(rest, t),
            "target" => target.insert(rest, t),
            "bank" => bank_entries = Some(t),
            _ => return Err(format_err(at, format!("unknown entry group {}", prefix))),
        }
    }
    if cur.remaining() != 0 {
        return Err(format_err(cur.offset(), "trailing bytes after last entry"));
    }
    if !params.congruent(&velocity) {
        return Err(format_err(0, "velocity does not match parameters"));
    }
    let bank = match (meta.bank, bank_entries) {
        (Some(m), Some(t)) => Some(NegativeBank::from_parts(m.capacity, m.dim, t.into_data(), m.len, m.cursor)?),
        (None, None) => None,
        _ => return Err(format_err(0, "bank metadata and bank entries disagree")),
    };
    let target = match meta.regime {
        Regime::WithNeg if params.congruent(&target) => Some(target),
        Regime::WithNeg => return Err(format_err(0, "target parameters missing or mismatched")),
        Regime::WithoutNeg => None,
    };
    let rng = meta
        .rng
        .restore()
        .ok_or_else(|| format_err(0, "unreadable rng state"))?;
    Ok(SiameseState {
        model: meta.model,
        heads: meta.heads,
        regime: meta.regime,
        params,
        buffers,
        target,
        bank,
        velocity,
        step: meta.step,
        rng,
    })
}

pub fn save_checkpoint(state: &SiameseState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(state)?;
    // Write-then-rename keeps the previous checkpoint intact on failure.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SiameseState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

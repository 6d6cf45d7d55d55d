//! Binary checkpoint layout:
//!
//! ```text
//! "TLKL" | u32 LE version | u64 LE header length | JSON header | payloads
//! ```
//!
//! Payloads are the tensors listed in the header, in order, each as
//! `rows·cols` little-endian `f64` with a CRC-32 recorded in the header.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{
    AdapterConfig, AdapterMethod, AdapterStack, FrozenLinear, FrozenModel, ParamHandle, ParamRole,
    ProjectionTag, SiteSpec,
};
use crate::error::{CheckpointError, Error, Result};
use crate::linalg::{Matrix, RNG_ALGORITHM};

use super::config::RunConfig;

pub const MAGIC: &[u8; 4] = b"TLKL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub layer: usize,
    pub tag: ProjectionTag,
    /// Store entry the site's `B` resolves to; `None` when it owns its `B`.
    pub shared: Option<ProjectionTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub rng_algorithm: String,
    pub method: AdapterMethod,
    pub adapter: AdapterConfig,
    pub sites: Vec<SiteSpec>,
    pub aliases: Vec<AliasEntry>,
    pub frozen_tag: Option<ProjectionTag>,
    pub run_config: Option<RunConfig>,
    pub tensors: Vec<TensorRecord>,
}

/// Everything a run leaves behind: the adapters, the frozen model and the
/// config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stack: AdapterStack,
    pub frozen: Option<FrozenModel>,
    pub run_config: Option<RunConfig>,
}

fn frozen_name(l: usize) -> String {
    format!("frozen.layer{l}.W0")
}

/// Adapter tensors to store: the trainable set plus `C` of TalkLoRA sites
/// whose talking module is disabled (kept so a roundtrip is lossless).
fn stored_handles(stack: &AdapterStack) -> Vec<ParamHandle> {
    let mut hs = stack.param_handles();
    for s in stack.sites() {
        let c = ParamHandle::site(s.layer, s.tag, ParamRole::C);
        if s.talklora().is_some() && !hs.contains(&c) {
            hs.push(c);
        }
    }
    hs
}

fn alias_entries(stack: &AdapterStack) -> Vec<AliasEntry> {
    stack
        .alias_table()
        .into_iter()
        .map(|(layer, tag, shared)| AliasEntry { layer, tag, shared })
        .collect()
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let stack = &ckpt.stack;
    let mut tensors: Vec<(String, &Matrix)> = stored_handles(stack)
        .into_iter()
        .map(|h| (h.to_string(), stack.param(&h).expect("handle from stack")))
        .collect();
    if let Some(f) = &ckpt.frozen {
        for (l, layer) in f.layers().iter().enumerate() {
            tensors.push((frozen_name(l), layer.w0()));
        }
    }
    let mut payload = Vec::new();
    let mut records = Vec::with_capacity(tensors.len());
    for (name, m) in &tensors {
        let start = payload.len();
        for v in m.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        records.push(TensorRecord {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            crc32: crc32fast::hash(&payload[start..]),
        });
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        rng_algorithm: RNG_ALGORITHM.into(),
        method: stack.method(),
        adapter: stack.config().clone(),
        sites: stack.site_specs(),
        aliases: alias_entries(stack),
        frozen_tag: ckpt.frozen.as_ref().map(FrozenModel::tag),
        run_config: ckpt.run_config.clone(),
        tensors: records,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and validates magic, version and header; returns the header and
/// the payload bytes.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated("preamble".into()).into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Truncated("header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != version {
        return Err(CheckpointError::Header("header version disagrees with preamble".into()).into());
    }
    Ok((header, &bytes[end..]))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, payload) = read_header(bytes)?;
    let bad = |msg: String| Error::from(CheckpointError::Header(msg));
    let mut stack = AdapterStack::build(header.method, &header.adapter, &header.sites, None)
        .map_err(|e| bad(e.to_string()))?;
    if alias_entries(&stack) != header.aliases {
        return Err(bad("alias table does not match the configured sharing".into()));
    }
    let mut frozen: Vec<Option<Matrix>> = Vec::new();
    let mut offset = 0usize;
    let mut seen = std::collections::BTreeSet::new();
    for rec in &header.tensors {
        let n = rec
            .rows
            .checked_mul(rec.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad(format!("tensor `{}` too large", rec.name)))?;
        let chunk = payload
            .get(offset..offset + n)
            .ok_or_else(|| CheckpointError::Truncated(rec.name.clone()))?;
        offset += n;
        if crc32fast::hash(chunk) != rec.crc32 {
            return Err(CheckpointError::ChecksumMismatch {
                handle: rec.name.clone(),
            }
            .into());
        }
        if !seen.insert(rec.name.clone()) {
            return Err(bad(format!("duplicate tensor `{}`", rec.name)));
        }
        let data: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if let Some(l) = rec
            .name
            .strip_prefix("frozen.layer")
            .and_then(|r| r.strip_suffix(".W0"))
        {
            let l: usize = l.parse().map_err(|_| bad(format!("bad tensor `{}`", rec.name)))?;
            if frozen.len() <= l {
                frozen.resize(l + 1, None);
            }
            frozen[l] = Some(Matrix::new(rec.rows, rec.cols, data).map_err(|e| bad(e.to_string()))?);
            continue;
        }
        let handle: ParamHandle = rec.name.parse().map_err(|e: Error| bad(e.to_string()))?;
        let slot = stack
            .param_mut(&handle)
            .ok_or_else(|| bad(format!("tensor `{}` not in the stack", rec.name)))?;
        if slot.shape() != (rec.rows, rec.cols) {
            return Err(bad(format!("tensor `{}` has the wrong shape", rec.name)));
        }
        slot.data_mut().copy_from_slice(&data);
    }
    if offset != payload.len() {
        return Err(bad(format!("{} trailing payload bytes", payload.len() - offset)));
    }
    let stored = stored_handles(&stack);
    if stored.iter().any(|h| !seen.contains(&h.to_string())) {
        return Err(bad("checkpoint is missing adapter tensors".into()));
    }
    let frozen = match header.frozen_tag {
        Some(tag) => {
            let layers = frozen
                .into_iter()
                .enumerate()
                .map(|(l, m)| {
                    m.map(FrozenLinear::new)
                        .ok_or_else(|| bad(format!("missing {}", frozen_name(l))))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(FrozenModel::new(tag, layers).map_err(|e| bad(e.to_string()))?)
        }
        None if frozen.is_empty() => None,
        None => return Err(bad("frozen tensors without a frozen tag".into())),
    };
    Ok(Checkpoint {
        stack,
        frozen,
        run_config: header.run_config,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Every stored tensor of `a` equals the one in `b` bit for bit.
pub fn bit_identical(a: &Checkpoint, b: &Checkpoint) -> bool {
    let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let ha = stored_handles(&a.stack);
    if ha != stored_handles(&b.stack) || a.stack.alias_table() != b.stack.alias_table() {
        return false;
    }
    let adapters_equal = ha.iter().all(|h| match (a.stack.param(h), b.stack.param(h)) {
        (Some(x), Some(y)) => x.shape() == y.shape() && bits(x) == bits(y),
        _ => false,
    });
    let frozen_equal = match (&a.frozen, &b.frozen) {
        (None, None) => true,
        (Some(x), Some(y)) => {
            x.tag() == y.tag()
                && x.depth() == y.depth()
                && x.layers()
                    .iter()
                    .zip(y.layers())
                    .all(|(p, q)| p.w0().shape() == q.w0().shape() && bits(p.w0()) == bits(q.w0()))
        }
        _ => false,
    };
    adapters_equal && frozen_equal
}

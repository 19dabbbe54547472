//! Checkpoint persistence: a one-line JSON header followed by the raw
//! little-endian f32 payload in canonical layout order.
//!
//! The header carries the format version, architecture, stage, seeds,
//! parent hashes, an optional strategy/config echo, and the SHA-256 of the
//! payload; loading verifies the hash and the parameter count, so
//! round-trips are bit-exact and corruption is detected.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchDescriptor, HeadKind};
use crate::error::{Error, Result};
use crate::params::ParameterVector;
use crate::soup::SoupSpec;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    Sft,
    Rm,
    Soup,
    Rlhf,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Base => "base",
            Stage::Sft => "sft",
            Stage::Rm => "rm",
            Stage::Soup => "soup",
            Stage::Rlhf => "rlhf",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub stage: Stage,
    pub arch: ArchDescriptor,
    pub head: HeadKind,
    /// Named seeds that produced this checkpoint (init, shuffle, ...).
    pub seeds: BTreeMap<String, u64>,
    /// Payload hashes of direct parent checkpoints.
    pub parents: Vec<String>,
    /// Payload hash of the lineage root (the base checkpoint); None for
    /// stage = base itself.
    pub base_hash: Option<String>,
    /// Soup membership, for stage = soup.
    pub soup: Option<SoupSpec>,
    /// Free-form echo of the producing configuration.
    pub config_echo: Option<serde_json::Value>,
    pub param_count: usize,
    pub payload_hash: String,
}

/// In-memory checkpoint: parameters plus lineage metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterVector,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(
        params: ParameterVector,
        stage: Stage,
        seeds: BTreeMap<String, u64>,
        parents: Vec<String>,
        base_hash: Option<String>,
        soup: Option<SoupSpec>,
        config_echo: Option<serde_json::Value>,
    ) -> Self {
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_FORMAT_VERSION,
            stage,
            arch: params.arch,
            head: params.head,
            seeds,
            parents,
            base_hash,
            soup,
            config_echo,
            param_count: params.len(),
            payload_hash: params.content_hash(),
        };
        Self { params, meta }
    }

    /// Payload hash; identifies the parameter content.
    pub fn content_hash(&self) -> &str {
        &self.meta.payload_hash
    }

    /// The lineage root this checkpoint descends from: its recorded base
    /// hash, or its own payload hash when it is a base checkpoint.
    pub fn lineage_base(&self) -> String {
        match (&self.meta.base_hash, self.meta.stage) {
            (Some(h), _) => h.clone(),
            (None, Stage::Base) => self.meta.payload_hash.clone(),
            (None, _) => self.meta.payload_hash.clone(),
        }
    }
}

/// Writes header line + payload. Round-trips are bit-exact.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    debug_assert_eq!(ckpt.meta.payload_hash, ckpt.params.content_hash());
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let header = serde_json::to_string(&ckpt.meta)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(header.as_bytes())?;
    file.write_all(b"\n")?;
    file.write_all(&ckpt.params.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

fn split_header(path: &Path, bytes: &[u8]) -> Result<(CheckpointMeta, usize)> {
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        Error::CorruptCheckpoint {
            path: path.display().to_string(),
            reason: "no header line found".into(),
        }
    })?;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::CorruptCheckpoint {
            path: path.display().to_string(),
            reason: format!("unparseable header: {e}"),
        })?;
    let found = header
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptCheckpoint {
            path: path.display().to_string(),
            reason: "header missing format_version".into(),
        })?;
    if found != CHECKPOINT_FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: found as u32,
            supported: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let meta: CheckpointMeta =
        serde_json::from_value(header).map_err(|e| Error::CorruptCheckpoint {
            path: path.display().to_string(),
            reason: format!("bad header fields: {e}"),
        })?;
    Ok((meta, newline + 1))
}

/// Reads only the metadata header of a checkpoint file.
pub fn load_checkpoint_header(path: &Path) -> Result<CheckpointMeta> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut bytes = Vec::new();
    // headers are small; read up to the first newline
    let mut buf = [0u8; 4096];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        bytes.extend_from_slice(&buf[..n]);
        if bytes.contains(&b'\n') {
            break;
        }
    }
    let (meta, _) = split_header(path, &bytes)?;
    Ok(meta)
}

/// Loads and verifies a checkpoint: format version, parameter count, and
/// payload hash must all check out.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (meta, payload_start) = split_header(path, &bytes)?;
    let payload = &bytes[payload_start..];

    let params = ParameterVector::from_le_bytes(meta.arch, meta.head, payload).map_err(|e| {
        Error::CorruptCheckpoint {
            path: path.display().to_string(),
            reason: format!("payload does not match arch: {e}"),
        }
    })?;
    if params.len() != meta.param_count {
        return Err(Error::CorruptCheckpoint {
            path: path.display().to_string(),
            reason: format!(
                "param count {} does not match header {}",
                params.len(),
                meta.param_count
            ),
        });
    }
    let actual = params.content_hash();
    if actual != meta.payload_hash {
        return Err(Error::HashMismatch {
            path: path.display().to_string(),
            expected: meta.payload_hash.clone(),
            actual,
        });
    }
    Ok(Checkpoint { params, meta })
}

/// Loads a checkpoint and soft-checks that its parent hashes resolve among
/// the `.ckpt` files of `experiment_dir`; unresolved parents come back as
/// warnings rather than errors.
pub fn load_checkpoint_verified(
    path: &Path,
    experiment_dir: &Path,
) -> Result<(Checkpoint, Vec<String>)> {
    let ckpt = load_checkpoint(path)?;
    let mut known = std::collections::HashSet::new();
    let mut stack = vec![experiment_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(_) => continue,
        };
        for entry in entries.flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "ckpt") {
                if let Ok(meta) = load_checkpoint_header(&p) {
                    known.insert(meta.payload_hash);
                }
            }
        }
    }
    let warnings = ckpt
        .meta
        .parents
        .iter()
        .filter(|h| !known.contains(*h))
        .map(|h| format!("parent checkpoint {h} not found under {}", experiment_dir.display()))
        .collect();
    Ok((ckpt, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;

    fn sample_checkpoint() -> Checkpoint {
        let arch = ArchDescriptor::new(9, 3, 4, 5, 8);
        let params = init_params(arch, 42).unwrap();
        let mut seeds = BTreeMap::new();
        seeds.insert("init".to_string(), 42);
        Checkpoint::new(params, Stage::Base, seeds, vec![], None, None, None)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params.to_le_bytes(), ckpt.params.to_le_bytes());
        assert_eq!(loaded.meta, ckpt.meta);

        // saving again produces identical bytes
        let first = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn payload_corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn unknown_version_names_the_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = String::from_utf8(bytes[..newline].to_vec()).unwrap();
        let patched = header.replace("\"format_version\":1", "\"format_version\":999");
        let mut out = patched.into_bytes();
        out.push(b'\n');
        out.extend_from_slice(&bytes[newline + 1..]);
        std::fs::write(&path, out).unwrap();
        match load_checkpoint(&path) {
            Err(Error::UnsupportedVersion { found, .. }) => assert_eq!(found, 999),
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }

    #[test]
    fn lineage_warnings_for_missing_parents() {
        let dir = tempfile::tempdir().unwrap();
        let base = sample_checkpoint();
        let base_path = dir.path().join("base.ckpt");
        save_checkpoint(&base_path, &base).unwrap();

        let child = Checkpoint::new(
            base.params.jittered(0.01, 7),
            Stage::Sft,
            BTreeMap::new(),
            vec![base.content_hash().to_string()],
            Some(base.content_hash().to_string()),
            None,
            None,
        );
        let child_path = dir.path().join("sft.ckpt");
        save_checkpoint(&child_path, &child).unwrap();

        let (_, warnings) = load_checkpoint_verified(&child_path, dir.path()).unwrap();
        assert!(warnings.is_empty());

        std::fs::remove_file(&base_path).unwrap();
        let (_, warnings) = load_checkpoint_verified(&child_path, dir.path()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains(base.content_hash()));
    }

    #[test]
    fn header_only_load_matches_full_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint_header(&path).unwrap(), ckpt.meta);
    }
}

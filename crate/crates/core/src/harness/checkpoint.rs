//! Versioned, checksummed model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "NERTCKPT" | u32 format version | u64 manifest length | manifest JSON
//! | f64 payload, parameters in manifest order | SHA-256 of everything before
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParameterSet, Tensor};
use crate::bilm::BiLmConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tagger::TaggerConfig;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NERTCKPT";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Bilm,
    Tagger,
    Multitask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub id: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ModelKind,
    /// Bracket-style model name, e.g. `LM[generic-source]_Sup[target]`.
    pub name: String,
    pub id: String,
    /// Ancestor checkpoints, oldest first.
    pub lineage: Vec<LineageEntry>,
    pub source_domain: Option<String>,
    pub target_domain: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    /// Fingerprints of the corpora consumed, keyed by role.
    pub data: BTreeMap<String, String>,
    /// External resources consumed (e.g. `lm`), `none` when absent.
    pub external: BTreeMap<String, String>,
    pub bilm: Option<BiLmConfig>,
    pub tagger: Option<TaggerConfig>,
    pub vocab: Vocabulary,
    pub vocab_fingerprint: String,
    pub lm_vocab: Option<Vocabulary>,
    pub lm_vocab_fingerprint: Option<String>,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn new(kind: ModelKind, name: impl Into<String>, vocab: Vocabulary) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            kind,
            name: name.into(),
            id: String::new(),
            lineage: Vec::new(),
            source_domain: None,
            target_domain: None,
            seed: 0,
            config_hash: String::new(),
            data: BTreeMap::new(),
            external: BTreeMap::new(),
            bilm: None,
            tagger: None,
            vocab_fingerprint: vocab.fingerprint(),
            vocab,
            lm_vocab: None,
            lm_vocab_fingerprint: None,
            params: Vec::new(),
        }
    }

    pub fn set_lm_vocab(&mut self, vocab: Option<Vocabulary>) {
        self.lm_vocab_fingerprint = vocab.as_ref().map(Vocabulary::fingerprint);
        self.lm_vocab = vocab;
    }

    /// Append `parent` (and its ancestors) to the lineage.
    pub fn derive_from(&mut self, parent: &Manifest) {
        self.lineage = parent.lineage.clone();
        self.lineage.push(LineageEntry {
            id: parent.id.clone(),
            name: parent.name.clone(),
        });
    }

    pub fn validate_lineage(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.lineage {
            if e.id == self.id || !seen.insert(e.id.as_str()) {
                return Err(Error::Checkpoint(format!("cyclic lineage at {}", e.id)));
            }
        }
        Ok(())
    }
}

/// Content id: SHA-256 over the name and parameter bytes, first 16 hex digits.
pub fn content_id(name: &str, params: &ParameterSet) -> String {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(params.bytes_with_prefix(""));
    hex::encode(h.finalize())[..16].to_string()
}

/// Hex SHA-256 of a serializable value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn new(mut manifest: Manifest, params: ParameterSet) -> Self {
        manifest.params = params
            .sorted_ids()
            .map(|id| ParamEntry {
                name: params.name(id).to_string(),
                shape: params.get(id).shape().to_vec(),
                trainable: params.is_trainable(id),
            })
            .collect();
        Checkpoint { manifest, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)
            .map_err(|e| Error::Checkpoint(format!("manifest encoding: {e}")))?;
        let mut out = Vec::with_capacity(manifest.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.manifest.format_version.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for entry in &self.manifest.params {
            let t = self
                .params
                .by_name(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", entry.name)))?;
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = MAGIC.len() + 4 + 8;
        if bytes.len() < header + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file or truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let mend = header
            .checked_add(mlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Checkpoint("manifest length exceeds file".into()))?;
        let manifest: Manifest = serde_json::from_slice(&body[header..mend])
            .map_err(|e| Error::Checkpoint(format!("manifest decoding: {e}")))?;
        if manifest.format_version != version {
            return Err(Error::Checkpoint("manifest and header versions differ".into()));
        }
        if manifest.vocab.fingerprint() != manifest.vocab_fingerprint {
            return Err(Error::Checkpoint("vocabulary fingerprint mismatch".into()));
        }
        if manifest.lm_vocab.as_ref().map(Vocabulary::fingerprint) != manifest.lm_vocab_fingerprint {
            return Err(Error::Checkpoint("LM vocabulary fingerprint mismatch".into()));
        }
        manifest.validate_lineage()?;

        let mut payload = &body[mend..];
        let mut params = ParameterSet::new();
        for entry in &manifest.params {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(Error::Checkpoint(format!("payload too short for {}", entry.name)));
            }
            let (chunk, rest) = payload.split_at(n * 8);
            let data = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            params
                .add(entry.name.clone(), tensor, entry.trainable)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            payload = rest;
        }
        if !payload.is_empty() {
            return Err(Error::Checkpoint("trailing payload bytes".into()));
        }
        Ok(Checkpoint { manifest, params })
    }

    /// Fails unless the stored vocabulary matches `vocab` exactly.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.manifest.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::Checkpoint("vocabulary fingerprint mismatch".into()));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    crate::corpus::conll::write_all(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabBuilder;

    fn sample() -> Checkpoint {
        let mut b = VocabBuilder::new();
        b.add_words(&["halo", "dunia"]);
        b.add_tags(&["O", "B-LOC"]);
        let mut params = ParameterSet::new();
        params
            .add("b.weight", Tensor::new(vec![2, 2], vec![1.0, -0.5, 0.25, 1e-300]).unwrap(), true)
            .unwrap();
        params.add("a.bias", Tensor::new(vec![1], vec![3.0]).unwrap(), false).unwrap();
        let mut m = Manifest::new(ModelKind::Tagger, "Sup[x]", b.build(1));
        m.id = content_id(&m.name, &params);
        Checkpoint::new(m, params)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let c = sample();
        save_checkpoint(&p1, &c).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.manifest, c.manifest);
        assert!(!loaded.params.is_trainable(loaded.params.id("a.bias").unwrap()));
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [1, 9, bytes.len() / 2] {
            let err = Checkpoint::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)));
        }
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
    }

    #[test]
    fn version_mismatch_fails_cleanly() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let body_len = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vocab_check() {
        let c = sample();
        let v = c.manifest.vocab.clone();
        assert!(c.check_vocab(&v).is_ok());
        let mut b = VocabBuilder::new();
        b.add_words(&["lain"]);
        assert!(c.check_vocab(&b.build(1)).is_err());
    }

    #[test]
    fn cyclic_lineage_rejected() {
        let mut c = sample();
        c.manifest.lineage.push(LineageEntry {
            id: c.manifest.id.clone(),
            name: "self".into(),
        });
        assert!(c.manifest.validate_lineage().is_err());
    }
}

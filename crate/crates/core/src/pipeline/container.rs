//! Single-file pipeline container.
//!
//! Layout, all integers little-endian:
//! magic (8 bytes) | version u32 | manifest length u64 | manifest JSON |
//! parameter count u64 | parameters as f64 | SHA-256 of everything before.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BaseStage, DifficultHead, Gate, Pipeline, RetrainerRegistry};
use crate::classifiers::{ForestModel, LearnerRegistry, ProbabilityAdapter};
use crate::data::ThresholdPair;
use crate::error::{Error, Result};
use crate::store::{ParamReader, ParamWriter};

pub const CONTAINER_MAGIC: [u8; 8] = *b"HSPLPIPE";
pub const CONTAINER_VERSION: u32 = 1;

const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct BaseManifest {
    kind: String,
    adapter: ProbabilityAdapter,
    model: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum GateManifest {
    Thresholds(ThresholdPair),
    ErrorProxy { forest: serde_json::Value },
}

#[derive(Serialize, Deserialize)]
struct HeadManifest {
    kind: String,
    model: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    features: Option<Vec<usize>>,
    base: BaseManifest,
    gate: GateManifest,
    head: Option<HeadManifest>,
    metadata: serde_json::Value,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("container truncated while reading {what}")))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("{what} length {v} too large")))
    }
}

impl Pipeline {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut params = ParamWriter::new();
        let base = BaseManifest {
            kind: self.base.model.kind().to_string(),
            adapter: self.base.adapter,
            model: self.base.model.save(&mut params)?,
        };
        let gate = match &self.gate {
            Gate::Thresholds(t) => GateManifest::Thresholds(*t),
            Gate::ErrorProxy(forest) => GateManifest::ErrorProxy {
                forest: forest.save_params(&mut params)?,
            },
        };
        let head = self
            .head
            .as_ref()
            .map(|h| -> Result<HeadManifest> {
                Ok(HeadManifest {
                    kind: h.kind().to_string(),
                    model: h.save(&mut params)?,
                })
            })
            .transpose()?;
        let manifest = serde_json::to_vec(&Manifest {
            version: CONTAINER_VERSION,
            features: self.features.clone(),
            base,
            gate,
            head,
            metadata: self.metadata.clone(),
        })?;
        let params = params.into_inner();

        let mut out = Vec::with_capacity(manifest.len() + params.len() * 8 + 64);
        out.extend_from_slice(&CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in &params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], learners: &LearnerRegistry, retrainers: &RetrainerRegistry) -> Result<Self> {
        let mut cur = Cursor { bytes, at: 0 };
        if cur.take(CONTAINER_MAGIC.len(), "magic")? != CONTAINER_MAGIC {
            return Err(Error::Corrupt("not a pipeline container".into()));
        }
        let version = cur.u32("version")?;
        if version != CONTAINER_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CONTAINER_VERSION,
            });
        }
        if bytes.len() < DIGEST_LEN {
            return Err(Error::Corrupt("container truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut cur = Cursor { bytes: body, at: cur.at };
        let manifest_len = cur.u64("manifest")?;
        let manifest: Manifest = serde_json::from_slice(cur.take(manifest_len, "manifest")?)
            .map_err(|e| Error::Corrupt(format!("unreadable manifest: {e}")))?;
        let n_params = cur.u64("parameters")?;
        let raw = cur.take(n_params.checked_mul(8).ok_or_else(|| Error::Corrupt("parameter count overflow".into()))?, "parameters")?;
        if cur.at != body.len() {
            return Err(Error::Corrupt("trailing bytes after parameters".into()));
        }
        if manifest.version != version {
            return Err(Error::Corrupt("manifest version disagrees with header".into()));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let reader = ParamReader::new(&params);

        let model = learners.get(&manifest.base.kind)?.load(&manifest.base.model, &reader)?;
        let gate = match manifest.gate {
            GateManifest::Thresholds(t) => Gate::Thresholds(ThresholdPair::new(t.th_n, t.th_p)?),
            GateManifest::ErrorProxy { forest } => Gate::ErrorProxy(ForestModel::load_params(&forest, &reader)?),
        };
        let head: Option<Box<dyn DifficultHead>> = manifest
            .head
            .map(|h| retrainers.get(&h.kind)?.load(&h.model, &reader))
            .transpose()?;
        if let Some(h) = &head {
            if h.input_width() != model.n_features() {
                return Err(Error::Corrupt("head width differs from base width".into()));
            }
        }
        Ok(Pipeline {
            features: manifest.features,
            base: BaseStage {
                model,
                adapter: manifest.base.adapter,
            },
            gate,
            head,
            metadata: manifest.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, learners: &LearnerRegistry, retrainers: &RetrainerRegistry) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, learners, retrainers)
    }

    /// Loads with the built-in learners and retrainers.
    pub fn load_builtin(path: &Path) -> Result<Self> {
        Self::load(path, &LearnerRegistry::with_builtins(), &RetrainerRegistry::with_builtins())
    }
}

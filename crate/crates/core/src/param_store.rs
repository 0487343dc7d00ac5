//! Named parameter blocks, checkpoints with lineage, and the `RATA` binary
//! checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"RATA" | version u8 = 0x01 | header_len u32 | header (UTF-8 JSON) | payload f64 x N
//! ```
//!
//! The JSON header lists every block as `{section, name, shape, offset, count}`
//! where `offset` and `count` are measured in floats from the start of the
//! payload, followed by the lineage and the capture step.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RATA";
pub const FORMAT_VERSION: u8 = 0x01;

/// A named, row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let block = Self {
            name: name.into(),
            shape,
            values,
        };
        block.check_shape()?;
        Ok(block)
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_shape(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::Shape(format!(
                "block `{}` has a zero dimension in {:?}",
                self.name, self.shape
            )));
        }
        let expected: usize = self.shape.iter().product();
        if expected != self.values.len() {
            return Err(Error::Shape(format!(
                "block `{}` declares shape {:?} ({} values) but holds {}",
                self.name,
                self.shape,
                expected,
                self.values.len()
            )));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(self.name.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub task: String,
    pub digest: String,
}

/// Provenance of a weight-space combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub parents: Vec<String>,
    pub lambdas: Vec<f64>,
}

/// Training history of a checkpoint, oldest entry first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    /// Task the chain starts from (`"scratch"` for fresh initializations).
    pub root: String,
    pub chain: Vec<LineageEntry>,
    /// Free-form markers such as `moving-average`, `merged` or `classifier-swap`.
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeRecord>,
}

impl Lineage {
    pub fn new(root: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            chain: Vec::new(),
            tags: Vec::new(),
            merge: None,
        }
    }

    /// Returns a copy extended by one training entry.
    pub fn extended(&self, task: &str, digest: &str) -> Self {
        let mut next = self.clone();
        next.chain.push(LineageEntry {
            task: task.to_string(),
            digest: digest.to_string(),
        });
        next
    }

    pub fn tagged(&self, tag: &str) -> Self {
        let mut next = self.clone();
        next.tags.push(tag.to_string());
        next
    }

    /// Lineage of a combination of `parents`: common root (or `mixed`), the
    /// longest shared chain prefix, and a merge record.
    pub fn merged(parents: &[&Checkpoint], lambdas: &[f64]) -> Self {
        let first = &parents[0].lineage;
        let root = if parents.iter().all(|p| p.lineage.root == first.root) {
            first.root.clone()
        } else {
            "mixed".to_string()
        };
        let prefix = first
            .chain
            .iter()
            .enumerate()
            .take_while(|(i, e)| parents.iter().all(|p| p.lineage.chain.get(*i) == Some(*e)))
            .map(|(_, e)| e.clone())
            .collect();
        Self {
            root,
            chain: prefix,
            tags: vec!["merged".to_string()],
            merge: Some(MergeRecord {
                parents: parents.iter().map(|p| p.digest()).collect(),
                lambdas: lambdas.to_vec(),
            }),
        }
    }
}

/// Stable short digest of any serializable value (SHA-256 of its canonical
/// JSON, first 16 hex chars).
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    short_hash(&bytes)
}

fn short_hash(bytes: &[u8]) -> String {
    let full = Sha256::digest(bytes);
    hex::encode(&full[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Featurizer,
    Classifier,
}

/// Model weights `(classifier, featurizer)` plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub featurizer: Vec<ParamBlock>,
    pub classifier: Vec<ParamBlock>,
    pub lineage: Lineage,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockHeader {
    section: Section,
    name: String,
    shape: Vec<usize>,
    offset: u64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    blocks: Vec<BlockHeader>,
    lineage: Lineage,
    step: u64,
}

impl Checkpoint {
    pub fn new(featurizer: Vec<ParamBlock>, classifier: Vec<ParamBlock>, lineage: Lineage, step: u64) -> Result<Self> {
        let ckpt = Self {
            featurizer,
            classifier,
            lineage,
            step,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checks shapes and name uniqueness across both sections.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for block in self.blocks() {
            block.check_shape()?;
            if !seen.insert(block.name.as_str()) {
                return Err(Error::Shape(format!("duplicate block name `{}`", block.name)));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ParamBlock> {
        self.featurizer.iter().chain(self.classifier.iter())
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ParamBlock> {
        self.featurizer.iter_mut().chain(self.classifier.iter_mut())
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks().find(|b| b.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.blocks().map(ParamBlock::len).sum()
    }

    /// All values, featurizer first, in block order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.blocks().flat_map(|b| b.values.iter().copied()).collect()
    }

    /// Squared L2 norm of all parameters.
    pub fn sq_norm(&self) -> f64 {
        self.blocks().flat_map(|b| b.values.iter()).map(|v| v * v).sum()
    }

    /// SHA-256 based digest of the serialized checkpoint.
    pub fn digest(&self) -> String {
        short_hash(&self.encode())
    }

    /// Serializes into the `RATA` format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        for block in self.blocks() {
            block.check_finite()?;
        }
        Ok(self.encode())
    }

    fn encode(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut headers = Vec::new();
        for (section, blocks) in [
            (Section::Featurizer, &self.featurizer),
            (Section::Classifier, &self.classifier),
        ] {
            for b in blocks {
                let count = b.values.len() as u64;
                headers.push(BlockHeader {
                    section,
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    offset,
                    count,
                });
                offset += count;
            }
        }
        let header = FileHeader {
            blocks: headers,
            lineage: self.lineage.clone(),
            step: self.step,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(9 + json.len() + 8 * offset as usize);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.blocks().flat_map(|b| b.values.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 9 {
            return Err(Error::Truncated("file ends inside the preamble".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header_end = 9usize
            .checked_add(header_len)
            .ok_or_else(|| Error::Truncated("header length overflows".into()))?;
        if bytes.len() < header_end {
            return Err(Error::Truncated(format!(
                "header declares {header_len} bytes, {} available",
                bytes.len() - 9
            )));
        }
        let header: FileHeader =
            serde_json::from_slice(&bytes[9..header_end]).map_err(|e| Error::Header(e.to_string()))?;
        let payload = &bytes[header_end..];
        if !payload.len().is_multiple_of(8) {
            return Err(Error::Truncated("payload is not a whole number of f64".into()));
        }
        let available = (payload.len() / 8) as u64;
        let declared: u64 = header.blocks.iter().map(|b| b.count).sum();
        if declared > available {
            return Err(Error::Truncated(format!(
                "header declares {declared} floats, payload has {available}"
            )));
        }
        if declared < available {
            return Err(Error::Header(format!(
                "payload has {available} floats but header declares {declared}"
            )));
        }

        let mut featurizer = Vec::new();
        let mut classifier = Vec::new();
        for bh in header.blocks {
            let end = bh
                .offset
                .checked_add(bh.count)
                .filter(|&e| e <= available)
                .ok_or_else(|| Error::Truncated(format!("block `{}` extends past the payload", bh.name)))?;
            let values = payload[(bh.offset * 8) as usize..(end * 8) as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let block = ParamBlock::new(bh.name, bh.shape, values)?;
            block.check_finite()?;
            match bh.section {
                Section::Featurizer => featurizer.push(block),
                Section::Classifier => classifier.push(block),
            }
        }
        Checkpoint::new(featurizer, classifier, header.lineage, header.step)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}

fn section_signature(blocks: &[ParamBlock]) -> HashMap<&str, &[usize]> {
    blocks.iter().map(|b| (b.name.as_str(), b.shape.as_slice())).collect()
}

/// Same block names and per-name shapes in each section (block order may differ).
pub fn validate_compatible(a: &Checkpoint, b: &Checkpoint) -> bool {
    blocks_compatible(&a.featurizer, &b.featurizer) && blocks_compatible(&a.classifier, &b.classifier)
}

pub fn blocks_compatible(a: &[ParamBlock], b: &[ParamBlock]) -> bool {
    a.len() == b.len() && section_signature(a) == section_signature(b)
}

/// Reorders `other` to follow the block order of `reference`. Callers must
/// have checked compatibility.
pub(crate) fn align<'a>(reference: &[ParamBlock], other: &'a [ParamBlock]) -> Vec<&'a ParamBlock> {
    if reference.iter().zip(other).all(|(r, o)| r.name == o.name) {
        return other.iter().collect();
    }
    reference
        .iter()
        .map(|r| other.iter().find(|o| o.name == r.name).expect("compatible blocks"))
        .collect()
}

/// Euclidean distance between two compatible checkpoints.
pub fn param_distance(a: &Checkpoint, b: &Checkpoint) -> Result<f64> {
    if !validate_compatible(a, b) {
        return Err(Error::Incompatible("block names or shapes differ".into()));
    }
    let mut acc = 0.0;
    for (ra, rb) in [(&a.featurizer, &b.featurizer), (&a.classifier, &b.classifier)] {
        for (x, y) in ra.iter().zip(align(ra, rb)) {
            acc += x
                .values
                .iter()
                .zip(&y.values)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>();
        }
    }
    Ok(acc.sqrt())
}

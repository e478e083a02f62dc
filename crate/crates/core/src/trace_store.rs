//! On-disk trace format.
//!
//! A trace is stored as two files sharing a stem:
//!
//! ```text
//! <name>.cotr   binary, little-endian
//!   [0..8)   b"COTTRACE"
//!   u32      version (= 1)
//!   u32      dim
//!   u32      T (number of steps)
//!   T times: u32 n_tokens, then n_tokens * dim f32 values, row-major
//! <name>.json   UTF-8 sidecar manifest (ids, prompt, step texts, checksum)
//! ```
//!
//! The checksum is XXH64 (seed 0) over the full contents of the `.cotr` file
//! and is written to the manifest as a 16-digit lowercase hex string.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"COTTRACE";
pub const FORMAT_VERSION: u32 = 1;
pub const TRACE_EXTENSION: &str = "cotr";
pub const CHECKSUM_ALGO: &str = "xxh64";

const HEADER_LEN: usize = 8 + 4 * 3;

/// One reasoning step: the token embeddings of its span plus optional text.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based position of the step within its trace.
    pub step_index: u32,
    pub n_tokens: u32,
    /// `n_tokens * dim` values, row-major (one row per token).
    pub token_matrix: Vec<f32>,
    pub text: Option<String>,
}

impl StepRecord {
    pub fn new(step_index: u32, n_tokens: u32, token_matrix: Vec<f32>) -> Self {
        Self {
            step_index,
            n_tokens,
            token_matrix,
            text: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    /// Row `i` of the token matrix.
    pub fn token(&self, i: usize, dim: usize) -> &[f32] {
        &self.token_matrix[i * dim..(i + 1) * dim]
    }
}

/// A segmented chain-of-thought sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trace_id: String,
    pub model_id: String,
    pub dataset_id: String,
    pub dim: u32,
    pub steps: Vec<StepRecord>,
    pub prompt: Option<String>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks every structural invariant; errors name the offending step.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation(format!(
                "trace {}: dim must be positive",
                self.trace_id
            )));
        }
        if self.steps.is_empty() {
            return Err(Error::Validation(format!(
                "trace {}: no steps",
                self.trace_id
            )));
        }
        let dim = self.dim as usize;
        for (pos, step) in self.steps.iter().enumerate() {
            let expected_index = pos as u32 + 1;
            if step.step_index != expected_index {
                return Err(Error::Validation(format!(
                    "trace {}: step_index {} at position {} (expected {})",
                    self.trace_id, step.step_index, pos, expected_index
                )));
            }
            if step.n_tokens == 0 {
                return Err(Error::Validation(format!(
                    "trace {}: step {} has no tokens",
                    self.trace_id, step.step_index
                )));
            }
            let want = step.n_tokens as usize * dim;
            if step.token_matrix.len() != want {
                return Err(Error::Validation(format!(
                    "trace {}: step {} holds {} values, expected {} ({} tokens x dim {})",
                    self.trace_id,
                    step.step_index,
                    step.token_matrix.len(),
                    want,
                    step.n_tokens,
                    dim
                )));
            }
            if let Some(k) = step.token_matrix.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "trace {}: step {} has non-finite entry at token {}, column {}",
                    self.trace_id,
                    step.step_index,
                    k / dim,
                    k % dim
                )));
            }
        }
        Ok(())
    }
}

/// Step text entry in the sidecar manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStep {
    pub step_index: u32,
    pub text: Option<String>,
}

/// Sidecar metadata for a `.cotr` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub trace_id: String,
    pub model_id: String,
    pub dataset_id: String,
    pub prompt: Option<String>,
    pub steps: Vec<ManifestStep>,
    pub checksum: String,
    pub checksum_algo: String,
}

/// Path of the sidecar manifest belonging to a trace file.
pub fn manifest_path(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("json")
}

pub fn checksum(bytes: &[u8]) -> u64 {
    xxhash_rust::xxh64::xxh64(bytes, 0)
}

pub fn checksum_hex(value: u64) -> String {
    format!("{value:016x}")
}

/// Serializes the binary part of a trace. The trace must already be valid.
pub fn encode_binary(trace: &Trace) -> Vec<u8> {
    let payload: usize = trace
        .steps
        .iter()
        .map(|s| 4 + s.token_matrix.len() * 4)
        .sum();
    let mut buf = Vec::with_capacity(HEADER_LEN + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&trace.dim.to_le_bytes());
    buf.extend_from_slice(&(trace.steps.len() as u32).to_le_bytes());
    for step in &trace.steps {
        buf.extend_from_slice(&step.n_tokens.to_le_bytes());
        for v in &step.token_matrix {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Corruption {
                path: self.path.to_path_buf(),
                message: format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Binary contents of a trace file before the manifest is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedBinary {
    pub dim: u32,
    /// `(n_tokens, values)` per step.
    pub steps: Vec<(u32, Vec<f32>)>,
}

pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<DecodedBinary> {
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned();
        return Err(format_err(format!("bad magic {shown:?}")));
    }
    let mut cur = Cursor {
        bytes,
        pos: 8,
        path,
    };
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let dim = cur.u32("dim")?;
    let n_steps = cur.u32("step count")?;
    if dim == 0 {
        return Err(format_err("dim is zero".into()));
    }
    if n_steps == 0 {
        return Err(format_err("step count is zero".into()));
    }
    let mut steps = Vec::with_capacity(n_steps.min(1 << 16) as usize);
    for s in 0..n_steps {
        let n_tokens = cur.u32("n_tokens")?;
        if n_tokens == 0 {
            return Err(Error::Corruption {
                path: path.to_path_buf(),
                message: format!("step {} declares zero tokens", s + 1),
            });
        }
        let count = (n_tokens as usize)
            .checked_mul(dim as usize)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Corruption {
                path: path.to_path_buf(),
                message: format!("step {} size overflows", s + 1),
            })?;
        let raw = cur.take(count, &format!("step {} payload", s + 1))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        steps.push((n_tokens, values));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes after last step", bytes.len() - cur.pos),
        });
    }
    Ok(DecodedBinary { dim, steps })
}

/// Writes `<path>` (binary) and its sidecar manifest; returns the XXH64
/// checksum of the binary file contents.
pub fn write_trace(trace: &Trace, path: &Path) -> Result<u64> {
    trace.validate()?;
    let bytes = encode_binary(trace);
    let sum = checksum(&bytes);
    let manifest = TraceManifest {
        trace_id: trace.trace_id.clone(),
        model_id: trace.model_id.clone(),
        dataset_id: trace.dataset_id.clone(),
        prompt: trace.prompt.clone(),
        steps: trace
            .steps
            .iter()
            .map(|s| ManifestStep {
                step_index: s.step_index,
                text: s.text.clone(),
            })
            .collect(),
        checksum: checksum_hex(sum),
        checksum_algo: CHECKSUM_ALGO.to_string(),
    };
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(sum)
}

pub fn read_manifest(path: &Path) -> Result<TraceManifest> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mpath,
        message: format!("manifest: {e}"),
    })
}

/// Reads a trace file and its manifest, checking that they agree.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let binary = decode_binary(&bytes, path)?;
    let manifest = read_manifest(path)?;
    let consistency = |message: String| Error::Consistency {
        path: path.to_path_buf(),
        message,
    };
    if manifest.checksum_algo != CHECKSUM_ALGO {
        return Err(consistency(format!(
            "unknown checksum algorithm {:?}",
            manifest.checksum_algo
        )));
    }
    let actual = checksum_hex(checksum(&bytes));
    if !manifest.checksum.eq_ignore_ascii_case(&actual) {
        return Err(consistency(format!(
            "checksum {} in manifest, {} on disk",
            manifest.checksum, actual
        )));
    }
    if manifest.steps.len() != binary.steps.len() {
        return Err(consistency(format!(
            "manifest lists {} steps, binary holds {}",
            manifest.steps.len(),
            binary.steps.len()
        )));
    }
    let steps = binary
        .steps
        .into_iter()
        .zip(&manifest.steps)
        .map(|((n_tokens, token_matrix), m)| StepRecord {
            step_index: m.step_index,
            n_tokens,
            token_matrix,
            text: m.text.clone(),
        })
        .collect();
    let trace = Trace {
        trace_id: manifest.trace_id,
        model_id: manifest.model_id,
        dataset_id: manifest.dataset_id,
        dim: binary.dim,
        steps,
        prompt: manifest.prompt,
    };
    trace.validate()?;
    Ok(trace)
}

/// `.cotr` files directly inside `dir`, sorted by file name.
pub fn list_trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == TRACE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub trace_id: String,
    pub path: PathBuf,
    pub status: ValidationStatus,
    pub message: String,
}

/// Validates every trace file in `dir`. Per-file failures are reported,
/// never propagated; only an unreadable directory is an error.
pub fn validate_corpus(dir: &Path) -> Result<Vec<ValidationEntry>> {
    let files = list_trace_files(dir)?;
    Ok(files
        .into_iter()
        .map(|path| {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            match read_trace(&path) {
                Ok(trace) => ValidationEntry {
                    message: format!("{} steps, dim {}", trace.len(), trace.dim),
                    trace_id: trace.trace_id,
                    path,
                    status: ValidationStatus::Ok,
                },
                Err(e) => ValidationEntry {
                    trace_id: stem,
                    path,
                    status: ValidationStatus::Error,
                    message: e.to_string(),
                },
            }
        })
        .collect())
}

/// Reads every trace in `dir` (sorted by file name), failing on the first bad file.
pub fn read_corpus(dir: &Path) -> Result<Vec<(PathBuf, Trace)>> {
    list_trace_files(dir)?
        .into_iter()
        .map(|p| read_trace(&p).map(|t| (p, t)))
        .collect()
}

//! On-disk state: an event log, the chain file, content-addressed contract
//! texts and the owner key vault.
//!
//! Layout under the data directory:
//!
//! ```text
//! config.json    difficulty, miner count, optional seed
//! events.jsonl   one EventRecord per line
//! chain.jsonl    one block per line, keys in preimage order plus "hash"
//! texts/<digest>.txt
//! vault.json     owner id -> private key hex (mode 0600)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use pact_core::{Block, CanonicalText, Digest256, KeyPair};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("event body must serialize to a single line")]
    MultilineRecord,
    #[error("vault has no key for {0}")]
    MissingKey(String),
    #[error("text for digest {0} is missing from the text store")]
    MissingText(Digest256),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Whether each append is flushed to stable storage before returning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsyncPolicy {
    #[default]
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    GroupCreated,
    ProposalOpened,
    VoteCast,
    ProposalFinalized,
    BlockAccepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub kind: EventKind,
    pub body: serde_json::Value,
    pub recorded_at: u64,
}

/// Appends one JSON document per line to `path`. A failed write is rolled
/// back by truncating to the previous length, so reloads never see half a
/// record.
#[derive(Debug)]
struct JsonLines {
    path: PathBuf,
    fsync: FsyncPolicy,
}

impl JsonLines {
    fn append<T: Serialize>(&self, value: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(value).expect("state types serialize");
        if line.contains('\n') {
            return Err(StoreError::MultilineRecord);
        }
        line.push('\n');
        let err = io_err(&self.path);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let before = file.metadata().map_err(io_err(&self.path))?.len();
        let written = file.write_all(line.as_bytes()).and_then(|_| match self.fsync {
            FsyncPolicy::Always => file.sync_data(),
            FsyncPolicy::Never => Ok(()),
        });
        if let Err(e) = written {
            let _ = file.set_len(before);
            return Err(err(e));
        }
        Ok(())
    }

    /// Reads every line. A missing file is empty; a final line without its
    /// LF is reported as corrupt.
    fn read<T: for<'de> Deserialize<'de>>(&self) -> Result<Vec<T>, StoreError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.path)(e)),
        };
        let mut reader = BufReader::new(file);
        let mut out = Vec::new();
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            let n = reader.read_line(&mut buf).map_err(io_err(&self.path))?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let corrupt = |message: String| StoreError::Corrupt {
                path: self.path.clone(),
                line: line_no,
                message,
            };
            if !buf.ends_with('\n') {
                return Err(corrupt("truncated record (no trailing newline)".into()));
            }
            let value = serde_json::from_str(buf.trim_end_matches('\n'))
                .map_err(|e| corrupt(e.to_string()))?;
            out.push(value);
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub struct EventLog {
    lines: JsonLines,
    next_seq: u64,
}

impl EventLog {
    /// Opens the log and validates sequence numbers.
    pub fn open(path: impl Into<PathBuf>, fsync: FsyncPolicy) -> Result<(Self, Vec<EventRecord>), StoreError> {
        let lines = JsonLines { path: path.into(), fsync };
        let records: Vec<EventRecord> = lines.read()?;
        for (i, r) in records.iter().enumerate() {
            if r.seq != i as u64 + 1 {
                return Err(StoreError::Corrupt {
                    path: lines.path.clone(),
                    line: i + 1,
                    message: format!("expected seq {}, found {}", i + 1, r.seq),
                });
            }
        }
        let next_seq = records.len() as u64 + 1;
        Ok((EventLog { lines, next_seq }, records))
    }

    /// Appends a record, assigning the next sequence number.
    pub fn append_event(
        &mut self,
        kind: EventKind,
        body: serde_json::Value,
        recorded_at: u64,
    ) -> Result<u64, StoreError> {
        let record = EventRecord {
            seq: self.next_seq,
            kind,
            body,
            recorded_at,
        };
        self.lines.append(&record)?;
        self.next_seq += 1;
        Ok(record.seq)
    }

    pub fn path(&self) -> &Path {
        &self.lines.path
    }
}

/// The chain file: one block per line.
#[derive(Debug)]
pub struct ChainFile {
    lines: JsonLines,
}

impl ChainFile {
    pub fn new(path: impl Into<PathBuf>, fsync: FsyncPolicy) -> Self {
        ChainFile {
            lines: JsonLines { path: path.into(), fsync },
        }
    }

    pub fn append(&self, block: &Block) -> Result<(), StoreError> {
        self.lines.append(block)
    }

    pub fn read(&self) -> Result<Vec<Block>, StoreError> {
        self.lines.read()
    }

    pub fn exists(&self) -> bool {
        self.lines.path.exists()
    }

    pub fn path(&self) -> &Path {
        &self.lines.path
    }
}

/// Canonical texts keyed by digest.
#[derive(Debug)]
pub struct TextStore {
    dir: PathBuf,
}

impl TextStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TextStore { dir: dir.into() }
    }

    fn path_for(&self, digest: &Digest256) -> PathBuf {
        self.dir.join(format!("{digest}.txt"))
    }

    pub fn put(&self, digest: &Digest256, text: &CanonicalText) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.path_for(digest);
        if !path.exists() {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, text.as_bytes()).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn get(&self, digest: &Digest256) -> Result<String, StoreError> {
        match fs::read_to_string(self.path_for(digest)) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::MissingText(*digest)),
            Err(e) => Err(io_err(&self.path_for(digest))(e)),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct VaultFile {
    scheme_id: String,
    keys: BTreeMap<String, String>,
}

/// Private keys of every owner, in a file readable only by its owner.
/// No encryption at rest.
#[derive(Debug)]
pub struct KeyVault {
    path: PathBuf,
    file: VaultFile,
}

impl KeyVault {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let file = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => VaultFile {
                scheme_id: pact_core::SCHEME_ID.to_string(),
                keys: BTreeMap::new(),
            },
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(KeyVault { path, file })
    }

    pub fn contains(&self, owner_id: &str) -> bool {
        self.file.keys.contains_key(owner_id)
    }

    pub fn get(&self, owner_id: &str) -> Result<KeyPair, StoreError> {
        let hex = self
            .file
            .keys
            .get(owner_id)
            .ok_or_else(|| StoreError::MissingKey(owner_id.to_string()))?;
        KeyPair::from_private_hex(hex).map_err(|e| StoreError::Corrupt {
            path: self.path.clone(),
            line: 0,
            message: format!("key {owner_id}: {e}"),
        })
    }

    /// Stores a key and rewrites the vault atomically.
    pub fn insert(&mut self, owner_id: &str, keys: &KeyPair) -> Result<(), StoreError> {
        self.file
            .keys
            .insert(owner_id.to_string(), keys.private_key_hex());
        let json = serde_json::to_vec_pretty(&self.file).expect("vault serializes");
        let tmp = self.path.with_extension("tmp");
        write_private(&tmp, &json).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)
}

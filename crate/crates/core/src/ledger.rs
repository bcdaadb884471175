//! Append-only, hash-chained audit ledger.
//!
//! The ledger is a JSONL file with one canonical [`LedgerEntry`] per line.
//! Payloads are stored beside it as content-addressed canonical JSON files at
//! `objects/<first two hex>/<payload_hash>.json`.
//!
//! `entry_hash = sha256(canonical({index, timestamp_ms, prev_hash, payload_hash}))`
//! and `prev_hash` of entry 0 is 64 zeros.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::canonical::{canonical_bytes, canonical_serialize, CanonicalError};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub index: u64,
    pub timestamp_ms: i64,
    pub prev_hash: String,
    pub payload_hash: String,
    pub entry_hash: String,
    pub payload_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum VerifyOutcome {
    Ok { entries: u64 },
    Broken { index: u64, reason: String },
}

impl VerifyOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, VerifyOutcome::Ok { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("ledger is broken at index {index}: {reason}; refusing to append")]
    Broken { index: u64, reason: String },
    #[error("ledger is locked by another writer ({0})")]
    LockConflict(PathBuf),
    #[error("stored object {path} does not match payload hash {hash}")]
    ObjectMismatch { path: PathBuf, hash: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LedgerError + '_ {
    move |source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical encoding, so key order in the source is irrelevant.
pub fn payload_hash<T: Serialize + ?Sized>(payload: &T) -> Result<String, CanonicalError> {
    Ok(sha256_hex(&canonical_serialize(payload)?))
}

pub fn entry_hash(index: u64, timestamp_ms: i64, prev_hash: &str, payload_hash: &str) -> String {
    let header = json!({
        "index": index,
        "timestamp_ms": timestamp_ms,
        "prev_hash": prev_hash,
        "payload_hash": payload_hash,
    });
    sha256_hex(&canonical_bytes(&header))
}

/// Ledger-relative location of a payload object.
pub fn object_ref(hash: &str) -> String {
    format!("objects/{}/{hash}.json", &hash[..2])
}

fn ledger_dir(ledger: &Path) -> &Path {
    match ledger.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn object_path(ledger: &Path, hash: &str) -> PathBuf {
    ledger_dir(ledger).join(object_ref(hash))
}

fn is_hex64(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

fn check_entry(line: &str, expected_index: u64, prev: &str) -> Result<LedgerEntry, String> {
    let entry: LedgerEntry =
        serde_json::from_str(line).map_err(|e| format!("unparseable entry: {e}"))?;
    let reencoded = canonical_serialize(&entry).map_err(|e| e.to_string())?;
    if reencoded != line.as_bytes() {
        return Err("entry is not in canonical form".into());
    }
    if entry.index != expected_index {
        return Err(format!("expected index {expected_index}, found {}", entry.index));
    }
    for (name, h) in [
        ("prev_hash", &entry.prev_hash),
        ("payload_hash", &entry.payload_hash),
        ("entry_hash", &entry.entry_hash),
    ] {
        if !is_hex64(h) {
            return Err(format!("{name} is not 64 lowercase hex characters"));
        }
    }
    if entry.prev_hash != prev {
        return Err("prev_hash does not match the previous entry".into());
    }
    if entry.payload_ref != object_ref(&entry.payload_hash) {
        return Err("payload_ref does not match payload_hash".into());
    }
    let recomputed = entry_hash(
        entry.index,
        entry.timestamp_ms,
        &entry.prev_hash,
        &entry.payload_hash,
    );
    if recomputed != entry.entry_hash {
        return Err("entry_hash does not match recomputation".into());
    }
    Ok(entry)
}

fn verify_text(ledger: &Path, text: &str) -> (VerifyOutcome, Vec<LedgerEntry>) {
    let mut entries = Vec::new();
    let mut prev = GENESIS_HASH.to_string();
    let body = match text.strip_suffix('\n') {
        Some(b) => b,
        None if text.is_empty() => "",
        None => {
            let index = text.matches('\n').count() as u64;
            return (
                VerifyOutcome::Broken {
                    index,
                    reason: "missing trailing newline".into(),
                },
                entries,
            );
        }
    };
    if body.is_empty() {
        return (VerifyOutcome::Ok { entries: 0 }, entries);
    }
    for (i, line) in body.split('\n').enumerate() {
        let index = i as u64;
        let entry = match check_entry(line, index, &prev) {
            Ok(e) => e,
            Err(reason) => return (VerifyOutcome::Broken { index, reason }, entries),
        };
        // objects are optional (they may be archived elsewhere) but must match
        // when present
        let obj = object_path(ledger, &entry.payload_hash);
        if let Ok(bytes) = fs::read(&obj) {
            if sha256_hex(&bytes) != entry.payload_hash {
                return (
                    VerifyOutcome::Broken {
                        index,
                        reason: format!("object {} does not match payload_hash", obj.display()),
                    },
                    entries,
                );
            }
        }
        prev = entry.entry_hash.clone();
        entries.push(entry);
    }
    (
        VerifyOutcome::Ok {
            entries: entries.len() as u64,
        },
        entries,
    )
}

/// Recompute every hash and link. A missing ledger file verifies as empty.
/// Takes no lock.
pub fn verify(ledger: &Path) -> Result<VerifyOutcome, LedgerError> {
    let text = read_ledger(ledger)?;
    Ok(verify_text(ledger, &text).0)
}

fn read_ledger(ledger: &Path) -> Result<String, LedgerError> {
    match fs::read(ledger) {
        Ok(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(io_err(ledger)(e)),
    }
}

pub fn lock_path(ledger: &Path) -> PathBuf {
    let mut name = ledger.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    ledger.with_file_name(name)
}

/// Exclusive advisory lock on `<ledger>.lock`, released on drop.
pub struct WriterLock {
    _file: File,
}

impl WriterLock {
    pub fn acquire(ledger: &Path) -> Result<Self, LedgerError> {
        let path = lock_path(ledger);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(WriterLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(LedgerError::LockConflict(path)),
            Err(TryLockError::Error(e)) => Err(io_err(&path)(e)),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LedgerError> {
    let dir = ledger_dir(path);
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Store the payload object, verify the existing chain, then atomically
/// rewrite the ledger with one more entry.
pub fn append(ledger: &Path, payload: &Value, timestamp_ms: i64) -> Result<LedgerEntry, LedgerError> {
    let _lock = WriterLock::acquire(ledger)?;
    let text = read_ledger(ledger)?;
    let (outcome, entries) = verify_text(ledger, &text);
    if let VerifyOutcome::Broken { index, reason } = outcome {
        return Err(LedgerError::Broken { index, reason });
    }

    let object = canonical_serialize(payload)?;
    let hash = sha256_hex(&object);
    let obj_path = object_path(ledger, &hash);
    match fs::read(&obj_path) {
        Ok(existing) if existing == object => {}
        Ok(_) => {
            return Err(LedgerError::ObjectMismatch {
                path: obj_path,
                hash,
            })
        }
        Err(_) => {
            let parent = obj_path.parent().expect("object path has a parent");
            fs::create_dir_all(parent).map_err(io_err(parent))?;
            write_atomic(&obj_path, &object)?;
        }
    }

    let index = entries.len() as u64;
    let prev_hash = entries
        .last()
        .map_or_else(|| GENESIS_HASH.to_string(), |e| e.entry_hash.clone());
    let entry = LedgerEntry {
        index,
        timestamp_ms,
        entry_hash: entry_hash(index, timestamp_ms, &prev_hash, &hash),
        prev_hash,
        payload_ref: object_ref(&hash),
        payload_hash: hash,
    };
    let mut bytes = text.into_bytes();
    bytes.extend(canonical_serialize(&entry)?);
    bytes.push(b'\n');
    write_atomic(ledger, &bytes)?;
    Ok(entry)
}

pub fn read_entries(ledger: &Path) -> Result<Vec<LedgerEntry>, LedgerError> {
    let text = read_ledger(ledger)?;
    match verify_text(ledger, &text) {
        (VerifyOutcome::Ok { .. }, entries) => Ok(entries),
        (VerifyOutcome::Broken { index, reason }, _) => Err(LedgerError::Broken { index, reason }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        (dir, path)
    }

    #[test]
    fn genesis_and_chain() {
        let (_d, path) = setup();
        assert_eq!(verify(&path).unwrap(), VerifyOutcome::Ok { entries: 0 });
        let e0 = append(&path, &json!({"a": 1}), 10).unwrap();
        assert_eq!((e0.index, e0.prev_hash.as_str()), (0, GENESIS_HASH));
        let e1 = append(&path, &json!({"b": [1.5, "x"]}), 11).unwrap();
        assert_eq!(e1.prev_hash, e0.entry_hash);
        assert_eq!(verify(&path).unwrap(), VerifyOutcome::Ok { entries: 2 });
        assert!(object_path(&path, &e1.payload_hash).exists());
        assert_eq!(read_entries(&path).unwrap(), vec![e0, e1]);
    }

    #[test]
    fn key_order_does_not_matter() {
        let a: Value = serde_json::from_str(r#"{"x": 1, "y": {"p": 2, "q": 3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"y": {"q": 3, "p": 2}, "x": 1}"#).unwrap();
        assert_eq!(payload_hash(&a).unwrap(), payload_hash(&b).unwrap());
    }

    #[test]
    fn entry_hash_reference() {
        // sha256 of {"index":0,"payload_hash":"<64 a>","prev_hash":"<64 0>","timestamp_ms":0}
        let ph = "a".repeat(64);
        let header = format!(
            r#"{{"index":0,"payload_hash":"{ph}","prev_hash":"{GENESIS_HASH}","timestamp_ms":0}}"#
        );
        assert_eq!(entry_hash(0, 0, GENESIS_HASH, &ph), sha256_hex(header.as_bytes()));
    }

    #[test]
    fn edit_of_entry_zero_is_detected_and_blocks_append() {
        let (_d, path) = setup();
        for i in 0..3 {
            append(&path, &json!({"i": i}), i).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"timestamp_ms\":0", "\"timestamp_ms\":5", 1);
        fs::write(&path, tampered).unwrap();
        assert!(matches!(verify(&path).unwrap(), VerifyOutcome::Broken { index: 0, .. }));
        assert!(matches!(
            append(&path, &json!({}), 9),
            Err(LedgerError::Broken { index: 0, .. })
        ));
    }

    #[test]
    fn deleted_middle_entry() {
        let (_d, path) = setup();
        for i in 0..5 {
            append(&path, &json!(i), i).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let kept: String = lines
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 2)
            .map(|(_, l)| format!("{l}\n"))
            .collect();
        fs::write(&path, kept).unwrap();
        assert!(matches!(verify(&path).unwrap(), VerifyOutcome::Broken { index: 2, .. }));
    }

    #[test]
    fn tampered_object_detected() {
        let (_d, path) = setup();
        let e = append(&path, &json!({"k": "v"}), 1).unwrap();
        fs::write(object_path(&path, &e.payload_hash), b"{\"k\":\"w\"}").unwrap();
        assert!(matches!(verify(&path).unwrap(), VerifyOutcome::Broken { index: 0, .. }));
    }

    #[test]
    fn lock_conflict() {
        let (_d, path) = setup();
        let held = WriterLock::acquire(&path).unwrap();
        assert!(matches!(
            append(&path, &json!(1), 0),
            Err(LedgerError::LockConflict(_))
        ));
        drop(held);
        append(&path, &json!(1), 0).unwrap();
    }

    #[test]
    fn non_finite_payload_rejected() {
        let (_d, path) = setup();
        let v = json!({"x": 1});
        append(&path, &v, 0).unwrap();
        #[derive(Serialize)]
        struct Bad {
            x: f64,
        }
        assert!(payload_hash(&Bad { x: f64::NAN }).is_err());
    }
}

//! Content-addressed blob store.
//!
//! Blobs are addressed by the SHA-256 of their bytes. Every `get`
//! re-hashes what the backend returns, so a corrupted backing store shows
//! up as [`CasError::IntegrityViolation`] and never as different bytes.

mod locator;

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

pub use locator::{parse_locator, render_locator, Locator};

use crate::crypto::{sha256, Digest32};

pub const DEFAULT_MAX_BLOB: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CasError {
    #[error("blob of {size} bytes exceeds cap of {cap}")]
    BlobTooLarge { size: usize, cap: usize },
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("blob not found")]
    NotFound,
    #[error("stored bytes do not match their locator")]
    IntegrityViolation,
    #[error("malformed locator: {0}")]
    MalformedLocator(String),
}

/// Raw storage behind a [`ContentStore`]. Backends do no hashing.
pub trait BlobBackend: Send + Sync {
    fn write(&self, digest: &Digest32, bytes: &[u8]) -> io::Result<()>;
    fn read(&self, digest: &Digest32) -> io::Result<Option<Vec<u8>>>;
}

impl<T: BlobBackend + ?Sized> BlobBackend for std::sync::Arc<T> {
    fn write(&self, digest: &Digest32, bytes: &[u8]) -> io::Result<()> {
        (**self).write(digest, bytes)
    }

    fn read(&self, digest: &Digest32) -> io::Result<Option<Vec<u8>>> {
        (**self).read(digest)
    }
}

#[derive(Default)]
pub struct MemoryBackend {
    blobs: RwLock<HashMap<Digest32, Vec<u8>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces stored bytes without re-addressing them, as a corrupted
    /// disk or a malicious storage node would.
    pub fn overwrite_raw(&self, digest: &Digest32, bytes: Vec<u8>) {
        self.blobs.write().unwrap().insert(*digest, bytes);
    }
}

impl BlobBackend for MemoryBackend {
    fn write(&self, digest: &Digest32, bytes: &[u8]) -> io::Result<()> {
        self.blobs
            .write()
            .unwrap()
            .entry(*digest)
            .or_insert_with(|| bytes.to_vec());
        Ok(())
    }

    fn read(&self, digest: &Digest32) -> io::Result<Option<Vec<u8>>> {
        Ok(self.blobs.read().unwrap().get(digest).cloned())
    }
}

/// Files under `<root>/blobs/<hex digest>`.
pub struct DirBackend {
    blobs: PathBuf,
}

impl DirBackend {
    pub fn open(root: &Path) -> io::Result<Self> {
        let blobs = root.join("blobs");
        fs::create_dir_all(&blobs)?;
        Ok(Self { blobs })
    }

    pub fn blob_path(&self, digest: &Digest32) -> PathBuf {
        self.blobs.join(hex::encode(digest))
    }
}

impl BlobBackend for DirBackend {
    fn write(&self, digest: &Digest32, bytes: &[u8]) -> io::Result<()> {
        let path = self.blob_path(digest);
        if path.exists() {
            return Ok(());
        }
        // write-then-rename keeps concurrent puts of the same blob benign
        let mut tmp = tempfile_in(&self.blobs)?;
        tmp.1.write_all(bytes)?;
        tmp.1.sync_data()?;
        drop(tmp.1);
        fs::rename(&tmp.0, &path)
    }

    fn read(&self, digest: &Digest32) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.blob_path(digest)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn tempfile_in(dir: &Path) -> io::Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    loop {
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}

pub struct ContentStore {
    backend: Box<dyn BlobBackend>,
    max_blob: usize,
}

impl ContentStore {
    pub fn new(backend: Box<dyn BlobBackend>) -> Self {
        Self {
            backend,
            max_blob: DEFAULT_MAX_BLOB,
        }
    }

    pub fn in_memory() -> Self {
        Self::new(Box::new(MemoryBackend::new()))
    }

    pub fn open_dir(root: &Path) -> Result<Self, CasError> {
        DirBackend::open(root)
            .map(|b| Self::new(Box::new(b)))
            .map_err(|e| CasError::StorageFailure(e.to_string()))
    }

    pub fn with_max_blob(mut self, max_blob: usize) -> Self {
        self.max_blob = max_blob;
        self
    }

    pub fn put(&self, bytes: &[u8]) -> Result<Locator, CasError> {
        if bytes.len() > self.max_blob {
            return Err(CasError::BlobTooLarge {
                size: bytes.len(),
                cap: self.max_blob,
            });
        }
        let digest = sha256(bytes);
        self.backend
            .write(&digest, bytes)
            .map_err(|e| CasError::StorageFailure(e.to_string()))?;
        Ok(Locator::from_digest(digest))
    }

    pub fn get(&self, loc: &Locator) -> Result<Vec<u8>, CasError> {
        let bytes = self
            .backend
            .read(loc.digest())
            .map_err(|e| CasError::StorageFailure(e.to_string()))?
            .ok_or(CasError::NotFound)?;
        if &sha256(&bytes) != loc.digest() {
            return Err(CasError::IntegrityViolation);
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn put_addresses_by_sha256() {
        let store = ContentStore::in_memory();
        let loc = store.put(b"hello").unwrap();
        assert_eq!(
            loc.hex_digest(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(store.put(b"hello").unwrap(), loc);
        assert_ne!(store.put(b"hellp").unwrap(), loc);
        assert_eq!(store.get(&loc).unwrap(), b"hello");
    }

    #[test]
    fn single_bit_changes_locator() {
        let a = Locator::for_bytes(&[0b0000_0000]);
        let b = Locator::for_bytes(&[0b0000_0001]);
        assert_ne!(a, b);
    }

    #[test]
    fn unknown_locator_is_not_found() {
        let store = ContentStore::in_memory();
        assert_eq!(
            store.get(&Locator::from_digest([1; 32])),
            Err(CasError::NotFound)
        );
    }

    #[test]
    fn size_cap() {
        let store = ContentStore::in_memory().with_max_blob(4);
        assert!(store.put(b"1234").is_ok());
        assert_eq!(
            store.put(b"12345"),
            Err(CasError::BlobTooLarge { size: 5, cap: 4 })
        );
    }

    #[test]
    fn corrupted_memory_backend_is_detected() {
        let backend = Arc::new(MemoryBackend::new());
        let store = ContentStore::new(Box::new(backend.clone()));
        let loc = store.put(b"payload").unwrap();
        backend.overwrite_raw(loc.digest(), b"paylaod".to_vec());
        assert_eq!(store.get(&loc), Err(CasError::IntegrityViolation));
    }

    #[test]
    fn directory_backend_layout_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::open_dir(dir.path()).unwrap();
        let loc = store.put(b"on disk").unwrap();
        let path = dir.path().join("blobs").join(loc.hex_digest());
        assert_eq!(fs::read(&path).unwrap(), b"on disk");
        assert_eq!(store.get(&loc).unwrap(), b"on disk");

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0x10;
        fs::write(&path, bytes).unwrap();
        assert_eq!(store.get(&loc), Err(CasError::IntegrityViolation));
    }
}

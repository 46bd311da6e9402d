//! Random-access byte sources for payload chunks.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub trait ChunkSource: Send + Sync {
    /// Reads `size` bytes at `offset`. May return fewer bytes only when the
    /// source ends early; callers treat that as a short read.
    fn read_range(&self, offset: u64, size: u64) -> Result<Vec<u8>>;
}

#[derive(Debug, Clone)]
pub struct MemorySource {
    bytes: Arc<[u8]>,
}

impl MemorySource {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        MemorySource { bytes: bytes.into() }
    }
}

impl ChunkSource for MemorySource {
    fn read_range(&self, offset: u64, size: u64) -> Result<Vec<u8>> {
        let len = self.bytes.len() as u64;
        let start = offset.min(len) as usize;
        let end = offset.saturating_add(size).min(len) as usize;
        Ok(self.bytes[start..end].to_vec())
    }
}

#[derive(Debug)]
pub struct FileSource {
    file: Mutex<File>,
    len: u64,
}

impl FileSource {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Ok(FileSource { file: Mutex::new(file), len })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl ChunkSource for FileSource {
    fn read_range(&self, offset: u64, size: u64) -> Result<Vec<u8>> {
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(offset))?;
        let mut out = Vec::with_capacity(size.min(self.len) as usize);
        (&mut *f).take(size).read_to_end(&mut out)?;
        Ok(out)
    }
}

/// Byte ranges over plain HTTP `GET` with a `Range` header.
#[derive(Debug, Clone)]
pub struct HttpSource {
    url: String,
    agent: ureq::Agent,
}

impl HttpSource {
    pub fn new(url: impl Into<String>) -> Self {
        HttpSource {
            url: url.into(),
            agent: ureq::AgentBuilder::new().timeout(std::time::Duration::from_secs(30)).build(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn http_err(e: impl std::fmt::Display) -> Error {
    Error::Http(e.to_string())
}

/// Downloads a whole resource.
pub fn fetch_url(url: &str) -> Result<Vec<u8>> {
    let resp = ureq::get(url).call().map_err(http_err)?;
    let mut out = Vec::new();
    resp.into_reader().read_to_end(&mut out)?;
    Ok(out)
}

impl ChunkSource for HttpSource {
    fn read_range(&self, offset: u64, size: u64) -> Result<Vec<u8>> {
        if size == 0 {
            return Ok(Vec::new());
        }
        let resp = self
            .agent
            .get(&self.url)
            .set("Range", &format!("bytes={}-{}", offset, offset + size - 1))
            .call()
            .map_err(http_err)?;
        let status = resp.status();
        let mut reader = resp.into_reader();
        let mut out = Vec::new();
        match status {
            206 => {
                reader.take(size).read_to_end(&mut out)?;
            }
            200 => {
                // Server ignored the range: skip to the offset ourselves.
                std::io::copy(&mut (&mut reader).take(offset), &mut std::io::sink())?;
                reader.take(size).read_to_end(&mut out)?;
            }
            other => return Err(Error::Http(format!("unexpected status {other} for {}", self.url))),
        }
        Ok(out)
    }
}

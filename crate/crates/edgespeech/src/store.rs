//! Model and trie files on disk, loaded eagerly or through a memory map.
//!
//! Eager loading reads the whole file, verifies the payload CRC and decodes
//! every tensor before returning. Mapped loading maps the file, parses only
//! the header and offset table, and leaves tensor pages to be faulted in by
//! the first forward pass; the checksum is not verified in that mode because
//! doing so would touch every page.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use edgespeech_core::decoder::Vocabulary;
use edgespeech_core::format::{self, FormatError, ModelFileHeader};
use edgespeech_core::model::{ModelError, ModelWeights};
use edgespeech_core::nn::Matrix;
use edgespeech_core::trie::{TrieError, TrieNode, TrieNodes, TrieView, VocabTrie};
use memmap2::{Advice, Mmap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum LoadStrategy {
    /// Read and decode every byte before returning.
    #[default]
    Eager,
    /// Map the file; tensor and node pages load on first access.
    Mapped,
}

impl fmt::Display for LoadStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadStrategy::Eager => "eager",
            LoadStrategy::Mapped => "mapped",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: {source}", path.display())]
    Trie {
        path: PathBuf,
        #[source]
        source: TrieError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model failed validation:\n{0}")]
    InvalidModel(String),
    #[error("memory-mapped tensors require a little-endian target")]
    BigEndian,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Tensor storage for either loading strategy.
#[derive(Debug, Clone)]
pub enum TensorData {
    Owned(Vec<f32>),
    Mapped { map: Arc<Mmap>, bytes: Range<usize> },
}

impl AsRef<[f32]> for TensorData {
    fn as_ref(&self) -> &[f32] {
        match self {
            TensorData::Owned(v) => v,
            // Offsets are 64-byte aligned within a page-aligned map and the
            // target was checked to be little-endian at load time.
            TensorData::Mapped { map, bytes } => bytemuck::cast_slice(&map[bytes.clone()]),
        }
    }
}

pub type LoadedModel = ModelWeights<TensorData>;

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<u64, StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(bytes.len() as u64)
}

/// Serializes `w` to `path`; returns the byte count written.
pub fn save_model<S: AsRef<[f32]>>(w: &ModelWeights<S>, path: &Path) -> Result<u64, StoreError> {
    let report = w.validate();
    if !report.passed() {
        return Err(StoreError::InvalidModel(report.to_string()));
    }
    write_atomic(path, &format::encode_model(w))
}

pub fn load_model(path: &Path, strategy: LoadStrategy) -> Result<LoadedModel, StoreError> {
    let fmt_err = |source| StoreError::Format {
        path: path.to_path_buf(),
        source,
    };
    match strategy {
        LoadStrategy::Eager => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let owned = format::decode_model(&bytes).map_err(fmt_err)?;
            let dims = *owned.dims();
            let tensors = owned
                .into_tensors()
                .into_iter()
                .map(|m| {
                    let (r, c) = (m.rows(), m.cols());
                    Matrix::from_storage(r, c, TensorData::Owned(m.into_vec()))
                        .map_err(ModelError::from)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ModelWeights::new(dims, tensors)?)
        }
        LoadStrategy::Mapped => {
            if cfg!(target_endian = "big") {
                return Err(StoreError::BigEndian);
            }
            let map = Arc::new(map_file(path)?);
            let header = ModelFileHeader::parse(&map).map_err(fmt_err)?;
            let tensors = header
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let data = TensorData::Mapped {
                        map: Arc::clone(&map),
                        bytes: header.tensor_range(i),
                    };
                    Matrix::from_storage(e.rows as usize, e.cols as usize, data)
                        .map_err(ModelError::from)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ModelWeights::new(header.dims, tensors)?)
        }
    }
}

fn map_file(path: &Path) -> Result<Mmap, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    if len == 0 {
        // Zero-length maps are an error on most platforms; report it as truncation.
        return Err(StoreError::Format {
            path: path.to_path_buf(),
            source: FormatError::Truncated {
                needed: 4,
                actual: 0,
            },
        });
    }
    // SAFETY: the map is read-only. Files are replaced by rename, never
    // rewritten in place, so an open map keeps seeing the old inode.
    unsafe { Mmap::map(&file) }.map_err(io_err(path))
}

pub fn save_trie(t: &VocabTrie, path: &Path) -> Result<u64, StoreError> {
    write_atomic(path, &t.encode())
}

/// Trie backed by a read-only file map.
#[derive(Debug)]
pub struct MappedTrie {
    map: Mmap,
}

impl MappedTrie {
    pub fn view(&self) -> TrieView<'_> {
        TrieView::new(&self.map).expect("validated when mapped")
    }
}

#[derive(Debug)]
pub enum LoadedTrie {
    Eager(VocabTrie),
    Mapped(MappedTrie),
}

impl TrieNodes for LoadedTrie {
    fn node_count(&self) -> u64 {
        match self {
            LoadedTrie::Eager(t) => t.node_count(),
            LoadedTrie::Mapped(m) => m.view().node_count(),
        }
    }

    fn node(&self, index: u64) -> Option<TrieNode> {
        match self {
            LoadedTrie::Eager(t) => t.node(index),
            LoadedTrie::Mapped(m) => m.view().node(index),
        }
    }
}

impl Vocabulary for LoadedTrie {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

pub fn load_trie(path: &Path, strategy: LoadStrategy) -> Result<LoadedTrie, StoreError> {
    let trie_err = |source| StoreError::Trie {
        path: path.to_path_buf(),
        source,
    };
    match strategy {
        LoadStrategy::Eager => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            Ok(LoadedTrie::Eager(
                VocabTrie::decode(&bytes).map_err(trie_err)?,
            ))
        }
        LoadStrategy::Mapped => {
            let file = File::open(path).map_err(io_err(path))?;
            if file.metadata().map_err(io_err(path))?.len() == 0 {
                return Err(trie_err(TrieError::Truncated {
                    needed: 12,
                    actual: 0,
                }));
            }
            // SAFETY: read-only map of a file that is only ever replaced by rename.
            let map = unsafe { Mmap::map(&file) }.map_err(io_err(path))?;
            // Lookups hop between distant nodes; read-ahead would only inflate residency.
            map.advise(Advice::Random).map_err(io_err(path))?;
            TrieView::new(&map).map_err(trie_err)?;
            Ok(LoadedTrie::Mapped(MappedTrie { map }))
        }
    }
}

/// Asks the kernel to drop cached pages of `path`, so the next mapped access
/// reads from storage as on a cold start. Best effort; a no-op off Linux.
pub fn evict_from_page_cache(path: &Path) -> Result<(), StoreError> {
    #[cfg(target_os = "linux")]
    {
        use std::os::fd::AsRawFd;
        let file = File::open(path).map_err(io_err(path))?;
        file.sync_all().map_err(io_err(path))?;
        // SAFETY: valid open descriptor; advisory call with no memory effects.
        let rc = unsafe { libc::posix_fadvise(file.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED) };
        if rc != 0 {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::from_raw_os_error(rc),
            });
        }
    }
    #[cfg(not(target_os = "linux"))]
    let _ = path;
    Ok(())
}

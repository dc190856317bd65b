//! Text and image embeddings, prompt-set pooling, patch pooling and fusion.
//!
//! Every vector leaving this module is unit length. Pooling is
//! normalize, mean, renormalize.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompt_bank::PromptSet;
use crate::types::{unit_normalize, EmbeddingVector, ImageBuffer};

/// Joint image-text embedding model.
///
/// Outputs need not be normalized. Resizing to the model's input
/// resolution is the backend's job.
pub trait EmbedderBackend: Send + Sync {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>>;
    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>>;
    fn dim(&self) -> usize;

    /// Model name plus weights hash; scopes cache entries.
    fn identity(&self) -> String;

    fn concurrency_safe(&self) -> bool {
        false
    }
}

impl<T: EmbedderBackend + ?Sized> EmbedderBackend for Box<T> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>> {
        (**self).embed_text(prompt)
    }
    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        (**self).embed_image(image)
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }
}

pub type ContentHash = [u8; 32];

pub fn text_hash(prompt: &str) -> ContentHash {
    let mut hasher = Sha256::new();
    hasher.update(b"text\0");
    hasher.update(prompt.as_bytes());
    hasher.finalize().into()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub text_hits: u64,
    pub text_misses: u64,
    pub image_hits: u64,
    pub image_misses: u64,
}

#[derive(Clone, Copy)]
enum Kind {
    Text,
    Image,
}

const CACHE_MAGIC: &[u8; 8] = b"ZSADEMB1";

/// Embedding store keyed by `(backend identity, content hash)`.
///
/// Optionally backed by an append-only log file:
///
/// ```text
/// header  : b"ZSADEMB1"
/// record  : identity_len u32 LE | identity UTF-8 | key [u8; 32] | dim u32 LE | dim x f64 LE
/// ```
///
/// The in-memory index is rebuilt from the log on open. A truncated
/// trailing record is discarded.
pub struct EmbeddingCache {
    enabled: bool,
    entries: RwLock<HashMap<(String, ContentHash), EmbeddingVector>>,
    log: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
    text_hits: AtomicU64,
    text_misses: AtomicU64,
    image_hits: AtomicU64,
    image_misses: AtomicU64,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::build(true, HashMap::new(), None, None)
    }

    /// A cache that never stores anything; every lookup is a miss.
    pub fn disabled() -> Self {
        Self::build(false, HashMap::new(), None, None)
    }

    fn build(
        enabled: bool,
        entries: HashMap<(String, ContentHash), EmbeddingVector>,
        log: Option<BufWriter<File>>,
        path: Option<PathBuf>,
    ) -> Self {
        Self {
            enabled,
            entries: RwLock::new(entries),
            log: log.map(Mutex::new),
            path,
            text_hits: AtomicU64::new(0),
            text_misses: AtomicU64::new(0),
            image_hits: AtomicU64::new(0),
            image_misses: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) the log at `path` and loads its records.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let (entries, valid_len) = if path.exists() {
            read_log(path)?
        } else {
            (HashMap::new(), 0)
        };
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if valid_len == 0 {
            file.set_len(0).map_err(|e| Error::io(path, e))?;
            file.write_all(CACHE_MAGIC).map_err(|e| Error::io(path, e))?;
        } else {
            let on_disk = file.metadata().map_err(|e| Error::io(path, e))?.len();
            if on_disk != valid_len {
                log::warn!(
                    "{}: discarding {} trailing bytes of a partial record",
                    path.display(),
                    on_disk - valid_len
                );
                file.set_len(valid_len).map_err(|e| Error::io(path, e))?;
            }
        }
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0))
            .map_err(|e| Error::io(path, e))?;
        Ok(Self::build(
            true,
            entries,
            Some(BufWriter::new(file)),
            Some(path.to_owned()),
        ))
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entry counts per backend identity, sorted by identity.
    pub fn identities(&self) -> Vec<(String, usize)> {
        let entries = self.entries.read().expect("cache lock");
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (identity, _) in entries.keys() {
            *counts.entry(identity.as_str()).or_default() += 1;
        }
        let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
        out.sort();
        out
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            text_hits: self.text_hits.load(Ordering::Relaxed),
            text_misses: self.text_misses.load(Ordering::Relaxed),
            image_hits: self.image_hits.load(Ordering::Relaxed),
            image_misses: self.image_misses.load(Ordering::Relaxed),
        }
    }

    pub fn get(&self, identity: &str, key: &ContentHash) -> Option<EmbeddingVector> {
        if !self.enabled {
            return None;
        }
        self.entries
            .read()
            .expect("cache lock")
            .get(&(identity.to_owned(), *key))
            .cloned()
    }

    pub fn insert(&self, identity: &str, key: ContentHash, vector: EmbeddingVector) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if let Some(log) = &self.log {
            let mut w = log.lock().expect("cache log lock");
            write_record(&mut *w, identity, &key, &vector)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert((identity.to_owned(), key), vector);
        Ok(())
    }

    fn get_or_compute(
        &self,
        kind: Kind,
        identity: &str,
        key: ContentHash,
        compute: impl FnOnce() -> Result<EmbeddingVector>,
    ) -> Result<EmbeddingVector> {
        let (hits, misses) = match kind {
            Kind::Text => (&self.text_hits, &self.text_misses),
            Kind::Image => (&self.image_hits, &self.image_misses),
        };
        if let Some(v) = self.get(identity, &key) {
            hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        misses.fetch_add(1, Ordering::Relaxed);
        let v = compute()?;
        self.insert(identity, key, v.clone())?;
        Ok(v)
    }
}

fn write_record(
    w: &mut impl Write,
    identity: &str,
    key: &ContentHash,
    vector: &EmbeddingVector,
) -> std::io::Result<()> {
    w.write_all(&(identity.len() as u32).to_le_bytes())?;
    w.write_all(identity.as_bytes())?;
    w.write_all(key)?;
    w.write_all(&(vector.dim() as u32).to_le_bytes())?;
    for v in vector.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

type LogContents = (HashMap<(String, ContentHash), EmbeddingVector>, u64);

fn read_log(path: &Path) -> Result<LogContents> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    match r.read_exact(&mut magic) {
        Ok(()) if &magic == CACHE_MAGIC => {}
        Ok(()) => {
            return Err(Error::Schema(format!(
                "{} is not an embedding cache",
                path.display()
            )))
        }
        // empty or shorter than the header: start fresh
        Err(_) => return Ok((HashMap::new(), 0)),
    }
    let mut entries = HashMap::new();
    let mut offset = CACHE_MAGIC.len() as u64;
    loop {
        match read_record(&mut r) {
            Ok(Some((identity, key, vector, len))) => {
                entries.insert((identity, key), vector);
                offset += len;
            }
            Ok(None) => break,
            Err(e) => {
                log::warn!("{}: stopping at offset {offset}: {e}", path.display());
                break;
            }
        }
    }
    Ok((entries, offset))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_record(r: &mut impl Read) -> std::io::Result<Option<(String, ContentHash, EmbeddingVector, u64)>> {
    let mut first = [0u8; 4];
    let n = r.read(&mut first)?;
    if n == 0 {
        return Ok(None);
    }
    r.read_exact(&mut first[n..])?;
    let id_len = u32::from_le_bytes(first) as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let identity = String::from_utf8(id)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut key = [0u8; 32];
    r.read_exact(&mut key)?;
    let dim = read_u32(r)? as usize;
    let mut values = Vec::with_capacity(dim);
    let mut b = [0u8; 8];
    for _ in 0..dim {
        r.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    let vector = EmbeddingVector::from_unit(values)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    let len = 4 + id_len as u64 + 32 + 4 + 8 * dim as u64;
    Ok(Some((identity, key, vector, len)))
}

fn checked(backend: &dyn EmbedderBackend, raw: Vec<f64>) -> Result<EmbeddingVector> {
    if raw.len() != backend.dim() {
        return Err(Error::DimMismatch {
            left: raw.len(),
            right: backend.dim(),
        });
    }
    unit_normalize(&raw)
}

pub fn embed_text(
    backend: &dyn EmbedderBackend,
    prompt: &str,
    cache: &EmbeddingCache,
) -> Result<EmbeddingVector> {
    cache.get_or_compute(Kind::Text, &backend.identity(), text_hash(prompt), || {
        checked(backend, backend.embed_text(prompt)?)
    })
}

/// Unit embedding of a whole image (the global feature).
pub fn embed_image_global(
    backend: &dyn EmbedderBackend,
    image: &ImageBuffer,
    cache: &EmbeddingCache,
) -> Result<EmbeddingVector> {
    cache.get_or_compute(Kind::Image, &backend.identity(), image.content_hash(), || {
        checked(backend, backend.embed_image(image)?)
    })
}

/// Coefficient-wise mean of unit vectors, renormalized.
pub fn mean_direction(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vectors.first().ok_or(Error::ZeroNorm(0.0))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimMismatch {
                left: dim,
                right: v.dim(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v.values()) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    unit_normalize(&mean)
}

/// Pools a prompt set into one text direction.
pub fn embed_prompt_set(
    backend: &dyn EmbedderBackend,
    set: &PromptSet,
    cache: &EmbeddingCache,
) -> Result<EmbeddingVector> {
    let vectors = set
        .prompts()
        .iter()
        .map(|p| embed_text(backend, p, cache))
        .collect::<Result<Vec<_>>>()?;
    mean_direction(&vectors)
}

/// Mean direction of the object patches, or `None` when there are none.
pub fn pool_object_patches(
    backend: &dyn EmbedderBackend,
    patches: &[ImageBuffer],
    cache: &EmbeddingCache,
) -> Result<Option<EmbeddingVector>> {
    if patches.is_empty() {
        return Ok(None);
    }
    let vectors = patches
        .iter()
        .map(|p| embed_image_global(backend, p, cache))
        .collect::<Result<Vec<_>>>()?;
    mean_direction(&vectors).map(Some)
}

/// Averages the global and local features; with no local feature the
/// global one is returned untouched.
pub fn fuse(e_image: &EmbeddingVector, e_object: Option<&EmbeddingVector>) -> Result<EmbeddingVector> {
    let Some(e_object) = e_object else {
        return Ok(e_image.clone());
    };
    if e_image.dim() != e_object.dim() {
        return Err(Error::DimMismatch {
            left: e_image.dim(),
            right: e_object.dim(),
        });
    }
    let avg: Vec<f64> = e_image
        .values()
        .iter()
        .zip(e_object.values())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    unit_normalize(&avg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeature {
    pub e_image: EmbeddingVector,
    pub e_object: Option<EmbeddingVector>,
    pub e_fused: EmbeddingVector,
    pub n_patches: usize,
}

impl FusedFeature {
    pub fn compute(
        backend: &dyn EmbedderBackend,
        image: &ImageBuffer,
        patches: &[ImageBuffer],
        cache: &EmbeddingCache,
    ) -> Result<Self> {
        let e_image = embed_image_global(backend, image, cache)?;
        let e_object = pool_object_patches(backend, patches, cache)?;
        let e_fused = fuse(&e_image, e_object.as_ref())?;
        Ok(Self {
            e_image,
            e_object,
            e_fused,
            n_patches: patches.len(),
        })
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::prompt_bank::Provenance;
    use crate::types::{CategoryId, Label};
    use std::collections::HashMap as Map;
    use std::sync::atomic::AtomicUsize;

    /// Looks vectors up by prompt text or by first pixel byte.
    struct Table {
        text: Map<String, Vec<f64>>,
        image: Map<u8, Vec<f64>>,
        calls: AtomicUsize,
    }

    impl Table {
        fn new(text: &[(&str, [f64; 2])], image: &[(u8, [f64; 2])]) -> Self {
            Self {
                text: text.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
                image: image.iter().map(|(k, v)| (*k, v.to_vec())).collect(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl EmbedderBackend for Table {
        fn embed_text(&self, prompt: &str) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.text.get(prompt).cloned().ok_or_else(|| Error::BackendUnavailable(prompt.into()))
        }
        fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.image[&image.data()[0]].clone())
        }
        fn dim(&self) -> usize {
            2
        }
        fn identity(&self) -> String {
            "table".into()
        }
    }

    fn set(prompts: &[&str]) -> PromptSet {
        PromptSet::new(
            CategoryId::new("bottle").unwrap(),
            Label::Normal,
            prompts.iter().map(|s| s.to_string()).collect(),
            Provenance::Manual,
        )
        .unwrap()
    }

    fn unit(v: [f64; 2]) -> EmbeddingVector {
        EmbeddingVector::from_unit(v.to_vec()).unwrap()
    }

    fn close(a: &EmbeddingVector, b: &[f64], tol: f64) -> bool {
        a.values().iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn px(v: u8) -> ImageBuffer {
        ImageBuffer::filled(2, 2, &[v]).unwrap()
    }

    #[test]
    fn prompt_set_pooling() {
        let b = Table::new(&[("a", [3.0, 4.0]), ("x", [1.0, 0.0]), ("y", [0.0, 2.0]), ("neg", [-5.0, 0.0])], &[]);
        let cache = EmbeddingCache::in_memory();
        assert_eq!(embed_prompt_set(&b, &set(&["a"]), &cache).unwrap().values(), &[0.6, 0.8]);
        let v = embed_prompt_set(&b, &set(&["x", "y"]), &cache).unwrap();
        assert!(close(&v, &[0.707_106_8, 0.707_106_8], 1e-6));
        assert!(matches!(embed_prompt_set(&b, &set(&["x", "neg"]), &cache), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn global_embedding_is_cached_by_content() {
        let b = Table::new(&[], &[(1, [3.0, 4.0]), (2, [1.0, 0.0])]);
        let cache = EmbeddingCache::in_memory();
        let first = embed_image_global(&b, &px(1), &cache).unwrap();
        assert_eq!(first.values(), &[0.6, 0.8]);
        assert_eq!(embed_image_global(&b, &px(1), &cache).unwrap(), first);
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);

        let mut data = px(1).into_data();
        data[3] = 9;
        let other = ImageBuffer::new(2, 2, 1, data).unwrap();
        assert_ne!(other.content_hash(), px(1).content_hash());
        embed_image_global(&b, &other, &cache).unwrap();
        assert_eq!(b.calls.load(Ordering::SeqCst), 2);
        let stats = cache.stats();
        assert_eq!((stats.image_hits, stats.image_misses), (1, 2));
    }

    #[test]
    fn patch_pooling() {
        let b = Table::new(&[], &[(1, [1.0, 0.0]), (2, [0.0, 1.0]), (3, [-1.0, 0.0])]);
        let cache = EmbeddingCache::disabled();
        assert!(pool_object_patches(&b, &[], &cache).unwrap().is_none());
        assert_eq!(pool_object_patches(&b, &[px(1)], &cache).unwrap().unwrap().values(), &[1.0, 0.0]);
        let v = pool_object_patches(&b, &[px(1), px(2)], &cache).unwrap().unwrap();
        assert!(close(&v, &[0.707_106_8, 0.707_106_8], 1e-6));
        assert!(pool_object_patches(&b, &[px(1), px(3)], &cache).is_err());
    }

    #[test]
    fn fuse_examples() {
        let e = unit([0.6, 0.8]);
        assert_eq!(fuse(&e, None).unwrap(), e);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let f = fuse(&unit([1.0, 0.0]), Some(&unit([h, h]))).unwrap();
        // cos and sin of 22.5 degrees
        assert!(close(&f, &[0.923_879_5, 0.382_683_4], 1e-6));
        let same = fuse(&e, Some(&e)).unwrap();
        assert!(close(&same, e.values(), 1e-12));
        assert!(matches!(fuse(&unit([1.0, 0.0]), Some(&unit([-1.0, 0.0]))), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn wrong_backend_dim_is_rejected() {
        let b = Table::new(&[("three", [1.0, 0.0])], &[]);
        struct Wide(Table);
        impl EmbedderBackend for Wide {
            fn embed_text(&self, p: &str) -> Result<Vec<f64>> {
                let mut v = self.0.embed_text(p)?;
                v.push(1.0);
                Ok(v)
            }
            fn embed_image(&self, i: &ImageBuffer) -> Result<Vec<f64>> {
                self.0.embed_image(i)
            }
            fn dim(&self) -> usize {
                2
            }
            fn identity(&self) -> String {
                "wide".into()
            }
        }
        let err = embed_text(&Wide(b), "three", &EmbeddingCache::disabled()).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { left: 3, right: 2 }));
    }

    #[test]
    fn disk_cache_survives_reopen_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache/emb.bin");
        let b = Table::new(&[("x", [1.0, 0.0]), ("y", [0.0, 2.0])], &[]);
        {
            let cache = EmbeddingCache::open(&path).unwrap();
            embed_text(&b, "x", &cache).unwrap();
            embed_text(&b, "y", &cache).unwrap();
        }
        let full_len = std::fs::metadata(&path).unwrap().len();
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.identities(), vec![("table".to_owned(), 2)]);
        assert_eq!(embed_text(&b, "y", &cache).unwrap().values(), &[0.0, 1.0]);
        assert_eq!(cache.stats().text_hits, 1);
        drop(cache);

        // chop the last record in half
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(full_len - 5).unwrap();
        drop(f);
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        embed_text(&b, "y", &cache).unwrap();
        drop(cache);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), full_len);
        assert_eq!(EmbeddingCache::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn foreign_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        std::fs::write(&path, b"not a cache at all").unwrap();
        assert!(matches!(EmbeddingCache::open(&path), Err(Error::Schema(_))));
    }
}

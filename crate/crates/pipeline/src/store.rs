//! Content-addressed object store plus a metadata index kept as an
//! append-only JSON-lines log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("not-found: {0}")]
    NotFound(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt index at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("bad-key: {0}")]
    BadKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Pdf,
    Parsed,
    Annotation,
    Model,
    Structured,
    Detections,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Pdf => "pdf",
            Kind::Parsed => "parsed",
            Kind::Annotation => "annotation",
            Kind::Model => "model",
            Kind::Structured => "structured",
            Kind::Detections => "detections",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredObject {
    pub key: String,
    pub media_type: String,
    pub size: u64,
    pub created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    /// Record identity. Equals `key` except for records that are replaced
    /// on resubmission, such as page annotations.
    pub id: String,
    pub key: String,
    #[serde(default)]
    pub collection: Option<String>,
    pub kind: Kind,
    pub status: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

impl MetadataRecord {
    pub fn new(key: impl Into<String>, kind: Kind) -> Self {
        let key = key.into();
        Self {
            id: key.clone(),
            key,
            collection: None,
            kind,
            status: "stored".into(),
            attributes: BTreeMap::new(),
            created_ms: 0,
            updated_ms: 0,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn in_collection(mut self, collection: impl Into<String>) -> Self {
        self.collection = Some(collection.into());
        self
    }

    pub fn attr(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.attributes.insert(k.into(), v.into());
        self
    }

    pub fn attribute(&self, k: &str) -> Option<&str> {
        self.attributes.get(k).map(String::as_str)
    }
}

/// Blobs under `root/objects/ab/cdef...`, named by the SHA-256 of their bytes.
#[derive(Debug)]
pub struct ObjectStore {
    root: PathBuf,
}

fn check_key(key: &str) -> Result<(), StoreError> {
    if key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(StoreError::BadKey(key.to_string()))
    }
}

impl ObjectStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().join("objects");
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(&key[2..])
    }

    /// Writes to a temporary file and renames it into place. Returns the key
    /// and whether the object was new.
    pub fn put(&self, bytes: &[u8]) -> Result<(String, bool), StoreError> {
        let key = hash_bytes(bytes);
        let path = self.path(&key);
        if path.exists() {
            return Ok((key, false));
        }
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", &key[2..], unique_suffix()));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok((key, true))
    }

    pub fn get(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        check_key(key)?;
        match fs::read(self.path(key)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(key.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        check_key(key).is_ok() && self.path(key).is_file()
    }

    pub fn keys(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for d in fs::read_dir(&self.root)? {
            let d = d?;
            if !d.file_type()?.is_dir() {
                continue;
            }
            let prefix = d.file_name().to_string_lossy().into_owned();
            for f in fs::read_dir(d.path())? {
                let name = f?.file_name().to_string_lossy().into_owned();
                if !name.starts_with('.') {
                    out.push(format!("{prefix}{name}"));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

pub(crate) fn unique_suffix() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    format!(
        "{:013}{:010}{:012}",
        now_ms(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Objects,
    Records,
    Tasks,
    Collections,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogEntry {
    table: Table,
    id: String,
    value: Option<serde_json::Value>,
}

#[derive(Default)]
struct IndexState {
    rows: BTreeMap<(Table, String), serde_json::Value>,
    /// (collection, kind, status) -> record ids
    by_attrs: BTreeMap<(String, Kind, String), BTreeSet<String>>,
    /// Bytes of the log already applied, and how many lines they hold.
    offset: u64,
    lines: usize,
}

impl IndexState {
    fn apply(&mut self, table: Table, id: String, value: Option<serde_json::Value>) {
        if table == Table::Records {
            if let Some(old) = self.rows.get(&(table, id.clone())) {
                if let Ok(r) = serde_json::from_value::<MetadataRecord>(old.clone()) {
                    let slot = (r.collection.unwrap_or_default(), r.kind, r.status);
                    if let Some(set) = self.by_attrs.get_mut(&slot) {
                        set.remove(&id);
                    }
                }
            }
            if let Some(v) = &value {
                if let Ok(r) = serde_json::from_value::<MetadataRecord>(v.clone()) {
                    let slot = (r.collection.unwrap_or_default(), r.kind, r.status);
                    self.by_attrs.entry(slot).or_default().insert(id.clone());
                }
            }
        }
        match value {
            Some(v) => {
                self.rows.insert((table, id), v);
            }
            None => {
                self.rows.remove(&(table, id));
            }
        }
    }

    /// Applies the complete lines of `bytes`, which start at `offset`.
    fn ingest(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        let mut pos = 0;
        while let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') {
            let body = &bytes[pos..pos + nl];
            self.lines += 1;
            if !body.iter().all(u8::is_ascii_whitespace) {
                let e: LogEntry = serde_json::from_slice(body).map_err(|err| StoreError::Corrupt {
                    line: self.lines,
                    message: err.to_string(),
                })?;
                self.apply(e.table, e.id, e.value);
            }
            pos += nl + 1;
        }
        self.offset += pos as u64;
        Ok(())
    }
}

struct Inner {
    state: IndexState,
    log: File,
}

impl Inner {
    /// Applies lines other processes appended since the last call. A
    /// trailing partial line can only come from a writer that died while
    /// holding the lock, so it is cut off.
    fn catch_up(&mut self) -> Result<(), StoreError> {
        let len = self.log.metadata()?.len();
        if len > self.state.offset {
            let mut buf = Vec::with_capacity((len - self.state.offset) as usize);
            self.log.seek(SeekFrom::Start(self.state.offset))?;
            (&mut self.log).take(len - self.state.offset).read_to_end(&mut buf)?;
            self.state.ingest(&buf)?;
            if len > self.state.offset {
                self.log.set_len(self.state.offset)?;
            }
        }
        Ok(())
    }

    fn append(&mut self, table: Table, id: &str, value: Option<serde_json::Value>) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(&LogEntry {
            table,
            id: id.to_string(),
            value: value.clone(),
        })
        .expect("index entry serializes");
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.state.offset += line.len() as u64;
        self.state.lines += 1;
        self.state.apply(table, id.to_string(), value);
        Ok(())
    }
}

/// Key-value tables replayed from `root/index.jsonl`. Every mutation is one
/// appended line, so a record update is atomic and the last line wins.
/// Operations hold an exclusive lock on the log and first replay whatever
/// other processes appended, so several processes can share one index.
pub struct MetadataIndex {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl MetadataIndex {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        fs::create_dir_all(root.as_ref())?;
        let path = root.as_ref().join("index.jsonl");
        let log = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let index = Self {
            path,
            inner: Mutex::new(Inner {
                state: IndexState::default(),
                log,
            }),
        };
        index.locked(|_| Ok(()))?;
        Ok(index)
    }

    fn locked<R>(&self, f: impl FnOnce(&mut Inner) -> Result<R, StoreError>) -> Result<R, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        inner.log.lock()?;
        let r = inner.catch_up().and_then(|()| f(&mut inner));
        inner.log.unlock()?;
        r
    }

    fn read<R>(&self, f: impl FnOnce(&IndexState) -> R) -> R {
        let mut inner = self.inner.lock().unwrap();
        // Reads fall back to the state already loaded if the log is unreadable.
        if inner.log.lock().is_ok() {
            if let Err(e) = inner.catch_up() {
                tracing::warn!(error = %e, "index catch-up failed");
            }
            let _ = inner.log.unlock();
        }
        f(&inner.state)
    }

    pub fn put<T: Serialize>(&self, table: Table, id: &str, value: &T) -> Result<(), StoreError> {
        let v = serde_json::to_value(value).expect("value serializes");
        self.locked(|i| i.append(table, id, Some(v)))
    }

    /// Inserts unless a row with this id exists. Returns whether it inserted.
    pub fn put_if_absent<T: Serialize>(&self, table: Table, id: &str, value: &T) -> Result<bool, StoreError> {
        let v = serde_json::to_value(value).expect("value serializes");
        self.locked(|i| {
            if i.state.rows.contains_key(&(table, id.to_string())) {
                return Ok(false);
            }
            i.append(table, id, Some(v))?;
            Ok(true)
        })
    }

    /// Read-modify-write of one row under the index lock. Returning `None`
    /// from `f` leaves the row untouched.
    pub fn update<T, F>(&self, table: Table, id: &str, f: F) -> Result<Option<T>, StoreError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(Option<T>) -> Option<T>,
    {
        self.locked(|i| {
            let current = i
                .state
                .rows
                .get(&(table, id.to_string()))
                .and_then(|v| serde_json::from_value(v.clone()).ok());
            let Some(next) = f(current) else {
                return Ok(None);
            };
            i.append(table, id, Some(serde_json::to_value(&next).expect("value serializes")))?;
            Ok(Some(next))
        })
    }

    pub fn delete(&self, table: Table, id: &str) -> Result<(), StoreError> {
        self.locked(|i| i.append(table, id, None))
    }

    pub fn get<T: DeserializeOwned>(&self, table: Table, id: &str) -> Option<T> {
        self.read(|st| {
            st.rows
                .get(&(table, id.to_string()))
                .and_then(|v| serde_json::from_value(v.clone()).ok())
        })
    }

    pub fn scan<T: DeserializeOwned>(&self, table: Table) -> Vec<(String, T)> {
        self.read(|st| {
            st.rows
                .range((table, String::new())..)
                .take_while(|((t, _), _)| *t == table)
                .filter_map(|((_, id), v)| serde_json::from_value(v.clone()).ok().map(|t| (id.clone(), t)))
                .collect()
        })
    }

    /// Records matching every given attribute, via the secondary index.
    pub fn query(&self, collection: Option<&str>, kind: Option<Kind>, status: Option<&str>) -> Vec<MetadataRecord> {
        self.read(|st| {
            let mut ids = BTreeSet::new();
            for ((c, k, s), set) in &st.by_attrs {
                if collection.is_some_and(|x| x != c) || kind.is_some_and(|x| x != *k) || status.is_some_and(|x| x != s)
                {
                    continue;
                }
                ids.extend(set.iter().cloned());
            }
            ids.into_iter()
                .filter_map(|id| st.rows.get(&(Table::Records, id)))
                .filter_map(|v| serde_json::from_value(v.clone()).ok())
                .collect()
        })
    }

    /// Rewrites the log with one line per live row. Only safe while no
    /// other process has the index open.
    pub fn compact(&self) -> Result<(), StoreError> {
        let tmp = self.path.with_extension(format!("jsonl.{}.tmp", unique_suffix()));
        let mut inner = self.inner.lock().unwrap();
        inner.log.lock()?;
        inner.catch_up()?;
        let mut written = 0u64;
        {
            let mut f = File::create(&tmp)?;
            for ((table, id), v) in &inner.state.rows {
                let mut line = serde_json::to_vec(&LogEntry {
                    table: *table,
                    id: id.clone(),
                    value: Some(v.clone()),
                })
                .expect("index entry serializes");
                line.push(b'\n');
                f.write_all(&line)?;
                written += line.len() as u64;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        let old = std::mem::replace(
            &mut inner.log,
            OpenOptions::new().read(true).append(true).open(&self.path)?,
        );
        let _ = old.unlock();
        inner.state.offset = written;
        inner.state.lines = inner.state.rows.len();
        Ok(())
    }
}

/// Object store and metadata index under one data directory.
pub struct Store {
    pub objects: ObjectStore,
    pub index: MetadataIndex,
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        Ok(Self {
            objects: ObjectStore::open(&root)?,
            index: MetadataIndex::open(&root)?,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores bytes and, when given, a metadata record pointing at them.
    /// Rewrites of the same content keep the first record unless its id
    /// differs from the key (replaceable records are last-write-wins).
    pub fn put(&self, bytes: &[u8], media_type: &str, record: Option<MetadataRecord>) -> Result<String, StoreError> {
        let (key, _) = self.objects.put(bytes)?;
        let now = now_ms();
        self.index.put_if_absent(
            Table::Objects,
            &key,
            &StoredObject {
                key: key.clone(),
                media_type: media_type.to_string(),
                size: bytes.len() as u64,
                created_ms: now,
            },
        )?;
        if let Some(mut r) = record {
            r.key = key.clone();
            if r.id.is_empty() {
                r.id = key.clone();
            }
            if r.created_ms == 0 {
                r.created_ms = now;
            }
            r.updated_ms = now;
            if r.id == key {
                self.index.put_if_absent(Table::Records, &key, &r)?;
            } else {
                if let Some(old) = self.record(&r.id) {
                    r.created_ms = old.created_ms;
                }
                self.index.put(Table::Records, &r.id.clone(), &r)?;
            }
        }
        Ok(key)
    }

    pub fn get(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        self.objects.get(key)
    }

    pub fn object_info(&self, key: &str) -> Option<StoredObject> {
        self.index.get(Table::Objects, key)
    }

    pub fn record(&self, id: &str) -> Option<MetadataRecord> {
        self.index.get(Table::Records, id)
    }

    pub fn put_record(&self, mut record: MetadataRecord) -> Result<(), StoreError> {
        if !self.objects.contains(&record.key) {
            return Err(StoreError::NotFound(record.key));
        }
        record.updated_ms = now_ms();
        if record.created_ms == 0 {
            record.created_ms = record.updated_ms;
        }
        self.index.put(Table::Records, &record.id.clone(), &record)
    }

    pub fn query(&self, collection: Option<&str>, kind: Option<Kind>, status: Option<&str>) -> Vec<MetadataRecord> {
        self.index.query(collection, kind, status)
    }

    /// Ids of records whose key does not resolve to a stored object.
    pub fn orphans(&self) -> Vec<String> {
        self.index
            .scan::<MetadataRecord>(Table::Records)
            .into_iter()
            .filter(|(_, r)| !self.objects.contains(&r.key))
            .map(|(id, _)| id)
            .collect()
    }
}

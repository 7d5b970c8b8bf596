//! Append-only JSON-lines journals and snapshotting keyed stores.
//!
//! A keyed store writes every upsert to `<name>.log.jsonl`; every
//! `snapshot_every` appends it writes `<name>.snapshot.json` atomically and
//! truncates the log. Recovery loads the snapshot and replays the log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Decode { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("encode: {0}")]
    Encode(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PersistError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

/// Reads every line of a JSON-lines file; a missing file reads as empty.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| PersistError::Decode {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Append-only JSON-lines file.
#[derive(Debug)]
pub struct Journal<T> {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
    _marker: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> Journal<T> {
    /// Opens (creating if needed) and returns the journal with its contents.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<T>)> {
        let path = path.as_ref().to_path_buf();
        let existing = read_lines(&path)?;
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok((Self { path, writer: Mutex::new(BufWriter::new(file)), _marker: PhantomData }, existing))
    }

    pub fn append_all<'a>(&self, items: impl IntoIterator<Item = &'a T>) -> Result<()>
    where
        T: 'a,
    {
        let mut w = self.writer.lock();
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n").map_err(io_err(&self.path))?;
        }
        w.flush().map_err(io_err(&self.path))
    }

    pub fn append(&self, item: &T) -> Result<()> {
        self.append_all(std::iter::once(item))
    }

    fn truncate(&self) -> Result<()> {
        let mut w = self.writer.lock();
        w.flush().map_err(io_err(&self.path))?;
        let file =
            OpenOptions::new().create(true).write(true).truncate(true).open(&self.path).map_err(io_err(&self.path))?;
        drop(file);
        let file = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
        *w = BufWriter::new(file);
        Ok(())
    }
}

/// Records that can be kept in a [`KeyedStore`].
pub trait Keyed {
    fn key(&self) -> String;
}

struct Backing<T> {
    journal: Journal<T>,
    snapshot_path: PathBuf,
    snapshot_every: usize,
}

struct Inner<T> {
    records: BTreeMap<String, T>,
    appended: usize,
}

/// Map of records with log-plus-snapshot durability.
pub struct KeyedStore<T> {
    backing: Option<Backing<T>>,
    inner: RwLock<Inner<T>>,
}

impl<T> std::fmt::Debug for KeyedStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyedStore").field("len", &self.inner.read().records.len()).finish()
    }
}

impl<T: Keyed + Clone + Serialize + DeserializeOwned> KeyedStore<T> {
    pub fn in_memory() -> Self {
        Self { backing: None, inner: RwLock::new(Inner { records: BTreeMap::new(), appended: 0 }) }
    }

    pub fn open(dir: &Path, name: &str, snapshot_every: usize) -> Result<Self> {
        let snapshot_path = dir.join(format!("{name}.snapshot.json"));
        let mut records: BTreeMap<String, T> = match fs::read(&snapshot_path) {
            Ok(bytes) => {
                let list: Vec<T> = serde_json::from_slice(&bytes).map_err(|source| PersistError::Decode {
                    path: snapshot_path.clone(),
                    line: 0,
                    source,
                })?;
                list.into_iter().map(|r| (r.key(), r)).collect()
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(io_err(&snapshot_path)(e)),
        };
        let (journal, log) = Journal::<T>::open(dir.join(format!("{name}.log.jsonl")))?;
        let appended = log.len();
        for r in log {
            records.insert(r.key(), r);
        }
        Ok(Self {
            backing: Some(Backing { journal, snapshot_path, snapshot_every: snapshot_every.max(1) }),
            inner: RwLock::new(Inner { records, appended }),
        })
    }

    /// Inserts only if the key is free; returns false when taken.
    pub fn insert_new(&self, record: T) -> Result<bool> {
        let mut inner = self.inner.write();
        if inner.records.contains_key(&record.key()) {
            return Ok(false);
        }
        self.write_locked(&mut inner, record)?;
        Ok(true)
    }

    pub fn upsert(&self, record: T) -> Result<()> {
        let mut inner = self.inner.write();
        self.write_locked(&mut inner, record)
    }

    /// Atomic read-modify-write; `f` returning `None` leaves the store untouched.
    pub fn modify<R>(&self, key: &str, f: impl FnOnce(Option<&T>) -> Option<(T, R)>) -> Result<Option<R>> {
        let mut inner = self.inner.write();
        match f(inner.records.get(key)) {
            Some((record, out)) => {
                self.write_locked(&mut inner, record)?;
                Ok(Some(out))
            }
            None => Ok(None),
        }
    }

    fn write_locked(&self, inner: &mut Inner<T>, record: T) -> Result<()> {
        if let Some(b) = &self.backing {
            b.journal.append(&record)?;
            inner.appended += 1;
        }
        inner.records.insert(record.key(), record);
        if let Some(b) = &self.backing {
            if inner.appended >= b.snapshot_every {
                let list: Vec<&T> = inner.records.values().collect();
                write_atomic(&b.snapshot_path, &serde_json::to_vec(&list)?)?;
                b.journal.truncate()?;
                inner.appended = 0;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<T> {
        self.inner.read().records.get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.read().records.contains_key(key)
    }

    pub fn all(&self) -> Vec<T> {
        self.inner.read().records.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Append-only sequence of records, optionally journaled.
pub struct EventLog<T> {
    journal: Option<Journal<T>>,
    events: RwLock<Vec<T>>,
}

impl<T> std::fmt::Debug for EventLog<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("len", &self.events.read().len()).finish()
    }
}

impl<T: Clone + Serialize + DeserializeOwned> EventLog<T> {
    pub fn in_memory() -> Self {
        Self { journal: None, events: RwLock::new(Vec::new()) }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (journal, events) = Journal::open(path)?;
        Ok(Self { journal: Some(journal), events: RwLock::new(events) })
    }

    pub fn append_all(&self, items: Vec<T>) -> Result<()> {
        let mut events = self.events.write();
        if let Some(j) = &self.journal {
            j.append_all(&items)?;
        }
        events.extend(items);
        Ok(())
    }

    pub fn append(&self, item: T) -> Result<()> {
        self.append_all(vec![item])
    }

    /// Consistent read view over the current contents.
    pub fn read<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.events.read())
    }

    pub fn all(&self) -> Vec<T> {
        self.events.read().clone()
    }

    pub fn len(&self) -> usize {
        self.events.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: String,
        n: u32,
    }

    impl Keyed for Rec {
        fn key(&self) -> String {
            self.id.clone()
        }
    }

    fn rec(id: &str, n: u32) -> Rec {
        Rec { id: id.into(), n }
    }

    #[test]
    fn recovers_from_snapshot_plus_log() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyedStore::<Rec>::open(dir.path(), "recs", 3).unwrap();
        for i in 0..7 {
            store.upsert(rec(&format!("r{}", i % 4), i)).unwrap();
        }
        assert!(dir.path().join("recs.snapshot.json").exists());
        let log = read_lines::<Rec>(&dir.path().join("recs.log.jsonl")).unwrap();
        assert_eq!(log.len(), 1);
        let reopened = KeyedStore::<Rec>::open(dir.path(), "recs", 3).unwrap();
        assert_eq!(reopened.all(), store.all());
        assert_eq!(reopened.get("r2").unwrap().n, 6);
    }

    #[test]
    fn insert_new_refuses_duplicates() {
        let store = KeyedStore::<Rec>::in_memory();
        assert!(store.insert_new(rec("a", 1)).unwrap());
        assert!(!store.insert_new(rec("a", 2)).unwrap());
        assert_eq!(store.get("a").unwrap().n, 1);
    }

    #[test]
    fn event_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::<Rec>::open(&path).unwrap();
        log.append_all(vec![rec("a", 1), rec("b", 2)]).unwrap();
        log.append(rec("c", 3)).unwrap();
        let contents = fs::read_to_string(&path).unwrap();
        assert_eq!(contents.lines().count(), 3);
        assert_eq!(EventLog::<Rec>::open(&path).unwrap().all(), log.all());
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"n\":1}\nnot json\n").unwrap();
        match read_lines::<Rec>(&path) {
            Err(PersistError::Decode { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::codec::{self, Encoder, Fields};
use super::{batch_compact, serve_from, BatchSnapshot, LambdaError, LogEntry};
use crate::triple::{SemanticTriple, TimeWindow, TripleFilter};

const LOG_FILE: &str = "log.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompactionPolicy {
    /// Compact after this much stream time since the previous compaction.
    pub interval_ms: u64,
    /// Compact once the log tail holds this many entries.
    pub max_entries: usize,
}

impl Default for CompactionPolicy {
    fn default() -> Self {
        Self {
            interval_ms: 60_000,
            max_entries: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub snapshot_id: u64,
    pub snapshot_triples: usize,
    pub covers_up_to_ms: u64,
    pub tail_entries: usize,
    /// Total entries ever appended (the next log offset).
    pub next_offset: u64,
}

#[derive(Debug, Default)]
struct Tail {
    /// Offset of `entries[0]`.
    base: u64,
    entries: Vec<LogEntry>,
    last_ts: u64,
}

struct Disk {
    dir: PathBuf,
    log: BufWriter<File>,
}

/// Speed log + batch snapshots + serving. One appender, any number of
/// readers; compaction may run on another thread.
pub struct LambdaStore {
    tail: RwLock<Tail>,
    snapshot: ArcSwap<BatchSnapshot>,
    disk: Mutex<Option<Disk>>,
    compacting: Mutex<u64>,
    policy: CompactionPolicy,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LambdaError + '_ {
    move |source| LambdaError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// CRC-32 over the snapshot body records (header excluded).
pub(super) fn body_checksum(s: &BatchSnapshot) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for p in body_payloads(s) {
        h.update(&p);
    }
    h.finalize()
}

fn body_payloads(s: &BatchSnapshot) -> impl Iterator<Item = Vec<u8>> + '_ {
    s.triples
        .iter()
        .map(|t| codec::encode_entry(&LogEntry::Triple(t.clone())))
        .chain(s.resets.iter().map(|(epoch, at_ms)| {
            codec::encode_entry(&LogEntry::Reset {
                epoch: *epoch,
                at_ms: *at_ms,
            })
        }))
}

fn snapshot_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("snap-{id}.bin"))
}

/// Serializes a snapshot: header record, body records, trailer with the body
/// checksum.
pub fn encode_snapshot(s: &BatchSnapshot) -> Vec<u8> {
    let mut out = Vec::new();
    let mut head = Encoder::new(codec::KIND_SNAP_HEADER);
    head.u64(codec::T_VERSION, codec::FORMAT_VERSION)
        .u64(codec::T_SNAP_ID, s.snapshot_id)
        .u64(codec::T_COVERS_MS, s.covers_up_to_ms)
        .u64(codec::T_COVERS_OFFSET, s.covers_offset)
        .u64(codec::T_COUNT, (s.triples.len() + s.resets.len()) as u64);
    codec::write_record(&mut out, &head.finish()).expect("vec write");
    for p in body_payloads(s) {
        codec::write_record(&mut out, &p).expect("vec write");
    }
    let mut trailer = Encoder::new(codec::KIND_SNAP_TRAILER);
    trailer.u64(codec::T_CHECKSUM, s.checksum as u64);
    codec::write_record(&mut out, &trailer.finish()).expect("vec write");
    out
}

/// Parses and verifies a serialized snapshot.
pub fn decode_snapshot(bytes: &[u8]) -> Result<BatchSnapshot, String> {
    let mut r = bytes;
    let next = |r: &mut &[u8]| -> Result<Vec<u8>, String> {
        codec::read_record(r)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| "unexpected end of snapshot".to_string())
    };
    let head = Fields::parse(&next(&mut r)?).map_err(|e| e.to_string())?;
    if head.kind().map_err(|e| e.to_string())? != codec::KIND_SNAP_HEADER {
        return Err("missing snapshot header".into());
    }
    let get = |tag| head.u64(tag).map_err(|e| e.to_string());
    if get(codec::T_VERSION)? != codec::FORMAT_VERSION {
        return Err("unsupported snapshot version".into());
    }
    let mut snap = BatchSnapshot {
        snapshot_id: get(codec::T_SNAP_ID)?,
        covers_up_to_ms: get(codec::T_COVERS_MS)?,
        covers_offset: get(codec::T_COVERS_OFFSET)?,
        ..Default::default()
    };
    let mut h = crc32fast::Hasher::new();
    for _ in 0..get(codec::T_COUNT)? {
        let p = next(&mut r)?;
        h.update(&p);
        match codec::decode_entry(&p).map_err(|e| e.to_string())? {
            LogEntry::Triple(t) => snap.triples.push(t),
            LogEntry::Reset { epoch, at_ms } => snap.resets.push((epoch, at_ms)),
        }
    }
    let trailer = Fields::parse(&next(&mut r)?).map_err(|e| e.to_string())?;
    if trailer.kind().map_err(|e| e.to_string())? != codec::KIND_SNAP_TRAILER {
        return Err("missing snapshot trailer".into());
    }
    let recorded = trailer.u64(codec::T_CHECKSUM).map_err(|e| e.to_string())? as u32;
    let actual = h.finalize();
    if recorded != actual {
        return Err(format!("checksum mismatch: recorded {recorded:#x}, actual {actual:#x}"));
    }
    if !r.is_empty() {
        return Err("trailing bytes after snapshot".into());
    }
    snap.checksum = actual;
    Ok(snap)
}

fn log_header(base: u64) -> Vec<u8> {
    let mut e = Encoder::new(codec::KIND_LOG_HEADER);
    e.u64(codec::T_VERSION, codec::FORMAT_VERSION).u64(codec::T_BASE, base);
    e.finish()
}

/// Writes a fresh log holding `entries` starting at offset `base`, via a
/// temporary file and rename.
fn rewrite_log(dir: &Path, base: u64, entries: &[LogEntry]) -> Result<BufWriter<File>, LambdaError> {
    let path = dir.join(LOG_FILE);
    let tmp = dir.join("log.bin.tmp");
    {
        let f = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(f);
        codec::write_record(&mut w, &log_header(base)).map_err(io_err(&tmp))?;
        for e in entries {
            codec::write_record(&mut w, &codec::encode_entry(e)).map_err(io_err(&tmp))?;
        }
        w.flush().map_err(io_err(&tmp))?;
        w.get_ref().sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    let f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
    Ok(BufWriter::new(f))
}

struct Recovered {
    base: u64,
    entries: Vec<LogEntry>,
    /// Byte length of the valid prefix.
    valid_len: u64,
    torn: bool,
}

/// Reads the log up to the first bad or torn record.
fn read_log(path: &Path) -> Result<Option<Recovered>, LambdaError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut r = BufReader::new(f);
    let header = match codec::read_record(&mut r) {
        Ok(Some(p)) => p,
        _ => {
            return Ok(Some(Recovered {
                base: 0,
                entries: Vec::new(),
                valid_len: 0,
                torn: true,
            }))
        }
    };
    let base = Fields::parse(&header)
        .and_then(|f| f.u64(codec::T_BASE))
        .unwrap_or(0);
    let mut valid_len = codec::record_len(&header);
    let mut entries = Vec::new();
    let mut torn = false;
    loop {
        match codec::read_record(&mut r) {
            Ok(Some(p)) => match codec::decode_entry(&p) {
                Ok(e) => {
                    valid_len += codec::record_len(&p);
                    entries.push(e);
                }
                Err(_) => {
                    torn = true;
                    break;
                }
            },
            Ok(None) => break,
            Err(_) => {
                torn = true;
                break;
            }
        }
    }
    Ok(Some(Recovered {
        base,
        entries,
        valid_len,
        torn,
    }))
}

fn latest_snapshot(dir: &Path) -> Result<BatchSnapshot, LambdaError> {
    let mut ids: Vec<u64> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("snap-")?.strip_suffix(".bin")?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    for id in ids.into_iter().rev() {
        let path = snapshot_path(dir, id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        match decode_snapshot(&bytes) {
            Ok(s) => return Ok(s),
            Err(msg) => warn!(path = %path.display(), %msg, "skipping unreadable snapshot"),
        }
    }
    Ok(BatchSnapshot::default())
}

impl LambdaStore {
    /// Store without persistence.
    pub fn in_memory() -> Self {
        Self::with_policy(CompactionPolicy::default())
    }

    pub fn with_policy(policy: CompactionPolicy) -> Self {
        Self {
            tail: RwLock::new(Tail::default()),
            snapshot: ArcSwap::from_pointee(BatchSnapshot::default()),
            disk: Mutex::new(None),
            compacting: Mutex::new(0),
            policy,
        }
    }

    /// Opens (or creates) a store directory, recovering the latest valid
    /// snapshot and every intact log record after it.
    pub fn open(dir: impl AsRef<Path>, policy: CompactionPolicy) -> Result<Self, LambdaError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let snap = latest_snapshot(&dir)?;
        let log_path = dir.join(LOG_FILE);
        let recovered = read_log(&log_path)?;
        let (base, mut entries, clean) = match recovered {
            Some(r) => {
                if r.torn {
                    warn!(path = %log_path.display(), kept = r.entries.len(), "truncating torn log tail");
                }
                let clean = !r.torn;
                if r.torn && r.valid_len > 0 {
                    let f = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
                    f.set_len(r.valid_len).map_err(io_err(&log_path))?;
                }
                (r.base, r.entries, clean && r.valid_len > 0)
            }
            None => (snap.covers_offset, Vec::new(), false),
        };
        // entries already folded into the snapshot
        let skip = snap.covers_offset.saturating_sub(base) as usize;
        let base = base.max(snap.covers_offset);
        entries.drain(..skip.min(entries.len()));
        let last_ts = entries
            .last()
            .map(LogEntry::ts_ms)
            .unwrap_or(snap.covers_up_to_ms);
        let writer = if clean && skip == 0 {
            let mut f = OpenOptions::new().append(true).open(&log_path).map_err(io_err(&log_path))?;
            f.seek(SeekFrom::End(0)).map_err(io_err(&log_path))?;
            BufWriter::new(f)
        } else {
            rewrite_log(&dir, base, &entries)?
        };
        let compacted_at = snap.covers_up_to_ms;
        Ok(Self {
            tail: RwLock::new(Tail {
                base,
                entries,
                last_ts,
            }),
            snapshot: ArcSwap::from_pointee(snap),
            disk: Mutex::new(Some(Disk { dir, log: writer })),
            compacting: Mutex::new(compacted_at),
            policy,
        })
    }

    pub fn policy(&self) -> CompactionPolicy {
        self.policy
    }

    pub fn dir(&self) -> Option<PathBuf> {
        self.disk.lock().as_ref().map(|d| d.dir.clone())
    }

    pub fn append(&self, entry: LogEntry) -> Result<u64, LambdaError> {
        self.append_all(std::slice::from_ref(&entry))
    }

    pub fn append_triples(&self, triples: &[SemanticTriple]) -> Result<u64, LambdaError> {
        let entries: Vec<LogEntry> = triples.iter().cloned().map(LogEntry::Triple).collect();
        self.append_all(&entries)
    }

    pub fn append_reset(&self, closed_epoch: u64, at_ms: u64) -> Result<u64, LambdaError> {
        self.append(LogEntry::Reset {
            epoch: closed_epoch,
            at_ms,
        })
    }

    /// Appends entries atomically (all or none) and flushes them to the log
    /// file. Returns the next log offset.
    pub fn append_all(&self, entries: &[LogEntry]) -> Result<u64, LambdaError> {
        let mut disk = self.disk.lock();
        let mut tail = self.tail.write();
        let mut last = tail.last_ts;
        for e in entries {
            if e.ts_ms() < last {
                return Err(LambdaError::OutOfOrder {
                    tail_ms: last,
                    got_ms: e.ts_ms(),
                });
            }
            last = e.ts_ms();
        }
        if let Some(d) = disk.as_mut() {
            let path = d.dir.join(LOG_FILE);
            for e in entries {
                codec::write_record(&mut d.log, &codec::encode_entry(e)).map_err(io_err(&path))?;
            }
            d.log.flush().map_err(io_err(&path))?;
        }
        tail.entries.extend_from_slice(entries);
        tail.last_ts = last;
        Ok(tail.base + tail.entries.len() as u64)
    }

    pub fn snapshot(&self) -> Arc<BatchSnapshot> {
        self.snapshot.load_full()
    }

    pub fn stats(&self) -> StoreStats {
        let tail = self.tail.read();
        let snap = self.snapshot.load();
        StoreStats {
            snapshot_id: snap.snapshot_id,
            snapshot_triples: snap.triples.len(),
            covers_up_to_ms: snap.covers_up_to_ms,
            tail_entries: tail.entries.len(),
            next_offset: tail.base + tail.entries.len() as u64,
        }
    }

    /// Every entry after the current snapshot.
    pub fn tail_entries(&self) -> Vec<LogEntry> {
        self.tail.read().entries.clone()
    }

    /// Matching triples from the snapshot and the log tail, time-ordered and
    /// deduplicated by (s, p, o, observed_at).
    pub fn serve(&self, filter: &dyn TripleFilter, window: TimeWindow, epoch: Option<u64>) -> Vec<SemanticTriple> {
        let tail = self.tail.read();
        let snap = self.snapshot.load();
        serve_from(&snap, &tail.entries, filter, window, epoch)
    }

    /// Whether the cadence policy calls for a compaction at `now_ms`.
    pub fn compaction_due(&self, now_ms: u64) -> bool {
        let last = *self.compacting.lock();
        let tail = self.tail.read();
        !tail.entries.is_empty()
            && (tail.entries.len() >= self.policy.max_entries || now_ms >= last + self.policy.interval_ms)
    }

    pub fn maybe_compact(&self, now_ms: u64) -> Result<Option<Arc<BatchSnapshot>>, LambdaError> {
        if self.compaction_due(now_ms) {
            self.compact(now_ms).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Folds the current log tail into a new snapshot, persists it and
    /// prunes the folded prefix from the log.
    pub fn compact(&self, now_ms: u64) -> Result<Arc<BatchSnapshot>, LambdaError> {
        let mut last_compacted = self.compacting.lock();
        let (prefix, cut) = {
            let tail = self.tail.read();
            (tail.entries.clone(), tail.base + tail.entries.len() as u64)
        };
        let previous = self.snapshot.load_full();
        let next = batch_compact(&previous, &prefix, cut);
        *last_compacted = now_ms;
        if next.snapshot_id == previous.snapshot_id {
            return Ok(previous);
        }
        let next = Arc::new(next);
        let mut disk = self.disk.lock();
        if let Some(d) = disk.as_ref() {
            let path = snapshot_path(&d.dir, next.snapshot_id);
            let tmp = path.with_extension("tmp");
            let bytes = encode_snapshot(&next);
            {
                let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
                f.write_all(&bytes).map_err(io_err(&tmp))?;
                f.sync_all().map_err(io_err(&tmp))?;
            }
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        let mut tail = self.tail.write();
        let folded = (cut - tail.base) as usize;
        tail.entries.drain(..folded);
        tail.base = cut;
        self.snapshot.store(next.clone());
        if let Some(d) = disk.as_mut() {
            d.log = rewrite_log(&d.dir, tail.base, &tail.entries)?;
            if previous.snapshot_id > 0 {
                let _ = fs::remove_file(snapshot_path(&d.dir, previous.snapshot_id));
            }
        }
        Ok(next)
    }

    /// Re-reads the persisted snapshot and checks it against the live one.
    pub fn verify_snapshot(&self) -> Result<(), LambdaError> {
        let snap = self.snapshot.load_full();
        let Some(dir) = self.dir() else {
            return if body_checksum(&snap) == snap.checksum || snap.snapshot_id == 0 {
                Ok(())
            } else {
                Err(LambdaError::Corrupt {
                    path: "<memory>".into(),
                    msg: "checksum mismatch".into(),
                })
            };
        };
        if snap.snapshot_id == 0 {
            return Ok(());
        }
        let path = snapshot_path(&dir, snap.snapshot_id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let disk = decode_snapshot(&bytes).map_err(|msg| LambdaError::Corrupt {
            path: path.display().to_string(),
            msg,
        })?;
        if disk != *snap || bytes != encode_snapshot(&snap) {
            return Err(LambdaError::Corrupt {
                path: path.display().to_string(),
                msg: "snapshot on disk differs from the served one".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::fixtures::{ent, triple, val};
    use crate::triple::TriplePattern;

    fn t(id: u64, at: u64) -> SemanticTriple {
        triple(id, ("p1", "person"), "lying_on", val(&format!("spot{}", id % 3)), at)
    }

    #[test]
    fn append_counts_and_rejects_old_timestamps() {
        let s = LambdaStore::in_memory();
        assert_eq!(s.append_triples(&[t(1, 10), t(2, 20), t(3, 30)]).unwrap(), 3);
        assert_eq!(s.stats().tail_entries, 3);
        let err = s.append_triples(&[t(4, 5)]).unwrap_err();
        assert!(matches!(err, LambdaError::OutOfOrder { tail_ms: 30, got_ms: 5 }));
        assert_eq!(s.stats().tail_entries, 3);
    }

    #[test]
    fn compaction_prunes_log_and_serves_same() {
        let s = LambdaStore::in_memory();
        s.append_triples(&[t(1, 10), t(2, 20)]).unwrap();
        let before = s.serve(&TriplePattern::any(), TimeWindow::ALL, None);
        let snap = s.compact(0).unwrap();
        assert_eq!(snap.snapshot_id, 1);
        assert_eq!(s.stats().tail_entries, 0);
        assert_eq!(s.serve(&TriplePattern::any(), TimeWindow::ALL, None), before);
        let again = s.compact(0).unwrap();
        assert_eq!(again, snap, "compacting an empty tail is the identity");
    }

    #[test]
    fn cadence_by_time_and_size() {
        let s = LambdaStore::with_policy(CompactionPolicy {
            interval_ms: 60_000,
            max_entries: 3,
        });
        assert!(!s.compaction_due(100_000), "nothing to compact");
        s.append_triples(&[t(1, 10)]).unwrap();
        assert!(!s.compaction_due(59_999));
        assert!(s.compaction_due(60_000));
        s.append_triples(&[t(2, 20), t(3, 30)]).unwrap();
        assert!(s.compaction_due(0));
    }

    #[test]
    fn epoch_filter() {
        let s = LambdaStore::in_memory();
        let mut a = t(1, 10);
        a.epoch = 0;
        let mut b = t(2, 20);
        b.epoch = 1;
        s.append_triples(&[a.clone()]).unwrap();
        s.append_reset(0, 15).unwrap();
        s.append_triples(&[b]).unwrap();
        assert_eq!(s.serve(&TriplePattern::any(), TimeWindow::ALL, Some(0)), vec![a]);
        assert_eq!(s.serve(&TriplePattern::any(), TimeWindow::ALL, None).len(), 2);
    }

    #[test]
    fn persisted_store_recovers_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let q = TriplePattern::any();
        let expected = {
            let s = LambdaStore::open(dir.path(), CompactionPolicy::default()).unwrap();
            s.append_triples(&[t(1, 10), t(2, 20)]).unwrap();
            s.compact(20).unwrap();
            s.append_triples(&[t(3, 30)]).unwrap();
            s.append_reset(0, 31).unwrap();
            s.append_triples(&[triple(4, ("c1", "vehicle"), "collided_with", ent("p1", "person"), 40)]).unwrap();
            s.verify_snapshot().unwrap();
            s.serve(&q, TimeWindow::ALL, None)
        };
        let s = LambdaStore::open(dir.path(), CompactionPolicy::default()).unwrap();
        assert_eq!(s.serve(&q, TimeWindow::ALL, None), expected);
        assert_eq!(s.stats().snapshot_id, 1);
        assert_eq!(s.stats().tail_entries, 3);
        s.verify_snapshot().unwrap();
        assert!(matches!(s.append_triples(&[t(9, 1)]), Err(LambdaError::OutOfOrder { .. })));
    }

    #[test]
    fn torn_tail_is_dropped_on_recovery() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = LambdaStore::open(dir.path(), CompactionPolicy::default()).unwrap();
            s.append_triples(&[t(1, 10), t(2, 20), t(3, 30)]).unwrap();
        }
        let log = dir.path().join(LOG_FILE);
        let len = fs::metadata(&log).unwrap().len();
        let f = OpenOptions::new().write(true).open(&log).unwrap();
        f.set_len(len - 3).unwrap();
        let s = LambdaStore::open(dir.path(), CompactionPolicy::default()).unwrap();
        assert_eq!(s.stats().tail_entries, 2);
        s.append_triples(&[t(4, 40)]).unwrap();
        drop(s);
        let s = LambdaStore::open(dir.path(), CompactionPolicy::default()).unwrap();
        let ids: Vec<u64> = s.serve(&TriplePattern::any(), TimeWindow::ALL, None).iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![1, 2, 4]);
    }

    #[test]
    fn snapshot_bytes_are_stable_and_verified() {
        let snap = batch_compact(&BatchSnapshot::default(), &[LogEntry::Triple(t(1, 10)), LogEntry::Reset { epoch: 0, at_ms: 11 }], 2);
        let bytes = encode_snapshot(&snap);
        assert_eq!(decode_snapshot(&bytes).unwrap(), snap);
        assert_eq!(encode_snapshot(&decode_snapshot(&bytes).unwrap()), bytes);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 1;
        assert!(decode_snapshot(&bad).is_err());
    }
}

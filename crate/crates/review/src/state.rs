use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use germap_core::counting::{
    count_all_periods, load_detections, read_verdict_log, resolve_verdicts, Action, CountConfig, CountResult,
    Detection, Verdict, VerdictLog, VerdictRecord,
};
use germap_core::{Error, Period};

use crate::{ReviewConfig, Result};

/// Shared service state. Reads take a snapshot under a read lock; verdicts
/// are serialized through the log writer, and the in-memory view is updated
/// only after the record is on disk.
#[derive(Clone)]
pub struct ReviewState {
    inner: Arc<RwLock<Snapshot>>,
    writer: Arc<Mutex<VerdictLog>>,
    pub(crate) tiles: PathBuf,
    cfg: CountConfig,
}

pub(crate) struct Snapshot {
    pub detections: Vec<Detection>,
    pub index: HashMap<String, usize>,
    pub periods: BTreeSet<Period>,
    pub log: Vec<VerdictRecord>,
    pub verdicts: HashMap<String, Verdict>,
}

#[derive(Debug)]
pub(crate) enum VerdictError {
    UnknownId(String),
    Invalid(String),
    Storage(Error),
}

impl ReviewState {
    pub fn load(config: &ReviewConfig) -> Result<Self> {
        let detections = load_detections(&config.detections)?;
        let log = read_verdict_log(&config.log)?;
        Ok(Self::from_parts(detections, log, VerdictLog::open(&config.log)?, config.tiles.clone(), config.count)?)
    }

    pub fn from_parts(
        detections: Vec<Detection>,
        log: Vec<VerdictRecord>,
        writer: VerdictLog,
        tiles: PathBuf,
        cfg: CountConfig,
    ) -> std::result::Result<Self, Error> {
        let verdicts = resolve_verdicts(&detections, &log)?;
        let index = detections.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        let periods = detections.iter().map(|d| d.period.clone()).collect();
        Ok(ReviewState {
            inner: Arc::new(RwLock::new(Snapshot {
                detections,
                index,
                periods,
                log,
                verdicts,
            })),
            writer: Arc::new(Mutex::new(writer)),
            tiles,
            cfg,
        })
    }

    pub fn count_config(&self) -> &CountConfig {
        &self.cfg
    }

    pub(crate) fn read<T>(&self, f: impl FnOnce(&Snapshot) -> T) -> T {
        f(&self.inner.read().expect("state lock poisoned"))
    }

    /// Validates, appends (with fsync) and then applies a verdict. Returns the
    /// detection with its new verdict.
    pub(crate) fn record(&self, detection_id: &str, action: Action, count: Option<u32>) -> std::result::Result<Detection, VerdictError> {
        let record = VerdictRecord {
            ts: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            detection_id: detection_id.to_string(),
            action,
            count: if action == Action::SetCount { count } else { None },
        };
        let verdict = record.verdict().map_err(|e| VerdictError::Invalid(e.to_string()))?;
        if !self.read(|s| s.index.contains_key(detection_id)) {
            return Err(VerdictError::UnknownId(detection_id.to_string()));
        }
        let mut writer = self.writer.lock().expect("log lock poisoned");
        writer.append(&record).map_err(VerdictError::Storage)?;
        let mut s = self.inner.write().expect("state lock poisoned");
        s.verdicts.insert(record.detection_id.clone(), verdict);
        s.log.push(record);
        let mut d = s.detections[s.index[detection_id]].clone();
        d.verdict = verdict;
        Ok(d)
    }

    /// Per-period counts from the counting module over the current log.
    pub fn counts(&self) -> std::result::Result<Vec<CountResult>, Error> {
        self.read(|s| count_all_periods(&s.detections, &s.log, &self.cfg))
    }

    /// Copy of the verdict log as replayed so far.
    pub fn log(&self) -> Vec<VerdictRecord> {
        self.read(|s| s.log.clone())
    }

    /// `(id, verdict)` pairs sorted by id, for comparing states.
    pub fn verdicts(&self) -> Vec<(String, Verdict)> {
        let mut v: Vec<(String, Verdict)> = self.read(|s| s.verdicts.iter().map(|(k, v)| (k.clone(), *v)).collect());
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }
}

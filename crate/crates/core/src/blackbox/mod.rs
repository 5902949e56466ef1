//! The classifier boundary: label-only queries, caching, and query auditing.
//!
//! Nothing past this boundary sees logits or gradients; a [`Classifier`]
//! yields exactly one label per tensor, which is the whole black-box
//! assumption expressed as a type.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::Result;
use crate::image::{ImageTensor, LabelId};

pub mod external;
pub mod oracle;
pub mod synth;

pub use external::ExternalClassifier;
pub use oracle::{OracleKind, SyntheticOracle, SyntheticOracleSpec};

/// Label-only classifier. Implementations must be pure with respect to the
/// image: a bit-identical tensor yields the same label on every call.
pub trait Classifier: Send + Sync {
    fn classify(&self, image: &ImageTensor) -> Result<LabelId>;

    fn num_classes(&self) -> u32;

    /// Whether `classify` tolerates concurrent callers. Serial classifiers
    /// (e.g. a single child process) are driven from one dispatcher.
    fn supports_concurrent(&self) -> bool {
        true
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn classify(&self, image: &ImageTensor) -> Result<LabelId> {
        (**self).classify(image)
    }
    fn num_classes(&self) -> u32 {
        (**self).num_classes()
    }
    fn supports_concurrent(&self) -> bool {
        (**self).supports_concurrent()
    }
}

impl<C: Classifier + ?Sized> Classifier for Arc<C> {
    fn classify(&self, image: &ImageTensor) -> Result<LabelId> {
        (**self).classify(image)
    }
    fn num_classes(&self) -> u32 {
        (**self).num_classes()
    }
    fn supports_concurrent(&self) -> bool {
        (**self).supports_concurrent()
    }
}

/// Running count of underlying classify calls, total and per phase.
/// Cache hits do not count.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryCounts {
    pub total: u64,
    pub per_phase: BTreeMap<String, u64>,
}

#[derive(Debug, Default)]
struct CounterInner {
    total: AtomicU64,
    per_phase: Mutex<BTreeMap<String, u64>>,
}

/// Shared, thread-safe query counter.
#[derive(Debug, Clone, Default)]
pub struct QueryCounter {
    inner: Arc<CounterInner>,
}

impl QueryCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, phase: &str) {
        self.inner.total.fetch_add(1, Ordering::Relaxed);
        let mut map = self.inner.per_phase.lock().unwrap();
        *map.entry(phase.to_string()).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.inner.total.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> QueryCounts {
        QueryCounts {
            total: self.total(),
            per_phase: self.inner.per_phase.lock().unwrap().clone(),
        }
    }
}

/// Caching wrapper around a classifier. Keys are digests of the exact tensor
/// bytes, so only bit-identical tensors hit; the inner classifier is invoked
/// once per distinct tensor and the counter reflects underlying calls only.
pub struct CachedClassifier<C: Classifier> {
    inner: C,
    cache: Mutex<HashMap<[u8; 32], LabelId>>,
    counter: QueryCounter,
    phase: RwLock<String>,
}

impl<C: Classifier> CachedClassifier<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            counter: QueryCounter::new(),
            phase: RwLock::new("default".to_string()),
        }
    }

    /// Names the accounting bucket for subsequent underlying calls.
    pub fn set_phase(&self, phase: &str) {
        *self.phase.write().unwrap() = phase.to_string();
    }

    pub fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    pub fn counts(&self) -> QueryCounts {
        self.counter.snapshot()
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: Classifier> Classifier for CachedClassifier<C> {
    fn classify(&self, image: &ImageTensor) -> Result<LabelId> {
        let key = image.digest();
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(*hit);
        }
        let phase = self.phase.read().unwrap().clone();
        // Race on a miss only costs a duplicate underlying call for the same
        // tensor; purity makes the results identical. Serial classifiers are
        // never raced (single dispatcher), so counts stay exact where audited.
        let label = self.inner.classify(image)?;
        self.counter.record(&phase);
        self.cache.lock().unwrap().insert(key, label);
        Ok(label)
    }

    fn num_classes(&self) -> u32 {
        self.inner.num_classes()
    }

    fn supports_concurrent(&self) -> bool {
        self.inner.supports_concurrent()
    }
}

//! Capacity-bounded LRU cache for query features.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::Mutex;

use vsearch_core::feature::{CropRect, FeatureBundle};

/// Source bytes, crop and feature pipeline together identify a bundle.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub content_digest: u128,
    pub crop: [u8; 16],
    pub pipeline_digest: String,
}

impl CacheKey {
    pub fn new(content_digest: u128, crop: Option<&CropRect>, pipeline_digest: &str) -> Self {
        Self {
            content_digest,
            crop: crop.copied().unwrap_or_else(CropRect::full).key_bytes(),
            pipeline_digest: pipeline_digest.to_string(),
        }
    }
}

struct Lru<K, V> {
    capacity: usize,
    tick: u64,
    entries: HashMap<K, (V, u64)>,
    /// Last-use tick to key; the first entry is the eviction victim.
    order: BTreeMap<u64, K>,
}

impl<K: Hash + Eq + Clone, V: Clone> Lru<K, V> {
    fn touch(&mut self, key: &K) -> Option<V> {
        self.tick += 1;
        let tick = self.tick;
        let (value, last) = self.entries.get_mut(key)?;
        self.order.remove(last);
        *last = tick;
        self.order.insert(tick, key.clone());
        Some(value.clone())
    }

    fn put(&mut self, key: K, value: V) {
        self.tick += 1;
        if let Some((_, last)) = self.entries.insert(key.clone(), (value, self.tick)) {
            self.order.remove(&last);
        }
        self.order.insert(self.tick, key);
        while self.entries.len() > self.capacity {
            let (_, victim) = self.order.pop_first().expect("order tracks every entry");
            self.entries.remove(&victim);
        }
    }
}

/// Thread-safe LRU map; every operation takes one short lock.
pub struct LruCache<K, V> {
    inner: Mutex<Lru<K, V>>,
}

impl<K: Hash + Eq + Clone, V: Clone> LruCache<K, V> {
    /// A capacity of 0 is raised to 1.
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(Lru {
                capacity: capacity.max(1),
                tick: 0,
                entries: HashMap::new(),
                order: BTreeMap::new(),
            }),
        }
    }

    pub fn get(&self, key: &K) -> Option<V> {
        self.lock().touch(key)
    }

    pub fn put(&self, key: K, value: V) {
        self.lock().put(key, value)
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.lock().capacity
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Lru<K, V>> {
        // A panic while holding the lock cannot leave the maps inconsistent
        // in a way that matters for a cache, so poisoning is ignored.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub type FeatureCache = LruCache<CacheKey, FeatureBundle>;

//! Set-associative storage with true-LRU replacement.

/// Fixed-geometry set-associative array. The caller chooses the set for
/// each key; the store keeps at most `ways` keys per set and evicts the
/// least recently used one on overflow.
#[derive(Debug, Clone)]
pub struct SetAssoc<K, V> {
    sets: usize,
    ways: usize,
    slots: Vec<Option<Slot<K, V>>>,
    tick: u64,
}

#[derive(Debug, Clone)]
struct Slot<K, V> {
    key: K,
    value: V,
    last_use: u64,
}

impl<K: Copy + Eq, V> SetAssoc<K, V> {
    /// # Panics
    /// If `sets` or `ways` is zero.
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets > 0 && ways > 0, "degenerate geometry {sets}x{ways}");
        let mut slots = Vec::with_capacity(sets * ways);
        slots.resize_with(sets * ways, || None);
        Self {
            sets,
            ways,
            slots,
            tick: 0,
        }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn capacity(&self) -> usize {
        self.sets * self.ways
    }

    fn set_range(&self, set: usize) -> std::ops::Range<usize> {
        debug_assert!(set < self.sets);
        let start = set * self.ways;
        start..start + self.ways
    }

    fn find(&self, set: usize, key: K) -> Option<usize> {
        self.set_range(set)
            .find(|&i| matches!(&self.slots[i], Some(s) if s.key == key))
    }

    /// Looks up `key` and marks it most recently used on a hit.
    pub fn lookup(&mut self, set: usize, key: K) -> Option<&mut V> {
        let i = self.find(set, key)?;
        self.tick += 1;
        let slot = self.slots[i].as_mut().expect("found slot is occupied");
        slot.last_use = self.tick;
        Some(&mut slot.value)
    }

    /// Looks up without touching replacement state.
    pub fn peek(&self, set: usize, key: K) -> Option<&V> {
        self.find(set, key)
            .and_then(|i| self.slots[i].as_ref())
            .map(|s| &s.value)
    }

    /// Inserts or refreshes `key` as most recently used. Returns the evicted
    /// entry when the set was full and `key` was not already present.
    pub fn insert(&mut self, set: usize, key: K, value: V) -> Option<(K, V)> {
        self.tick += 1;
        let tick = self.tick;
        if let Some(i) = self.find(set, key) {
            let slot = self.slots[i].as_mut().expect("found slot is occupied");
            slot.value = value;
            slot.last_use = tick;
            return None;
        }
        let range = self.set_range(set);
        let target = range.clone().find(|&i| self.slots[i].is_none()).unwrap_or_else(|| {
            range
                .min_by_key(|&i| self.slots[i].as_ref().map_or(0, |s| s.last_use))
                .expect("ways > 0")
        });
        let old = self.slots[target].replace(Slot {
            key,
            value,
            last_use: tick,
        });
        old.map(|s| (s.key, s.value))
    }

    pub fn remove(&mut self, set: usize, key: K) -> Option<V> {
        let i = self.find(set, key)?;
        self.slots[i].take().map(|s| s.value)
    }

    /// Keys of one set ordered most- to least-recently used.
    pub fn recency_order(&self, set: usize) -> Vec<K> {
        let mut live: Vec<_> = self.slots[self.set_range(set)].iter().flatten().collect();
        live.sort_by_key(|s| std::cmp::Reverse(s.last_use));
        live.into_iter().map(|s| s.key).collect()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

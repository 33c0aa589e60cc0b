//! Indexed binary min-heap over backend entries, so a single entry's key can
//! change in O(log n) without rebuilding.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub(crate) struct HeapEntry {
    pub address: String,
    pub key: u64,
    pub seq: u64,
}

impl HeapEntry {
    fn rank(&self) -> (u64, u64) {
        (self.key, self.seq)
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct IndexedHeap {
    items: Vec<HeapEntry>,
    pos: HashMap<String, usize>,
}

impl IndexedHeap {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, address: &str) -> bool {
        self.pos.contains_key(address)
    }

    pub fn peek(&self) -> Option<&HeapEntry> {
        self.items.first()
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.pos.clear();
    }

    pub fn push(&mut self, entry: HeapEntry) {
        debug_assert!(!self.contains(&entry.address));
        let i = self.items.len();
        self.pos.insert(entry.address.clone(), i);
        self.items.push(entry);
        self.sift_up(i);
    }

    /// Applies `f` to the entry's key and restores heap order.
    pub fn update(&mut self, address: &str, f: impl FnOnce(u64) -> u64) -> bool {
        let Some(&i) = self.pos.get(address) else {
            return false;
        };
        let old = self.items[i].key;
        let new = f(old);
        self.items[i].key = new;
        if new < old {
            self.sift_up(i);
        } else if new > old {
            self.sift_down(i);
        }
        true
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.items.swap(a, b);
        self.pos.insert(self.items[a].address.clone(), a);
        self.pos.insert(self.items[b].address.clone(), b);
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if self.items[i].rank() >= self.items[parent].rank() {
                break;
            }
            self.swap(i, parent);
            i = parent;
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.items.len();
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut min = i;
            if l < n && self.items[l].rank() < self.items[min].rank() {
                min = l;
            }
            if r < n && self.items[r].rank() < self.items[min].rank() {
                min = r;
            }
            if min == i {
                break;
            }
            self.swap(i, min);
            i = min;
        }
    }

    #[cfg(test)]
    fn check(&self) {
        for i in 1..self.items.len() {
            assert!(self.items[(i - 1) / 2].rank() <= self.items[i].rank());
        }
        for (a, &i) in &self.pos {
            assert_eq!(&self.items[i].address, a);
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn root_is_minimum_after_random_updates(
            n in 1usize..12,
            ops in prop::collection::vec((0usize..12, -3i64..4), 0..200),
        ) {
            let mut h = IndexedHeap::default();
            let mut keys = vec![0u64; n];
            for i in 0..n {
                h.push(HeapEntry { address: format!("b{i}"), key: 0, seq: i as u64 });
            }
            for (idx, delta) in ops {
                let idx = idx % n;
                let new = (keys[idx] as i64 + delta).max(0) as u64;
                keys[idx] = new;
                h.update(&format!("b{idx}"), |_| new);
                h.check();
                let want = (0..n).min_by_key(|&i| (keys[i], i)).unwrap();
                prop_assert_eq!(&h.peek().unwrap().address, &format!("b{want}"));
            }
        }
    }
}

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::sync::Mutex;

use super::SandboxError;

const BASE: u32 = 0x7F00_0002; // 127.0.0.2
const BROADCAST: u32 = 0x7FFF_FFFF; // 127.255.255.255

/// Largest pool: 127.0.0.2 ..= 127.255.255.254.
pub const MAX_CAPACITY: u32 = BROADCAST - BASE;

/// Hands out unique loopback addresses to concurrently running sandboxes.
/// 127.0.0.1 is never handed out.
#[derive(Debug)]
pub struct LoopbackAllocator {
    capacity: u32,
    state: Mutex<AllocState>,
}

#[derive(Debug, Default)]
struct AllocState {
    next_fresh: u32,
    released: Vec<u32>,
    allocated: HashSet<u32>,
}

impl LoopbackAllocator {
    pub fn new() -> Self {
        Self::with_capacity(MAX_CAPACITY)
    }

    pub fn with_capacity(capacity: u32) -> Self {
        Self { capacity: capacity.min(MAX_CAPACITY), state: Mutex::new(AllocState::default()) }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn allocate(&self) -> Result<Ipv4Addr, SandboxError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let offset = if let Some(off) = st.released.pop() {
            off
        } else if st.next_fresh < self.capacity {
            st.next_fresh += 1;
            st.next_fresh - 1
        } else {
            return Err(SandboxError::PoolExhausted);
        };
        st.allocated.insert(offset);
        Ok(Ipv4Addr::from(BASE + offset))
    }

    /// Returns false if the address was not allocated from this pool.
    pub fn release(&self, addr: Ipv4Addr) -> bool {
        let raw = u32::from(addr);
        let Some(offset) = raw.checked_sub(BASE) else {
            return false;
        };
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if st.allocated.remove(&offset) {
            st.released.push(offset);
            true
        } else {
            false
        }
    }

    pub fn live_count(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).allocated.len()
    }
}

impl Default for LoopbackAllocator {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    #[test]
    fn first_two_are_distinct_loopback() {
        let a = LoopbackAllocator::new();
        let x = a.allocate().unwrap();
        let y = a.allocate().unwrap();
        assert_ne!(x, y);
        for ip in [x, y] {
            assert!(ip.is_loopback());
            assert_ne!(ip, Ipv4Addr::LOCALHOST);
        }
    }

    #[test]
    fn exhaustion_and_reuse() {
        let a = LoopbackAllocator::with_capacity(2);
        let x = a.allocate().unwrap();
        let _y = a.allocate().unwrap();
        assert!(matches!(a.allocate(), Err(SandboxError::PoolExhausted)));
        assert!(a.release(x));
        assert!(!a.release(x));
        assert_eq!(a.allocate().unwrap(), x);
        assert!(!a.release(Ipv4Addr::LOCALHOST));
    }

    #[test]
    fn top_of_range_skips_broadcast() {
        let a = LoopbackAllocator::with_capacity(u32::MAX);
        assert_eq!(a.capacity(), MAX_CAPACITY);
        assert_eq!(Ipv4Addr::from(BASE + MAX_CAPACITY - 1), Ipv4Addr::new(127, 255, 255, 254));
    }

    #[test]
    fn concurrent_allocations_are_unique() {
        let a = Arc::new(LoopbackAllocator::new());
        let handles: Vec<_> = (0..32)
            .map(|w| {
                let a = a.clone();
                std::thread::spawn(move || {
                    let n = 1000 / 32 + usize::from(w < 1000 % 32);
                    (0..n).map(|_| a.allocate().unwrap()).collect::<Vec<_>>()
                })
            })
            .collect();
        let all: Vec<Ipv4Addr> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        assert_eq!(all.len(), 1000);
        let unique: HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 1000);
        assert_eq!(a.live_count(), 1000);
    }
}

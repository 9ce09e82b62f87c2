use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

/// Bounded multi-producer queue that never blocks the producer: when full,
/// the oldest item is discarded and counted.
pub struct DropOldestQueue<T> {
    inner: Mutex<State<T>>,
    ready: Condvar,
    capacity: usize,
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        DropOldestQueue {
            inner: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
            capacity,
        }
    }

    /// Enqueues `item`; returns true if an older item had to be dropped.
    pub fn push(&self, item: T) -> bool {
        let mut s = self.inner.lock().expect("queue lock");
        let dropped = if s.items.len() == self.capacity {
            s.items.pop_front();
            s.dropped += 1;
            true
        } else {
            false
        };
        s.items.push_back(item);
        drop(s);
        self.ready.notify_one();
        dropped
    }

    /// Blocks until an item is available. `None` once the queue is closed
    /// and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.inner.lock().expect("queue lock");
        loop {
            if let Some(item) = s.items.pop_front() {
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).expect("queue lock");
        }
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().expect("queue lock").dropped
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn drops_oldest_when_full() {
        let q = DropOldestQueue::new(3);
        for i in 0..5 {
            q.push(i);
        }
        assert_eq!(q.dropped(), 2);
        q.close();
        let rest: Vec<i32> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(rest, vec![2, 3, 4]);
    }

    #[test]
    fn producer_never_waits_for_a_stalled_consumer() {
        let q = Arc::new(DropOldestQueue::new(4));
        let producer = {
            let q = q.clone();
            std::thread::spawn(move || {
                for i in 0..10_000 {
                    q.push(i);
                }
            })
        };
        producer.join().unwrap();
        assert_eq!(q.len(), 4);
        assert_eq!(q.dropped(), 9_996);
    }

    #[test]
    fn consumer_wakes_on_push_and_close() {
        let q = Arc::new(DropOldestQueue::new(2));
        let consumer = {
            let q = q.clone();
            std::thread::spawn(move || std::iter::from_fn(|| q.pop()).collect::<Vec<_>>())
        };
        q.push(1);
        q.push(2);
        std::thread::sleep(std::time::Duration::from_millis(20));
        q.close();
        let got = consumer.join().unwrap();
        assert_eq!(got, vec![1, 2]);
    }
}

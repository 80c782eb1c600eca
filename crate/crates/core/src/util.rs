//! Small fixed-width bit set used for permission vectors and action masks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitSet {
    words: Vec<u64>,
    len: usize,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    /// True when every bit of `other` is also set in `self`.
    pub fn contains_all(&self, other: &BitSet) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & b == *b)
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    /// Bitwise AND with a mask of the same length.
    pub fn masked(&self, mask: &BitSet) -> BitSet {
        debug_assert_eq!(self.len, mask.len);
        BitSet {
            words: self.words.iter().zip(&mask.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_clear() {
        let mut b = BitSet::new(106);
        assert!(!b.get(0));
        b.set(0);
        b.set(105);
        assert!(b.get(0) && b.get(105));
        assert_eq!(b.count_ones(), 2);
        b.clear(0);
        assert!(!b.get(0));
        assert_eq!(b.ones().collect::<Vec<_>>(), vec![105]);
    }

    #[test]
    fn containment() {
        let mut a = BitSet::new(10);
        let mut b = BitSet::new(10);
        a.set(3);
        a.set(7);
        b.set(3);
        assert!(a.contains_all(&b));
        b.set(5);
        assert!(!a.contains_all(&b));
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a variable in a [`CausalDiagram`](super::CausalDiagram), in declaration order.
pub type VarId = usize;

/// Maximum number of variables a diagram may hold.
pub const MAX_VARS: usize = 64;

/// A set of variables packed into a 64-bit mask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarSet(u64);

impl VarSet {
    pub const EMPTY: VarSet = VarSet(0);

    pub fn from_bits(bits: u64) -> Self {
        VarSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn singleton(v: VarId) -> Self {
        debug_assert!(v < MAX_VARS);
        VarSet(1u64 << v)
    }

    /// The set `{0, 1, ..., n-1}`.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            VarSet(u64::MAX)
        } else {
            VarSet((1u64 << n) - 1)
        }
    }

    pub fn contains(self, v: VarId) -> bool {
        v < MAX_VARS && self.0 & (1u64 << v) != 0
    }

    pub fn insert(&mut self, v: VarId) {
        self.0 |= 1u64 << v;
    }

    pub fn remove(&mut self, v: VarId) {
        self.0 &= !(1u64 << v);
    }

    pub fn with(self, v: VarId) -> Self {
        VarSet(self.0 | (1u64 << v))
    }

    pub fn union(self, other: VarSet) -> Self {
        VarSet(self.0 | other.0)
    }

    pub fn intersection(self, other: VarSet) -> Self {
        VarSet(self.0 & other.0)
    }

    pub fn difference(self, other: VarSet) -> Self {
        VarSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in increasing index order.
    pub fn iter(self) -> impl Iterator<Item = VarId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let v = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(v)
            }
        })
    }

    pub fn first(self) -> Option<VarId> {
        self.iter().next()
    }

    pub fn to_vec(self) -> Vec<VarId> {
        self.iter().collect()
    }
}

impl FromIterator<VarId> for VarSet {
    fn from_iter<I: IntoIterator<Item = VarId>>(iter: I) -> Self {
        let mut s = VarSet::EMPTY;
        for v in iter {
            s.insert(v);
        }
        s
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Strictly increasing list of constraint indices.
///
/// Indices are stored zero-based. Everything user-facing (Display, JSON,
/// [`one_based`](Self::one_based)) uses the one-based numbering `1..=q`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn empty() -> Self {
        ActiveSet(Vec::new())
    }

    /// From arbitrary zero-based indices; sorts and removes duplicates.
    pub fn from_indices(mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        ActiveSet(idx)
    }

    /// From one-based indices as printed in tables and figures. Zero is rejected.
    pub fn from_one_based(idx: &[usize]) -> Self {
        assert!(idx.iter().all(|&i| i >= 1), "one-based indices start at 1");
        Self::from_indices(idx.iter().map(|i| i - 1).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn is_subset_of(&self, other: &ActiveSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    /// `A ∩ {0..limit}` (zero-based), i.e. the rows below `limit`.
    pub fn below(&self, limit: usize) -> ActiveSet {
        ActiveSet(self.0.iter().cloned().filter(|&i| i < limit).collect())
    }

    /// `A \ other`
    pub fn difference(&self, other: &ActiveSet) -> ActiveSet {
        ActiveSet(self.0.iter().cloned().filter(|&i| !other.contains(i)).collect())
    }

    pub fn union(&self, other: &ActiveSet) -> ActiveSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Self::from_indices(v)
    }

    /// Complement within `0..q`.
    pub fn complement(&self, q: usize) -> Vec<usize> {
        (0..q).filter(|&i| !self.contains(i)).collect()
    }

    /// Compares the binary numbers `Σ_{i∈A} 2^i`. Works for any `q`, the
    /// value itself is never materialized.
    pub fn cmp_binary_value(&self, other: &ActiveSet) -> Ordering {
        let mut a = self.0.iter().rev();
        let mut b = other.0.iter().rev();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(x), Some(y)) if x != y => return x.cmp(y),
                _ => {}
            }
        }
    }

    /// Binary value as `u128`, when every index is below 128.
    pub fn binary_value(&self) -> Option<u128> {
        self.0
            .iter()
            .try_fold(0u128, |acc, &i| (i < 128).then(|| acc | (1u128 << i)))
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for ActiveSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActiveSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.contains(&0) {
            return Err(serde::de::Error::custom("active-set indices are one-based"));
        }
        Ok(ActiveSet::from_one_based(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_value() {
        let a = ActiveSet::from_one_based(&[13, 1, 7]);
        assert_eq!(a.to_string(), "{1,7,13}");
        assert_eq!(a.binary_value(), Some(4161));
        assert_eq!(ActiveSet::from_one_based(&[1, 13]).binary_value(), Some(4097));
    }

    #[test]
    fn value_order_matches_integers() {
        let sets = [
            ActiveSet::from_one_based(&[1, 3]),
            ActiveSet::from_one_based(&[2]),
            ActiveSet::empty(),
            ActiveSet::from_one_based(&[1, 2, 3]),
        ];
        for a in &sets {
            for b in &sets {
                assert_eq!(
                    a.cmp_binary_value(b),
                    a.binary_value().unwrap().cmp(&b.binary_value().unwrap())
                );
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn superset_has_larger_value(
            base in proptest::collection::btree_set(0usize..138, 0..8),
            extra in proptest::collection::btree_set(0usize..138, 0..8),
        ) {
            let a = ActiveSet::from_indices(base.iter().cloned().collect());
            let b = a.union(&ActiveSet::from_indices(extra.into_iter().collect()));
            proptest::prop_assert!(a.cmp_binary_value(&b) != Ordering::Greater);
        }
    }
}

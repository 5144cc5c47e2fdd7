//! Permutations in destination-map form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bijection on `[0, n)`. `dest[i]` is the position element `i` moves to.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    dest: Vec<usize>,
}

impl Permutation {
    pub fn new(dest: Vec<usize>) -> Result<Self> {
        let n = dest.len();
        let mut seen = vec![false; n];
        for &d in &dest {
            if d >= n {
                return Err(Error::InvalidPermutation(format!(
                    "destination {d} out of range for length {n}"
                )));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::InvalidPermutation(format!("destination {d} used twice")));
            }
        }
        Ok(Self { dest })
    }

    /// Parses the one-based notation used in figures, e.g. `(3,4,1,2)`.
    pub fn from_one_based(dest: &[usize]) -> Result<Self> {
        if dest.contains(&0) {
            return Err(Error::InvalidPermutation("one-based destination contains 0".into()));
        }
        Self::new(dest.iter().map(|d| d - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self { dest: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.dest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dest.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.dest.iter().enumerate().all(|(i, &d)| i == d)
    }

    pub fn dest(&self) -> &[usize] {
        &self.dest
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.dest[i]
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.dest.iter().map(|d| d + 1).collect()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.dest.len()];
        for (i, &d) in self.dest.iter().enumerate() {
            inv[d] = i;
        }
        Self { dest: inv }
    }

    /// `self` first, then `then`.
    pub fn then(&self, then: &Permutation) -> Result<Self> {
        if then.len() != self.len() {
            return Err(Error::dim(self.len(), then.len(), "permutation composition"));
        }
        Ok(Self {
            dest: self.dest.iter().map(|&d| then.dest[d]).collect(),
        })
    }

    /// Scatters `v` so that `out[dest[i]] == v[i]`.
    pub fn apply<T: Clone>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.len() {
            return Err(Error::dim(self.len(), v.len(), "permutation apply"));
        }
        let mut out = v.to_vec();
        for (x, &d) in v.iter().zip(&self.dest) {
            out[d] = x.clone();
        }
        Ok(out)
    }

    /// Relative order of the images of `0..len`: maps element `i < len` to
    /// the rank of `dest[i]` among `{dest[0], .., dest[len-1]}`.
    pub fn compacted(&self, len: usize) -> Permutation {
        assert!(len <= self.len());
        let mut occupied = vec![false; self.len()];
        for &d in &self.dest[..len] {
            occupied[d] = true;
        }
        let mut rank = vec![0usize; self.len()];
        let mut next = 0;
        for (pos, &occ) in occupied.iter().enumerate() {
            if occ {
                rank[pos] = next;
                next += 1;
            }
        }
        Permutation {
            dest: self.dest[..len].iter().map(|&d| rank[d]).collect(),
        }
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{:?}", self.dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_perms(n: usize) -> Vec<Permutation> {
        fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Permutation>) {
            let n = used.len();
            if prefix.len() == n {
                out.push(Permutation::new(prefix.clone()).unwrap());
                return;
            }
            for x in 0..n {
                if !used[x] {
                    used[x] = true;
                    prefix.push(x);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[x] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    #[test]
    fn figure_row_permutation_moves_rows() {
        let p = Permutation::from_one_based(&[3, 4, 1, 2]).unwrap();
        assert_eq!(p.dest(), &[2, 3, 0, 1]);
        assert_eq!(p.apply(&['a', 'b', 'c', 'd']).unwrap(), vec!['c', 'd', 'a', 'b']);
    }

    #[test]
    fn identity_apply() {
        let v = vec![5, 6, 7, 8];
        assert_eq!(Permutation::identity(4).apply(&v).unwrap(), v);
    }

    #[test]
    fn apply_rejects_length_mismatch() {
        let p = Permutation::identity(3);
        assert!(matches!(p.apply(&[1, 2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
    }

    #[test]
    fn inverse_examples() {
        let p = Permutation::new(vec![2, 3, 0, 1]).unwrap();
        assert_eq!(p.inverse(), p);
        let q = Permutation::new(vec![1, 2, 0]).unwrap();
        assert_eq!(q.inverse().dest(), &[2, 0, 1]);
    }

    #[test]
    fn apply_matches_index_loop() {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::SeedTree::new(3).rng();
        for _ in 0..50 {
            let mut d: Vec<usize> = (0..8).collect();
            d.shuffle(&mut rng);
            let p = Permutation::new(d.clone()).unwrap();
            let v: Vec<u32> = (0..8).map(|i| 100 + i).collect();
            let mut expect = vec![0u32; 8];
            for i in 0..8 {
                expect[d[i]] = v[i];
            }
            assert_eq!(p.apply(&v).unwrap(), expect);
        }
    }

    #[test]
    fn exhaustive_inverse_and_composition() {
        for n in 0..=6 {
            let perms = all_perms(n);
            let v: Vec<usize> = (0..n).map(|i| i * 10 + 1).collect();
            for p in &perms {
                let inv = p.inverse();
                assert_eq!(inv.inverse(), *p);
                assert_eq!(inv.apply(&p.apply(&v).unwrap()).unwrap(), v);
                assert!(p.then(&inv).unwrap().is_identity());
            }
            if n <= 4 {
                for a in &perms {
                    for b in &perms {
                        let ab = a.then(b).unwrap();
                        // closure: result is a valid permutation
                        assert!(Permutation::new(ab.dest().to_vec()).is_ok());
                        assert_eq!(ab.apply(&v).unwrap(), b.apply(&a.apply(&v).unwrap()).unwrap());
                        for c in &perms {
                            assert_eq!(ab.then(c).unwrap(), a.then(&b.then(c).unwrap()).unwrap());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn compacted_keeps_relative_order() {
        let p = Permutation::new(vec![1, 3, 0, 2]).unwrap();
        assert_eq!(p.compacted(2).dest(), &[0, 1]);
        assert_eq!(p.compacted(4), p);
        let q = Permutation::new(vec![3, 1, 0, 2]).unwrap();
        assert_eq!(q.compacted(2).dest(), &[1, 0]);
        assert_eq!(q.compacted(3).dest(), &[2, 1, 0]);
    }

    proptest! {
        #[test]
        fn to_from_one_based(seed in any::<u64>(), n in 1usize..40) {
            use rand::seq::SliceRandom;
            let mut d: Vec<usize> = (0..n).collect();
            d.shuffle(&mut crate::rng::SeedTree::new(seed).rng());
            let p = Permutation::new(d).unwrap();
            prop_assert_eq!(Permutation::from_one_based(&p.to_one_based()).unwrap(), p);
        }
    }
}

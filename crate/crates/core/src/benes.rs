//! Benes-network permutation module.
//!
//! A `2^b`-port Benes network is built recursively: an input column of
//! `2^(b-1)` 2:2 switches, two half-size networks, and an output column.
//! Switch `i` of the input column feeds its upper output to input `i` of
//! the upper subnetwork and its lower output to input `i` of the lower one;
//! the output column mirrors this. A switch with select bit 0 passes
//! straight through, 1 crosses.
//!
//! Select bits within one network are numbered column-major, top to bottom:
//! bit `col * ports/2 + row`. Inside a recursive subnetwork the upper half
//! occupies the lower row numbers. A [`PermutationModule`] made of `k`
//! blocks stores block 0's bits first.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::Permutation;

/// Number of 2:2 switches (and select bits) in a `ports`-port Benes network.
pub fn switch_count(ports: usize) -> Result<usize> {
    if ports < 2 || !ports.is_power_of_two() {
        return Err(Error::Config(format!(
            "Benes port count must be a power of two >= 2, got {ports}"
        )));
    }
    let b = ports.trailing_zeros() as usize;
    Ok((ports / 2) * (2 * b - 1))
}

/// Fraction of switches saved by replacing one `full_ports` network with
/// `full_ports / block_ports` smaller ones.
pub fn reduction_ratio(full_ports: usize, block_ports: usize) -> Result<f64> {
    let full = switch_count(full_ports)?;
    let block = switch_count(block_ports)?;
    if block_ports > full_ports || !full_ports.is_multiple_of(block_ports) {
        return Err(Error::Config(format!(
            "block size {block_ports} does not divide module width {full_ports}"
        )));
    }
    let k = full_ports / block_ports;
    Ok(1.0 - (k * block) as f64 / full as f64)
}

/// Select-bit vector for a permutation module.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PmKey {
    bits: Vec<bool>,
}

impl PmKey {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    /// Bit `i` of the key is bit `i` of `index` (keys up to 64 bits).
    pub fn from_index(index: u64, len: usize) -> Self {
        assert!(len <= 64);
        Self {
            bits: (0..len).map(|i| (index >> i) & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// XOR with `mask` repeated cyclically over the key length.
    pub fn xor_cyclic(&self, mask: &[bool]) -> PmKey {
        if mask.is_empty() {
            return self.clone();
        }
        Self {
            bits: self.bits.iter().zip(mask.iter().cycle()).map(|(a, b)| a ^ b).collect(),
        }
    }

    /// The first `prefix` bits of `self` followed by the rest of `rest`.
    pub fn splice(&self, prefix: usize, rest: &PmKey) -> PmKey {
        assert_eq!(self.len(), rest.len());
        let prefix = prefix.min(self.len());
        let mut bits = self.bits[..prefix].to_vec();
        bits.extend_from_slice(&rest.bits[prefix..]);
        Self { bits }
    }

    /// `u32` little-endian bit length, then the bits packed LSB first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.bits.len().div_ceil(8));
        out.extend_from_slice(&(self.bits.len() as u32).to_le_bytes());
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                byte |= u8::from(b) << i;
            }
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format("key shorter than its length prefix".into()));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let body = &bytes[4..];
        if body.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "key declares {len} bits but carries {} bytes",
                body.len()
            )));
        }
        Ok(Self {
            bits: (0..len).map(|i| (body[i / 8] >> (i % 8)) & 1 == 1).collect(),
        })
    }
}

impl fmt::Debug for PmKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PmKey({} bits, {} set)", self.len(), self.count_ones())
    }
}

/// A single Benes network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BenesNetwork {
    ports: usize,
}

impl BenesNetwork {
    pub fn new(ports: usize) -> Result<Self> {
        switch_count(ports)?;
        Ok(Self { ports })
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn switches(&self) -> usize {
        switch_count(self.ports).expect("validated at construction")
    }

    pub fn columns(&self) -> usize {
        2 * self.ports.trailing_zeros() as usize - 1
    }

    pub fn rows(&self) -> usize {
        self.ports / 2
    }

    /// Routes data through the switches; `sel` must hold `switches()` bits.
    pub fn apply<T: Clone>(&self, sel: &[bool], data: &mut [T]) {
        debug_assert_eq!(sel.len(), self.switches());
        debug_assert_eq!(data.len(), self.ports);
        apply_rec(sel, self.rows(), 0, 0, data);
    }

    /// Select bits realizing `dest` (looping algorithm, lowest-index loop first).
    pub fn route(&self, dest: &[usize]) -> Vec<bool> {
        debug_assert_eq!(dest.len(), self.ports);
        let mut sel = vec![false; self.switches()];
        route_rec(dest, self.rows(), 0, 0, &mut sel);
        sel
    }
}

fn apply_rec<T: Clone>(sel: &[bool], stride: usize, col0: usize, row0: usize, data: &mut [T]) {
    let n = data.len();
    if n == 2 {
        if sel[col0 * stride + row0] {
            data.swap(0, 1);
        }
        return;
    }
    let half = n / 2;
    let last_col = col0 + 2 * n.trailing_zeros() as usize - 2;
    let mut upper = Vec::with_capacity(half);
    let mut lower = Vec::with_capacity(half);
    for i in 0..half {
        let (a, b) = (data[2 * i].clone(), data[2 * i + 1].clone());
        if sel[col0 * stride + row0 + i] {
            upper.push(b);
            lower.push(a);
        } else {
            upper.push(a);
            lower.push(b);
        }
    }
    apply_rec(sel, stride, col0 + 1, row0, &mut upper);
    apply_rec(sel, stride, col0 + 1, row0 + half / 2, &mut lower);
    for (i, (u, l)) in upper.into_iter().zip(lower).enumerate() {
        if sel[last_col * stride + row0 + i] {
            data[2 * i] = l;
            data[2 * i + 1] = u;
        } else {
            data[2 * i] = u;
            data[2 * i + 1] = l;
        }
    }
}

fn route_rec(dest: &[usize], stride: usize, col0: usize, row0: usize, sel: &mut [bool]) {
    let n = dest.len();
    if n == 2 {
        sel[col0 * stride + row0] = dest[0] == 1;
        return;
    }
    let half = n / 2;
    let last_col = col0 + 2 * n.trailing_zeros() as usize - 2;
    let mut inv = vec![0usize; n];
    for (i, &d) in dest.iter().enumerate() {
        inv[d] = i;
    }
    // 0 = upper subnetwork, 1 = lower
    let mut side: Vec<Option<u8>> = vec![None; n];
    for s in 0..half {
        if side[2 * s].is_some() {
            continue;
        }
        let mut x = 2 * s;
        side[x] = Some(0);
        loop {
            let partner_out = inv[dest[x] ^ 1];
            if side[partner_out].is_some() {
                break;
            }
            let sx = side[x].unwrap();
            side[partner_out] = Some(1 - sx);
            let partner_in = partner_out ^ 1;
            if side[partner_in].is_some() {
                break;
            }
            side[partner_in] = Some(sx);
            x = partner_in;
        }
    }
    let mut upper = vec![0usize; half];
    let mut lower = vec![0usize; half];
    for i in 0..half {
        let cross = side[2 * i] == Some(1);
        sel[col0 * stride + row0 + i] = cross;
        let (u, l) = if cross { (2 * i + 1, 2 * i) } else { (2 * i, 2 * i + 1) };
        upper[i] = dest[u] / 2;
        lower[i] = dest[l] / 2;
    }
    for j in 0..half {
        sel[last_col * stride + row0 + j] = side[inv[2 * j]] == Some(1);
    }
    route_rec(&upper, stride, col0 + 1, row0, sel);
    route_rec(&lower, stride, col0 + 1, row0 + half / 2, sel);
}

/// Permutation module: `k` independent Benes blocks side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PermutationModule {
    width: usize,
    block: BenesNetwork,
}

impl PermutationModule {
    pub fn new(width: usize, block_ports: usize) -> Result<Self> {
        let block = BenesNetwork::new(block_ports)?;
        if !width.is_power_of_two() || width < block_ports || !width.is_multiple_of(block_ports) {
            return Err(Error::Config(format!(
                "module width {width} is not a power-of-two multiple of block size {block_ports}"
            )));
        }
        Ok(Self { width, block })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_ports(&self) -> usize {
        self.block.ports()
    }

    pub fn blocks(&self) -> usize {
        self.width / self.block.ports()
    }

    pub fn switches_per_block(&self) -> usize {
        self.block.switches()
    }

    pub fn key_len(&self) -> usize {
        self.blocks() * self.block.switches()
    }

    pub fn switches(&self) -> usize {
        self.key_len()
    }

    fn check_key(&self, key: &PmKey) -> Result<()> {
        if key.len() != self.key_len() {
            return Err(Error::dim(self.key_len(), key.len(), "permutation module key"));
        }
        Ok(())
    }

    fn check_width(&self, len: usize) -> Result<()> {
        if len != self.width {
            return Err(Error::dim(self.width, len, "permutation module input"));
        }
        Ok(())
    }

    fn run<T: Clone>(&self, key: &PmKey, data: &mut [T]) {
        let s = self.block.switches();
        let b = self.block.ports();
        for (chunk, sel) in data.chunks_mut(b).zip(key.bits().chunks(s)) {
            self.block.apply(sel, chunk);
        }
    }

    pub fn apply<T: Clone>(&self, key: &PmKey, v: &[T]) -> Result<Vec<T>> {
        self.check_key(key)?;
        self.check_width(v.len())?;
        let mut out = v.to_vec();
        self.run(key, &mut out);
        Ok(out)
    }

    /// Like [`apply`](Self::apply) for vectors with high-impedance (`None`) entries.
    pub fn partial_apply<T: Clone>(&self, key: &PmKey, v: &[Option<T>]) -> Result<Vec<Option<T>>> {
        self.apply(key, v)
    }

    /// Select bits realizing `p`, which must keep every block-sized chunk in place.
    pub fn route(&self, p: &Permutation) -> Result<PmKey> {
        self.check_width(p.len())?;
        let b = self.block.ports();
        let mut bits = Vec::with_capacity(self.key_len());
        for (chunk, dests) in p.dest().chunks(b).enumerate() {
            let base = chunk * b;
            let mut local = Vec::with_capacity(b);
            for (i, &d) in dests.iter().enumerate() {
                if d / b != chunk {
                    return Err(Error::Routing {
                        chunk,
                        reason: format!("element {} maps to {d}, outside chunk [{base}, {})", base + i, base + b),
                    });
                }
                local.push(d - base);
            }
            bits.extend(self.block.route(&local));
        }
        Ok(PmKey::from_bits(bits))
    }

    /// The permutation the select bits realize.
    pub fn realized_permutation(&self, key: &PmKey) -> Result<Permutation> {
        let out = self.apply(key, &(0..self.width).collect::<Vec<usize>>())?;
        let mut dest = vec![0; self.width];
        for (pos, &i) in out.iter().enumerate() {
            dest[i] = pos;
        }
        Permutation::new(dest)
    }

    /// Select bits undoing `key`.
    pub fn reverse_key(&self, key: &PmKey) -> Result<PmKey> {
        self.route(&self.realized_permutation(key)?.inverse())
    }

    /// Undoes [`apply`](Self::apply) by routing the inverse permutation.
    pub fn reverse_apply<T: Clone>(&self, key: &PmKey, v: &[T]) -> Result<Vec<T>> {
        let rev = self.reverse_key(key)?;
        self.apply(&rev, v)
    }

    /// Reverses the vector, applies `key`, reverses again. This realizes
    /// `i -> n-1-d(n-1-i)`, which is the inverse of `d` only for some keys;
    /// use [`reverse_apply`](Self::reverse_apply) to undo a permutation.
    pub fn reverse_permute_reverse<T: Clone>(&self, key: &PmKey, v: &[T]) -> Result<Vec<T>> {
        let mut rev = v.to_vec();
        rev.reverse();
        let mut out = self.apply(key, &rev)?;
        out.reverse();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use std::collections::HashSet;

    fn random_key(len: usize, rng: &mut impl Rng) -> PmKey {
        PmKey::from_bits((0..len).map(|_| rng.random()).collect())
    }

    #[test]
    fn switch_counts_follow_closed_form() {
        let expect = [1, 6, 20, 56, 144, 352, 832, 1920];
        for b in 1..=8 {
            assert_eq!(switch_count(1 << b).unwrap(), expect[b - 1]);
            assert_eq!(switch_count(1 << b).unwrap(), (1 << (b - 1)) * (2 * b - 1));
        }
        assert!(switch_count(12).is_err());
        assert!(switch_count(1).is_err());
    }

    #[test]
    fn reduction_examples() {
        assert!((reduction_ratio(256, 16).unwrap() - (1.0 - 896.0 / 1920.0)).abs() < 1e-12);
        assert_eq!(reduction_ratio(256, 256).unwrap(), 0.0);
        assert!((reduction_ratio(16, 2).unwrap() - (1.0 - 8.0 / 56.0)).abs() < 1e-12);
        assert!(reduction_ratio(16, 32).is_err());
        assert!(reduction_ratio(24, 4).is_err());
    }

    #[test]
    fn two_port_switch() {
        let pm = PermutationModule::new(2, 2).unwrap();
        let v = ['a', 'b'];
        assert_eq!(pm.apply(&PmKey::from_bits(vec![false]), &v).unwrap(), vec!['a', 'b']);
        assert_eq!(pm.apply(&PmKey::from_bits(vec![true]), &v).unwrap(), vec!['b', 'a']);
        assert_eq!(
            pm.realized_permutation(&PmKey::from_bits(vec![true])).unwrap().dest(),
            &[1, 0]
        );
    }

    #[test]
    fn zero_key_is_identity() {
        for (w, b) in [(2, 2), (8, 8), (16, 4), (256, 16), (256, 256)] {
            let pm = PermutationModule::new(w, b).unwrap();
            let key = PmKey::zeros(pm.key_len());
            let v: Vec<usize> = (0..w).collect();
            assert_eq!(pm.apply(&key, &v).unwrap(), v);
            assert!(pm.realized_permutation(&key).unwrap().is_identity());
            assert_eq!(pm.reverse_apply(&key, &v).unwrap(), v);
        }
    }

    #[test]
    fn key_length_is_checked() {
        let pm = PermutationModule::new(16, 4).unwrap();
        assert_eq!(pm.key_len(), 4 * 6);
        assert!(pm.apply(&PmKey::zeros(5), &[0u8; 16]).is_err());
        assert!(pm.apply(&PmKey::zeros(24), &[0u8; 15]).is_err());
        assert!(PermutationModule::new(12, 4).is_err());
        assert!(PermutationModule::new(4, 8).is_err());
    }

    #[test]
    fn routes_figure_permutation() {
        let pm = PermutationModule::new(4, 4).unwrap();
        let p = Permutation::from_one_based(&[3, 4, 1, 2]).unwrap();
        let key = pm.route(&p).unwrap();
        assert_eq!(pm.apply(&key, &['a', 'b', 'c', 'd']).unwrap(), vec!['c', 'd', 'a', 'b']);
        assert_eq!(pm.realized_permutation(&key).unwrap(), p);
    }

    #[test]
    fn routing_identity_gives_identity() {
        let pm = PermutationModule::new(64, 16).unwrap();
        let key = pm.route(&Permutation::identity(64)).unwrap();
        assert!(pm.realized_permutation(&key).unwrap().is_identity());
    }

    #[test]
    fn routing_rejects_cross_chunk_permutations() {
        let pm = PermutationModule::new(8, 4).unwrap();
        let p = Permutation::new(vec![4, 1, 2, 3, 0, 5, 6, 7]).unwrap();
        match pm.route(&p) {
            Err(Error::Routing { chunk, .. }) => assert_eq!(chunk, 0),
            other => panic!("expected routing error, got {other:?}"),
        }
    }

    #[test]
    fn exhaustive_routing_on_small_blocks() {
        for ports in [2usize, 4, 8] {
            let pm = PermutationModule::new(ports, ports).unwrap();
            let mut d: Vec<usize> = (0..ports).collect();
            // Heap's algorithm
            let mut c = vec![0usize; ports];
            let mut count = 1;
            let check = |d: &[usize]| {
                let p = Permutation::new(d.to_vec()).unwrap();
                let key = pm.route(&p).unwrap();
                assert_eq!(pm.realized_permutation(&key).unwrap(), p);
            };
            check(&d);
            let mut i = 0;
            while i < ports {
                if c[i] < i {
                    if i % 2 == 0 {
                        d.swap(0, i);
                    } else {
                        d.swap(c[i], i);
                    }
                    check(&d);
                    count += 1;
                    c[i] += 1;
                    i = 0;
                } else {
                    c[i] = 0;
                    i += 1;
                }
            }
            assert_eq!(count, (1..=ports).product::<usize>());
        }
    }

    #[test]
    fn realizable_permutation_count_is_factorial() {
        for ports in [2usize, 4] {
            let pm = PermutationModule::new(ports, ports).unwrap();
            let mut seen = HashSet::new();
            for idx in 0..(1u64 << pm.key_len()) {
                let key = PmKey::from_index(idx, pm.key_len());
                seen.insert(pm.realized_permutation(&key).unwrap());
            }
            assert_eq!(seen.len(), (1..=ports).product::<usize>());
        }
    }

    #[test]
    fn partial_apply_propagates_high_impedance() {
        let pm = PermutationModule::new(4, 4).unwrap();
        let key = pm.route(&Permutation::new(vec![2, 3, 0, 1]).unwrap()).unwrap();
        let v = [Some('a'), None, None, Some('b')];
        assert_eq!(
            pm.partial_apply(&key, &v).unwrap(),
            vec![None, Some('b'), Some('a'), None]
        );
        let z: [Option<u8>; 4] = [None; 4];
        assert_eq!(pm.partial_apply(&key, &z).unwrap(), vec![None; 4]);
        let full = [Some(1), Some(2), Some(3), Some(4)];
        let plain: Vec<Option<i32>> = pm.apply(&key, &[1, 2, 3, 4]).unwrap().into_iter().map(Some).collect();
        assert_eq!(pm.partial_apply(&key, &full).unwrap(), plain);
    }

    #[test]
    fn reverse_permute_reverse_is_not_generally_inverse() {
        // d = (1,0,2,3): rpr realizes i -> 3 - d(3 - i) = (0,1,3,2) != d^-1
        let pm = PermutationModule::new(4, 4).unwrap();
        let d = Permutation::new(vec![1, 0, 2, 3]).unwrap();
        let key = pm.route(&d).unwrap();
        let v = [10, 20, 30, 40];
        let forward = pm.apply(&key, &v).unwrap();
        assert_ne!(pm.reverse_permute_reverse(&key, &forward).unwrap(), v.to_vec());
        assert_eq!(pm.reverse_apply(&key, &forward).unwrap(), v.to_vec());
        // for a palindromic-symmetric involution it does coincide
        let s = Permutation::new(vec![2, 3, 0, 1]).unwrap();
        let key = pm.route(&s).unwrap();
        let forward = pm.apply(&key, &v).unwrap();
        assert_eq!(pm.reverse_permute_reverse(&key, &forward).unwrap(), v.to_vec());
    }

    #[test]
    fn key_serialization_layout() {
        let key = PmKey::from_bits(vec![true, false, true, true, false, false, false, false, true, true]);
        let bytes = key.to_bytes();
        assert_eq!(bytes, vec![10, 0, 0, 0, 0b0000_1101, 0b0000_0011]);
        assert_eq!(PmKey::from_bytes(&bytes).unwrap(), key);
        assert!(PmKey::from_bytes(&bytes[..5]).is_err());
        assert!(PmKey::from_bytes(&[1, 0]).is_err());
    }

    #[test]
    fn xor_cyclic_is_involution() {
        let mut rng = SeedTree::new(4).rng();
        let key = random_key(100, &mut rng);
        let mask: Vec<bool> = (0..7).map(|_| rng.random()).collect();
        assert_eq!(key.xor_cyclic(&mask).xor_cyclic(&mask), key);
        assert_eq!(key.xor_cyclic(&[false; 7]), key);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reverse_undoes_apply(seed in any::<u64>(), log_w in 1u32..=8, log_b in 1u32..=8) {
            prop_assume!(log_b <= log_w);
            let pm = PermutationModule::new(1 << log_w, 1 << log_b).unwrap();
            let mut rng = SeedTree::new(seed).rng();
            let key = random_key(pm.key_len(), &mut rng);
            let v: Vec<u32> = (0..pm.width()).map(|_| rng.random()).collect();
            let fwd = pm.apply(&key, &v).unwrap();
            prop_assert_eq!(pm.reverse_apply(&key, &fwd).unwrap(), v.clone());
            let p = pm.realized_permutation(&key).unwrap();
            prop_assert_eq!(p.apply(&v).unwrap(), fwd);
        }

        #[test]
        fn route_then_apply_reproduces_block_diagonal(seed in any::<u64>(), log_w in 1u32..=8, log_b in 1u32..=8) {
            prop_assume!(log_b <= log_w);
            let (w, b) = (1usize << log_w, 1usize << log_b);
            let pm = PermutationModule::new(w, b).unwrap();
            let mut rng = SeedTree::new(seed).rng();
            let mut dest = Vec::with_capacity(w);
            for chunk in 0..w / b {
                let mut local: Vec<usize> = (chunk * b..(chunk + 1) * b).collect();
                local.shuffle(&mut rng);
                dest.extend(local);
            }
            let p = Permutation::new(dest).unwrap();
            let key = pm.route(&p).unwrap();
            prop_assert_eq!(pm.realized_permutation(&key).unwrap(), p);
        }

        #[test]
        fn key_bytes_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let key = PmKey::from_bits(bits);
            prop_assert_eq!(PmKey::from_bytes(&key.to_bytes()).unwrap(), key);
        }
    }
}

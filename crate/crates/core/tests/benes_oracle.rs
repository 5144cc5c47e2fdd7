//! Checks the recursive Benes model against an independent flat netlist
//! (column-by-column switch stages joined by unshuffle/shuffle wiring).

use rand::seq::SliceRandom;
use rand::Rng;
use tdpp_core::{BenesNetwork, Permutation, PermutationModule, PmKey, SeedTree};

/// Flat gate-level simulation. Column `c` holds `N/2` switches; switch `i`
/// joins wires `2i` and `2i+1` and crosses them when its select bit is set.
/// The first `b-1` links unshuffle inside shrinking blocks, the last `b-1`
/// shuffle inside growing blocks.
fn netlist_apply<T: Clone>(ports: usize, sel: &[bool], input: &[T]) -> Vec<T> {
    let b = ports.trailing_zeros() as usize;
    let half = ports / 2;
    let cols = 2 * b - 1;
    assert_eq!(sel.len(), cols * half);
    let mut wires = input.to_vec();
    for c in 0..cols {
        for i in 0..half {
            if sel[c * half + i] {
                wires.swap(2 * i, 2 * i + 1);
            }
        }
        if c + 1 == cols {
            break;
        }
        let mut next = wires.clone();
        if c + 1 < b {
            let blk = ports >> c;
            for (w, v) in wires.iter().enumerate() {
                let (base, p) = (w / blk * blk, w % blk);
                next[base + (p % 2) * (blk / 2) + p / 2] = v.clone();
            }
        } else {
            let blk = 1 << (c + 3 - b);
            for (w, v) in wires.iter().enumerate() {
                let (base, p) = (w / blk * blk, w % blk);
                next[base + (p % (blk / 2)) * 2 + p / (blk / 2)] = v.clone();
            }
        }
        wires = next;
    }
    wires
}

fn model_apply(ports: usize, sel: &[bool], input: &[usize]) -> Vec<usize> {
    let mut data = input.to_vec();
    BenesNetwork::new(ports).unwrap().apply(sel, &mut data);
    data
}

fn heap_permutations(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    visit(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            visit(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn netlist_agrees_on_every_four_port_key() {
    let input: Vec<usize> = (0..4).collect();
    for k in 0..64u64 {
        let sel = PmKey::from_index(k, 6);
        assert_eq!(
            model_apply(4, sel.bits(), &input),
            netlist_apply(4, sel.bits(), &input),
            "key {k}"
        );
    }
}

#[test]
fn netlist_agrees_on_random_keys() {
    let mut rng = SeedTree::new(21).rng();
    for ports in [8usize, 16, 32, 256] {
        let net = BenesNetwork::new(ports).unwrap();
        let input: Vec<usize> = (0..ports).collect();
        let trials = if ports == 8 { 1000 } else { 200 };
        for _ in 0..trials {
            let sel: Vec<bool> = (0..net.switches()).map(|_| rng.random()).collect();
            assert_eq!(model_apply(ports, &sel, &input), netlist_apply(ports, &sel, &input));
        }
    }
}

#[test]
fn every_eight_port_permutation_routes_through_the_netlist() {
    let net = BenesNetwork::new(8).unwrap();
    let input: Vec<usize> = (0..8).collect();
    let mut count = 0;
    heap_permutations(8, |dest| {
        let sel = net.route(dest);
        let out = netlist_apply(8, &sel, &input);
        for (i, &d) in dest.iter().enumerate() {
            assert_eq!(out[d], i);
        }
        count += 1;
    });
    assert_eq!(count, 40320);
}

#[test]
fn random_block_diagonal_permutations_route() {
    let mut rng = SeedTree::new(22).rng();
    for block in [4usize, 16, 256] {
        let pm = PermutationModule::new(256, block).unwrap();
        let input: Vec<usize> = (0..256).collect();
        let trials = if block == 256 { 2000 } else { 500 };
        for _ in 0..trials {
            let mut dest: Vec<usize> = Vec::with_capacity(256);
            for chunk in 0..256 / block {
                let mut local: Vec<usize> = (chunk * block..(chunk + 1) * block).collect();
                local.shuffle(&mut rng);
                dest.extend(local);
            }
            let p = Permutation::new(dest).unwrap();
            let key = pm.route(&p).unwrap();
            assert_eq!(pm.apply(&key, &input).unwrap(), p.apply(&input).unwrap());
            assert_eq!(pm.realized_permutation(&key).unwrap(), p);
        }
    }
}

#[test]
fn eight_port_network_realizes_all_permutations() {
    // all 2^20 keys
    let net = BenesNetwork::new(8).unwrap();
    let input: Vec<u8> = (0..8).collect();
    let mut seen = std::collections::HashSet::new();
    for k in 0..1u64 << net.switches() {
        let sel = PmKey::from_index(k, net.switches());
        seen.insert(netlist_apply(8, sel.bits(), &input));
    }
    assert_eq!(seen.len(), 40320);
}

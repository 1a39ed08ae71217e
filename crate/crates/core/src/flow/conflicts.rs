use std::collections::{BTreeMap, BTreeSet};

use crate::asm::{Kernel, RegisterRef};

/// Undirected graph over register words; an edge joins two words that appear
/// in different register operands of one instruction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConflictGraph {
    adj: BTreeMap<u8, BTreeSet<u8>>,
}

impl ConflictGraph {
    pub fn neighbors(&self, w: u8) -> impl Iterator<Item = u8> + '_ {
        self.adj.get(&w).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: u8, b: u8) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Distinct words conflicting with any word of `r`, excluding `r` itself.
    pub fn register_neighbors(&self, r: RegisterRef) -> BTreeSet<u8> {
        let own: BTreeSet<u8> = r.words().collect();
        r.words().flat_map(|w| self.neighbors(w)).filter(|w| !own.contains(w)).collect()
    }

    pub fn degree(&self, r: RegisterRef) -> usize {
        self.register_neighbors(r).len()
    }

    pub fn conflicts(&self, a: RegisterRef, b: RegisterRef) -> bool {
        a.words().any(|x| b.words().any(|y| self.has_edge(x, y)))
    }

    /// All edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> BTreeSet<(u8, u8)> {
        self.adj
            .iter()
            .flat_map(|(a, s)| s.iter().filter(move |b| *b > a).map(move |b| (*a, *b)))
            .collect()
    }

    fn add(&mut self, a: u8, b: u8) {
        if a != b {
            self.adj.entry(a).or_default().insert(b);
            self.adj.entry(b).or_default().insert(a);
        }
    }
}

pub fn operand_conflicts(k: &Kernel) -> ConflictGraph {
    let mut g = ConflictGraph::default();
    for inst in k.instructions() {
        let ops = inst.reg_operands();
        for (i, a) in ops.iter().enumerate() {
            for b in &ops[i + 1..] {
                if a == b {
                    continue;
                }
                for x in a.words() {
                    for y in b.words() {
                        g.add(x, y);
                    }
                }
            }
        }
    }
    g
}

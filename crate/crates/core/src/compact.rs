//! Register compaction: renames registers so the gaps left behind by demotion
//! move to the end of the register space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::asm::{bank_of, Kernel, RegisterRef, REG_BANKS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompactError {
    #[error("register group at R{0} overlaps another register")]
    Overlap(u8),
    #[error("renaming maps R{a} and R{b} to the same register R{to}")]
    NotInjective { a: u8, b: u8, to: u8 },
    #[error("renaming breaks the alignment of register pair R{0}")]
    Misaligned(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Gap,
    Single,
    /// Word `pos` of the group whose first word is `lead`.
    Group { lead: u8, pos: u8 },
}

/// One slot per physical register below the register count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelocationSpace {
    pub slots: Vec<Slot>,
}

impl RelocationSpace {
    /// Builds a space from register units; pairs must start at even indices.
    pub fn from_units(units: &[RegisterRef]) -> Result<Self, CompactError> {
        let len = units.iter().map(|u| u.index as usize + u.width as usize).max().unwrap_or(0);
        let mut slots = vec![Slot::Gap; len];
        let mut sorted = units.to_vec();
        sorted.sort_by_key(|u| (u.index, std::cmp::Reverse(u.width)));
        sorted.dedup();
        for u in sorted {
            if u.width > 1 && u.index % 2 != 0 {
                return Err(CompactError::Misaligned(u.index));
            }
            for (pos, w) in u.words().enumerate() {
                let s = &mut slots[w as usize];
                *s = match (*s, u.width) {
                    (Slot::Gap, 1) => Slot::Single,
                    (Slot::Gap, _) => Slot::Group { lead: u.index, pos: pos as u8 },
                    _ => return Err(CompactError::Overlap(u.index)),
                };
            }
        }
        Ok(RelocationSpace { slots })
    }

    /// Occupied units in index order.
    pub fn units(&self) -> Vec<RegisterRef> {
        let mut out = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            match s {
                Slot::Single => out.push(RegisterRef::single(i as u8)),
                Slot::Group { lead, pos: 0 } => {
                    let width = self.slots[i..].iter().take_while(|x| matches!(x, Slot::Group { lead: l, .. } if l == lead)).count();
                    out.push(RegisterRef { index: *lead, width: width as u8 });
                }
                _ => {}
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Gaps below the highest occupied slot.
    pub fn gaps(&self) -> Vec<u8> {
        (0..self.slots.len()).filter(|&i| self.slots[i] == Slot::Gap).map(|i| i as u8).collect()
    }
}

impl fmt::Display for RelocationSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                Slot::Gap => "_".to_string(),
                Slot::Single => format!("S{i}"),
                Slot::Group { lead, .. } => format!("D{lead}"),
            })
            .collect();
        write!(f, "[{}]", cells.join(" "))
    }
}

/// Units of a kernel: every register word, with words referenced as part of a
/// pair grouped together.
pub fn register_units(k: &Kernel) -> Vec<RegisterRef> {
    let mut pairs = BTreeSet::new();
    let mut words = BTreeSet::new();
    for inst in k.instructions() {
        for r in inst.reg_operands() {
            if r.width == 2 {
                pairs.insert(r.index);
            }
            words.extend(r.words());
        }
    }
    let mut out: Vec<RegisterRef> = pairs.iter().map(|&p| RegisterRef::pair(p)).collect();
    for w in words {
        let in_pair = pairs.contains(&(w & !1));
        if !in_pair {
            out.push(RegisterRef::single(w));
        }
    }
    out.sort();
    out
}

pub fn build_relocation_space(k: &Kernel) -> Result<RelocationSpace, CompactError> {
    RelocationSpace::from_units(&register_units(k))
}

/// Word-level renaming; indices not present map to themselves.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RenameMap(pub BTreeMap<u8, u8>);

impl RenameMap {
    pub fn get(&self, w: u8) -> u8 {
        self.0.get(&w).copied().unwrap_or(w)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|(a, b)| a == b)
    }

    pub fn rename(&self, r: RegisterRef) -> RegisterRef {
        if r.is_zero() {
            r
        } else {
            RegisterRef { index: self.get(r.index), width: r.width }
        }
    }
}

impl Serialize for RenameMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let named: BTreeMap<String, String> =
            self.0.iter().filter(|(a, b)| a != b).map(|(a, b)| (format!("R{a}"), format!("R{b}"))).collect();
        named.serialize(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompactMode {
    /// Shifting only: a pair that cannot move to an odd gap moves to the next even slot.
    ShiftOnly,
    /// Shifting plus swapping a blocked pair with the preceding single and gap.
    Full,
}

#[derive(Clone)]
struct Placer {
    mode: CompactMode,
    cursor: u32,
    /// Unit placed last, if it was a single ending at `cursor - 1`.
    last_single: Option<usize>,
    placed: Vec<Option<u32>>,
}

impl Placer {
    fn new(mode: CompactMode, n: usize) -> Self {
        Placer { mode, cursor: 0, last_single: None, placed: vec![None; n] }
    }

    fn place(&mut self, id: usize, unit: RegisterRef) {
        let f = self.cursor;
        if unit.width == 1 {
            self.placed[id] = Some(f);
            self.cursor = f + 1;
            self.last_single = Some(id);
            return;
        }
        let w = unit.width as u32;
        if f.is_multiple_of(2) {
            self.placed[id] = Some(f);
            self.cursor = f + w;
        } else if let (CompactMode::Full, Some(s)) = (self.mode, self.last_single) {
            // The window [f-1, f] holds a single and a gap: the group takes
            // it and the single fills the first slot the group vacated.
            self.placed[id] = Some(f - 1);
            self.placed[s] = Some(f - 1 + w);
            self.cursor = f + w;
            self.last_single = Some(s);
            return;
        } else {
            log::debug!("pair R{} left behind an alignment gap at R{f}", unit.index);
            self.placed[id] = Some(f + 1);
            self.cursor = f + 1 + w;
        }
        self.last_single = None;
    }

    /// Final register count if `rest` is placed in order.
    fn finish_len(&self, units: &[RegisterRef], rest: impl Iterator<Item = usize>) -> u32 {
        let mut p = self.clone();
        for id in rest {
            p.place(id, units[id]);
        }
        p.cursor
    }
}

fn into_map(units: &[RegisterRef], placed: &[Option<u32>]) -> RenameMap {
    let mut map = BTreeMap::new();
    for (u, p) in units.iter().zip(placed) {
        let to = p.expect("every unit placed");
        for k in 0..u.width {
            map.insert(u.index + k, (to + k as u32) as u8);
        }
    }
    RenameMap(map)
}

/// Renaming that compacts `units` (any order) left to right.
pub fn compact_units(units: &[RegisterRef], mode: CompactMode) -> RenameMap {
    let mut sorted = units.to_vec();
    sorted.sort();
    let mut p = Placer::new(mode, sorted.len());
    for (id, u) in sorted.iter().enumerate() {
        p.place(id, *u);
    }
    into_map(&sorted, &p.placed)
}

/// Register count after compacting `units`.
pub fn compacted_len(units: &[RegisterRef], mode: CompactMode) -> u32 {
    let map = compact_units(units, mode);
    units.iter().map(|u| map.get(u.index) as u32 + u.width as u32).max().unwrap_or(0)
}

pub fn compact(space: &RelocationSpace) -> RenameMap {
    compact_units(&space.units(), CompactMode::Full)
}

/// Compaction that fills each gap with a register from the gap's bank when one
/// is among the next four units and taking it does not increase the final
/// register count.
pub fn compact_bank_aware(space: &RelocationSpace) -> RenameMap {
    let units = space.units();
    let mut p = Placer::new(CompactMode::Full, units.len());
    let mut pending: Vec<usize> = (0..units.len()).collect();
    while !pending.is_empty() {
        let f = p.cursor;
        let plain = p.finish_len(&units, pending.iter().copied());
        let window = pending.len().min(REG_BANKS as usize);
        let choice = (0..window).find(|&j| {
            let u = units[pending[j]];
            let fits = u.width == 1 || f.is_multiple_of(2);
            if !fits || bank_of(u.index) != bank_of(f as u8) {
                return false;
            }
            if j == 0 {
                return true;
            }
            let mut trial = p.clone();
            trial.place(pending[j], u);
            let rest = pending.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, id)| *id);
            trial.finish_len(&units, rest) == plain
        });
        let id = pending.remove(choice.unwrap_or(0));
        p.place(id, units[id]);
    }
    into_map(&units, &p.placed)
}

/// Renames every register operand. The map must be injective on the kernel's
/// registers and keep pairs aligned.
pub fn apply_renaming(k: &Kernel, map: &RenameMap) -> Result<Kernel, CompactError> {
    let mut seen: BTreeMap<u8, u8> = BTreeMap::new();
    for w in k.used_words() {
        let to = map.get(w);
        if let Some(a) = seen.insert(to, w) {
            return Err(CompactError::NotInjective { a, b: w, to });
        }
    }
    for inst in k.instructions() {
        for r in inst.reg_operands() {
            if r.width > 1 {
                let lead = map.get(r.index);
                if !lead.is_multiple_of(2) || (1..r.width).any(|i| map.get(r.index + i) != lead + i) {
                    return Err(CompactError::Misaligned(r.index));
                }
            }
        }
    }
    let mut out = k.clone();
    for inst in out.instructions_mut() {
        inst.map_regs(|r| map.rename(r));
    }
    Ok(out)
}

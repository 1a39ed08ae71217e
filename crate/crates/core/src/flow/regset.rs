/// Fixed-size set of register words 0..=255.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct RegSet([u64; 4]);

impl RegSet {
    pub const EMPTY: RegSet = RegSet([0; 4]);

    pub fn insert(&mut self, w: u8) -> bool {
        let (i, bit) = (w as usize / 64, 1u64 << (w % 64));
        let fresh = self.0[i] & bit == 0;
        self.0[i] |= bit;
        fresh
    }

    pub fn remove(&mut self, w: u8) {
        self.0[w as usize / 64] &= !(1u64 << (w % 64));
    }

    pub fn contains(&self, w: u8) -> bool {
        self.0[w as usize / 64] & (1u64 << (w % 64)) != 0
    }

    pub fn union_with(&mut self, other: &RegSet) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a |= b;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|x| *x == 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|x| x.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(move |w| self.contains(*w))
    }
}

impl FromIterator<u8> for RegSet {
    fn from_iter<T: IntoIterator<Item = u8>>(iter: T) -> Self {
        let mut s = RegSet::EMPTY;
        for w in iter {
            s.insert(w);
        }
        s
    }
}

impl std::fmt::Debug for RegSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter().map(|w| format!("R{w}"))).finish()
    }
}

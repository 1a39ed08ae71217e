use super::{Cfg, RegSet};
use crate::asm::Kernel;

/// Register liveness at block boundaries and before every body item.
#[derive(Debug, Clone)]
pub struct Liveness {
    pub live_in: Vec<RegSet>,
    pub live_out: Vec<RegSet>,
    /// Live words immediately before each body item.
    before: Vec<RegSet>,
    /// Live words immediately after each body item.
    after: Vec<RegSet>,
}

impl Liveness {
    pub fn live_before(&self, item: usize) -> &RegSet {
        &self.before[item]
    }

    pub fn live_after(&self, item: usize) -> &RegSet {
        &self.after[item]
    }
}

/// Backward dataflow to the least fixpoint. Multi-word operands contribute
/// every word; a predicated definition does not kill the old value.
pub fn register_liveness(k: &Kernel, cfg: &Cfg) -> Liveness {
    let n = cfg.blocks.len();
    let mut live_in = vec![RegSet::EMPTY; n];
    let mut live_out = vec![RegSet::EMPTY; n];
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..n).rev() {
            let mut out = RegSet::EMPTY;
            for s in cfg.successors(b) {
                out.union_with(&live_in[s]);
            }
            let inn = transfer_block(k, cfg, b, out, |_, _, _| {});
            if out != live_out[b] || inn != live_in[b] {
                live_out[b] = out;
                live_in[b] = inn;
                changed = true;
            }
        }
    }
    let mut before = vec![RegSet::EMPTY; k.body.len()];
    let mut after = vec![RegSet::EMPTY; k.body.len()];
    for b in 0..n {
        transfer_block(k, cfg, b, live_out[b], |i, bef, aft| {
            before[i] = bef;
            after[i] = aft;
        });
    }
    Liveness { live_in, live_out, before, after }
}

fn transfer_block(
    k: &Kernel,
    cfg: &Cfg,
    b: usize,
    out: RegSet,
    mut record: impl FnMut(usize, RegSet, RegSet),
) -> RegSet {
    let mut live = out;
    for i in cfg.blocks[b].items.clone().rev() {
        let after = live;
        if let Some(inst) = k.body[i].as_instr() {
            if inst.guard.is_none() {
                for w in inst.dest_words() {
                    live.remove(w);
                }
            }
            for w in inst.src_words() {
                live.insert(w);
            }
        }
        record(i, live, after);
    }
    live
}

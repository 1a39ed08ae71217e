use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;
use std::ops::Range;

use thiserror::Error;

use crate::asm::{Instruction, Item, Kernel, Opcode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("branch at line {line} targets unknown label `{label}`")]
    UnresolvedLabel { label: String, line: usize },
}

pub type BlockId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    /// Range of body item indices (labels and comments included).
    pub items: Range<usize>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub backward: bool,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    pub edges: Vec<Edge>,
    pub entry: BlockId,
    item_block: Vec<BlockId>,
    loop_depth: Vec<u32>,
}

impl Cfg {
    pub fn block_of_item(&self, item: usize) -> BlockId {
        self.item_block[item]
    }

    pub fn successors(&self, b: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.edges.iter().filter(move |e| e.from == b).map(|e| e.to)
    }

    pub fn predecessors(&self, b: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.edges.iter().filter(move |e| e.to == b).map(|e| e.from)
    }

    pub fn backward_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.backward)
    }

    /// Number of natural loops containing `b`.
    pub fn loop_depth(&self, b: BlockId) -> u32 {
        self.loop_depth[b]
    }

    /// Instructions of a block with their body item indices.
    pub fn block_instructions<'k>(&self, k: &'k Kernel, b: BlockId) -> impl Iterator<Item = (usize, &'k Instruction)> {
        let range = self.blocks[b].items.clone();
        range.filter_map(move |i| k.body[i].as_instr().map(|inst| (i, inst)))
    }

    /// Natural loop body of a backward edge: the header plus every block that
    /// reaches the edge source without passing through the header.
    pub fn natural_loop(&self, edge: &Edge) -> BTreeSet<BlockId> {
        let header = edge.to;
        let mut body = BTreeSet::from([header]);
        let mut stack = vec![edge.from];
        while let Some(b) = stack.pop() {
            if body.insert(b) {
                stack.extend(self.predecessors(b));
            }
        }
        body
    }

    /// Graphviz rendering; backward edges are dashed.
    pub fn to_dot(&self, k: &Kernel) -> String {
        let mut out = format!("digraph \"{}\" {{\n", k.name);
        for b in &self.blocks {
            let n = self.block_instructions(k, b.id).count();
            let name = b.label.as_deref().unwrap_or("");
            let _ = writeln!(out, "  b{} [label=\"b{} {} ({} inst)\"];", b.id, b.id, name, n);
        }
        for e in &self.edges {
            let style = if e.backward { " [style=dashed]" } else { "" };
            let _ = writeln!(out, "  b{} -> b{}{};", e.from, e.to, style);
        }
        out.push_str("}\n");
        out
    }
}

/// Splits the body into basic blocks at labels and after BRA/EXIT.
pub fn build_cfg(k: &Kernel) -> Result<Cfg, CfgError> {
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut start = 0;
    let mut label = None;
    let mut has_content = false;
    for (i, item) in k.body.iter().enumerate() {
        match item {
            Item::Label(l) => {
                if has_content || label.is_some() {
                    blocks.push(BasicBlock { id: blocks.len(), items: start..i, label: label.take() });
                }
                start = i;
                label = Some(l.clone());
                has_content = false;
            }
            Item::Instr(inst) => {
                has_content = true;
                if inst.opcode.is_jump() {
                    blocks.push(BasicBlock { id: blocks.len(), items: start..i + 1, label: label.take() });
                    start = i + 1;
                    has_content = false;
                }
            }
            Item::Comment(_) => {}
        }
    }
    if has_content || label.is_some() || blocks.is_empty() {
        blocks.push(BasicBlock { id: blocks.len(), items: start..k.body.len(), label: label.take() });
    } else if let Some(last) = blocks.last_mut() {
        // Trailing comments join the final block.
        last.items.end = k.body.len();
    }

    let mut item_block = vec![0; k.body.len()];
    for b in &blocks {
        for i in b.items.clone() {
            item_block[i] = b.id;
        }
    }
    let label_block: HashMap<&str, BlockId> =
        blocks.iter().filter_map(|b| b.label.as_deref().map(|l| (l, b.id))).collect();

    let mut edges = Vec::new();
    for b in &blocks {
        let last = b.items.clone().rev().find_map(|i| k.body[i].as_instr());
        let next = (b.id + 1 < blocks.len()).then_some(b.id + 1);
        let mut add = |to: BlockId| {
            let e = Edge { from: b.id, to, backward: to <= b.id };
            if !edges.contains(&e) {
                edges.push(e);
            }
        };
        match last {
            Some(inst) if inst.opcode == Opcode::Bra => {
                let target = inst.branch_target().unwrap_or_default();
                let to = *label_block.get(target).ok_or_else(|| CfgError::UnresolvedLabel {
                    label: target.to_string(),
                    line: inst.line,
                })?;
                if inst.guard.is_some() {
                    if let Some(n) = next {
                        add(n);
                    }
                }
                add(to);
            }
            Some(inst) if inst.opcode == Opcode::Exit => {
                if inst.guard.is_some() {
                    if let Some(n) = next {
                        add(n);
                    }
                }
            }
            _ => {
                if let Some(n) = next {
                    add(n);
                }
            }
        }
    }

    let mut cfg = Cfg { blocks, edges, entry: 0, item_block, loop_depth: Vec::new() };
    let mut headers: HashMap<BlockId, BTreeSet<BlockId>> = HashMap::new();
    for e in cfg.backward_edges() {
        headers.entry(e.to).or_default().extend(cfg.natural_loop(e));
    }
    let mut depth = vec![0; cfg.blocks.len()];
    for body in headers.values() {
        for &b in body {
            depth[b] += 1;
        }
    }
    cfg.loop_depth = depth;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_kernel;

    fn kernel(body: &str) -> Kernel {
        parse_kernel(&format!(".kernel k\n.blockdim 32\n.shared 0\n{body}")).unwrap()
    }

    #[test]
    fn straight_line_is_one_block() {
        let k = kernel("B--:-:-:-:1 MOV R0, 1 ;\nB--:-:-:-:1 MOV R1, 2 ;\n");
        let cfg = build_cfg(&k).unwrap();
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.edges.is_empty());
    }

    #[test]
    fn backward_branch() {
        let k = kernel(
            "B--:-:-:-:1 MOV R0, 0 ;\nL:\nB--:-:-:-:1 IADD R0, R0, 1 ;\nB--:-:-:-:1 ISETP.LT P0, R0, 4 ;\nB--:-:-:-:1 @P0 BRA L ;\nB--:-:-:-:1 EXIT ;\n",
        );
        let cfg = build_cfg(&k).unwrap();
        assert_eq!(cfg.blocks.len(), 3);
        assert_eq!(cfg.backward_edges().count(), 1);
        assert_eq!(cfg.loop_depth(1), 1);
        assert_eq!(cfg.loop_depth(0), 0);
        assert_eq!(cfg.loop_depth(2), 0);
    }

    #[test]
    fn diamond_has_four_forward_edges() {
        let k = kernel(
            "B--:-:-:-:1 @P0 BRA ELSE ;\nB--:-:-:-:1 MOV R1, 1 ;\nB--:-:-:-:1 BRA END ;\nELSE:\nB--:-:-:-:1 MOV R1, 2 ;\nEND:\nB--:-:-:-:1 EXIT ;\n",
        );
        let cfg = build_cfg(&k).unwrap();
        assert_eq!(cfg.blocks.len(), 4);
        let mut edges: Vec<(usize, usize)> = cfg.edges.iter().map(|e| (e.from, e.to)).collect();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert!(cfg.edges.iter().all(|e| !e.backward));
    }

    #[test]
    fn unresolved_target() {
        let k = kernel("B--:-:-:-:1 BRA NOWHERE ;\n");
        assert!(matches!(build_cfg(&k), Err(CfgError::UnresolvedLabel { .. })));
    }

    #[test]
    fn nested_loops_depth() {
        let k = kernel(
            "OUTER:\nB--:-:-:-:1 MOV R0, 0 ;\nINNER:\nB--:-:-:-:1 IADD R0, R0, 1 ;\nB--:-:-:-:1 @P0 BRA INNER ;\nB--:-:-:-:1 @P1 BRA OUTER ;\nB--:-:-:-:1 EXIT ;\n",
        );
        let cfg = build_cfg(&k).unwrap();
        assert_eq!(cfg.loop_depth(cfg.block_of_item(3)), 2);
        assert_eq!(cfg.loop_depth(cfg.block_of_item(1)), 1);
        assert!(cfg.to_dot(&k).contains("style=dashed"));
    }
}

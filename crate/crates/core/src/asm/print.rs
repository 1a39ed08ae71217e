use std::fmt::{self, Write};

use super::{ControlInfo, Instruction, Item, Kernel, Operand};

impl fmt::Display for ControlInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('B')?;
        if self.wait.is_empty() {
            f.write_str("--")?;
        } else {
            for b in self.wait.iter() {
                write!(f, "{}", b.index())?;
            }
        }
        match self.read_barrier {
            Some(b) => write!(f, ":R{}", b.index())?,
            None => f.write_str(":-")?,
        }
        match self.write_barrier {
            Some(b) => write!(f, ":W{}", b.index())?,
            None => f.write_str(":-")?,
        }
        write!(f, ":{}:{}", if self.yield_flag { "Y" } else { "-" }, self.stall)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Pred(p) => write!(f, "P{p}"),
            Operand::Imm(i) if i.hex => write!(f, "0x{:x}", i.value),
            Operand::Imm(i) => write!(f, "{}", i.value),
            Operand::Mem { base, offset } => write!(f, "[{base}+0x{offset:x}]"),
            Operand::Special(s) => f.write_str(s.name()),
            Operand::Label(l) => f.write_str(l),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.control)?;
        if let Some(g) = self.guard {
            write!(f, "@{}P{} ", if g.negated { "!" } else { "" }, g.pred)?;
        }
        f.write_str(&self.opcode.mnemonic())?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{op}")?;
        }
        f.write_str(" ;")?;
        if let Some(c) = &self.comment {
            write!(f, " #{c}")?;
        }
        Ok(())
    }
}

/// Prints a kernel in canonical form: header directives, then one item per line,
/// instructions indented by four spaces.
pub fn print_kernel(k: &Kernel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".kernel {}", k.name);
    let _ = writeln!(out, ".blockdim {}", k.block_dim);
    let _ = writeln!(out, ".shared {}", k.static_shared);
    if k.dynamic_shared > 0 {
        let _ = writeln!(out, ".dynshared {}", k.dynamic_shared);
    }
    for item in &k.body {
        let _ = match item {
            Item::Label(l) => writeln!(out, "{l}:"),
            Item::Instr(i) => writeln!(out, "    {i}"),
            Item::Comment(c) => writeln!(out, "#{c}"),
        };
    }
    out
}

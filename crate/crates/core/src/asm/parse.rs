use std::collections::HashSet;

use thiserror::Error;

use super::{
    Barrier, BarrierSet, CmpOp, ControlInfo, Guard, Imm, Instruction, Item, Kernel, Opcode,
    Operand, RegisterRef, SpecialReg, NUM_BARRIERS, RZ_INDEX,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("barrier index {0} outside 1-{NUM_BARRIERS}")]
    BarrierRange(u32),
    #[error("64-bit operand on odd register R{0}")]
    OddPair(u8),
    #[error("register index {0} out of range")]
    RegisterRange(u32),
    #[error("stall count {0} outside 0-15")]
    Stall(u32),
    #[error("read and write barrier are both {0}")]
    SameBarrier(u8),
    #[error("instruction waits on barrier {0} that it sets itself")]
    SelfWait(u8),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("duplicate directive `{0}`")]
    DuplicateDirective(String),
    #[error("missing directive `{0}`")]
    MissingDirective(&'static str),
    #[error("block dimension {0} must be a multiple of 32 in [32, 1024]")]
    BlockDim(u32),
    #[error("{opcode} expects {expected}")]
    Operands { opcode: String, expected: &'static str },
}

fn err(line: usize, col: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, col, kind }
}

/// Parses one kernel in the assembly dialect.
pub fn parse_kernel(text: &str) -> Result<Kernel, ParseError> {
    let mut name: Option<String> = None;
    let mut block_dim: Option<u32> = None;
    let mut static_shared: Option<u32> = None;
    let mut dynamic_shared: Option<u32> = None;
    let mut body = Vec::new();
    let mut labels = HashSet::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let (content, comment) = match raw.find('#') {
            Some(p) => (&raw[..p], Some(&raw[p + 1..])),
            None => (raw, None),
        };
        let trimmed = content.trim();
        let col0 = content.len() - content.trim_start().len() + 1;
        if trimmed.is_empty() {
            if let Some(c) = comment {
                body.push(Item::Comment(c.to_string()));
            }
            continue;
        }
        if let Some(directive) = trimmed.strip_prefix('.') {
            let mut parts = directive.split_whitespace();
            let key = parts.next().unwrap_or("");
            let value = parts.next().ok_or_else(|| {
                err(line, col0, ParseErrorKind::Syntax(format!("directive `.{key}` needs a value")))
            })?;
            if parts.next().is_some() {
                return Err(err(line, col0, ParseErrorKind::Syntax("trailing tokens after directive".into())));
            }
            let number = || {
                value.parse::<u32>().map_err(|_| {
                    err(line, col0, ParseErrorKind::Syntax(format!("expected a number, got `{value}`")))
                })
            };
            let slot_taken = |taken: bool| {
                if taken {
                    Err(err(line, col0, ParseErrorKind::DuplicateDirective(format!(".{key}"))))
                } else {
                    Ok(())
                }
            };
            match key {
                "kernel" => {
                    slot_taken(name.is_some())?;
                    if !is_identifier(value) {
                        return Err(err(line, col0, ParseErrorKind::Syntax(format!("bad kernel name `{value}`"))));
                    }
                    name = Some(value.to_string());
                }
                "blockdim" => {
                    slot_taken(block_dim.is_some())?;
                    let v = number()?;
                    if !(32..=1024).contains(&v) || v % 32 != 0 {
                        return Err(err(line, col0, ParseErrorKind::BlockDim(v)));
                    }
                    block_dim = Some(v);
                }
                "shared" => {
                    slot_taken(static_shared.is_some())?;
                    static_shared = Some(number()?);
                }
                "dynshared" => {
                    slot_taken(dynamic_shared.is_some())?;
                    dynamic_shared = Some(number()?);
                }
                other => {
                    return Err(err(line, col0, ParseErrorKind::Syntax(format!("unknown directive `.{other}`"))));
                }
            }
            continue;
        }
        if let Some(label) = trimmed.strip_suffix(':') {
            if !is_identifier(label) {
                return Err(err(line, col0, ParseErrorKind::Syntax(format!("bad label `{label}`"))));
            }
            if !labels.insert(label.to_string()) {
                return Err(err(line, col0, ParseErrorKind::DuplicateLabel(label.to_string())));
            }
            body.push(Item::Label(label.to_string()));
            continue;
        }
        let mut inst = parse_instruction(content, line)?;
        inst.comment = comment.map(str::to_string);
        body.push(Item::Instr(inst));
    }

    Ok(Kernel {
        name: name.ok_or_else(|| err(1, 1, ParseErrorKind::MissingDirective(".kernel")))?,
        block_dim: block_dim.ok_or_else(|| err(1, 1, ParseErrorKind::MissingDirective(".blockdim")))?,
        static_shared: static_shared.ok_or_else(|| err(1, 1, ParseErrorKind::MissingDirective(".shared")))?,
        dynamic_shared: dynamic_shared.unwrap_or(0),
        body,
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits `content` into whitespace-separated tokens with 1-based columns.
fn tokens(content: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in content.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s + 1, &content[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &content[s..]));
    }
    out
}

fn parse_instruction(content: &str, line: usize) -> Result<Instruction, ParseError> {
    let body = content.trim_end();
    let semi = body
        .strip_suffix(';')
        .ok_or_else(|| err(line, body.len().max(1), ParseErrorKind::Syntax("missing `;`".into())))?;
    let toks = tokens(semi);
    let mut it = toks.iter().copied().peekable();

    let (ccol, ctok) = it.next().ok_or_else(|| err(line, 1, ParseErrorKind::Syntax("empty instruction".into())))?;
    let control = parse_control(ctok, line, ccol)?;

    let mut guard = None;
    if let Some(&(gcol, g)) = it.peek() {
        if let Some(rest) = g.strip_prefix('@') {
            it.next();
            let (negated, p) = match rest.strip_prefix('!') {
                Some(p) => (true, p),
                None => (false, rest),
            };
            let pred = parse_pred(p).ok_or_else(|| {
                err(line, gcol, ParseErrorKind::Syntax(format!("bad predicate guard `{g}`")))
            })?;
            guard = Some(Guard { pred, negated });
        }
    }

    let (ocol, otok) = it
        .next()
        .ok_or_else(|| err(line, ccol, ParseErrorKind::Syntax("missing opcode".into())))?;
    let opcode = parse_opcode(otok).ok_or_else(|| err(line, ocol, ParseErrorKind::UnknownOpcode(otok.to_string())))?;

    // Operands are the rest of the text after the opcode token.
    let ops_start = ocol - 1 + otok.len();
    let ops_text = &semi[ops_start..];
    let mut operands = Vec::new();
    if !ops_text.trim().is_empty() {
        let mut offset = ops_start;
        for piece in ops_text.split(',') {
            let lead = piece.len() - piece.trim_start().len();
            let col = offset + lead + 1;
            let t = piece.trim();
            if t.is_empty() {
                return Err(err(line, col, ParseErrorKind::Syntax("empty operand".into())));
            }
            operands.push(parse_operand(t, opcode, line, col)?);
            offset += piece.len() + 1;
        }
    }
    check_shape(opcode, &operands, line, ocol)?;

    Ok(Instruction { control, guard, opcode, operands, line, comment: None })
}

fn parse_control(tok: &str, line: usize, col: usize) -> Result<ControlInfo, ParseError> {
    let bad = |m: &str| err(line, col, ParseErrorKind::Syntax(format!("bad control annotation `{tok}`: {m}")));
    let fields: Vec<&str> = tok.split(':').collect();
    if fields.len() != 5 {
        return Err(bad("expected B<mask>:<rb>:<wb>:<y>:<stall>"));
    }
    let mask = fields[0].strip_prefix('B').ok_or_else(|| bad("wait mask must start with `B`"))?;
    let mut wait = BarrierSet::EMPTY;
    if mask != "--" {
        if mask.is_empty() {
            return Err(bad("empty wait mask"));
        }
        for c in mask.chars() {
            let d = c.to_digit(10).ok_or_else(|| bad("wait mask must be `--` or barrier digits"))?;
            let b = Barrier::new(d as u8).ok_or_else(|| err(line, col, ParseErrorKind::BarrierRange(d)))?;
            wait.insert(b);
        }
    }
    let barrier = |field: &str, prefix: char| -> Result<Option<Barrier>, ParseError> {
        if field == "-" {
            return Ok(None);
        }
        let digits = field.strip_prefix(prefix).ok_or_else(|| bad(&format!("expected `-` or `{prefix}<n>`")))?;
        let d: u32 = digits.parse().map_err(|_| bad("barrier index is not a number"))?;
        u8::try_from(d)
            .ok()
            .and_then(Barrier::new)
            .map(Some)
            .ok_or_else(|| err(line, col, ParseErrorKind::BarrierRange(d)))
    };
    let read_barrier = barrier(fields[1], 'R')?;
    let write_barrier = barrier(fields[2], 'W')?;
    let yield_flag = match fields[3] {
        "-" => false,
        "Y" => true,
        _ => return Err(bad("yield flag must be `-` or `Y`")),
    };
    let stall: u32 = fields[4].parse().map_err(|_| bad("stall is not a number"))?;
    if stall > 15 {
        return Err(err(line, col, ParseErrorKind::Stall(stall)));
    }
    if let (Some(r), Some(w)) = (read_barrier, write_barrier) {
        if r == w {
            return Err(err(line, col, ParseErrorKind::SameBarrier(r.index())));
        }
    }
    for b in read_barrier.into_iter().chain(write_barrier) {
        if wait.contains(b) {
            return Err(err(line, col, ParseErrorKind::SelfWait(b.index())));
        }
    }
    Ok(ControlInfo { stall: stall as u8, read_barrier, write_barrier, wait, yield_flag })
}

fn parse_opcode(tok: &str) -> Option<Opcode> {
    if let Some(cmp) = tok.strip_prefix("ISETP.") {
        let c = match cmp {
            "LT" => CmpOp::Lt,
            "LE" => CmpOp::Le,
            "GT" => CmpOp::Gt,
            "GE" => CmpOp::Ge,
            "EQ" => CmpOp::Eq,
            "NE" => CmpOp::Ne,
            _ => return None,
        };
        return Some(Opcode::Isetp(c));
    }
    Some(match tok {
        "MOV" => Opcode::Mov,
        "IADD" => Opcode::Iadd,
        "IMUL" => Opcode::Imul,
        "SHL" => Opcode::Shl,
        "FADD" => Opcode::Fadd,
        "FMUL" => Opcode::Fmul,
        "FFMA" => Opcode::Ffma,
        "DADD" => Opcode::Dadd,
        "DMUL" => Opcode::Dmul,
        "S2R" => Opcode::S2r,
        "LDG" => Opcode::Ldg,
        "STG" => Opcode::Stg,
        "LDS" => Opcode::Lds,
        "STS" => Opcode::Sts,
        "BRA" => Opcode::Bra,
        "EXIT" => Opcode::Exit,
        "NOP" => Opcode::Nop,
        _ => return None,
    })
}

fn parse_pred(s: &str) -> Option<u8> {
    let n: u8 = s.strip_prefix('P')?.parse().ok()?;
    (n <= 6).then_some(n)
}

fn parse_reg(s: &str, width: u8, line: usize, col: usize) -> Result<Option<RegisterRef>, ParseError> {
    if s == "RZ" {
        return Ok(Some(RegisterRef::zero()));
    }
    let Some(digits) = s.strip_prefix('R') else { return Ok(None) };
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Ok(None);
    }
    let n: u32 = digits.parse().map_err(|_| err(line, col, ParseErrorKind::RegisterRange(u32::MAX)))?;
    if n + width as u32 > RZ_INDEX as u32 {
        return Err(err(line, col, ParseErrorKind::RegisterRange(n)));
    }
    let index = n as u8;
    if width == 2 && index % 2 == 1 {
        return Err(err(line, col, ParseErrorKind::OddPair(index)));
    }
    Ok(Some(RegisterRef { index, width }))
}

fn parse_imm(s: &str) -> Option<Imm> {
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        let v = u32::from_str_radix(h, 16).ok()?;
        return Some(Imm::hex(v));
    }
    let v: i64 = s.parse().ok()?;
    (i32::MIN as i64..=u32::MAX as i64).contains(&v).then_some(Imm::dec(v))
}

fn parse_operand(t: &str, opcode: Opcode, line: usize, col: usize) -> Result<Operand, ParseError> {
    if let Some(inner) = t.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| err(line, col, ParseErrorKind::Syntax(format!("unterminated memory operand `{t}`"))))?;
        let (base_s, off_s) = match inner.split_once('+') {
            Some((b, o)) => (b.trim(), Some(o.trim())),
            None => (inner.trim(), None),
        };
        let base = parse_reg(base_s, 1, line, col)?
            .ok_or_else(|| err(line, col, ParseErrorKind::Syntax(format!("bad address register `{base_s}`"))))?;
        let offset = match off_s {
            None => 0,
            Some(o) => {
                let h = o.strip_prefix("0x").ok_or_else(|| {
                    err(line, col, ParseErrorKind::Syntax(format!("memory offset must be 0x-hex, got `{o}`")))
                })?;
                u32::from_str_radix(h, 16)
                    .map_err(|_| err(line, col, ParseErrorKind::Syntax(format!("bad memory offset `{o}`"))))?
            }
        };
        return Ok(Operand::Mem { base, offset });
    }
    if let Some(r) = parse_reg(t, opcode.reg_width(), line, col)? {
        return Ok(Operand::Reg(r));
    }
    if let Some(p) = parse_pred(t) {
        return Ok(Operand::Pred(p));
    }
    match t {
        "SR_TID.X" => return Ok(Operand::Special(SpecialReg::TidX)),
        "SR_CTAID.X" => return Ok(Operand::Special(SpecialReg::CtaidX)),
        _ => {}
    }
    if let Some(imm) = parse_imm(t) {
        return Ok(Operand::Imm(imm));
    }
    if is_identifier(t) {
        return Ok(Operand::Label(t.to_string()));
    }
    Err(err(line, col, ParseErrorKind::Syntax(format!("bad operand `{t}`"))))
}

fn check_shape(opcode: Opcode, ops: &[Operand], line: usize, col: usize) -> Result<(), ParseError> {
    use Operand as O;
    let reg = |o: &O| matches!(o, O::Reg(_));
    let reg_or_imm = |o: &O| matches!(o, O::Reg(_) | O::Imm(_));
    let (ok, expected) = match opcode {
        Opcode::Mov => (ops.len() == 2 && reg(&ops[0]) && reg_or_imm(&ops[1]), "Rd, Ra|imm"),
        Opcode::Iadd | Opcode::Imul | Opcode::Shl | Opcode::Fadd | Opcode::Fmul => (
            ops.len() == 3 && reg(&ops[0]) && reg_or_imm(&ops[1]) && reg_or_imm(&ops[2]),
            "Rd, Ra|imm, Rb|imm",
        ),
        Opcode::Ffma => (
            ops.len() == 4 && reg(&ops[0]) && ops[1..].iter().all(reg_or_imm),
            "Rd, Ra|imm, Rb|imm, Rc|imm",
        ),
        Opcode::Dadd | Opcode::Dmul => (ops.len() == 3 && ops.iter().all(reg), "Rd, Ra, Rb (register pairs)"),
        Opcode::Isetp(_) => (
            ops.len() == 3 && matches!(ops[0], O::Pred(_)) && reg_or_imm(&ops[1]) && reg_or_imm(&ops[2]),
            "Pd, Ra|imm, Rb|imm",
        ),
        Opcode::S2r => (ops.len() == 2 && reg(&ops[0]) && matches!(ops[1], O::Special(_)), "Rd, SR_*"),
        Opcode::Ldg | Opcode::Lds => (ops.len() == 2 && reg(&ops[0]) && matches!(ops[1], O::Mem { .. }), "Rd, [Ra+0xoff]"),
        Opcode::Stg | Opcode::Sts => (ops.len() == 2 && matches!(ops[0], O::Mem { .. }) && reg(&ops[1]), "[Ra+0xoff], Rv"),
        Opcode::Bra => (ops.len() == 1 && matches!(ops[0], O::Label(_)), "a label"),
        Opcode::Exit | Opcode::Nop => (ops.is_empty(), "no operands"),
    };
    if ok {
        Ok(())
    } else {
        Err(err(line, col, ParseErrorKind::Operands { opcode: opcode.mnemonic(), expected }))
    }
}

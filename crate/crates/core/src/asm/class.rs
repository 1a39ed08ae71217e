use serde::{Deserialize, Serialize};

use super::{Instruction, Opcode};
use crate::config::{ConfigError, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstrClass {
    GlobalMemory,
    SharedMemory,
    Fp32,
    Fp64,
    Int,
    Control,
    Other,
}

impl InstrClass {
    pub fn of(opcode: Opcode) -> InstrClass {
        match opcode {
            Opcode::Ldg | Opcode::Stg => InstrClass::GlobalMemory,
            Opcode::Lds | Opcode::Sts => InstrClass::SharedMemory,
            Opcode::Fadd | Opcode::Fmul | Opcode::Ffma => InstrClass::Fp32,
            Opcode::Dadd | Opcode::Dmul => InstrClass::Fp64,
            Opcode::Mov | Opcode::Iadd | Opcode::Imul | Opcode::Shl | Opcode::Isetp(_) => {
                InstrClass::Int
            }
            Opcode::Bra | Opcode::Exit => InstrClass::Control,
            Opcode::S2r | Opcode::Nop => InstrClass::Other,
        }
    }

    /// Memory classes complete asynchronously and synchronize through barriers.
    pub fn is_variable_latency(self) -> bool {
        matches!(self, InstrClass::GlobalMemory | InstrClass::SharedMemory)
    }

    fn key(self) -> &'static str {
        match self {
            InstrClass::GlobalMemory => "global",
            InstrClass::SharedMemory => "shared",
            InstrClass::Fp32 => "fp32",
            InstrClass::Fp64 => "fp64",
            InstrClass::Int => "int",
            InstrClass::Control => "control",
            InstrClass::Other => "other",
        }
    }

    pub const ALL: [InstrClass; 7] = [
        InstrClass::GlobalMemory,
        InstrClass::SharedMemory,
        InstrClass::Fp32,
        InstrClass::Fp64,
        InstrClass::Int,
        InstrClass::Control,
        InstrClass::Other,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassInfo {
    pub class: InstrClass,
    /// Operations per cycle per SM.
    pub throughput: u32,
    /// Cycles until the result is available.
    pub latency: u32,
}

/// Per-class latency and throughput configuration.
///
/// Defaults: global memory 200 cycles, shared memory 24 cycles, every
/// fixed-latency class 6 cycles; 128 ops/cycle for every class except FP64 (4).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub global_latency: u32,
    pub shared_latency: u32,
    pub alu_latency: u32,
    pub max_throughput: u32,
    pub global_throughput: u32,
    pub shared_throughput: u32,
    pub fp32_throughput: u32,
    pub fp64_throughput: u32,
    pub int_throughput: u32,
    pub control_throughput: u32,
    pub other_throughput: u32,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            global_latency: 200,
            shared_latency: 24,
            alu_latency: 6,
            max_throughput: 128,
            global_throughput: 128,
            shared_throughput: 128,
            fp32_throughput: 128,
            fp64_throughput: 4,
            int_throughput: 128,
            control_throughput: 128,
            other_throughput: 128,
        }
    }
}

impl LatencyTable {
    pub fn info(&self, class: InstrClass) -> ClassInfo {
        let (throughput, latency) = match class {
            InstrClass::GlobalMemory => (self.global_throughput, self.global_latency),
            InstrClass::SharedMemory => (self.shared_throughput, self.shared_latency),
            InstrClass::Fp32 => (self.fp32_throughput, self.alu_latency),
            InstrClass::Fp64 => (self.fp64_throughput, self.alu_latency),
            InstrClass::Int => (self.int_throughput, self.alu_latency),
            InstrClass::Control => (self.control_throughput, self.alu_latency),
            InstrClass::Other => (self.other_throughput, self.alu_latency),
        };
        ClassInfo { class, throughput, latency }
    }

    pub fn latency(&self, opcode: Opcode) -> u32 {
        self.info(InstrClass::of(opcode)).latency
    }

    /// Same table with every memory latency multiplied by `factor`.
    pub fn scaled_memory_latency(&self, factor: u32) -> LatencyTable {
        LatencyTable {
            global_latency: self.global_latency * factor,
            shared_latency: self.shared_latency * factor,
            ..self.clone()
        }
    }

    /// Reads `key = value` lines; keys are `<class>.latency`, `<class>.throughput`,
    /// `alu.latency` and `max_throughput`. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let kv = KeyValues::parse(text)?;
        let mut t = LatencyTable::default();
        for (key, line) in kv.keys() {
            let v = kv.get_u32(key)?.unwrap_or_default();
            if v == 0 {
                return Err(ConfigError::Invalid { line, message: format!("{key} must be positive") });
            }
            match key {
                "global.latency" => t.global_latency = v,
                "shared.latency" => t.shared_latency = v,
                "alu.latency" => t.alu_latency = v,
                "max_throughput" => t.max_throughput = v,
                _ => {
                    let class = InstrClass::ALL
                        .iter()
                        .find(|c| key == format!("{}.throughput", c.key()))
                        .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
                    *t.throughput_mut(*class) = v;
                }
            }
        }
        Ok(t)
    }

    fn throughput_mut(&mut self, class: InstrClass) -> &mut u32 {
        match class {
            InstrClass::GlobalMemory => &mut self.global_throughput,
            InstrClass::SharedMemory => &mut self.shared_throughput,
            InstrClass::Fp32 => &mut self.fp32_throughput,
            InstrClass::Fp64 => &mut self.fp64_throughput,
            InstrClass::Int => &mut self.int_throughput,
            InstrClass::Control => &mut self.control_throughput,
            InstrClass::Other => &mut self.other_throughput,
        }
    }
}

/// Class, throughput and latency of an instruction.
pub fn instruction_class(inst: &Instruction, table: &LatencyTable) -> ClassInfo {
    table.info(InstrClass::of(inst.opcode))
}

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    UnresolvedJump,
    InvalidJumpTarget,
    StackUnderflow,
    StackOverflow,
    InvalidOpcode,
    UnwrittenMemoryRead,
    StraddlingMemoryRead,
    PathBlockLimit,
    PathLimit,
    Timeout,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticKind::UnresolvedJump => "unresolved jump",
            DiagnosticKind::InvalidJumpTarget => "jump to a non-JUMPDEST",
            DiagnosticKind::StackUnderflow => "stack underflow",
            DiagnosticKind::StackOverflow => "stack overflow",
            DiagnosticKind::InvalidOpcode => "invalid opcode",
            DiagnosticKind::UnwrittenMemoryRead => "read of unwritten memory",
            DiagnosticKind::StraddlingMemoryRead => "read straddles memory segments",
            DiagnosticKind::PathBlockLimit => "path block limit reached",
            DiagnosticKind::PathLimit => "path limit reached",
            DiagnosticKind::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

/// Something the engine could not model precisely, located by pc.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub pc: usize,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}: {}", self.pc, self.kind)
    }
}

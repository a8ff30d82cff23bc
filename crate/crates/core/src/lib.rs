//! Static and dynamic detection of bad randomness in EVM contracts.
//!
//! The static side decodes runtime bytecode, executes it symbolically over
//! a model of stack, memory and storage, and reports transfers whose
//! arguments or guards depend on block data. The dynamic side replays
//! recorded transactions with taint tracking to find attack transactions.

pub mod asm;
pub mod decoder;
pub mod engine;
pub mod memmodel;
pub mod replay;
pub mod stormodel;
pub mod taint;
pub mod word;

pub use decoder::{Program, RawBytecode};
pub use engine::{analyze, Analysis, EngineConfig};
pub use taint::{assemble_report, PatternMode, VulnerabilityReport};

/// Runs the full static pipeline on decoded runtime code.
pub fn scan_program(
    contract: &str,
    program: &Program,
    config: &EngineConfig,
) -> (VulnerabilityReport, Analysis) {
    let analysis = analyze(program, config);
    let report = assemble_report(contract, analysis.sinks(), config.pattern_mode);
    (report, analysis)
}

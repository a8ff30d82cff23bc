use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rngscan_core::taint::Finding;
use rngscan_core::VulnerabilityReport;
use serde::Deserialize;

#[derive(Deserialize)]
struct Contract {
    report: VulnerabilityReport,
}

#[derive(Deserialize)]
struct Document {
    command: String,
    contracts: Vec<Contract>,
}

pub fn find_finding(doc_text: &str, id: &str) -> Result<Finding> {
    let doc: Document = serde_json::from_str(doc_text).context("not a scan report")?;
    if doc.command != "scan" {
        bail!("not a scan report (command {:?})", doc.command);
    }
    doc.contracts
        .into_iter()
        .flat_map(|c| c.report.findings)
        .find(|f| f.id == id)
        .with_context(|| format!("no finding {id:?} in this report"))
}

pub fn render(finding: &Finding) -> String {
    let mut s = String::new();
    let patterns: Vec<&str> = finding.patterns.iter().map(|p| p.name()).collect();
    let transfer = if finding.extended {
        "SELFDESTRUCT"
    } else {
        "CALL"
    };
    let _ = writeln!(
        s,
        "{}: {} at {:#x} matches {}",
        finding.id,
        transfer,
        finding.call_pc,
        patterns.join(", ")
    );
    for t in &finding.traces {
        let _ = writeln!(s, "{} (sink {:#x}):", t.pattern, t.sink_pc);
        for step in &t.steps {
            let _ = writeln!(s, "  {:#06x}  {}", step.pc, step.op);
        }
    }
    if !finding.witness.is_empty() {
        let blocks: Vec<String> = finding.witness.iter().map(|b| format!("{b:#x}")).collect();
        let _ = writeln!(s, "witness path: {}", blocks.join(" -> "));
    }
    s
}

pub fn cmd_explain(report: &Path, id: &str) -> Result<String> {
    let text =
        std::fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    Ok(render(&find_finding(&text, id)?))
}

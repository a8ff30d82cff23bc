use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rngscan_core::{scan_program, Program, RawBytecode};

use crate::config::ScanSettings;
use crate::output::{ContractResult, InputError, ScanDocument, SCHEMA_VERSION, TOOL_VERSION};
use crate::ExitStatus;

const EXTENSIONS: [&str; 2] = ["hex", "bin"];

/// Expands directories into their bytecode files, recursively and in
/// sorted order. Missing paths are returned as errors.
pub fn collect_inputs(inputs: &[PathBuf], extensions: &[&str]) -> (Vec<PathBuf>, Vec<InputError>) {
    fn walk(
        dir: &Path,
        extensions: &[&str],
        files: &mut Vec<PathBuf>,
        errors: &mut Vec<InputError>,
    ) {
        let mut entries: Vec<PathBuf> = match std::fs::read_dir(dir) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
            Err(e) => {
                errors.push(InputError {
                    path: dir.display().to_string(),
                    tx: None,
                    message: e.to_string(),
                });
                return;
            }
        };
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, extensions, files, errors);
            } else if p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.contains(&e))
            {
                files.push(p);
            }
        }
    }
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for input in inputs {
        if input.is_dir() {
            walk(input, extensions, &mut files, &mut errors);
        } else if input.exists() {
            files.push(input.clone());
        } else {
            errors.push(InputError {
                path: input.display().to_string(),
                tx: None,
                message: "no such file or directory".into(),
            });
        }
    }
    (files, errors)
}

fn contract_names(files: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect();
    let mut seen = BTreeSet::new();
    let dup: BTreeSet<&String> = stems.iter().filter(|s| !seen.insert(*s)).collect();
    stems
        .iter()
        .zip(files)
        .map(|(s, p)| {
            if dup.contains(s) {
                p.display().to_string()
            } else {
                s.clone()
            }
        })
        .collect()
}

fn scan_one(
    path: &Path,
    name: &str,
    settings: &ScanSettings,
) -> Result<(ContractResult, f64), String> {
    let started = Instant::now();
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let raw = match path.extension().and_then(|e| e.to_str()) {
        Some("hex") => {
            let text =
                std::str::from_utf8(&bytes).map_err(|_| "hex file is not text".to_string())?;
            RawBytecode::from_hex(text.trim_start())
        }
        Some("bin") => Ok(RawBytecode::new(bytes)),
        _ => RawBytecode::from_file_contents(&bytes),
    }
    .map_err(|e| e.to_string())?;
    if raw.is_empty() {
        return Err("empty bytecode".into());
    }
    let program = Program::from_runtime(raw).map_err(|e| e.to_string())?;
    let (report, analysis) = scan_program(name, &program, &settings.engine);
    let result = ContractResult {
        contract: name.to_string(),
        path: path.display().to_string(),
        report,
        incomplete: analysis.incomplete(),
        runs: analysis.runs.len(),
        fixpoint: analysis.fixpoint,
        counters: analysis.counters(),
        diagnostics: analysis.diagnostics().into_iter().collect(),
    };
    Ok((result, started.elapsed().as_secs_f64()))
}

pub fn cmd_scan(settings: &ScanSettings) -> (ScanDocument, ExitStatus) {
    let (files, mut errors) = collect_inputs(&settings.inputs, &EXTENSIONS);
    let names = contract_names(&files);
    let results: Vec<_> = files
        .par_iter()
        .zip(names.par_iter())
        .map(|(path, name)| (path, name, scan_one(path, name, settings)))
        .collect();
    let mut contracts = Vec::new();
    let mut timing = BTreeMap::new();
    for (path, name, result) in results {
        match result {
            Ok((c, secs)) => {
                timing.insert(name.clone(), secs);
                contracts.push(c);
            }
            Err(message) => errors.push(InputError {
                path: path.display().to_string(),
                tx: None,
                message,
            }),
        }
    }
    let status = if contracts.is_empty() && !errors.is_empty() {
        ExitStatus::Error
    } else if contracts.iter().any(|c| !c.report.findings.is_empty()) {
        ExitStatus::Findings
    } else {
        ExitStatus::Clean
    };
    let doc = ScanDocument {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        command: "scan".into(),
        mode: settings.engine.pattern_mode,
        contracts,
        errors,
        timing,
    };
    (doc, status)
}

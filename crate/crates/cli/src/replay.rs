use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use rngscan_core::replay::detect::{loss_of, Parties};
use rngscan_core::replay::{
    detect_manipulation, detect_rollback, ingest_files, replay_transaction, ExecutionTrace,
    WorkItem,
};
use rngscan_core::word::{Address, HexWord, U256};

use crate::config::ReplaySettings;
use crate::output::{
    InputError, ReplayDocument, TxResult, VictimLoss, SCHEMA_VERSION, TOOL_VERSION,
};
use crate::scan::collect_inputs;
use crate::ExitStatus;

pub fn cmd_replay(settings: &ReplaySettings) -> (ReplayDocument, ExitStatus) {
    let (files, mut errors) = collect_inputs(&settings.inputs, &["json"]);
    let mut items: Vec<WorkItem> = Vec::new();
    for path in &files {
        match ingest_files(std::slice::from_ref(path), &settings.filter) {
            Ok(mut found) => items.append(&mut found),
            Err(e) => errors.push(InputError {
                path: path.display().to_string(),
                tx: None,
                message: e.to_string(),
            }),
        }
    }
    items.sort_by(|a, b| {
        (&a.transaction().id, &a.path, a.tx).cmp(&(&b.transaction().id, &b.path, b.tx))
    });

    let replayed: Vec<_> = items
        .par_iter()
        .map(|item| {
            let started = Instant::now();
            let trace = replay_transaction(&item.fixture, item.transaction(), &settings.replay);
            (trace, started.elapsed().as_secs_f64())
        })
        .collect();

    let mut ok: Vec<(&WorkItem, ExecutionTrace)> = Vec::new();
    let mut timing = BTreeMap::new();
    for (item, (trace, secs)) in items.iter().zip(replayed) {
        let key = format!("{}#{}", item.path.display(), item.transaction().id);
        match trace {
            Ok(t) => {
                timing.insert(key, secs);
                ok.push((item, t));
            }
            Err(e) => errors.push(InputError {
                path: item.path.display().to_string(),
                tx: Some(item.transaction().id.clone()),
                message: e.to_string(),
            }),
        }
    }

    let mut reports = Vec::new();
    let mut flagged: BTreeSet<String> = BTreeSet::new();
    for (item, trace) in &ok {
        if let Some(r) = detect_manipulation(
            trace,
            item.caller(),
            item.target(),
            &settings.replay.vulnerable,
        ) {
            flagged.insert(item.transaction().id.clone());
            reports.push(r);
        }
    }
    let pairs: Vec<_> = ok.iter().map(|(i, t)| (i.transaction(), t)).collect();
    for r in detect_rollback(&pairs, settings.window) {
        flagged.extend(r.transactions.iter().cloned());
        reports.push(r);
    }

    // Each attacking transaction's loss counts once per victim.
    let mut per_victim: BTreeMap<Address, (BTreeMap<String, U256>, usize)> = BTreeMap::new();
    for r in &reports {
        let entry = per_victim.entry(r.target).or_default();
        entry.1 += 1;
        for tx in &r.transactions {
            if let Some((item, trace)) = ok
                .iter()
                .find(|(i, _)| &i.transaction().id == tx && i.target() == r.target)
            {
                let parties = Parties::of(trace, item.caller(), item.target());
                entry.0.insert(tx.clone(), loss_of(trace, &parties));
            }
        }
    }
    let victims = per_victim
        .into_iter()
        .map(|(target, (losses, attacks))| VictimLoss {
            target,
            loss: HexWord(
                losses
                    .values()
                    .fold(U256::ZERO, |a, b| a.saturating_add(*b)),
            ),
            attacks,
        })
        .collect();

    let transactions = ok
        .iter()
        .map(|(item, t)| TxResult {
            tx: item.transaction().id.clone(),
            fixture: item.path.display().to_string(),
            caller: item.caller(),
            target: item.target(),
            status: t.status,
            partial: t.partial,
            frames: t.frames.len(),
            events: t.events.len(),
            flagged: flagged.contains(&item.transaction().id),
        })
        .collect::<Vec<_>>();

    let status = if transactions.is_empty() && !errors.is_empty() {
        ExitStatus::Error
    } else if !reports.is_empty() {
        ExitStatus::Findings
    } else {
        ExitStatus::Clean
    };
    let doc = ReplayDocument {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        command: "replay".into(),
        window_blocks: settings.window,
        transactions,
        reports,
        victims,
        errors,
        timing,
    };
    (doc, status)
}

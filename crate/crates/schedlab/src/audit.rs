//! Post-hoc auditor over full engine event traces, plus the text trace
//! format (optionally gzipped) it reads.
//!
//! The auditor re-derives every claim the metrics make: each abort names a
//! conflicter that committed inside the aborter's execution window with an
//! overlapping key, same-queue attempts never overlap, every arrival ends
//! in exactly one commit, and response times cover service × attempts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::sim::{TraceEvent, TraceEventKind, TxnId};
use crate::workload::{Micros, RowKey};

#[derive(Debug, Default)]
pub struct AuditReport {
    pub arrivals: u64,
    pub commits: u64,
    pub aborts: u64,
    pub starts: u64,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

struct TxnFacts {
    read_set: Vec<RowKey>,
    write_set: Vec<RowKey>,
    service_time: Micros,
    arrive_time: Micros,
    starts: u32,
    commits: u32,
    aborts: u32,
    last_start: Option<Micros>,
}

/// Check the engine's invariants over a complete trace.
pub fn audit(events: &[TraceEvent]) -> AuditReport {
    let mut report = AuditReport::default();
    let mut facts: HashMap<TxnId, TxnFacts> = HashMap::new();
    let mut commit_time: HashMap<TxnId, Micros> = HashMap::new();
    // Per queue: time the current busy interval ends.
    let mut queue_busy_until: HashMap<usize, Micros> = HashMap::new();

    for ev in events {
        match &ev.kind {
            TraceEventKind::Arrive { read_set, write_set, service_time } => {
                report.arrivals += 1;
                let prev = facts.insert(
                    ev.txn_id,
                    TxnFacts {
                        read_set: read_set.clone(),
                        write_set: write_set.clone(),
                        service_time: *service_time,
                        arrive_time: ev.time,
                        starts: 0,
                        commits: 0,
                        aborts: 0,
                        last_start: None,
                    },
                );
                if prev.is_some() {
                    report.violations.push(format!("txn {} arrived twice", ev.txn_id));
                }
            }
            TraceEventKind::Assign { .. } => {}
            TraceEventKind::Start { queue, attempt } => {
                report.starts += 1;
                let busy = queue_busy_until.get(queue).copied().unwrap_or(0);
                if ev.time < busy {
                    report.violations.push(format!(
                        "queue {queue}: start of txn {} at {} overlaps the previous attempt (busy until {busy})",
                        ev.txn_id, ev.time
                    ));
                }
                match facts.get_mut(&ev.txn_id) {
                    Some(f) => {
                        f.starts += 1;
                        f.last_start = Some(ev.time);
                        queue_busy_until.insert(*queue, ev.time + f.service_time);
                        if *attempt != f.starts {
                            report.violations.push(format!(
                                "txn {}: start attempt {} but {} starts seen",
                                ev.txn_id, attempt, f.starts
                            ));
                        }
                    }
                    None => report
                        .violations
                        .push(format!("txn {} started before arriving", ev.txn_id)),
                }
            }
            TraceEventKind::Commit { response_us, attempts, .. } => {
                report.commits += 1;
                commit_time.insert(ev.txn_id, ev.time);
                match facts.get_mut(&ev.txn_id) {
                    Some(f) => {
                        f.commits += 1;
                        if f.commits > 1 {
                            report.violations.push(format!("txn {} committed twice", ev.txn_id));
                        }
                        if f.starts != *attempts {
                            report.violations.push(format!(
                                "txn {}: commit reports {} attempts, trace has {} starts",
                                ev.txn_id, attempts, f.starts
                            ));
                        }
                        if ev.time - f.arrive_time != *response_us {
                            report.violations.push(format!(
                                "txn {}: response {} does not match commit time {} - arrival {}",
                                ev.txn_id, response_us, ev.time, f.arrive_time
                            ));
                        }
                        if *response_us < f.service_time * u64::from(*attempts) {
                            report.violations.push(format!(
                                "txn {}: response {} below service {} x attempts {}",
                                ev.txn_id, response_us, f.service_time, attempts
                            ));
                        }
                    }
                    None => report
                        .violations
                        .push(format!("txn {} committed before arriving", ev.txn_id)),
                }
            }
            TraceEventKind::Abort { by, .. } => {
                report.aborts += 1;
                let start = match facts.get_mut(&ev.txn_id) {
                    Some(f) => {
                        f.aborts += 1;
                        f.last_start
                    }
                    None => {
                        report
                            .violations
                            .push(format!("txn {} aborted before arriving", ev.txn_id));
                        None
                    }
                };
                // Abort conservation: the named conflicter committed
                // inside the execution window and shares a key.
                let Some(start) = start else {
                    report
                        .violations
                        .push(format!("txn {} aborted without a start", ev.txn_id));
                    continue;
                };
                match commit_time.get(by) {
                    Some(&tc) if tc > start && tc <= ev.time => {}
                    Some(&tc) => report.violations.push(format!(
                        "txn {}: conflicter {} committed at {} outside window ({}, {}]",
                        ev.txn_id, by, tc, start, ev.time
                    )),
                    None => report.violations.push(format!(
                        "txn {}: conflicter {} never committed",
                        ev.txn_id, by
                    )),
                }
                let conflicter_writes = facts.get(by).map(|f| f.write_set.clone());
                let victim = facts.get(&ev.txn_id);
                match (conflicter_writes, victim) {
                    (Some(writes), Some(v)) => {
                        let overlap = writes
                            .iter()
                            .any(|k| v.read_set.contains(k) || v.write_set.contains(k));
                        if !overlap {
                            report.violations.push(format!(
                                "txn {}: no key overlap with conflicter {}",
                                ev.txn_id, by
                            ));
                        }
                    }
                    _ => report.violations.push(format!(
                        "txn {}: conflicter {} unknown to the trace",
                        ev.txn_id, by
                    )),
                }
            }
        }
    }

    // Completeness: every arrival has exactly one commit, and attempt
    // counts add up.
    for (id, f) in &facts {
        if f.commits != 1 {
            report
                .violations
                .push(format!("txn {id}: {} commits in trace", f.commits));
        }
        if f.starts != f.aborts + f.commits {
            report.violations.push(format!(
                "txn {id}: {} starts vs {} aborts + {} commits",
                f.starts, f.aborts, f.commits
            ));
        }
    }
    if report.commits + report.aborts != report.starts {
        report.violations.push(format!(
            "attempt conservation: {} commits + {} aborts != {} starts",
            report.commits, report.aborts, report.starts
        ));
    }
    report
}

// ---------------------------------------------------------------------------
// Text trace format: `time,event,txn_id,queue,detail`
// ---------------------------------------------------------------------------

fn keys_field(keys: &[RowKey]) -> String {
    keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("|")
}

fn parse_keys(field: &str) -> Result<Vec<RowKey>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split('|')
        .map(|t| RowKey::parse(t).ok_or_else(|| Error::Parse(format!("bad row key `{t}`"))))
        .collect()
}

pub fn write_trace(mut w: impl Write, events: &[TraceEvent]) -> Result<()> {
    writeln!(w, "time,event,txn_id,queue,detail")?;
    for ev in events {
        match &ev.kind {
            TraceEventKind::Arrive { read_set, write_set, service_time } => writeln!(
                w,
                "{},arrive,{},-,service={};r={};w={}",
                ev.time,
                ev.txn_id,
                service_time,
                keys_field(read_set),
                keys_field(write_set)
            )?,
            TraceEventKind::Assign { queue } => {
                writeln!(w, "{},assign,{},{},", ev.time, ev.txn_id, queue)?
            }
            TraceEventKind::Start { queue, attempt } => writeln!(
                w,
                "{},start,{},{},attempt={}",
                ev.time, ev.txn_id, queue, attempt
            )?,
            TraceEventKind::Commit { queue, response_us, attempts } => writeln!(
                w,
                "{},commit,{},{},rt={};attempts={}",
                ev.time, ev.txn_id, queue, response_us, attempts
            )?,
            TraceEventKind::Abort { queue, by } => {
                writeln!(w, "{},abort,{},{},by={}", ev.time, ev.txn_id, queue, by)?
            }
        }
    }
    Ok(())
}

pub fn read_trace(r: impl Read) -> Result<Vec<TraceEvent>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trace".into()))??;
    if header != "time,event,txn_id,queue,detail" {
        return Err(Error::Version(format!("bad trace header `{header}`")));
    }
    let mut events = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(5, ',');
        let (Some(time), Some(event), Some(txn), Some(queue), Some(detail)) = (
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
        ) else {
            return Err(Error::Parse(format!("bad trace line `{line}`")));
        };
        let time: Micros = time.parse().map_err(|_| Error::Parse(format!("bad time `{time}`")))?;
        let txn_id: TxnId = txn.parse().map_err(|_| Error::Parse(format!("bad txn `{txn}`")))?;
        let fields: HashMap<&str, &str> = detail
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let queue_idx = || -> Result<usize> {
            queue.parse().map_err(|_| Error::Parse(format!("bad queue `{queue}`")))
        };
        let num = |key: &str| -> Result<u64> {
            fields
                .get(key)
                .ok_or_else(|| Error::Parse(format!("missing `{key}` in `{line}`")))?
                .parse()
                .map_err(|_| Error::Parse(format!("bad `{key}` in `{line}`")))
        };
        let kind = match event {
            "arrive" => TraceEventKind::Arrive {
                read_set: parse_keys(fields.get("r").copied().unwrap_or(""))?,
                write_set: parse_keys(fields.get("w").copied().unwrap_or(""))?,
                service_time: num("service")?,
            },
            "assign" => TraceEventKind::Assign { queue: queue_idx()? },
            "start" => TraceEventKind::Start { queue: queue_idx()?, attempt: num("attempt")? as u32 },
            "commit" => TraceEventKind::Commit {
                queue: queue_idx()?,
                response_us: num("rt")?,
                attempts: num("attempts")? as u32,
            },
            "abort" => TraceEventKind::Abort { queue: queue_idx()?, by: num("by")? },
            other => return Err(Error::Parse(format!("unknown event `{other}`"))),
        };
        events.push(TraceEvent { time, txn_id, kind });
    }
    Ok(events)
}

/// Write a trace file; a `.gz` suffix selects gzip.
pub fn write_trace_file(path: &Path, events: &[TraceEvent]) -> Result<()> {
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        let mut enc = enc;
        write_trace(&mut enc, events)?;
        enc.finish()?;
    } else {
        write_trace(BufWriter::new(file), events)?;
    }
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceEvent>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        read_trace(GzDecoder::new(BufReader::new(file)))
    } else {
        read_trace(BufReader::new(file))
    }
}

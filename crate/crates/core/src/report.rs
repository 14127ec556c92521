//! Run artifacts: `results.json`, the three CSV series and `summary.json`.
//!
//! CSV numbers are always written with six decimals so that identical runs
//! produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::central::{dso_name, CheaperOption, ParticipantKind};
use crate::error::{Error, Result};
use crate::grid::DsoId;
use crate::scenario::HourRecord;

pub const RESULTS_FILE: &str = "results.json";
pub const BIDS_CSV: &str = "bids_fig5.csv";
pub const DISPATCH_CSV: &str = "dispatch_fig6.csv";
pub const RL_DISPATCH_CSV: &str = "rl_dispatch_fig7.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsoSummary {
    pub dso: DsoId,
    pub accepted_mw: f64,
    pub revenue: f64,
    pub rl_payments: f64,
    pub loss_cost_delta: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub hours: usize,
    pub active_hours: usize,
    pub total_tso_cost: f64,
    pub total_slack_cost: f64,
    pub total_conventional_cost: f64,
    pub cheaper_option: CheaperOption,
    pub generator_payments: f64,
    pub dsos: Vec<DsoSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub results: PathBuf,
    pub bids_csv: PathBuf,
    pub dispatch_csv: PathBuf,
    pub rl_dispatch_csv: PathBuf,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

pub fn summarize(records: &[HourRecord]) -> Summary {
    let mut dsos: BTreeMap<DsoId, DsoSummary> = BTreeMap::new();
    let mut total_tso_cost = 0.0;
    let mut total_slack_cost = 0.0;
    let mut total_conventional_cost = 0.0;
    let mut generator_payments = 0.0;
    for r in records {
        let s = &r.settlement;
        total_tso_cost += s.tso_cost;
        total_slack_cost += s.slack_cost;
        total_conventional_cost += s.conventional_cost;
        generator_payments += s
            .payments
            .iter()
            .filter(|p| p.kind == ParticipantKind::Generator)
            .map(|p| p.amount)
            .sum::<f64>();
        for p in &s.dso_profits {
            let e = dsos.entry(p.dso).or_insert_with(|| DsoSummary {
                dso: p.dso,
                accepted_mw: 0.0,
                revenue: 0.0,
                rl_payments: 0.0,
                loss_cost_delta: 0.0,
                profit: 0.0,
            });
            e.accepted_mw += r.clearing.dso_accepted(p.dso);
            e.revenue += p.revenue;
            e.rl_payments += p.rl_payments;
            e.loss_cost_delta += p.loss_cost_delta;
            e.profit += p.profit;
        }
    }
    Summary {
        hours: records.len(),
        active_hours: records.iter().filter(|r| !r.is_idle()).count(),
        total_tso_cost,
        total_slack_cost,
        total_conventional_cost,
        cheaper_option: if total_tso_cost <= total_conventional_cost {
            CheaperOption::Rl
        } else {
            CheaperOption::Conventional
        },
        generator_payments,
        dsos: dsos.into_values().collect(),
    }
}

/// Fixed six-decimal rendering; tiny magnitudes print as plain zero.
pub fn fmt_num(v: f64) -> String {
    let v = if v.abs() < 5e-7 { 0.0 } else { v };
    format!("{v:.6}")
}

pub fn bids_csv(records: &[HourRecord]) -> String {
    let mut out = String::from("hour,dso,step,quantity_mw,price,accepted_mw,rl_ids\n");
    for r in records {
        for bid in &r.stepped_bids {
            for (k, step) in bid.steps.iter().enumerate() {
                let accepted = r
                    .clearing
                    .steps
                    .iter()
                    .find(|s| s.dso == bid.dso && s.step == k)
                    .map_or(0.0, |s| s.accepted);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.hour,
                    dso_name(bid.dso),
                    k,
                    fmt_num(step.quantity),
                    fmt_num(step.price),
                    fmt_num(accepted),
                    step.rl_ids.join(";")
                );
            }
        }
    }
    out
}

pub fn dispatch_csv(records: &[HourRecord]) -> String {
    let mut out = String::from("hour,participant,kind,mw,payment\n");
    for r in records {
        for p in &r.settlement.payments {
            let kind = match p.kind {
                ParticipantKind::Generator => "generator",
                ParticipantKind::Dso => "dso",
            };
            let _ = writeln!(out, "{},{},{},{},{}", r.hour, p.participant, kind, fmt_num(p.mw), fmt_num(p.amount));
        }
    }
    out
}

pub fn rl_dispatch_csv(records: &[HourRecord]) -> String {
    let mut out = String::from("hour,dso,rl,node,price,mw\n");
    for r in records {
        for d in &r.local_dispatches {
            for rl in &d.dispatch {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.hour,
                    dso_name(d.dso),
                    rl.id,
                    rl.node,
                    fmt_num(rl.price),
                    fmt_num(rl.mw)
                );
            }
        }
    }
    out
}

pub fn results_json(records: &[HourRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("records always serialize");
    s.push('\n');
    s
}

pub fn parse_results(text: &str) -> serde_json::Result<Vec<HourRecord>> {
    serde_json::from_str(text)
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes every artifact into `out_dir`, creating it if needed.
pub fn write_artifacts(records: &[HourRecord], out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let summary = summarize(records);
    let mut summary_text = serde_json::to_string_pretty(&summary).expect("summary always serializes");
    summary_text.push('\n');
    Ok(RunArtifacts {
        results: write(out_dir.join(RESULTS_FILE), &results_json(records))?,
        bids_csv: write(out_dir.join(BIDS_CSV), &bids_csv(records))?,
        dispatch_csv: write(out_dir.join(DISPATCH_CSV), &dispatch_csv(records))?,
        rl_dispatch_csv: write(out_dir.join(RL_DISPATCH_CSV), &rl_dispatch_csv(records))?,
        summary_path: write(out_dir.join(SUMMARY_FILE), &summary_text)?,
        summary,
    })
}

//! Plain-text renderings of campaign status and evaluation results.

use std::fmt::Write;

use adequa_core::campaign::CampaignState;
use adequa_core::metrics::TransferReport;
use serde::{Deserialize, Serialize};

/// Compact view of a campaign, shared by the CLI and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub t: u32,
    pub reference_size: usize,
    pub reference_pass: usize,
    pub pool_size: usize,
    pub target_size: usize,
    pub k: usize,
    pub d: usize,
    pub k_target: usize,
    pub d_target: usize,
    pub cv_score: Option<f64>,
    pub complete: bool,
    pub open_batch: Option<String>,
}

impl Summary {
    pub fn of(state: &CampaignState) -> Self {
        let (k_target, d_target) = state.targets();
        Summary {
            t: state.t(),
            reference_size: state.reference().len(),
            reference_pass: state.reference_pass().len(),
            pool_size: state.pool().len(),
            target_size: state.config().target_size,
            k: state.gmm().k(),
            d: state.pca().dim,
            k_target,
            d_target,
            cv_score: state.cv_score(),
            complete: state.is_complete(),
            open_batch: state.open_proposal().map(|p| p.batch_id.clone()),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub fn status_text(state: &CampaignState) -> String {
    let s = Summary::of(state);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "t={} R={}/{} R_pass={} U={} K={} d={} cv={}{}",
        s.t,
        s.reference_size,
        s.target_size,
        s.reference_pass,
        s.pool_size,
        s.k,
        s.d,
        opt(s.cv_score),
        if s.complete { " complete" } else { "" }
    );
    let _ = writeln!(out, "{:>4} {:>6} {:>6} {:>4} {:>4} {:>8} {:>8} {:>5}", "t", "|R|", "pass", "K", "d", "cv", "ppl", "skip");
    for h in state.history() {
        let _ = writeln!(
            out,
            "{:>4} {:>6} {:>6} {:>4} {:>4} {:>8} {:>8} {:>5}",
            h.t,
            h.reference_size,
            h.reference_pass,
            h.k,
            h.d,
            opt(h.cv_score),
            opt(h.perplexity),
            h.abstained
        );
    }
    out
}

pub fn eval_text(r: &TransferReport) -> String {
    let e = &r.report;
    let mut out = String::new();
    let _ = writeln!(out, "inputs      {}", e.n);
    let _ = writeln!(out, "failing     {}", e.n_fail);
    let _ = writeln!(out, "spearman    {}", opt(e.spearman));
    let _ = writeln!(out, "roc_auc     {}", opt(e.roc_auc));
    match &e.mann_whitney {
        Some(m) => {
            let _ = writeln!(out, "mann_whitney U={} p={:.3e}", m.u, m.p_two_sided);
        }
        None => {
            let _ = writeln!(out, "mann_whitney -");
        }
    }
    let _ = writeln!(out, "apfd        {}", opt(e.apfd));
    for (n, f) in &e.failure_at {
        let _ = writeln!(out, "failure@{n:<4}{f}");
    }
    if !r.unmatched_scores.is_empty() || !r.unmatched_labels.is_empty() {
        let _ = writeln!(
            out,
            "unmatched   {} scored without label, {} labelled without score",
            r.unmatched_scores.len(),
            r.unmatched_labels.len()
        );
    }
    out
}

use std::io::{self, Write};

use super::HistoryRow;

pub const CURVES_HEADER: &str = "iter,train_loss,adv_loss,lambda1,lambda2,cd_to_input";

/// One line of the training-curve CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub adv_loss: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Filled at snapshot iterations.
    pub cd_to_input: Option<f64>,
}

impl CurveRow {
    /// Joins the loss history with per-snapshot Chamfer distances given as
    /// `(iteration, cd)` pairs.
    pub fn from_history(history: &[HistoryRow], snapshot_cd: &[(usize, f64)]) -> Vec<CurveRow> {
        history
            .iter()
            .map(|h| CurveRow {
                iteration: h.iteration,
                train_loss: h.train_loss,
                adv_loss: h.adv_loss,
                lambda1: h.lambda1,
                lambda2: h.lambda2,
                cd_to_input: snapshot_cd
                    .iter()
                    .find(|(it, _)| *it == h.iteration)
                    .map(|&(_, cd)| cd),
            })
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curves(mut w: impl Write, rows: &[CurveRow]) -> io::Result<()> {
    writeln!(w, "{CURVES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iteration,
            r.train_loss,
            opt(r.adv_loss),
            r.lambda1,
            r.lambda2,
            opt(r.cd_to_input)
        )?;
    }
    w.flush()
}

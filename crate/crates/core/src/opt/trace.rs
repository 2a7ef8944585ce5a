use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const LOSS_TRACE_HEADER: [&str; 6] = ["step", "level", "lr", "L_c", "L_tv", "total"];

/// One optimisation step. `step` counts across pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub level: usize,
    pub lr: f64,
    pub l_c: f64,
    pub l_tv: f64,
    pub total: f64,
}

pub fn write_loss_trace<W: Write>(out: W, records: &[LossRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(LOSS_TRACE_HEADER)?;
    for r in records {
        wtr.write_record([
            r.step.to_string(),
            r.level.to_string(),
            format!("{:e}", r.lr),
            format!("{:e}", r.l_c),
            format!("{:e}", r.l_tv),
            format!("{:e}", r.total),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

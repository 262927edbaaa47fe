use std::fmt::Write as _;

use fcanet::model::{FootprintReport, ModelConfig};

/// One accuracy figure for a model under one test condition.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub variant: String,
    pub attention: String,
    pub params: usize,
    pub macs: u64,
    pub condition: String,
    /// Top-1 accuracy as a fraction.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub const HEADER: &'static str = "model,variant,attention,params,macs,condition,accuracy";

    pub fn push(&mut self, cfg: &ModelConfig, footprint: FootprintReport, condition: String, accuracy: f64) {
        assert!((0.0..=1.0).contains(&accuracy), "accuracy {accuracy} outside [0, 1]");
        self.rows.push(EvalRow {
            model: cfg.variant_name(),
            variant: cfg.placement.to_string(),
            attention: cfg.attention.to_string(),
            params: footprint.params,
            macs: footprint.macs,
            condition,
            accuracy,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6}",
                r.model, r.variant, r.attention, r.params, r.macs, r.condition, r.accuracy
            );
        }
        out
    }

    /// Console table with accuracy in percent.
    pub fn render(&self) -> String {
        let mut out = format!("{:<20} {:>9} {:>9}\n", "model", "condition", "accuracy");
        for r in &self.rows {
            let _ = writeln!(out, "{:<20} {:>9} {:>8.2}%", r.model, r.condition, 100.0 * r.accuracy);
        }
        out
    }
}

pub const FOOTPRINT_HEADER: &str = "model,attention,placement,params,macs";

pub fn footprint_csv(rows: &[(ModelConfig, FootprintReport)]) -> String {
    let mut out = format!("{FOOTPRINT_HEADER}\n");
    for (cfg, f) in rows {
        let _ = writeln!(out, "{},{},{},{},{}", cfg.variant_name(), cfg.attention, cfg.placement, f.params, f.macs);
    }
    out
}

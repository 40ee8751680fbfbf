//! Timing table, savings estimate and per-junction CSV exports from a
//! session log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use probestation_core::autocontrol::ProcedureKind;
use probestation_core::events::{Phase, ProcedureEvent};
use probestation_core::measurement::{timing_savings, Interval};
use probestation_core::SimEvent;
use serde::Serialize;

use crate::session::Session;

/// Manual handling time for one junction (s).
pub const MANUAL_RANGE: (f64, f64) = (40.0, 55.0);

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub label: String,
    pub runs: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl TimingRow {
    fn of(label: impl Into<String>, xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            label: label.into(),
            runs: xs.len(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JunctionRow {
    pub slot: Option<usize>,
    pub resistance_ohm: f64,
    pub intercept_v: f64,
    pub rms_v: f64,
    pub critical_current_a: f64,
    pub josephson_energy_j: f64,
    pub sweep_started_s: f64,
    pub sweep_elapsed_s: f64,
    /// Alignment, lowering and sweep for this junction.
    pub auto_run_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub junction: usize,
    pub slot: Option<usize>,
    pub index: usize,
    pub current_a: f64,
    pub voltage_v: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub timing: Vec<TimingRow>,
    pub junctions: Vec<JunctionRow>,
    pub samples: Vec<SampleRow>,
}

fn label(kind: ProcedureKind) -> &'static str {
    match kind {
        ProcedureKind::Align => "align",
        ProcedureKind::LowerSequential => "lower (sequential)",
        ProcedureKind::LowerJoint => "lower (joint)",
        ProcedureKind::Sweep => "sweep",
        ProcedureKind::AdjustSpacing => "adjust spacing",
        ProcedureKind::AdjustRotation => "adjust rotation",
        ProcedureKind::Batch => "batch",
    }
}

const ORDER: [ProcedureKind; 7] = [
    ProcedureKind::Align,
    ProcedureKind::LowerSequential,
    ProcedureKind::LowerJoint,
    ProcedureKind::Sweep,
    ProcedureKind::AdjustSpacing,
    ProcedureKind::AdjustRotation,
    ProcedureKind::Batch,
];

impl Report {
    pub fn from_session(session: &Session) -> Self {
        let mut elapsed: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut report = Report::default();
        let mut pending = 0.0;
        let mut last_run = None;
        for event in session.events() {
            match event {
                SimEvent::Procedure(ProcedureEvent {
                    procedure,
                    phase: Phase::Started,
                    ..
                }) if *procedure == ProcedureKind::Align => pending = 0.0,
                SimEvent::Procedure(ProcedureEvent {
                    procedure,
                    phase: Phase::Stopped { result },
                    ..
                }) => {
                    let i = ORDER.iter().position(|k| k == procedure).unwrap_or(0);
                    elapsed.entry(i).or_default().push(result.elapsed);
                    match procedure {
                        ProcedureKind::Align | ProcedureKind::LowerSequential | ProcedureKind::LowerJoint => {
                            pending += result.elapsed
                        }
                        ProcedureKind::Sweep => {
                            last_run = Some(pending + result.elapsed);
                            pending = 0.0;
                        }
                        _ => {}
                    }
                }
                SimEvent::Measurement { slot, result, .. } => {
                    let junction = report.junctions.len();
                    report.samples.extend(result.samples.iter().enumerate().map(|(index, s)| SampleRow {
                        junction,
                        slot: *slot,
                        index,
                        current_a: s.current,
                        voltage_v: s.voltage,
                        clamped: s.clamped,
                    }));
                    report.junctions.push(JunctionRow {
                        slot: *slot,
                        resistance_ohm: result.resistance,
                        intercept_v: result.intercept,
                        rms_v: result.rms,
                        critical_current_a: result.critical_current,
                        josephson_energy_j: result.josephson_energy,
                        sweep_started_s: result.started,
                        sweep_elapsed_s: result.elapsed,
                        auto_run_s: last_run.take(),
                    });
                }
                _ => {}
            }
        }
        report.timing = elapsed
            .into_iter()
            .filter_map(|(i, xs)| TimingRow::of(label(ORDER[i]), &xs))
            .collect();
        let runs: Vec<f64> = report.junctions.iter().filter_map(|j| j.auto_run_s).collect();
        report.timing.extend(TimingRow::of("auto run per junction", &runs));
        report
    }

    /// Range of measured per-junction automated run times.
    pub fn auto_range(&self) -> Option<Interval<f64>> {
        let row = self.timing.iter().find(|r| r.label == "auto run per junction")?;
        Interval::new(row.min, row.max).ok()
    }

    pub fn render(&self, auto: Option<Interval<f64>>, manual: Interval<f64>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>5} {:>9} {:>9} {:>9}", "procedure", "runs", "min_s", "mean_s", "max_s");
        for r in &self.timing {
            let _ = writeln!(
                out,
                "{:<24} {:>5} {:>9.3} {:>9.3} {:>9.3}",
                r.label, r.runs, r.min, r.mean, r.max
            );
        }
        let _ = writeln!(out);
        match auto.or_else(|| self.auto_range()) {
            Some(a) => {
                let _ = writeln!(out, "{}", savings_line(a, manual));
            }
            None => {
                let _ = writeln!(out, "savings: no completed automated run in this session");
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>4} {:>6} {:>14} {:>14} {:>10}", "#", "slot", "R_ohm", "Ic_A", "auto_s");
        for (i, j) in self.junctions.iter().enumerate() {
            let slot = j.slot.map_or("-".to_string(), |s| s.to_string());
            let auto = j.auto_run_s.map_or("-".to_string(), |t| format!("{t:.3}"));
            let _ = writeln!(
                out,
                "{:>4} {:>6} {:>14.6} {:>14.6e} {:>10}",
                i, slot, j.resistance_ohm, j.critical_current_a, auto
            );
        }
        out
    }

    pub fn write_junctions_csv(&self, w: impl io::Write) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.junctions {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_samples_csv(&self, w: impl io::Write) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.samples {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `savings: [28%, 51%] (auto [27, 29] s vs manual [40, 55] s)`
pub fn savings_line(auto: Interval<f64>, manual: Interval<f64>) -> String {
    let s = timing_savings(auto, manual);
    format!(
        "savings: [{}%, {}%] (auto [{}, {}] s vs manual [{}, {}] s)",
        s.lo,
        s.hi,
        secs(auto.lo),
        secs(auto.hi),
        secs(manual.lo),
        secs(manual.hi)
    )
}

/// Seconds to at most three decimals, without trailing zeros.
fn secs(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

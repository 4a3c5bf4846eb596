use serde::{Deserialize, Serialize};

use super::grid::select_images;
use super::metrics::{median, MetricsReport};
use super::EvalError;
use crate::sim::{
    build_scenario_trace, run_simulation, ArrivalSchedule, Scenario, ScenarioConfig, SimConfig,
    TransmissionRecord, Workload,
};

/// One row per image for plotting a switching-bandwidth run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub sequence: u32,
    pub arrival: f64,
    pub scenario: Scenario,
    /// `b(t)` when the image becomes sendable.
    pub rate: f64,
    pub budget_bytes: f64,
    pub payload_bytes: usize,
    pub channels_used: usize,
    pub fully_offloaded: bool,
    pub correct: bool,
}

#[derive(Clone, Debug)]
pub struct VaryingRun {
    pub report: MetricsReport,
    pub timeline: Vec<TimelineRow>,
    pub records: Vec<TransmissionRecord>,
}

impl VaryingRun {
    /// Median delivered channels per scenario, in first-seen order.
    pub fn median_channels_by_scenario(&self) -> Vec<(Scenario, f64)> {
        let mut seen: Vec<Scenario> = Vec::new();
        for r in &self.timeline {
            if !seen.contains(&r.scenario) {
                seen.push(r.scenario);
            }
        }
        seen.into_iter()
            .map(|s| {
                let ks: Vec<f64> = self
                    .timeline
                    .iter()
                    .filter(|r| r.scenario == s)
                    .map(|r| r.channels_used as f64)
                    .collect();
                (s, median(&ks))
            })
            .collect()
    }
}

/// Periodic arrivals under a switching bandwidth schedule. The trace is
/// extended to cover the whole schedule when `scenario.duration` is short.
pub fn run_varying_scenario(
    scenario: &ScenarioConfig,
    workload: &Workload,
    period: f64,
    images: usize,
    sim: &SimConfig,
    seed: u64,
) -> Result<VaryingRun, EvalError> {
    let schedule = ArrivalSchedule::new(period, images);
    let horizon = schedule.horizon(sim.encode_latency) + 1.0;
    let cfg = ScenarioConfig {
        duration: scenario.duration.max(horizon),
        ..scenario.clone()
    };
    let sim_err = |e: crate::sim::SimError| EvalError::Config(e.to_string());
    let trace = build_scenario_trace(&cfg).map_err(sim_err)?;
    let selected = select_images(workload, images, seed);
    let run = run_simulation(&selected, &trace, &schedule, sim).map_err(sim_err)?;
    let timeline = run
        .records
        .iter()
        .map(|r| TimelineRow {
            sequence: r.sequence,
            arrival: r.arrival,
            scenario: cfg.scenario_at(r.window_start),
            rate: trace.rate_at(r.window_start),
            budget_bytes: r.budget_bytes,
            payload_bytes: r.payload_bytes,
            channels_used: r.channels_used,
            fully_offloaded: r.fully_offloaded,
            correct: r.correct,
        })
        .collect();
    Ok(VaryingRun {
        report: MetricsReport::from_records("varying", &run.records),
        timeline,
        records: run.records,
    })
}

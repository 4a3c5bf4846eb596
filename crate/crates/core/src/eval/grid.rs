use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, median, MetricsReport};
use super::EvalError;
use crate::sim::{
    build_scenario_trace, run_simulation, ArrivalSchedule, JamFactors, Scenario, ScenarioConfig,
    SimConfig, TransmissionRecord, Workload,
};

/// Scenario x period matrix, repeated once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub scenarios: Vec<Scenario>,
    /// Arrival periods `T` in seconds.
    pub periods: Vec<f64>,
    pub seeds: Vec<u64>,
    pub images_per_run: usize,
    pub base_rate: f64,
    pub jam_factors: JamFactors,
    pub rate_jitter: f64,
    pub jitter_interval: f64,
    pub sim: SimConfig,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            scenarios: Scenario::STANDARD.to_vec(),
            periods: vec![0.3, 0.5, 0.7],
            seeds: vec![1, 2, 3],
            images_per_run: 200,
            base_rate: 800.0,
            jam_factors: JamFactors::default(),
            rate_jitter: 0.0,
            jitter_interval: 1.0,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub scenario: Scenario,
    pub period: f64,
    pub seed: u64,
}

impl GridCell {
    /// File-name friendly identifier.
    pub fn tag(&self) -> String {
        format!(
            "{}_T{}ms_seed{}",
            self.scenario,
            (self.period * 1000.0).round() as u64,
            self.seed
        )
    }
}

impl ExperimentGrid {
    pub fn repetitions(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.scenarios.is_empty() || self.periods.is_empty() || self.seeds.is_empty() {
            return Err(EvalError::Config(
                "grid needs scenarios, periods and seeds".into(),
            ));
        }
        if self.periods.iter().any(|&t| !(t > 0.0)) {
            return Err(EvalError::Config("periods must be positive".into()));
        }
        if self.images_per_run == 0 {
            return Err(EvalError::Config("images_per_run must be positive".into()));
        }
        self.sim
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        self.scenario_config(Scenario::NoJamming, 1.0, 0)
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))
    }

    /// Every cell, fixed before anything runs.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut cells = Vec::new();
        for &scenario in &self.scenarios {
            for &period in &self.periods {
                for &seed in &self.seeds {
                    cells.push(GridCell {
                        scenario,
                        period,
                        seed,
                    });
                }
            }
        }
        cells
    }

    fn scenario_config(&self, scenario: Scenario, duration: f64, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            jam_factors: self.jam_factors.clone(),
            rate_jitter: self.rate_jitter,
            jitter_interval: self.jitter_interval,
            seed,
            ..ScenarioConfig::constant(scenario, self.base_rate, duration)
        }
    }
}

/// `count` images drawn by a seeded shuffle of the workload (cycling when
/// the workload is smaller).
pub fn select_images(workload: &Workload, count: usize, seed: u64) -> Workload {
    let mut order: Vec<usize> = (0..workload.images.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let images = order
        .iter()
        .cycle()
        .take(if order.is_empty() { 0 } else { count })
        .map(|&i| workload.images[i].clone())
        .collect();
    Workload {
        codec: workload.codec.clone(),
        channels: workload.channels,
        images,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub scenario: Scenario,
    pub period: f64,
    pub seed: u64,
    pub images: usize,
    pub accuracy: f64,
    pub fully_offloaded_fraction: f64,
    pub throughput: f64,
    pub offered_rate: f64,
    pub mean_channels: f64,
    pub error: String,
}

impl GridRow {
    fn new(cell: &GridCell, report: Option<&MetricsReport>, error: String) -> Self {
        let f = |get: fn(&MetricsReport) -> f64| report.map_or(f64::NAN, get);
        Self {
            scenario: cell.scenario,
            period: cell.period,
            seed: cell.seed,
            images: report.map_or(0, |r| r.images),
            accuracy: f(|r| r.accuracy),
            fully_offloaded_fraction: f(|r| r.fully_offloaded_fraction),
            throughput: f(|r| r.throughput),
            offered_rate: f(|r| r.offered_rate),
            mean_channels: f(|r| r.mean_channels),
            error,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: GridCell,
    pub row: GridRow,
    pub records: Vec<TransmissionRecord>,
}

/// Simulates one cell; failures become an error row.
pub fn run_cell(
    grid: &ExperimentGrid,
    cell: &GridCell,
    workload: Option<&Workload>,
) -> CellOutcome {
    let fail = |error: String| CellOutcome {
        cell: *cell,
        row: GridRow::new(cell, None, error),
        records: Vec::new(),
    };
    let Some(workload) = workload else {
        return fail("missing artifact: prepared workload (model, teacher or tables)".into());
    };
    let schedule = ArrivalSchedule::new(cell.period, grid.images_per_run);
    let horizon = schedule.horizon(grid.sim.encode_latency) + 1.0;
    let trace = match build_scenario_trace(&grid.scenario_config(cell.scenario, horizon, cell.seed))
    {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    let images = select_images(workload, grid.images_per_run, cell.seed);
    match run_simulation(&images, &trace, &schedule, &grid.sim) {
        Ok(run) => {
            let report = MetricsReport::from_records(cell.tag(), &run.records);
            CellOutcome {
                cell: *cell,
                row: GridRow::new(cell, Some(&report), String::new()),
                records: run.records,
            }
        }
        Err(e) => fail(e.to_string()),
    }
}

/// Runs every cell in parallel; results come back in `grid.cells()` order.
pub fn run_grid(
    grid: &ExperimentGrid,
    workload: Option<&Workload>,
) -> Result<Vec<CellOutcome>, EvalError> {
    grid.validate()?;
    Ok(grid
        .cells()
        .par_iter()
        .map(|cell| run_cell(grid, cell, workload))
        .collect())
}

/// Mean and spread over seeds for one scenario and period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub scenario: Scenario,
    pub period: f64,
    pub repetitions: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub fully_offloaded_mean: f64,
    pub throughput_mean: f64,
    pub offered_rate_mean: f64,
    pub median_channels: f64,
}

pub fn summarize_grid(rows: &[GridRow]) -> Vec<GridSummary> {
    let mut keys: Vec<(Scenario, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(s, t)| s == r.scenario && t == r.period) {
            keys.push((r.scenario, r.period));
        }
    }
    keys.into_iter()
        .map(|(scenario, period)| {
            let cell: Vec<&GridRow> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.period == period && r.error.is_empty())
                .collect();
            let col = |f: fn(&GridRow) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (accuracy_mean, accuracy_std) = mean_std(&col(|r| r.accuracy));
            GridSummary {
                scenario,
                period,
                repetitions: cell.len(),
                accuracy_mean,
                accuracy_std,
                fully_offloaded_mean: mean_std(&col(|r| r.fully_offloaded_fraction)).0,
                throughput_mean: mean_std(&col(|r| r.throughput)).0,
                offered_rate_mean: mean_std(&col(|r| r.offered_rate)).0,
                median_channels: median(&col(|r| r.mean_channels)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_cover_the_matrix() {
        let grid = ExperimentGrid::default();
        let cells = grid.cells();
        assert_eq!(cells.len(), 3 * 3 * 3);
        assert_eq!(grid.repetitions(), 3);
        assert_eq!(cells[0].tag(), "no_jamming_T300ms_seed1");
    }

    #[test]
    fn missing_workload_yields_error_rows() {
        let grid = ExperimentGrid {
            seeds: vec![1],
            periods: vec![0.5],
            ..ExperimentGrid::default()
        };
        let out = run_grid(&grid, None).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out
            .iter()
            .all(|c| c.row.error.starts_with("missing artifact")));
        assert!(out.iter().all(|c| c.row.accuracy.is_nan()));
    }

    #[test]
    fn invalid_grid_rejected() {
        let grid = ExperimentGrid {
            periods: vec![0.0],
            ..ExperimentGrid::default()
        };
        assert!(run_grid(&grid, None).is_err());
    }
}

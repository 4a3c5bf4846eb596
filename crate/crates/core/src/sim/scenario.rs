use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::BandwidthTrace;
use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NoJamming,
    LightJamming,
    HeavyJamming,
    Custom,
}

impl Scenario {
    pub const STANDARD: [Scenario; 3] = [
        Scenario::NoJamming,
        Scenario::LightJamming,
        Scenario::HeavyJamming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::NoJamming => "no_jamming",
            Scenario::LightJamming => "light_jamming",
            Scenario::HeavyJamming => "heavy_jamming",
            Scenario::Custom => "custom",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "no_jamming" | "no" | "none" => Ok(Scenario::NoJamming),
            "light_jamming" | "light" => Ok(Scenario::LightJamming),
            "heavy_jamming" | "heavy" => Ok(Scenario::HeavyJamming),
            "custom" => Ok(Scenario::Custom),
            other => Err(SimError::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Fraction of `base_rate` left under each scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JamFactors {
    pub no_jamming: f64,
    pub light_jamming: f64,
    pub heavy_jamming: f64,
    pub custom: f64,
}

impl Default for JamFactors {
    fn default() -> Self {
        Self {
            no_jamming: 1.0,
            light_jamming: 0.6,
            heavy_jamming: 0.3,
            custom: 1.0,
        }
    }
}

impl JamFactors {
    pub fn factor(&self, scenario: Scenario) -> f64 {
        match scenario {
            Scenario::NoJamming => self.no_jamming,
            Scenario::LightJamming => self.light_jamming,
            Scenario::HeavyJamming => self.heavy_jamming,
            Scenario::Custom => self.custom,
        }
    }
}

/// Bandwidth regime. `schedule` is cycled every `segment_duration` seconds
/// until `duration`.
///
/// ```toml
/// base_rate = 800.0
/// duration = 60.0
/// segment_duration = 10.0
/// schedule = ["no_jamming", "heavy_jamming"]
/// rate_jitter = 0.0       # relative, uniform in [1 - j, 1 + j]
/// jitter_interval = 1.0
/// seed = 0
///
/// [jam_factors]
/// light_jamming = 0.6
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub base_rate: f64,
    pub jam_factors: JamFactors,
    pub schedule: Vec<Scenario>,
    pub segment_duration: f64,
    pub duration: f64,
    pub rate_jitter: f64,
    pub jitter_interval: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            base_rate: 800.0,
            jam_factors: JamFactors::default(),
            schedule: vec![Scenario::NoJamming],
            segment_duration: 10.0,
            duration: 60.0,
            rate_jitter: 0.0,
            jitter_interval: 1.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn constant(scenario: Scenario, base_rate: f64, duration: f64) -> Self {
        Self {
            base_rate,
            schedule: vec![scenario],
            duration,
            ..Self::default()
        }
    }

    /// Alternates between `scenarios` every `segment_duration` seconds.
    pub fn alternating(
        scenarios: Vec<Scenario>,
        base_rate: f64,
        segment_duration: f64,
        duration: f64,
    ) -> Self {
        Self {
            base_rate,
            schedule: scenarios,
            segment_duration,
            duration,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let f = &self.jam_factors;
        for (name, v) in [
            ("no_jamming", f.no_jamming),
            ("light_jamming", f.light_jamming),
            ("heavy_jamming", f.heavy_jamming),
            ("custom", f.custom),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Config(format!(
                    "jam factor {name} = {v} is outside [0, 1]"
                )));
            }
        }
        if !(self.base_rate >= 0.0 && self.base_rate.is_finite()) {
            return Err(SimError::Config(format!(
                "base_rate {} must be finite and >= 0",
                self.base_rate
            )));
        }
        if self.schedule.is_empty() {
            return Err(SimError::Config("schedule lists no scenario".into()));
        }
        if !(self.segment_duration > 0.0 && self.duration > 0.0) {
            return Err(SimError::Config("durations must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rate_jitter) {
            return Err(SimError::Config("rate_jitter must lie in [0, 1)".into()));
        }
        if self.rate_jitter > 0.0 && !(self.jitter_interval > 0.0) {
            return Err(SimError::Config("jitter_interval must be positive".into()));
        }
        Ok(())
    }

    /// Scenario in force at time `t`.
    pub fn scenario_at(&self, t: f64) -> Scenario {
        let slot = (t / self.segment_duration).floor().max(0.0) as usize;
        self.schedule[slot % self.schedule.len()]
    }
}

/// Piecewise-constant trace for `config`; adjacent pieces with equal rates
/// are merged.
pub fn build_scenario_trace(config: &ScenarioConfig) -> Result<BandwidthTrace, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut push = |t: f64, rate: f64| {
        if points.last().is_none_or(|&(_, r)| r != rate) {
            points.push((t, rate));
        }
    };
    let segments = (config.duration / config.segment_duration).ceil() as usize;
    for s in 0..segments {
        let start = s as f64 * config.segment_duration;
        let end = ((s + 1) as f64 * config.segment_duration).min(config.duration);
        let scenario = config.schedule[s % config.schedule.len()];
        let rate = config.base_rate * config.jam_factors.factor(scenario);
        if config.rate_jitter > 0.0 {
            let mut t = start;
            while t < end {
                let j = rng.gen_range(-config.rate_jitter..=config.rate_jitter);
                push(t, rate * (1.0 + j));
                t += config.jitter_interval;
            }
        } else {
            push(start, rate);
        }
    }
    BandwidthTrace::new(points, config.duration)
}

/// `t_i = first_arrival + i * period` for `i` in `0..count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    pub period: f64,
    pub count: usize,
    pub first_arrival: f64,
}

impl ArrivalSchedule {
    pub fn new(period: f64, count: usize) -> Self {
        Self {
            period,
            count,
            first_arrival: 0.0,
        }
    }

    pub fn arrival(&self, i: usize) -> f64 {
        self.first_arrival + i as f64 * self.period
    }

    pub fn arrivals(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.arrival(i))
    }

    /// Trace length needed to cover every window plus the last stop signal.
    pub fn horizon(&self, encode_latency: f64) -> f64 {
        self.arrival(self.count) + encode_latency + self.period
    }
}

//! Trace-driven simulation: piecewise-constant bandwidth, jamming
//! scenarios, periodic arrivals and a discrete-event offloading loop.

mod engine;
mod realtime;
mod scenario;
mod trace;
mod workload;

pub use engine::{
    read_records, run_simulation, write_records, SimConfig, SimulationRun, TransmissionRecord,
    DEFAULT_ENCODE_LATENCY,
};
pub use realtime::{run_realtime, RealtimeRecord};
pub use scenario::{build_scenario_trace, ArrivalSchedule, JamFactors, Scenario, ScenarioConfig};
pub use trace::{BandwidthTrace, SimChannel};
pub use workload::{argmax, class_rank, prepare_workload, PreparedImage, Workload};

use crate::codec::CodecError;
use crate::nn::NnError;
use crate::protocol::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error("interval [{start}, {end}] lies outside the trace [{trace_start}, {trace_end}]")]
    Range {
        start: f64,
        end: f64,
        trace_start: f64,
        trace_end: f64,
    },
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
pub(crate) use engine::tests::workload as test_workload;

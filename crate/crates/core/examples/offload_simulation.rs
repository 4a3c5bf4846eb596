//! Trace-driven offloading of a toy workload under three jamming levels, in
//! simulated time and through real threads.
//!
//! cargo run --example offload_simulation

use pnc::codec::{Codec, HuffmanTable};
use pnc::eval::MetricsReport;
use pnc::nn::Tensor;
use pnc::sim::{
    build_scenario_trace, run_realtime, run_simulation, ArrivalSchedule, PreparedImage, Scenario,
    ScenarioConfig, SimConfig, Workload,
};

/// Raw-coded 8x8 latents whose class becomes recognizable after 3 of 6
/// channels (or 2, for every other image).
fn toy_workload(n: usize) -> Result<Workload, Box<dyn std::error::Error>> {
    let (m, side) = (6, 8);
    let tables = (1..=m as u8)
        .map(|c| HuffmanTable::from_frequencies(c, &[1; 64]))
        .collect::<Result<Vec<_>, _>>()?;
    let codec = Codec::new(tables, side, side)?;
    let mut images = Vec::new();
    for i in 0..n {
        let latent = Tensor::full(&[1, m, side, side], (i % 5) as f64 / 5.0);
        let need = 2 + i % 2;
        let label = i % 4;
        let probabilities = (0..=m)
            .map(|k| {
                let mut p = vec![0.2; 4];
                p[if k >= need { label } else { (label + 1) % 4 }] = 0.4;
                p
            })
            .collect();
        images.push(PreparedImage {
            image_id: i as u32,
            label,
            encoded: codec.encode_latent(i as u32, &latent)?,
            latent,
            probabilities,
            error: None,
        });
    }
    Ok(Workload {
        codec,
        channels: m,
        images,
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workload = toy_workload(40)?;
    println!(
        "encoded size {:.0} B per image",
        workload.mean_encoded_size()
    );
    let sim = SimConfig::default();
    let schedule = ArrivalSchedule::new(0.5, 40);
    for scenario in Scenario::STANDARD {
        let cfg = ScenarioConfig::constant(scenario, 800.0, schedule.horizon(sim.encode_latency));
        let trace = build_scenario_trace(&cfg)?;
        let run = run_simulation(&workload, &trace, &schedule, &sim)?;
        let r = MetricsReport::from_records(scenario.name(), &run.records);
        println!(
            "{:<14} accuracy {:.2}  fully offloaded {:.2}  mean channels {:.2}  {:.0} B/s",
            r.condition, r.accuracy, r.fully_offloaded_fraction, r.mean_channels, r.throughput
        );
    }

    // Light jamming over a paced in-memory link, 20x faster than real time. The
    // threaded client only preempts between whole blocks, so it trails the
    // simulated engine, which cuts the last block at the deadline.
    let short = ArrivalSchedule::new(0.5, 8);
    let cfg = ScenarioConfig::constant(
        Scenario::LightJamming,
        800.0,
        short.horizon(sim.encode_latency),
    );
    let trace = build_scenario_trace(&cfg)?;
    let live = run_realtime(&workload, &trace, &short, sim.block_size, 1, 0.05)?;
    let channels: Vec<usize> = live.iter().map(|r| r.channels_used).collect();
    println!("threaded light_jamming channels per image: {channels:?}");
    Ok(())
}

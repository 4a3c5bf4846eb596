//! Build jamming-scenario bandwidth traces and query per-window byte budgets.
//!
//! cargo run --example bandwidth_traces

use pnc::sim::{build_scenario_trace, ArrivalSchedule, Scenario, ScenarioConfig, SimChannel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::alternating(
        vec![
            Scenario::NoJamming,
            Scenario::LightJamming,
            Scenario::HeavyJamming,
        ],
        800.0,
        2.0,
        6.0,
    );
    let trace = build_scenario_trace(&cfg)?;
    for (t, rate) in trace.breakpoints() {
        println!("from {t:>4.1}s  {rate:>5.0} B/s  ({})", cfg.scenario_at(t));
    }

    let schedule = ArrivalSchedule::new(0.5, 10);
    let t_f = 0.012;
    println!("\nbudget per 0.5 s window:");
    for (i, t) in schedule.arrivals().enumerate() {
        let start = t + t_f;
        let budget = trace.available_bytes(start, start + schedule.period)?;
        println!(
            "  image {i}  window [{start:.3}, {:.3}]  {budget:>6.1} B",
            start + schedule.period
        );
    }

    let mut link = SimChannel::new(trace);
    let mut now = 1.9;
    for _ in 0..4 {
        now = link.grant_block(65, now).ok_or("trace ended")?;
        println!("65-byte block delivered at {now:.4}s");
    }
    Ok(())
}

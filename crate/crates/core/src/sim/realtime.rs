//! Wall-clock run of the threaded client and server roles over an
//! in-process pipe paced by a bandwidth trace.

use std::time::Duration;

use super::scenario::ArrivalSchedule;
use super::trace::BandwidthTrace;
use super::workload::{argmax, class_rank, Workload};
use super::SimError;
use crate::protocol::{memory_pipe, spawn_client, spawn_server, Completion, ThreadedClientConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RealtimeRecord {
    pub sequence: u32,
    pub channels_used: usize,
    pub status: Completion,
    pub prediction: usize,
    pub correct: bool,
}

/// Replays `schedule` in real time. `time_scale` wall seconds elapse per
/// simulated second, so `0.1` runs ten times faster than the trace.
pub fn run_realtime(
    workload: &Workload,
    trace: &BandwidthTrace,
    schedule: &ArrivalSchedule,
    block_size: usize,
    top_n: usize,
    time_scale: f64,
) -> Result<Vec<RealtimeRecord>, SimError> {
    if !(time_scale > 0.0) || workload.images.is_empty() {
        return Err(SimError::Config(
            "time_scale must be positive and the workload non-empty".into(),
        ));
    }
    let pacer_trace = trace.clone();
    let origin = trace.start();
    let pacer = Box::new(move |bytes: usize, start: f64| {
        pacer_trace
            .completion_time(bytes as f64, origin + start / time_scale)
            .map_or(f64::INFINITY, |t| (t - origin) * time_scale)
    });
    let (writer, reader) = memory_pipe(Some(pacer));
    let images = workload.images.clone();
    let n = images.len();
    let server_images = images.clone();
    let server = spawn_server(reader, workload.codec.clone(), move |received| {
        let p = &server_images[received.image_id as usize % n];
        argmax(&p.probabilities[received.usable_channels()])
    });
    let client = spawn_client(
        move |i| {
            let p = &images[i as usize % n];
            match &p.error {
                Some(e) => Err(e.clone()),
                None => Ok(p.latent.clone()),
            }
        },
        workload.codec.clone(),
        writer,
        ThreadedClientConfig {
            period: Duration::from_secs_f64(schedule.period * time_scale),
            block_size,
            images: schedule.count as u32,
        },
    );
    let join_err = |_| SimError::Config("real-time worker panicked".into());
    client.join().map_err(join_err)??;
    let served = server.join().map_err(join_err)??;
    Ok(served
        .into_iter()
        .map(|s| {
            let p = &workload.images[s.image_id as usize % n];
            let rank = class_rank(&p.probabilities[s.usable_channels], p.label);
            RealtimeRecord {
                sequence: s.image_id,
                channels_used: s.usable_channels,
                status: s.status,
                prediction: s.prediction,
                correct: rank <= top_n,
            }
        })
        .collect())
}

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scenario::ArrivalSchedule;
use super::trace::{BandwidthTrace, SimChannel};
use super::workload::{argmax, class_rank, Workload};
use super::SimError;
use crate::protocol::{
    compute_deadline, Frame, ReceivedImage, StreamParser, DEFAULT_BLOCK_SIZE, MAX_BLOCK_SIZE,
    STOP_FRAME_LEN,
};

/// Encode latency charged per image when none is measured, in seconds.
pub const DEFAULT_ENCODE_LATENCY: f64 = 0.012;

/// Admission slack in bytes for floating-point budget comparisons.
const BYTE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub block_size: usize,
    /// `t^f`, charged before each image's first block.
    pub encode_latency: f64,
    pub top_n: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            encode_latency: DEFAULT_ENCODE_LATENCY,
            top_n: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.block_size == 0 || self.block_size > MAX_BLOCK_SIZE {
            return Err(SimError::Config(format!(
                "block_size must be within 1..={MAX_BLOCK_SIZE}"
            )));
        }
        if !(self.encode_latency >= 0.0 && self.encode_latency.is_finite()) {
            return Err(SimError::Config(
                "encode_latency must be finite and >= 0".into(),
            ));
        }
        if self.top_n == 0 {
            return Err(SimError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    /// Position in the arrival sequence; also the image id on the wire.
    pub sequence: u32,
    pub image_id: u32,
    pub label: usize,
    pub period: f64,
    pub arrival: f64,
    /// `t_i + t^f_i`, when the encoded data is ready.
    pub window_start: f64,
    pub deadline: f64,
    /// `S_i`.
    pub budget_bytes: f64,
    pub encoded_size: usize,
    /// Image bytes delivered (framing excluded).
    pub payload_bytes: usize,
    /// Bytes on the link including block prefixes and the stop signal.
    pub link_bytes: usize,
    pub first_byte_time: Option<f64>,
    pub last_byte_time: Option<f64>,
    pub channels_used: usize,
    pub fully_offloaded: bool,
    pub stop_signal: bool,
    pub stop_delivered_at: Option<f64>,
    pub prediction: Option<usize>,
    /// 1-based rank of the true class in the server's output.
    pub label_rank: Option<usize>,
    pub correct: bool,
    pub error: String,
}

pub fn write_records<W: Write>(writer: W, records: &[TransmissionRecord]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(reader: R) -> Result<Vec<TransmissionRecord>, SimError> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub records: Vec<TransmissionRecord>,
    /// Every byte that crossed the link, in order.
    pub stream: Vec<u8>,
}

struct Link {
    channel: SimChannel,
    stream: Vec<u8>,
    parser: StreamParser,
    received: HashMap<u32, ReceivedImage>,
}

impl Link {
    fn send(&mut self, frame: &Frame, now: f64) -> Option<f64> {
        let bytes = frame.encode();
        let done = self.channel.grant_block(bytes.len(), now)?;
        self.stream.extend_from_slice(&bytes);
        for image in self.parser.push(&bytes) {
            self.received.insert(image.image_id, image);
        }
        Some(done)
    }
}

/// Single-threaded discrete-event run of the offloading pipeline.
///
/// Image `i` becomes sendable at `t_i + t^f` and must stop at
/// `t_i + T + t^f` (the next image's encode completion). Blocks are sent
/// back to back while the remaining budget admits them; the block that would
/// straddle the deadline is cut to fit, then the stop signal follows. The
/// stop signal occupies the link after the deadline, so its airtime is
/// charged to the next image's window.
pub fn run_simulation(
    workload: &Workload,
    trace: &BandwidthTrace,
    schedule: &ArrivalSchedule,
    config: &SimConfig,
) -> Result<SimulationRun, SimError> {
    config.validate()?;
    if !(schedule.period > 0.0) {
        return Err(SimError::Config("period must be positive".into()));
    }
    if workload.images.is_empty() && schedule.count > 0 {
        return Err(SimError::Config("workload has no images".into()));
    }
    let t_f = config.encode_latency;
    let mut link = Link {
        channel: SimChannel::new(trace.clone()),
        stream: Vec::new(),
        parser: StreamParser::new(workload.codec.clone()),
        received: HashMap::new(),
    };
    let mut records = Vec::with_capacity(schedule.count);
    for i in 0..schedule.count {
        let image = &workload.images[i % workload.images.len()];
        let sequence = i as u32;
        let arrival = schedule.arrival(i);
        let window_start = arrival + t_f;
        let deadline = compute_deadline(arrival, schedule.period, t_f);
        let mut record = TransmissionRecord {
            sequence,
            image_id: image.image_id,
            label: image.label,
            period: schedule.period,
            arrival,
            window_start,
            deadline,
            budget_bytes: 0.0,
            encoded_size: 0,
            payload_bytes: 0,
            link_bytes: 0,
            first_byte_time: None,
            last_byte_time: None,
            channels_used: 0,
            fully_offloaded: false,
            stop_signal: false,
            stop_delivered_at: None,
            prediction: None,
            label_rank: None,
            correct: false,
            error: String::new(),
        };
        let budget = match trace.available_bytes(window_start, deadline) {
            Ok(b) => b,
            Err(e) => {
                record.error = e.to_string();
                records.push(record);
                continue;
            }
        };
        record.budget_bytes = budget;
        if let Some(e) = &image.error {
            record.error = e.clone();
            records.push(record);
            continue;
        }
        let mut encoded = image.encoded.clone();
        encoded.image_id = sequence;
        let bytes = match encoded.to_bytes() {
            Ok(b) => b,
            Err(e) => {
                record.error = e.to_string();
                records.push(record);
                continue;
            }
        };
        record.encoded_size = bytes.len();

        let mut now = window_start.max(link.channel.cursor());
        let mut offset = 0;
        while offset < bytes.len() && now < deadline {
            let room = trace.available_bytes(now, deadline).unwrap_or(0.0);
            let room = (room + BYTE_EPS).floor() as usize;
            let want = config.block_size.min(bytes.len() - offset);
            let take = if want < room {
                want
            } else {
                room.saturating_sub(1)
            };
            if take == 0 {
                break;
            }
            let frame = Frame::Block(bytes[offset..offset + take].to_vec());
            let Some(done) = link.send(&frame, now) else {
                break;
            };
            record.first_byte_time.get_or_insert(now);
            now = done.min(deadline);
            record.last_byte_time = Some(now);
            record.link_bytes += take + 1;
            offset += take;
            if take < want {
                break;
            }
        }
        record.payload_bytes = offset;
        if offset < bytes.len() {
            record.stop_signal = true;
            let stop = Frame::Stop { image_id: sequence };
            if let Some(done) = link.send(&stop, deadline) {
                record.stop_delivered_at = Some(done);
                record.link_bytes += STOP_FRAME_LEN;
            }
        } else {
            record.fully_offloaded = true;
        }
        records.push(record);
    }
    if let Some(image) = link.parser.finish() {
        link.received.insert(image.image_id, image);
    }
    for record in &mut records {
        if !record.error.is_empty() {
            continue;
        }
        let image = &workload.images[record.sequence as usize % workload.images.len()];
        let k = link
            .received
            .get(&record.sequence)
            .map_or(0, |r| r.usable_channels());
        record.channels_used = k;
        let probs = &image.probabilities[k];
        record.prediction = Some(argmax(probs));
        let rank = class_rank(probs, image.label);
        record.label_rank = Some(rank);
        record.correct = rank <= config.top_n;
    }
    Ok(SimulationRun {
        records,
        stream: link.stream,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::codec::{Codec, HuffmanTable};
    use crate::nn::Tensor;
    use crate::protocol::STOP_MAGIC;
    use crate::sim::workload::PreparedImage;
    use proptest::prelude::*;

    /// Synthetic workload: raw-coded 4x4 latents; the server ranks the
    /// true class first exactly when at least `need` channels arrive.
    pub(crate) fn workload(n: usize, need: usize) -> Workload {
        let m = 4;
        let tables = (1..=m as u8)
            .map(|c| HuffmanTable::from_frequencies(c, &[1; 64]).unwrap())
            .collect();
        let codec = Codec::new(tables, 4, 4).unwrap();
        let images = (0..n)
            .map(|i| {
                let latent = Tensor::full(&[1, m, 4, 4], (i % 7) as f64 / 7.0);
                let label = i % 3;
                let probabilities = (0..=m)
                    .map(|k| {
                        let mut p = vec![0.25; 3];
                        p[if k >= need { label } else { (label + 1) % 3 }] = 0.5;
                        p
                    })
                    .collect();
                PreparedImage {
                    image_id: 100 + i as u32,
                    label,
                    encoded: codec.encode_latent(100 + i as u32, &latent).unwrap(),
                    latent,
                    probabilities,
                    error: None,
                }
            })
            .collect();
        Workload {
            codec,
            channels: m,
            images,
        }
    }

    fn run(w: &Workload, rate: f64, period: f64, count: usize) -> SimulationRun {
        let schedule = ArrivalSchedule::new(period, count);
        let cfg = SimConfig {
            block_size: 16,
            ..SimConfig::default()
        };
        let trace =
            BandwidthTrace::constant(rate, schedule.horizon(cfg.encode_latency) + 1.0).unwrap();
        run_simulation(w, &trace, &schedule, &cfg).unwrap()
    }

    #[test]
    fn unlimited_bandwidth_offloads_everything() {
        let w = workload(5, 4);
        let out = run(&w, 1e12, 0.5, 10);
        assert!(out
            .records
            .iter()
            .all(|r| r.fully_offloaded && r.channels_used == 4));
        assert!(out.records.iter().all(|r| r.correct && !r.stop_signal));
    }

    #[test]
    fn zero_bandwidth_delivers_nothing() {
        let w = workload(5, 1);
        let out = run(&w, 0.0, 0.5, 6);
        assert!(out
            .records
            .iter()
            .all(|r| r.channels_used == 0 && r.payload_bytes == 0));
        assert!(out.records.iter().all(|r| r.stop_signal && !r.correct));
        assert!(out.stream.is_empty());
    }

    #[test]
    fn deadline_and_budget_respected() {
        let w = workload(5, 2);
        let out = run(&w, 120.0, 0.5, 20);
        for r in &out.records {
            if let Some(t) = r.last_byte_time {
                assert!(t <= r.deadline);
            }
            assert!(r.payload_bytes as f64 <= r.budget_bytes + 1e-6);
            assert!(r.payload_bytes <= r.encoded_size);
            assert_eq!(r.fully_offloaded, r.payload_bytes == r.encoded_size);
            assert_eq!(r.stop_signal, !r.fully_offloaded);
        }
        assert!(out.records.iter().any(|r| r.stop_signal));
    }

    #[test]
    fn one_stop_signal_per_preempted_image() {
        let w = workload(3, 2);
        let out = run(&w, 150.0, 0.3, 15);
        let mut stops: HashMap<u32, usize> = HashMap::new();
        for pos in 0..out.stream.len().saturating_sub(STOP_FRAME_LEN - 1) {
            if out.stream[pos..pos + 5] == STOP_MAGIC {
                let id = u32::from_be_bytes(out.stream[pos + 5..pos + 9].try_into().unwrap());
                *stops.entry(id).or_default() += 1;
            }
        }
        for r in &out.records {
            let expected = usize::from(r.stop_signal);
            assert_eq!(stops.get(&r.sequence).copied().unwrap_or(0), expected);
        }
    }

    #[test]
    fn step_down_lowers_delivered_channels() {
        let w = workload(4, 1);
        let schedule = ArrivalSchedule::new(0.5, 40);
        let trace = BandwidthTrace::new(vec![(0.0, 2000.0), (10.0, 60.0)], 30.0).unwrap();
        let out = run_simulation(&w, &trace, &schedule, &SimConfig::default()).unwrap();
        let before: Vec<usize> = out.records[..19].iter().map(|r| r.channels_used).collect();
        let after: Vec<usize> = out.records[21..].iter().map(|r| r.channels_used).collect();
        assert!(before.iter().min() >= after.iter().max());
        assert!(before.iter().sum::<usize>() > after.iter().sum::<usize>());
    }

    #[test]
    fn records_round_trip_through_csv() {
        let w = workload(3, 2);
        let out = run(&w, 150.0, 0.3, 5);
        let mut buf = Vec::new();
        write_records(&mut buf, &out.records).unwrap();
        assert_eq!(read_records(&buf[..]).unwrap(), out.records);
    }

    #[test]
    fn failed_images_become_error_rows() {
        let mut w = workload(2, 1);
        w.images[1] = PreparedImage::failed(7, 0, "encode failed".into());
        let out = run(&w, 1e6, 0.5, 4);
        assert!(out.records[0].error.is_empty());
        assert_eq!(out.records[1].error, "encode failed");
        assert_eq!(out.records[3].error, "encode failed");
        assert!(out.records[2].fully_offloaded);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn more_time_or_rate_never_hurts(
            rate in 20.0f64..600.0,
            period in 0.1f64..0.8,
            scale in 1.0f64..3.0,
            stretch in 1.0f64..2.0,
        ) {
            let w = workload(4, 1);
            let base = run(&w, rate, period, 12);
            let faster = run(&w, rate * scale, period, 12);
            let longer = run(&w, rate, period * stretch, 12);
            for ((b, f), l) in base.records.iter().zip(&faster.records).zip(&longer.records) {
                prop_assert!(f.channels_used >= b.channels_used);
                prop_assert!(l.channels_used >= b.channels_used);
            }
        }
    }
}

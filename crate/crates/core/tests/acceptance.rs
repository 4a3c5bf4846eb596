//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line.
//!
//! The checks share one trained pipeline (dataset, teacher, taildrop and
//! fixed-rate autoencoders, tables, grid and switching runs) and run one at a
//! time so that their wall-clock budgets are measured without contention.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pnc::codec::{
    dequantize_channel, dequantize_value, pack_raw6, quantize_channel, quantize_value, Codec,
    EncodedImage, HuffmanTable, SegmentMode,
};
use pnc::eval::pipeline::{AE, FIXED, FIXED_TABLES, TABLES};
use pnc::eval::{select_images, GridRow, Pipeline, PipelineConfig, Split, TimelineRow};
use pnc::nn::gradcheck::check_gradients;
use pnc::nn::{Activation, LayerSpec, Sequential, Tape, Tensor};
use pnc::protocol::{truncate, STOP_FRAME_LEN, STOP_MAGIC};
use pnc::sim::{
    argmax, build_scenario_trace, run_simulation, ArrivalSchedule, BandwidthTrace, Scenario,
    ScenarioConfig, SimChannel, TransmissionRecord, Workload,
};
use pnc::train::{
    desk_scale_autoencoder, linear_autoencoder, reconstruction_loss, ArchitectureConfig, Objective,
    TaildropConfig, TaildropTrainer,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict outside libtest's capture, then asserts it.
fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(pass, "{line}");
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

struct Shared {
    pipeline: Pipeline,
    /// Dataset, teacher and taildrop training plus evaluation, in seconds.
    taildrop_seconds: f64,
    taildrop: Workload,
    fixed: Workload,
    grid: Vec<GridRow>,
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let p = Pipeline::new(PipelineConfig::default(), scratch("acceptance-run-a")).unwrap();
        let start = Instant::now();
        p.dataset_gen().unwrap();
        p.train_teacher().unwrap();
        p.train_ae(false).unwrap();
        let trained = start.elapsed().as_secs_f64();
        p.train_ae(true).unwrap();
        p.build_tables().unwrap();
        let eval = Instant::now();
        let taildrop = p.workload(AE, TABLES).unwrap();
        let taildrop_seconds = trained + eval.elapsed().as_secs_f64();
        let fixed = p.workload(FIXED, FIXED_TABLES).unwrap();
        p.sweep_size().unwrap();
        let grid = p.sim_grid().unwrap();
        p.sim_vary().unwrap();
        p.report().unwrap();
        Shared {
            pipeline: p,
            taildrop_seconds,
            taildrop,
            fixed,
            grid,
        }
    })
}

/// Top-1 accuracy when the first `k` channels arrive.
fn accuracy_at(w: &Workload, k: usize) -> f64 {
    let hits = w
        .images
        .iter()
        .filter(|p| argmax(&p.probabilities[k]) == p.label)
        .count();
    hits as f64 / w.images.len() as f64
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Largest principal angle between the column spans of `a` and `b`, degrees.
fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = (qa.transpose() * qb).singular_values();
    let smallest = s
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .clamp(-1.0, 1.0);
    smallest.acos().to_degrees()
}

#[test]
fn linear_taildrop_recovers_principal_subspaces() {
    let _g = serial();
    let start = Instant::now();
    let (dim, m, n) = (8, 4, 1000);
    let eigenvalues = [4.0, 2.5, 1.6, 1.0, 0.5, 0.3, 0.2, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian(&mut rng));
    let q = g.qr().q();
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        eigenvalues.iter().map(|l: &f64| l.sqrt()),
    ));
    let z = DMatrix::from_fn(dim, n, |_, _| gaussian(&mut rng));
    let samples = &q * scale * z;
    let x = Tensor::from_vec(
        &[n, dim],
        (0..n)
            .flat_map(|j| samples.column(j).iter().cloned().collect::<Vec<_>>())
            .collect(),
    )
    .unwrap();

    let mut init = ChaCha8Rng::seed_from_u64(12);
    let ae = linear_autoencoder(dim, m, &mut init).unwrap();
    let mut trainer = TaildropTrainer::new(ae, &TaildropConfig::uniform(m), 0.01, 13).unwrap();
    let rows: Vec<usize> = (0..n).collect();
    for step in 0..6000 {
        if step == 4000 {
            trainer.reset_optimizer(0.002);
        }
        trainer.step(&x, &rows, Objective::Reconstruction).unwrap();
    }

    let cov = &samples * samples.transpose() / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let w = trainer.ae.encoder.layers()[0].weight.clone();
    let mut angles = Vec::new();
    for k in 1..=m {
        let enc = DMatrix::from_fn(dim, k, |i, j| w.data()[j * dim + i]);
        let top = DMatrix::from_fn(dim, k, |i, j| eig.eigenvectors[(i, order[j])]);
        angles.push(principal_angle(&enc, &top));
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = angles.iter().cloned().fold(0.0, f64::max);
    verdict(
        "linear taildrop principal subspaces",
        worst < 5.0 && secs < 120.0,
        format!(
            "angles per K [{}] deg (max {worst:.2e} < 5), {secs:.1}s (< 120)",
            angles
                .iter()
                .map(|a| format!("{a:.2e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

fn layer_gradient_error(specs: &[LayerSpec], input: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new(specs, &mut rng).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let len: usize = input.iter().product();
    let x = Tensor::from_vec(input, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut tape = Tape::new();
    let y = net.forward_tape(&x, &mut tape).unwrap();
    let w = Tensor::from_vec(
        y.shape(),
        (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let (grads, dx) = net.backward(&tape, &w).unwrap();
    let dot = |a: &Tensor, b: &Tensor| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| p * q)
            .sum::<f64>()
    };

    let mut params: Vec<Tensor> = net.params().into_iter().cloned().collect();
    let probe = net.clone();
    let by_params = check_gradients(&mut params, &grads.0, 1e-6, 1, |ps| {
        let mut n = probe.clone();
        for (dst, src) in n.params_mut().into_iter().zip(ps) {
            *dst = src.clone();
        }
        dot(&n.forward(&x).unwrap(), &w)
    });
    let mut inputs = vec![x.clone()];
    let by_input = check_gradients(&mut inputs, &[dx], 1e-6, 1, |xs| {
        dot(&net.forward(&xs[0]).unwrap(), &w)
    });
    by_params
        .max_relative_error
        .max(by_input.max_relative_error)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let _g = serial();
    let start = Instant::now();
    let clip = Activation::Clip { lo: -0.4, hi: 0.4 };
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        (
            "dense relu",
            vec![LayerSpec::dense(6, 5, Activation::Relu)],
            vec![3, 6],
        ),
        (
            "dense linear",
            vec![LayerSpec::dense(5, 4, Activation::None)],
            vec![2, 5],
        ),
        ("dense clip", vec![LayerSpec::dense(5, 4, clip)], vec![3, 5]),
        (
            "dense no bias",
            vec![LayerSpec::linear_no_bias(6, 3)],
            vec![4, 6],
        ),
        (
            "conv stride 1",
            vec![LayerSpec::conv(2, 3, 3, 1, Activation::Relu)],
            vec![2, 2, 5, 5],
        ),
        (
            "conv stride 2",
            vec![LayerSpec::conv(3, 2, 3, 2, Activation::None)],
            vec![2, 3, 6, 6],
        ),
        (
            "conv clip",
            vec![LayerSpec::conv(2, 2, 3, 1, clip)],
            vec![1, 2, 4, 4],
        ),
        (
            "upsample conv",
            vec![LayerSpec::upsample_conv(2, 3, 3, Activation::Relu)],
            vec![2, 2, 3, 3],
        ),
        (
            "stack",
            vec![
                LayerSpec::conv(1, 3, 3, 2, Activation::Relu),
                LayerSpec::upsample_conv(3, 2, 3, Activation::None),
                LayerSpec::dense(2 * 6 * 6, 4, Activation::Relu),
            ],
            vec![2, 1, 6, 6],
        ),
    ];
    let mut worst: Vec<(String, f64)> = Vec::new();
    for (i, (name, specs, shape)) in cases.iter().enumerate() {
        worst.push((
            name.to_string(),
            layer_gradient_error(specs, shape, 100 + i as u64),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let arch = ArchitectureConfig {
        encoder_width: 3,
        decoder_widths: [3, 3, 3, 2],
    };
    let mut ae = desk_scale_autoencoder([1, 8, 8], 4, &arch, &mut rng).unwrap();
    for p in ae.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let x = Tensor::from_vec(
        &[2, 1, 8, 8],
        (0..128).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    for keep in [1, 4] {
        let (_, grads) = reconstruction_loss(&ae, &x, keep).unwrap();
        let mut params: Vec<Tensor> = ae.params().into_iter().cloned().collect();
        let probe = ae.clone();
        let report = check_gradients(&mut params, &grads.flat(), 1e-6, 1, |ps| {
            let mut a = probe.clone();
            for (dst, src) in a.params_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            reconstruction_loss(&a, &x, keep).unwrap().0
        });
        worst.push((format!("autoencoder K={keep}"), report.max_relative_error));
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    verdict(
        "gradient integrity",
        max < 1e-4 && secs < 60.0,
        format!(
            "max relative error {max:.2e} (< 1e-4) over {}; {secs:.1}s (< 60)",
            worst
                .iter()
                .map(|(n, e)| format!("{n} {e:.1e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn accuracy_grows_with_received_channels() {
    let _g = serial();
    let s = shared();
    let m = s.taildrop.channels;
    let acc: Vec<f64> = (1..=m).map(|k| accuracy_at(&s.taildrop, k)).collect();
    let worst_drop = acc
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let gain = acc[m - 1] - acc[0];
    verdict(
        "prefix-monotone accuracy",
        worst_drop <= 0.02 + 1e-12 && gain >= 0.10 && s.taildrop_seconds < 300.0,
        format!(
            "top-1 by K {:?}; worst adjacent drop {:.3} (<= 0.02); K=M minus K=1 {gain:.3} (>= 0.10); {:.0}s (< 300)",
            acc.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            worst_drop.max(0.0),
            s.taildrop_seconds
        ),
    );
}

#[test]
fn fixed_rate_model_collapses_when_truncated() {
    let _g = serial();
    let s = shared();
    let m = s.taildrop.channels;
    let half = m.div_ceil(2);
    let (td_half, fx_half) = (accuracy_at(&s.taildrop, half), accuracy_at(&s.fixed, half));
    let (td_full, fx_full) = (accuracy_at(&s.taildrop, m), accuracy_at(&s.fixed, m));
    let pass = fx_half <= td_half - 0.15 && fx_full - td_full <= 0.05;
    verdict(
        "fixed-rate collapse",
        pass,
        format!(
            "K={half}: fixed {fx_half:.3} vs taildrop {td_half:.3} (gap {:.3} >= 0.15); K={m}: fixed {fx_full:.3} vs taildrop {td_full:.3} (fixed ahead by {:.3} <= 0.05)",
            td_half - fx_half,
            fx_full - td_full
        ),
    );
}

#[test]
fn codec_round_trips_exactly() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let plane = 64;
    let tables: Vec<HuffmanTable> = (1..=8u8)
        .map(|c| {
            let freqs: Vec<u64> = (0..64)
                .map(|s| {
                    1 + if s < 16 {
                        rng.gen_range(0..200)
                    } else {
                        rng.gen_range(0..5)
                    }
                })
                .collect();
            HuffmanTable::from_frequencies(c, &freqs).unwrap()
        })
        .collect();
    let codec = Codec::new(tables, 8, 8).unwrap();
    let mut max_err: f64 = 0.0;
    let mut mismatches = 0;
    let mut modes = [0usize; 2];
    for trial in 0..10_000 {
        let index = (trial % 8) as u8 + 1;
        let skew = rng.gen_bool(0.5);
        let values: Vec<f64> = (0..plane)
            .map(|_| {
                if skew {
                    rng.gen_range(0.0..0.25)
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            })
            .collect();
        let q = quantize_channel(index, &values).unwrap();
        let segment = codec.encode_channel(&q).unwrap();
        modes[(segment.mode == SegmentMode::Raw6) as usize] += 1;
        let bytes = EncodedImage {
            image_id: trial,
            segments: vec![segment],
        }
        .to_bytes()
        .unwrap();
        let parsed = EncodedImage::from_bytes(&bytes).unwrap();
        let back = codec.decode_channel(&parsed.segments[0]).unwrap();
        if back != q {
            mismatches += 1;
        }
        for (v, d) in values.iter().zip(dequantize_channel(&back)) {
            max_err = max_err.max((v - d).abs());
        }
    }
    let symbols: Vec<u8> = (0..64).map(|_| rng.gen_range(0..64)).collect();
    let (raw, bits) = pack_raw6(&symbols).unwrap();
    let ratio = raw.len() as f64 / symbols.len() as f64;
    let boundary = (quantize_value(0.5 / 63.0).unwrap(), dequantize_value(63));
    verdict(
        "codec round-trip",
        mismatches == 0 && max_err <= 1.0 / 126.0 + 1e-15 && ratio == 0.75 && bits == 384 && boundary == (1, 1.0),
        format!(
            "10000 channels ({} huffman, {} raw6), {mismatches} symbol mismatches, max error {max_err:.6} (<= {:.6}); raw6 {} bytes for 64 symbols = {:.0}% of 8-bit",
            modes[0],
            modes[1],
            1.0 / 126.0,
            raw.len(),
            ratio * 100.0
        ),
    );
}

/// Exhaustive minimum of `sum p_i l_i` over prefix-code length vectors.
fn optimal_expected_length(p: &[f64]) -> f64 {
    fn go(p: &[f64], i: usize, kraft: f64, cost: f64, best: &mut f64) {
        if kraft > 1.0 + 1e-12 {
            return;
        }
        if i == p.len() {
            *best = best.min(cost);
            return;
        }
        for l in 1..=p.len().max(1) {
            go(
                p,
                i + 1,
                kraft + 0.5f64.powi(l as i32),
                cost + p[i] * l as f64,
                best,
            );
        }
    }
    let mut best = f64::INFINITY;
    go(p, 0, 0.0, 0.0, &mut best);
    best
}

#[test]
fn huffman_lengths_are_optimal() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let mut trials = 0;
    for n in 1..=4 {
        for _ in 0..2000 {
            let freqs: Vec<u64> = (0..n).map(|_| rng.gen_range(1..1000)).collect();
            let total: u64 = freqs.iter().sum();
            let p: Vec<f64> = freqs.iter().map(|&f| f as f64 / total as f64).collect();
            let table = HuffmanTable::from_frequencies(1, &freqs).unwrap();
            let got = table.expected_length(&p);
            worst = worst.max((got - optimal_expected_length(&p)).abs());
            trials += 1;
        }
    }
    let example = HuffmanTable::from_frequencies(1, &[2, 1, 1]).unwrap();
    verdict(
        "huffman optimality",
        worst < 1e-12 && example.lengths() == [1, 2, 2],
        format!(
            "{trials} random alphabets of 1-4 symbols, max gap to exhaustive optimum {worst:.1e}; {{0.5, 0.25, 0.25}} -> {:?}",
            example.lengths()
        ),
    );
}

#[test]
fn truncation_keeps_prefix_or_everything() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut cases: Vec<(usize, usize)> = (0..20_000)
        .map(|_| (rng.gen_range(0..3000), rng.gen_range(0..3000)))
        .collect();
    for size in [0usize, 1, 64, 255, 1000] {
        cases.extend([
            (size, size),
            (size, size + 1),
            (size, size.saturating_sub(1)),
            (size, 0),
        ]);
    }
    let (mut whole, mut cut, mut boundary, mut bad) = (0, 0, 0, 0);
    for (size, budget) in cases {
        let z: Vec<u8> = (0..size).map(|i| (i * 31 % 251) as u8).collect();
        let t = truncate(&z, budget);
        let ok = if size <= budget {
            whole += 1;
            boundary += usize::from(size == budget);
            t == &z[..]
        } else {
            cut += 1;
            t.len() == budget && t == &z[..budget]
        };
        bad += usize::from(!ok);
    }
    verdict(
        "truncation semantics",
        bad == 0 && whole > 0 && cut > 0 && boundary >= 5,
        format!("{whole} whole, {cut} cut ({boundary} with size == budget), {bad} violations"),
    );
}

/// Delivered-stream frames attributed to each record in order.
fn audit_stream(stream: &[u8], records: &[TransmissionRecord]) -> Result<(), String> {
    let mut pos = 0;
    for r in records {
        let mut payload = 0;
        while payload < r.payload_bytes {
            let len = *stream.get(pos).ok_or("stream ended inside an image")? as usize;
            if len == 0xFF {
                return Err(format!("stop frame inside image {}", r.sequence));
            }
            payload += len;
            pos += 1 + len;
        }
        if payload != r.payload_bytes {
            return Err(format!(
                "image {} frames carry {payload} bytes, record says {}",
                r.sequence, r.payload_bytes
            ));
        }
        if r.stop_signal {
            let frame = stream
                .get(pos..pos + STOP_FRAME_LEN)
                .ok_or("missing stop frame")?;
            if frame[..5] != STOP_MAGIC || frame[5..] != r.sequence.to_be_bytes() {
                return Err(format!("image {} lacks its stop frame", r.sequence));
            }
            pos += STOP_FRAME_LEN;
        }
    }
    if pos != stream.len() {
        return Err(format!("{} unattributed bytes", stream.len() - pos));
    }
    Ok(())
}

#[test]
fn transmissions_respect_deadlines() {
    let _g = serial();
    let s = shared();
    let grid = &s.pipeline.config.grid;
    let t_f = grid.sim.encode_latency;
    let mut images = 0;
    let mut late = 0;
    let mut preempted = 0;
    let mut over_budget = 0;
    let mut audit_errors = Vec::new();
    for &scenario in &Scenario::STANDARD {
        for &period in &[0.3, 0.5, 0.7] {
            let schedule = ArrivalSchedule::new(period, 500);
            let cfg = ScenarioConfig {
                jam_factors: grid.jam_factors.clone(),
                ..ScenarioConfig::constant(scenario, grid.base_rate, schedule.horizon(t_f) + 1.0)
            };
            let trace = build_scenario_trace(&cfg).unwrap();
            let workload = select_images(&s.taildrop, 500, 1);
            let run = run_simulation(&workload, &trace, &schedule, &grid.sim).unwrap();
            for (i, r) in run.records.iter().enumerate() {
                let next_encode_done = schedule.arrival(i + 1) + t_f;
                images += 1;
                if r.last_byte_time
                    .is_some_and(|t| t > next_encode_done + 1e-9)
                {
                    late += 1;
                }
                if r.payload_bytes as f64 > r.budget_bytes + 1e-6 {
                    over_budget += 1;
                }
                preempted += usize::from(r.stop_signal);
            }
            if let Err(e) = audit_stream(&run.stream, &run.records) {
                audit_errors.push(format!("{scenario} T={period}: {e}"));
            }
        }
    }
    verdict(
        "deadline compliance",
        late == 0 && over_budget == 0 && audit_errors.is_empty() && preempted > 0,
        format!(
            "{images} images over 9 cells: {late} late, {over_budget} over budget; {preempted} preempted, stream audit {}",
            if audit_errors.is_empty() { "clean (one stop frame each)".to_string() } else { audit_errors.join("; ") }
        ),
    );
}

/// Independent integral: overlap of `[a, b]` with every piece.
fn closed_form(points: &[(f64, f64)], end: f64, a: f64, b: f64) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, &(t, r))| {
            let next = points.get(i + 1).map_or(end, |p| p.0);
            r * (b.min(next) - a.max(t)).max(0.0)
        })
        .sum()
}

#[test]
fn bandwidth_integral_is_exact() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst_rel: f64 = 0.0;
    let mut worst_slack: f64 = 0.0;
    let mut telescope_ok = true;
    for _ in 0..1000 {
        let pieces = rng.gen_range(1..20);
        let mut t = rng.gen_range(0.0..5.0);
        let mut points = Vec::new();
        for _ in 0..pieces {
            let rate = if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(1.0..5000.0)
            };
            points.push((t, rate));
            t += rng.gen_range(0.01..3.0);
        }
        let end = t;
        let trace = BandwidthTrace::new(points.clone(), end).unwrap();
        for _ in 0..10 {
            let a = rng.gen_range(points[0].0..end);
            let b = rng.gen_range(a..=end);
            let got = trace.available_bytes(a, b).unwrap();
            let want = closed_form(&points, end, a, b);
            let rel = (got - want).abs() / want.abs().max(1e-300);
            worst_rel = worst_rel.max(if want == 0.0 { got.abs() } else { rel });

            let block = rng.gen_range(1..=254);
            let mut channel = SimChannel::new(trace.clone());
            let mut granted = 0usize;
            while let Some(done) = channel.grant_block(block, a) {
                if done > b {
                    break;
                }
                granted += block;
            }
            let slack = want - granted as f64;
            worst_slack = worst_slack.max(slack / block as f64);
            telescope_ok &= slack >= -1e-6 && slack < block as f64 + 1e-6;
        }
    }
    verdict(
        "integral budget",
        worst_rel <= 1e-9 && telescope_ok,
        format!(
            "1000 traces x 10 intervals: max relative error {worst_rel:.1e} (<= 1e-9); grants within one block of the budget: {telescope_ok} (max shortfall {worst_slack:.3} blocks)"
        ),
    );
}

#[test]
fn grid_trends_follow_bandwidth() {
    let _g = serial();
    let s = shared();
    let mut mean: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    let scenarios = Scenario::STANDARD;
    let periods = &s.pipeline.config.grid.periods;
    for r in &s.grid {
        assert!(r.error.is_empty(), "{}", r.error);
        let si = scenarios.iter().position(|&x| x == r.scenario).unwrap();
        let pi = periods.iter().position(|&x| x == r.period).unwrap();
        let e = mean.entry((si, pi)).or_default();
        e.0 += r.accuracy;
        e.1 += 1;
    }
    let acc = |si: usize, pi: usize| mean[&(si, pi)].0 / mean[&(si, pi)].1 as f64;
    let mut violations = Vec::new();
    for (pi, period) in periods.iter().enumerate() {
        for si in 1..scenarios.len() {
            if acc(si, pi) > acc(si - 1, pi) + 0.02 {
                violations.push(format!(
                    "{} beats {} at T={period}",
                    scenarios[si],
                    scenarios[si - 1]
                ));
            }
        }
    }
    for (si, scenario) in scenarios.iter().enumerate() {
        for pi in 1..periods.len() {
            if acc(si, pi) < acc(si, pi - 1) - 0.02 {
                violations.push(format!(
                    "{scenario} drops from T={} to T={}",
                    periods[pi - 1],
                    periods[pi]
                ));
            }
        }
    }
    let text = fs::read_to_string(s.pipeline.path("vary_timeline.csv")).unwrap();
    let timeline: Vec<TimelineRow> = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    let top = timeline.iter().map(|r| r.rate).fold(0.0, f64::max);
    let median = |high: bool| {
        let mut k: Vec<usize> = timeline
            .iter()
            .filter(|r| (r.rate == top) == high)
            .map(|r| r.channels_used)
            .collect();
        k.sort_unstable();
        if k.len() % 2 == 1 {
            k[k.len() / 2] as f64
        } else {
            (k[k.len() / 2 - 1] + k[k.len() / 2]) as f64 / 2.0
        }
    };
    let (high, low) = (median(true), median(false));
    let table: Vec<String> = (0..scenarios.len())
        .map(|si| {
            format!(
                "{} {}",
                scenarios[si],
                (0..periods.len())
                    .map(|pi| format!("{:.3}", acc(si, pi)))
                    .collect::<Vec<_>>()
                    .join("/")
            )
        })
        .collect();
    verdict(
        "qualitative grid trends",
        violations.is_empty() && high > low,
        format!(
            "mean accuracy over {} seeds at T={:?}: {}; {}; switching run median channels {high} (high) vs {low} (low)",
            s.pipeline.config.grid.seeds.len(),
            periods,
            table.join(", "),
            if violations.is_empty() { "no violations".to_string() } else { violations.join("; ") }
        ),
    );
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_deterministic() {
    let _g = serial();
    let s = shared();
    let second = Pipeline::new(PipelineConfig::default(), scratch("acceptance-run-b")).unwrap();
    second.run_all().unwrap();
    let a = csv_files(&s.pipeline.out);
    let b = csv_files(&second.out);
    let differing: Vec<String> = a
        .iter()
        .filter(|rel| {
            fs::read(s.pipeline.out.join(rel)).ok() != fs::read(second.out.join(rel)).ok()
        })
        .map(|rel| rel.display().to_string())
        .collect();
    let test_ids = second.load_dataset().unwrap().ids(Split::Test);
    let split_clean = s
        .pipeline
        .load_dataset()
        .unwrap()
        .ids(Split::TrainAe)
        .is_disjoint(&test_ids);
    verdict(
        "determinism",
        a == b && differing.is_empty() && a.len() > 10 && split_clean,
        format!(
            "{} CSV files from two independent runs, {} differ{}",
            a.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            }
        ),
    );
}

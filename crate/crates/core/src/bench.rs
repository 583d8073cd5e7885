//! Final-chunk latency, RTFX and concurrency sweeps against a running server.
//!
//! RTFX divides the audio duration by the server's busy time, the sum of the
//! per-session compute spans reported in each final message. Wall clock is
//! not used, so RTFX can grow with concurrency.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoder::features::{FEATURE_RATE_HZ, NUM_BINS};
use crate::encoder::zsf;
use crate::error::{Error, Result};
use crate::mask::LeftContext;
use crate::matrix::Matrix;
use crate::sched::SplitMix64;
use crate::serve::client::{client_stream, CallAudio, ClientOptions};
use crate::serve::protocol::{InputKind, StartMessage};

/// Seconds since the first call in this process, from a monotonic clock.
pub fn now_s() -> f64 {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_secs_f64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub call_id: String,
    pub last_chunk_sent_at: f64,
    pub final_result_at: f64,
}

impl LatencyRecord {
    pub fn latency_s(&self) -> Result<f64> {
        final_chunk_latency(self)
    }
}

pub fn final_chunk_latency(record: &LatencyRecord) -> Result<f64> {
    let d = record.final_result_at - record.last_chunk_sent_at;
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Clock {
            sent_at: record.last_chunk_sent_at,
            final_at: record.final_result_at,
        });
    }
    Ok(d)
}

pub fn rtfx(total_audio_s: f64, total_inference_s: f64) -> Result<f64> {
    if !(total_inference_s > 0.0) || !total_inference_s.is_finite() {
        return Err(Error::Measurement(format!(
            "inference time must be positive, got {total_inference_s}"
        )));
    }
    if !(total_audio_s > 0.0) || !total_audio_s.is_finite() {
        return Err(Error::Measurement(format!(
            "audio duration must be positive, got {total_audio_s}"
        )));
    }
    Ok(total_audio_s / total_inference_s)
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet("percentile of no values"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Measurement(format!(
            "percentile {p} outside (0, 100]"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0 * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "concurrency",
    "rc_frames",
    "chunk_frames",
    "latency_mean_s",
    "latency_p50_s",
    "latency_p95_s",
    "total_audio_s",
    "total_inference_s",
    "rtfx",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub concurrency: usize,
    pub rc_frames: usize,
    pub chunk_frames: usize,
    pub latency_mean_s: f64,
    pub latency_p50_s: f64,
    pub latency_p95_s: f64,
    pub total_audio_s: f64,
    pub total_inference_s: f64,
    pub rtfx: f64,
}

impl BenchReport {
    pub fn from_records(
        concurrency: usize,
        rc_frames: usize,
        chunk_frames: usize,
        records: &[LatencyRecord],
        total_audio_s: f64,
        total_inference_s: f64,
    ) -> Result<Self> {
        let lat = records
            .iter()
            .map(final_chunk_latency)
            .collect::<Result<Vec<_>>>()?;
        if lat.is_empty() {
            return Err(Error::EmptySet("no latency records"));
        }
        Ok(Self {
            concurrency,
            rc_frames,
            chunk_frames,
            latency_mean_s: lat.iter().sum::<f64>() / lat.len() as f64,
            latency_p50_s: percentile(&lat, 50.0)?,
            latency_p95_s: percentile(&lat, 95.0)?,
            total_audio_s,
            total_inference_s,
            rtfx: rtfx(total_audio_s, total_inference_s)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.concurrency,
            self.rc_frames,
            self.chunk_frames,
            self.latency_mean_s,
            self.latency_p50_s,
            self.latency_p95_s,
            self.total_audio_s,
            self.total_inference_s,
            self.rtfx
        )
    }

    /// Header plus one row per report.
    pub fn to_csv(reports: &[BenchReport]) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in reports {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }
}

/// One synthetic call: 100 Hz feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCall {
    pub id: String,
    pub features: Matrix<f32>,
}

impl TestCall {
    pub fn duration_s(&self) -> f64 {
        self.features.rows() as f64 / FEATURE_RATE_HZ
    }
}

/// Deterministic band-limited noise resembling log-mel speech features, with
/// durations uniform within ±20% of the mean.
pub fn synth_calls(seed: u64, n_calls: usize, mean_duration_s: f64) -> Result<Vec<TestCall>> {
    if n_calls == 0 {
        return Err(Error::EmptySet("testset needs at least one call"));
    }
    if !(mean_duration_s > 0.0) {
        return Err(Error::Measurement(format!(
            "mean duration must be positive, got {mean_duration_s}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    (0..n_calls)
        .map(|i| {
            let dur = mean_duration_s * rng.uniform(0.8, 1.2);
            let frames = ((dur * FEATURE_RATE_HZ).round() as usize).max(2);
            Ok(TestCall {
                id: format!("call{i:04}"),
                features: band_limited(&mut rng, frames),
            })
        })
        .collect()
}

fn band_limited(rng: &mut SplitMix64, frames: usize) -> Matrix<f32> {
    // AR(1) in time, then a 3-tap smoother across bins
    let mut state = vec![0.0f64; NUM_BINS];
    let mut out = Matrix::zeros(frames, NUM_BINS);
    let mut raw = vec![0.0f64; NUM_BINS];
    for t in 0..frames {
        let level = 2.0 * (t as f64 * 0.013).sin();
        for (s, r) in state.iter_mut().zip(raw.iter_mut()) {
            *s = 0.9 * *s + 0.45 * rng.normal();
            *r = *s;
        }
        for (b, o) in out.row_mut(t).iter_mut().enumerate() {
            let lo = raw[b.saturating_sub(1)];
            let hi = raw[(b + 1).min(NUM_BINS - 1)];
            let tilt = -4.0 - 3.0 * b as f64 / NUM_BINS as f64;
            *o = (tilt + level + 0.25 * lo + 0.5 * raw[b] + 0.25 * hi) as f32;
        }
    }
    out
}

/// Writes [`synth_calls`] as `callNNNN.zsf` files and returns their paths.
pub fn synth_testset(
    seed: u64,
    n_calls: usize,
    mean_duration_s: f64,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    synth_calls(seed, n_calls, mean_duration_s)?
        .into_iter()
        .map(|c| {
            let path = dir.join(format!("{}.zsf", c.id));
            zsf::write(&path, &c.features)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `.zsf` file in `dir`, sorted by name.
pub fn load_testset(dir: impl AsRef<Path>) -> Result<Vec<TestCall>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "zsf"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            Ok(TestCall {
                id: p
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                features: zsf::read(&p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub concurrency: usize,
    pub chunk: usize,
    pub rc: usize,
    pub left: LeftContext,
    pub client: ClientOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallFailure {
    pub call_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub report: BenchReport,
    pub records: Vec<LatencyRecord>,
    pub tokens: Vec<(String, Vec<u32>)>,
    pub failures: Vec<CallFailure>,
}

/// Streams every call through `n` concurrent clients at real-time pacing.
/// Audio and inference totals count completed calls only; failed calls are
/// listed in [`BenchRun::failures`].
pub async fn run_concurrent(
    server: &str,
    testset: &[TestCall],
    cfg: BenchConfig,
) -> Result<BenchRun> {
    if testset.is_empty() {
        return Err(Error::EmptySet("testset is empty"));
    }
    if cfg.concurrency == 0 {
        return Err(Error::Measurement("concurrency must be at least 1".into()));
    }
    let start = StartMessage {
        chunk: cfg.chunk,
        rc: cfg.rc,
        left: cfg.left,
        input: InputKind::Features,
    };
    start.mask_spec()?;
    let queue = Arc::new(Mutex::new(
        testset
            .iter()
            .cloned()
            .collect::<std::collections::VecDeque<_>>(),
    ));
    let mut workers = Vec::new();
    for _ in 0..cfg.concurrency {
        let queue = Arc::clone(&queue);
        let server = server.to_string();
        workers.push(tokio::spawn(async move {
            let mut done = Vec::new();
            loop {
                let next = queue.lock().unwrap().pop_front();
                let Some(call) = next else { break };
                let audio = CallAudio::Features(call.features.clone());
                let res = client_stream(&server, &call.id, &audio, start, cfg.client).await;
                done.push((call, res));
            }
            done
        }));
    }
    let mut records = Vec::new();
    let mut tokens = Vec::new();
    let mut failures = Vec::new();
    let (mut audio_s, mut busy_s) = (0.0, 0.0);
    for w in workers {
        let results = w
            .await
            .map_err(|e| Error::Server(format!("client worker failed: {e}")))?;
        for (call, res) in results {
            match res {
                Ok(out) => {
                    audio_s += call.duration_s();
                    busy_s += out.busy_s;
                    tokens.push((call.id.clone(), out.tokens));
                    records.push(out.record);
                }
                Err(e) => failures.push(CallFailure {
                    call_id: call.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }
    records.sort_by(|a, b| a.call_id.cmp(&b.call_id));
    tokens.sort();
    let report = BenchReport::from_records(
        cfg.concurrency,
        cfg.rc,
        cfg.chunk,
        &records,
        audio_s,
        busy_s,
    )?;
    Ok(BenchRun {
        report,
        records,
        tokens,
        failures,
    })
}

/// Default per-call timeout of the benchmark client.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

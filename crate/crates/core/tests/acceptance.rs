//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always show; exits non-zero on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

use common::{encoder, features, max_abs_diff, stream, Partition};
use zipstream::bench::{run_concurrent, synth_calls, BenchConfig, BenchReport, REPORT_COLUMNS};
use zipstream::encoder::{attention_backward, masked_attention, AttentionParams, HiddenSequence};
use zipstream::mask::build_mask;
use zipstream::sched::{prng_next, sample_schedule, SplitMix64};
use zipstream::serve::{
    client_stream, spawn_server, CallAudio, ClientOptions, Inbound, ServerConfig,
    ServerMessage, Session, SessionLimits, StartMessage, StubDecoder,
};
use zipstream::stream::{added_latency_ms, emission_deadline, PairPooler};
use zipstream::{LeftContext, MaskSpec, Matrix};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lefts(frames: &[usize]) -> Vec<LeftContext> {
    frames
        .iter()
        .map(|&n| LeftContext::Frames(n))
        .chain([LeftContext::Full])
        .collect()
}

/// Visibility painted chunk by chunk from the definition of the windows.
fn painted_mask(len: usize, chunk: usize, left: LeftContext, rc: usize) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; len]; len];
    let mut c0 = 0;
    while c0 < len {
        let lo = match left {
            LeftContext::Full => 0,
            LeftContext::Frames(n) => c0.saturating_sub(n),
        };
        let hi = (c0 + chunk + rc).min(len);
        for row in m.iter_mut().skip(c0).take(chunk) {
            for cell in &mut row[lo..hi] {
                *cell = true;
            }
        }
        c0 += chunk;
    }
    m
}

fn c1_mask_oracle() -> Check {
    let began = Instant::now();
    let mut cases = 0;
    for len in 0..=64 {
        for chunk in [1, 2, 3, 8, 16, 32] {
            for left in lefts(&[0, 2, 64, 128]) {
                for rc in [0, 1, 5, 32, 64] {
                    let spec = MaskSpec::new(chunk, left, rc).unwrap();
                    let m = build_mask(len, len, &spec);
                    let want = painted_mask(len, chunk, left, rc);
                    for (t, row) in want.iter().enumerate() {
                        for (s, &w) in row.iter().enumerate() {
                            ensure(m.get(t, s) == w, || format!("{spec} L={len} cell ({t},{s})"))?;
                        }
                    }
                    cases += 1;
                }
            }
        }
    }
    let secs = began.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{cases} (length, spec) cases cell-exact in {secs:.2}s"))
}

fn c2_rc_monotone() -> Check {
    let rcs = [0, 32, 64, 128, 256];
    let mut pairs = 0;
    for len in [1, 17, 64, 200, 300] {
        for chunk in [1, 3, 16, 32, 64] {
            for left in lefts(&[0, 64, 128]) {
                let masks: Vec<_> = rcs
                    .iter()
                    .map(|&rc| build_mask(len, len, &MaskSpec::new(chunk, left, rc).unwrap()))
                    .collect();
                for a in 0..rcs.len() {
                    for b in a..rcs.len() {
                        ensure(masks[a].is_subset_of(&masks[b]), || {
                            format!("L={len} chunk={chunk} left={left}: rc {} not within rc {}", rcs[a], rcs[b])
                        })?;
                        pairs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{pairs} ordered rc pairs elementwise monotone"))
}

fn c3_streaming_equals_offline() -> Check {
    let began = Instant::now();
    let enc = encoder();
    let mut rng = SplitMix64::new(3);
    let utterances: Vec<_> = (0..50)
        .map(|i: usize| {
            let n = if i == 0 { 257 } else { 17 + (rng.next_u64() % 241) as usize };
            features(n, &mut rng)
        })
        .collect();
    let mut specs = Vec::new();
    for chunk in [16, 32, 64] {
        for rc in [0, 32, 64] {
            for left in [64, 128] {
                specs.push(MaskSpec::new(chunk, LeftContext::Frames(left), rc).unwrap());
            }
        }
    }
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let worst = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let (enc, utterances, specs) = (&enc, &utterances, &specs);
                scope.spawn(move || {
                    let mut worst = (0.0f32, 0.0f32);
                    for job in (w..utterances.len() * specs.len()).step_by(threads) {
                        let (f, spec) = (&utterances[job / specs.len()], specs[job % specs.len()]);
                        let part = match job % 4 {
                            0 => Partition::FrameByFrame,
                            1 => Partition::HalfSecond,
                            2 => Partition::Whole,
                            _ => Partition::Random(job as u64),
                        };
                        let s = stream(enc, spec, f, part);
                        let base = enc.forward_base(f, &spec).unwrap();
                        worst.0 = worst.0.max(max_abs_diff(&s.concat(), base.frames().as_slice()));
                        let mut pool = PairPooler::new();
                        let mut pooled = Vec::new();
                        for (_, e) in &s.emissions {
                            pooled.extend_from_slice(pool.push(e).frames().as_slice());
                        }
                        pooled.extend_from_slice(pool.push(&s.final_emission).frames().as_slice());
                        let out = enc.encoder_forward(f, &spec).unwrap();
                        worst.1 = worst.1.max(max_abs_diff(&pooled, out.frames().as_slice()));
                    }
                    worst
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .fold((0.0f32, 0.0f32), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    });
    let secs = began.elapsed().as_secs_f64();
    ensure(worst.0 <= 1e-4 && worst.1 <= 1e-4, || format!("max abs diff {worst:?}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} runs, max |diff| {:.1e} at 50 Hz and {:.1e} at 25 Hz, {secs:.1}s",
        utterances.len() * specs.len(),
        worst.0,
        worst.1
    ))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn loss(y: &Matrix<f64>, p: &AttentionParams<f64>, mask: &zipstream::AttentionMask, g: &Matrix<f64>) -> f64 {
    let out = masked_attention(y, p, mask).unwrap().output;
    out.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-300)
}

fn c4_gradient_check() -> Check {
    const EPS: f64 = 1e-4;
    let mut rng = SplitMix64::new(4);
    let mut worst = 0.0f64;
    let mut zero_cells = 0;
    let instances = 24;
    for i in 0..instances {
        let (len, dim, heads, hd) = (6, 8, 2, 4);
        let p = AttentionParams::<f64>::seeded(dim, heads, hd, &mut rng);
        let mut p = p;
        for m in p.matrices_mut() {
            for v in m.as_mut_slice() {
                *v *= 5.0;
            }
        }
        let y = random_matrix(len, dim, &mut rng);
        let g = random_matrix(len, dim, &mut rng);
        let left = [LeftContext::Frames(0), LeftContext::Frames(1), LeftContext::Full][i % 3];
        let spec = MaskSpec::new(1 + i % 3, left, i % 2).unwrap();
        let mask = build_mask(len, len, &spec);
        let fwd = masked_attention(&y, &p, &mask).unwrap();
        let grads = attention_backward(&g, &fwd, &p).unwrap();

        let mut numeric = Vec::new();
        for k in 0..y.as_slice().len() {
            let (mut a, mut b) = (y.clone(), y.clone());
            a.as_mut_slice()[k] += EPS;
            b.as_mut_slice()[k] -= EPS;
            numeric.push((loss(&a, &p, &mask, &g) - loss(&b, &p, &mask, &g)) / (2.0 * EPS));
        }
        worst = worst.max(rel_err(grads.input.as_slice(), &numeric));
        let analytic = grads.params.matrices();
        for (which, an) in analytic.iter().enumerate() {
            let mut numeric = Vec::new();
            for k in 0..an.as_slice().len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a.matrices_mut()[which].as_mut_slice()[k] += EPS;
                b.matrices_mut()[which].as_mut_slice()[k] -= EPS;
                numeric.push((loss(&y, &a, &mask, &g) - loss(&y, &b, &mask, &g)) / (2.0 * EPS));
            }
            worst = worst.max(rel_err(an.as_slice(), &numeric));
        }

        for (h, s) in grads.scores.iter().enumerate() {
            for t in 0..len {
                for k in 0..len {
                    if !mask.get(t, k) {
                        ensure(s[(t, k)] == 0.0, || format!("instance {i} head {h}: masked score ({t},{k}) has gradient"))?;
                        zero_cells += 1;
                    }
                }
            }
        }
        // upstream on one row only: input frames hidden from it get exactly zero
        let t = i % len;
        let mut g1 = Matrix::zeros(len, dim);
        g1.row_mut(t).copy_from_slice(g.row(t));
        let gr = attention_backward(&g1, &fwd, &p).unwrap();
        for s in (0..len).filter(|&s| s != t && !mask.get(t, s)) {
            ensure(gr.input.row(s).iter().all(|&v| v == 0.0), || format!("instance {i}: frame {s} hidden from {t} has gradient"))?;
        }
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:.2e}"))?;
    Ok(format!("{instances} instances, worst rel. err {worst:.2e}, {zero_cells} masked score cells exactly zero"))
}

fn c5_latency_law() -> Check {
    let enc = encoder();
    let mut specs = Vec::new();
    for chunk in [1, 2, 3, 8, 16, 32] {
        for rc in [0, 1, 5, 32, 64] {
            for left in [LeftContext::Frames(2), LeftContext::Full] {
                specs.push(MaskSpec::new(chunk, left, rc).unwrap());
            }
        }
    }
    let mut rng = SplitMix64::new(5);
    let input = features(128, &mut rng);
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let checked = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let (enc, specs, input) = (&enc, &specs, &input);
                scope.spawn(move || -> std::result::Result<usize, String> {
                    let mut checked = 0;
                    for spec in specs.iter().skip(w).step_by(threads) {
                        for len in 1..=128 {
                            let f = common::slice(input, 0, 2 * len);
                            let s = stream(enc, *spec, &f, Partition::FrameByFrame);
                            for (received, e) in &s.emissions {
                                let want: Vec<usize> = (0..len).filter(|&t| emission_deadline(t, spec) == *received).collect();
                                ensure(e.frames().eq(want.iter().copied()), || {
                                    format!("{spec} T'={len}: push to {received} emitted {:?}, expected {want:?}", e.frames())
                                })?;
                            }
                            let want: Vec<usize> = (0..len).filter(|&t| emission_deadline(t, spec) > len).collect();
                            ensure(s.final_emission.frames().eq(want.iter().copied()), || format!("{spec} T'={len}: finalize"))?;
                            checked += len;
                        }
                    }
                    Ok(checked)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum::<std::result::Result<usize, String>>()
    })?;
    let s64 = MaskSpec::new(32, LeftContext::Frames(128), 64).unwrap();
    let s128 = MaskSpec::new(32, LeftContext::Frames(128), 128).unwrap();
    ensure(added_latency_ms(31, &s64) == 1280, || "rc 64 lookahead".into())?;
    ensure(added_latency_ms(31, &s128) == 2560, || "rc 128 lookahead".into())?;
    for t in [63, 95] {
        ensure(added_latency_ms(t, &s64) == 1280 && added_latency_ms(t, &s128) == 2560, || format!("chunk-final frame {t}"))?;
    }
    Ok(format!("{checked} frame emissions over {} specs x T' 1..=128; chunk-final lookahead 1.28 s (rc 64) and 2.56 s (rc 128)", specs.len()))
}

fn c6_schedule() -> Check {
    let (mut s, mut out) = (0u64, Vec::new());
    for _ in 0..2 {
        let (v, next) = prng_next(s);
        out.push(v);
        s = next;
    }
    ensure(out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4], || format!("splitmix64 seed 0 gave {out:x?}"))?;
    let goldens: [(u64, [(usize, usize); 16]); 2] = [
        (1, [(64, 256), (16, 256), (16, 0), (16, 64), (16, 128), (16, 128), (64, 128), (32, 256), (16, 64), (64, 0), (32, 0), (16, 0), (16, 256), (32, 256), (32, 128), (32, 128)]),
        (2, [(32, 128), (16, 0), (32, 256), (64, 256), (16, 0), (64, 256), (64, 128), (32, 64), (64, 0), (64, 64), (64, 64), (16, 128), (32, 128), (32, 0), (16, 128), (16, 64)]),
    ];
    for (seed, golden) in goldens {
        let s = sample_schedule(seed, 16, &[0, 64, 128, 256], &[16, 32, 64]).unwrap();
        let got: Vec<_> = s.entries.iter().map(|e| (e.chunk, e.rc)).collect();
        ensure(got == golden, || format!("seed {seed} schedule {got:?}"))?;
    }

    let n = 10_000;
    let sched = sample_schedule(12345, n, &[0, 64, 128, 256], &[16, 32, 64]).unwrap();
    let mut freq = String::new();
    let mut chi2 = 0.0;
    for rc in [0, 64, 128, 256] {
        let count = sched.entries.iter().filter(|e| e.rc == rc).count();
        let f = count as f64 / n as f64;
        ensure((f - 0.25).abs() <= 0.03, || format!("rc {rc} frequency {f}"))?;
        chi2 += (count as f64 - n as f64 / 4.0).powi(2) / (n as f64 / 4.0);
        freq.push_str(&format!(" {rc}:{f:.4}"));
    }
    for chunk in [16, 32, 64] {
        let f = sched.entries.iter().filter(|e| e.chunk == chunk).count() as f64 / n as f64;
        ensure((f - 1.0 / 3.0).abs() <= 0.03, || format!("chunk {chunk} frequency {f}"))?;
    }
    // chi-square, 3 degrees of freedom, p = 0.001
    ensure(chi2 < 16.266, || format!("chi-square {chi2:.2}"))?;
    Ok(format!("golden vectors exact; rc frequencies{freq}; chi-square {chi2:.2}"))
}

fn c7_loopback_bench(rt: &tokio::runtime::Runtime) -> Check {
    let began = Instant::now();
    let calls = synth_calls(7, 10, 3.0).map_err(|e| e.to_string())?;
    let run = rt.block_on(async {
        let server = spawn_server("127.0.0.1:0", encoder(), ServerConfig::default()).await?;
        let cfg = BenchConfig {
            concurrency: 10,
            chunk: 32,
            rc: 64,
            left: LeftContext::Frames(128),
            client: ClientOptions::default(),
        };
        let run = run_concurrent(&server.addr().to_string(), &calls, cfg).await;
        server.shutdown();
        run
    });
    let run = run.map_err(|e| e.to_string())?;
    ensure(run.failures.is_empty(), || format!("failed calls {:?}", run.failures))?;
    ensure(run.records.len() == 10, || format!("{} records", run.records.len()))?;
    let r = &run.report;
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).map_err(|e| e.to_string())?;
    let keys: BTreeSet<&str> = json.as_object().ok_or("report is not an object")?.keys().map(String::as_str).collect();
    ensure(keys == REPORT_COLUMNS.iter().copied().collect(), || format!("report keys {keys:?}"))?;
    let back: BenchReport = serde_json::from_value(json).map_err(|e| e.to_string())?;
    ensure(&back == r, || "report does not round-trip".into())?;
    ensure(BenchReport::to_csv(std::slice::from_ref(r)).starts_with(&REPORT_COLUMNS.join(",")), || "csv header".into())?;
    ensure(r.concurrency == 10 && r.rc_frames == 64 && r.chunk_frames == 32, || "report settings".into())?;
    let audio: f64 = calls.iter().map(|c| c.duration_s()).sum();
    ensure((r.total_audio_s - audio).abs() <= 1e-9, || format!("audio {} vs testset {audio}", r.total_audio_s))?;
    ensure(r.rtfx > 0.0 && (r.rtfx - r.total_audio_s / r.total_inference_s).abs() <= 1e-9, || "rtfx quotient".into())?;
    let lat: Vec<f64> = run.records.iter().map(|x| x.latency_s().unwrap()).collect();
    let max = lat.iter().copied().fold(0.0, f64::max);
    ensure(max < 2.0, || format!("latency {max:.3}s"))?;
    let secs = began.elapsed().as_secs_f64();
    ensure(secs < 180.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "10 records, schema valid, rtfx {:.1}, latency mean {:.3}s max {max:.3}s, {secs:.1}s",
        r.rtfx, r.latency_mean_s
    ))
}

fn c8_token_agreement() -> Check {
    let enc = encoder();
    let dec = StubDecoder::new(enc.output_dim(), enc.config().seed);
    let mut rng = SplitMix64::new(8);
    let (mut agree, mut total, mut same_transcripts) = (0usize, 0usize, 0);
    for i in 0..100 {
        let n = 40 + (rng.next_u64() % 161) as usize;
        let f = features(n, &mut rng);
        let spec = MaskSpec::new([16, 32, 64][i % 3], LeftContext::Frames(128), [0, 32, 64][(i / 3) % 3]).unwrap();
        let s = stream(&enc, spec, &f, Partition::HalfSecond);
        let base = s.concat();
        let streamed = HiddenSequence::new(Matrix::from_vec(base.len() / enc.output_dim(), enc.output_dim(), base).unwrap(), 50.0).pool_pairs();
        let offline = enc.encoder_forward(&f, &spec).unwrap();
        let (a, b) = (dec.frame_tokens(&streamed), dec.frame_tokens(&offline));
        ensure(a.len() == b.len(), || format!("utterance {i}: {} vs {} frames", a.len(), b.len()))?;
        agree += a.iter().zip(&b).filter(|(x, y)| x == y).count();
        total += a.len();
        same_transcripts += usize::from(dec.decode(&streamed) == dec.decode(&offline));
    }
    let rate = agree as f64 / total as f64;
    ensure(rate >= 0.999, || format!("agreement {rate:.5}"))?;
    Ok(format!("{agree}/{total} frames agree ({:.3}%), {same_transcripts}/100 transcripts identical", 100.0 * rate))
}

fn session_audio(i: usize, rng: &mut SplitMix64) -> (StartMessage, CallAudio) {
    let spec = MaskSpec::new([16, 32, 64][i % 3], [LeftContext::Frames(64), LeftContext::Full][i % 2], [0, 32, 64][i % 3]).unwrap();
    let audio = if i % 2 == 0 {
        CallAudio::Features(features(60 + 20 * i, rng).into_frames())
    } else {
        CallAudio::Pcm((0..16_000 * (1 + i % 3)).map(|_| (rng.uniform(-0.3, 0.3) * 32767.0) as i16).collect())
    };
    (StartMessage::new(&spec, audio.kind()), audio)
}

fn drive(session: &mut Session, msg: Inbound<'_>, log: &mut Vec<ServerMessage>) {
    for m in session.handle(msg).messages {
        log.push(match m {
            ServerMessage::Partial { tokens, .. } => ServerMessage::Partial { tokens, busy_s: 0.0 },
            ServerMessage::Final { tokens, .. } => ServerMessage::Final { tokens, busy_s: 0.0 },
            other => other,
        });
    }
}

fn fuzz_opening(rng: &mut SplitMix64) -> Message {
    let valid = r#"{"type":"start","chunk":32,"rc":64,"left":128,"input":"pcm"}"#;
    match rng.next_u64() % 6 {
        0 => Message::binary((0..rng.next_u64() % 64).map(|_| rng.next_u64() as u8).collect::<Vec<_>>()),
        1 => Message::text(String::from_utf8_lossy(&(0..rng.next_u64() % 64).map(|_| rng.next_u64() as u8).collect::<Vec<_>>()).into_owned()),
        2 | 3 => {
            let mut b = valid.as_bytes().to_vec();
            for _ in 0..1 + rng.next_u64() % 4 {
                let at = (rng.next_u64() as usize) % b.len();
                match rng.next_u64() % 3 {
                    0 => b[at] = rng.next_u64() as u8,
                    1 => b.insert(at, rng.next_u64() as u8),
                    _ => {
                        b.remove(at);
                    }
                }
            }
            Message::text(String::from_utf8_lossy(&b).into_owned())
        }
        4 => {
            let num = |rng: &mut SplitMix64| match rng.next_u64() % 5 {
                0 => "0".to_string(),
                1 => "-1".to_string(),
                2 => (rng.next_u64() % 2048).to_string(),
                3 => "1e308".to_string(),
                _ => "\"full\"".to_string(),
            };
            let input = ["\"pcm\"", "\"features\"", "\"wav\"", "3"][(rng.next_u64() % 4) as usize];
            Message::text(format!(
                r#"{{"type":"start","chunk":{},"rc":{},"left":{},"input":{input}}}"#,
                num(rng),
                num(rng),
                num(rng)
            ))
        }
        _ => Message::text([r#"{"type":"end"}"#, r#"{"type":"partial"}"#, "null", "[]", r#"{"type":"start"}"#][(rng.next_u64() % 5) as usize]),
    }
}

fn c9_isolation_and_fuzz(rt: &tokio::runtime::Runtime) -> Check {
    let enc = encoder();
    let k = 8;
    let mut rng = SplitMix64::new(9);
    let audio: Vec<_> = (0..k).map(|i| session_audio(i, &mut rng)).collect();
    let scripts: Vec<_> = audio.iter().map(|(s, a)| (*s, a.messages())).collect();

    // transport-free: one session at a time, then all interleaved
    let solo: Vec<Vec<ServerMessage>> = scripts
        .iter()
        .enumerate()
        .map(|(i, (start, msgs))| {
            let mut s = Session::new(i as u64, Arc::clone(&enc), SessionLimits::default());
            let mut log = Vec::new();
            drive(&mut s, Inbound::Text(&zipstream::serve::ClientMessage::Start(*start).to_json()), &mut log);
            for m in msgs {
                drive(&mut s, Inbound::Binary(m), &mut log);
            }
            drive(&mut s, Inbound::Text(r#"{"type":"end"}"#), &mut log);
            log
        })
        .collect();
    let mut sessions: Vec<_> = (0..k).map(|i| Session::new(i as u64, Arc::clone(&enc), SessionLimits::default())).collect();
    let mut logs = vec![Vec::new(); k];
    for (i, (start, _)) in scripts.iter().enumerate() {
        drive(&mut sessions[i], Inbound::Text(&zipstream::serve::ClientMessage::Start(*start).to_json()), &mut logs[i]);
    }
    let longest = scripts.iter().map(|s| s.1.len()).max().unwrap();
    for step in 0..longest {
        for i in (0..k).rev() {
            if let Some(m) = scripts[i].1.get(step) {
                drive(&mut sessions[i], Inbound::Binary(m), &mut logs[i]);
            }
        }
    }
    for (i, s) in sessions.iter_mut().enumerate() {
        drive(s, Inbound::Text(r#"{"type":"end"}"#), &mut logs[i]);
    }
    ensure(logs == solo, || "interleaved sessions differ from solo runs".into())?;

    rt.block_on(async {
        let server = spawn_server("127.0.0.1:0", Arc::clone(&enc), ServerConfig::default()).await.map_err(|e| e.to_string())?;
        let addr = server.addr().to_string();
        let opts = ClientOptions { pacing: Duration::from_millis(5), timeout: Duration::from_secs(30) };
        let mut alone = Vec::new();
        for (i, (start, a)) in audio.iter().enumerate() {
            let out = client_stream(&addr, &format!("solo{i}"), a, *start, opts).await.map_err(|e| e.to_string())?;
            alone.push((out.partial_tokens, out.tokens));
        }
        let together = futures_util::future::join_all(
            audio.iter().enumerate().map(|(i, (start, a))| {
                let (addr, id) = (addr.clone(), format!("multi{i}"));
                async move { client_stream(&addr, &id, a, *start, opts).await }
            }),
        )
        .await;
        for (i, (res, solo)) in together.into_iter().zip(&alone).enumerate() {
            let out = res.map_err(|e| e.to_string())?;
            ensure((out.partial_tokens, out.tokens) == *solo, || format!("websocket session {i} differs when concurrent"))?;
        }

        // fuzzed openings: each gets a reply or a close, and the server survives
        let began = Instant::now();
        let n = 10_000;
        let workers = 32;
        let results = futures_util::future::join_all((0..workers).map(|w| {
            let addr = addr.clone();
            async move {
                let mut rng = SplitMix64::new(0xF022 + w as u64);
                let mut answered = 0;
                for _ in (w..n).step_by(workers) {
                    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/")).await.map_err(|e| e.to_string())?;
                    let _ = ws.send(fuzz_opening(&mut rng)).await;
                    let _ = ws.send(Message::text(r#"{"type":"end"}"#)).await;
                    let reply = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.map_err(|_| "fuzz session hung".to_string())?;
                    answered += usize::from(matches!(reply, Some(Ok(_))));
                    let _ = ws.close(None).await;
                }
                Ok::<usize, String>(answered)
            }
        }))
        .await;
        let answered: usize = results.into_iter().sum::<std::result::Result<usize, String>>()?;
        let panics = zipstream::serve::server::ServerStats::get(&server.stats().panics);
        ensure(panics == 0, || format!("{panics} session handlers panicked"))?;
        ensure(server.is_running(), || "server stopped".into())?;
        let (start, a) = &audio[0];
        let after = client_stream(&addr, "after-fuzz", a, *start, opts).await.map_err(|e| e.to_string())?;
        ensure(after.tokens == alone[0].1, || "server misbehaves after fuzzing".into())?;
        server.shutdown();
        Ok(format!(
            "{k} interleaved sessions bit-match solo runs (in-process and websocket); {n} fuzzed openings, {answered} answered, 0 crashes, {:.1}s",
            began.elapsed().as_secs_f64()
        ))
    })
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(u8, &str, Box<dyn Fn() -> Check>)> = vec![
        (1, "mask oracle", Box::new(c1_mask_oracle)),
        (2, "rc monotonicity", Box::new(c2_rc_monotone)),
        (3, "streaming equals offline", Box::new(c3_streaming_equals_offline)),
        (4, "attention gradient check", Box::new(c4_gradient_check)),
        (5, "emission deadline law", Box::new(c5_latency_law)),
        (6, "schedule statistics", Box::new(c6_schedule)),
        (7, "loopback serve and bench", Box::new(|| c7_loopback_bench(&rt))),
        (8, "streamed vs offline token agreement", Box::new(c8_token_agreement)),
        (9, "session isolation and fuzzing", Box::new(|| c9_isolation_and_fuzz(&rt))),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        let began = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = began.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

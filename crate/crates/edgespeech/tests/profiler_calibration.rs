//! Profiler calibration against known workloads. Process-wide CPU figures
//! would pick up concurrently running tests, so everything runs in one test.

use std::fs;
use std::thread;
use std::time::{Duration, Instant};

use edgespeech::pipeline::{self, EngineConfig, ModelPaths};
use edgespeech::profiler::{self, parse_csv, ProcessSampler};
use edgespeech::store::{self, LoadStrategy};
use edgespeech_core::features::FeatureConfig;
use edgespeech_core::format::gen_model;
use edgespeech_core::model::ModelDims;
use edgespeech_core::wav;

fn spin(d: Duration) {
    let start = Instant::now();
    let mut x = 0u64;
    while start.elapsed() < d {
        x = std::hint::black_box(x.wrapping_add(1));
    }
}

fn spin_reads_near_full_core() {
    let mut s = ProcessSampler::new().unwrap();
    s.sample().unwrap();
    spin(Duration::from_millis(100));
    let busy = s.sample().unwrap();
    assert!(
        (80.0..=120.0).contains(&busy.cpu_pct),
        "spin: {}",
        busy.cpu_pct
    );

    thread::sleep(Duration::from_millis(100));
    let idle = s.sample().unwrap();
    assert!(idle.cpu_pct < 5.0, "sleep: {}", idle.cpu_pct);
    assert!(idle.rss_bytes > 0);
}

fn idle_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = profiler::run_profiled(100, |_| thread::sleep(Duration::from_secs(1))).unwrap();
    let r = run.report;
    assert!(
        (9..=11).contains(&r.timeline.len()),
        "{} samples",
        r.timeline.len()
    );
    assert!(r.peak_cpu_pct < 10.0, "{}", r.peak_cpu_pct);
    assert!(
        r.sampler_overhead_pct() < 2.0,
        "{}",
        r.sampler_overhead_pct()
    );
    assert!(r.timeline.windows(2).all(|w| w[0].t_ms < w[1].t_ms));
    let peak_cpu = r.timeline.iter().map(|s| s.cpu_pct).fold(0.0, f64::max);
    let peak_rss = r.timeline.iter().map(|s| s.rss_bytes).max().unwrap();
    assert_eq!((r.peak_cpu_pct, r.peak_rss_bytes), (peak_cpu, peak_rss));

    let csv = dir.path().join("t.csv");
    r.emit_csv(&csv).unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), r.timeline.len() + 1);
    assert_eq!(parse_csv(&text).unwrap(), r.timeline);
}

fn busy_workload_shows_in_timeline() {
    let r = profiler::run_profiled(50, |_| spin(Duration::from_millis(400)))
        .unwrap()
        .report;
    assert!(r.peak_cpu_pct > 80.0, "{}", r.peak_cpu_pct);
}

fn transcription_phases() {
    let dir = tempfile::tempdir().unwrap();
    let dims = ModelDims {
        feat_dim: 26,
        n_hidden: 32,
        alphabet_size: 29,
    };
    let model = dir.path().join("m.edsm");
    store::save_model(&gen_model(5, dims), &model).unwrap();
    let audio = dir.path().join("a.wav");
    let samples: Vec<f32> = (0..16_000).map(|i| (i as f32 * 0.02).sin() * 0.3).collect();
    fs::write(&audio, wav::encode_pcm16(&samples, 16_000)).unwrap();
    let cfg = EngineConfig {
        features: FeatureConfig {
            n_context: 0,
            ..FeatureConfig::default()
        },
        ..EngineConfig::default()
    };
    let paths = ModelPaths {
        model: &model,
        alphabet: None,
        trie: None,
    };
    let profiled = profiler::run_profiled(10, |p| {
        pipeline::run_timed(paths, LoadStrategy::Eager, cfg, &audio, p)
    })
    .unwrap();
    let r = profiled.report;
    let run = profiled.result.unwrap();
    assert!(r.load_model_s > 0.0 && r.inference_s > 0.0);
    assert!(r.processing_s >= r.load_model_s.max(r.inference_s));
    assert!((r.audio_duration_s - 1.0).abs() < 0.01);
    assert!(r.rtf() > 0.0);

    let mut phases = profiler::PhaseRecorder::default();
    let plain = pipeline::run_timed(paths, LoadStrategy::Eager, cfg, &audio, &mut phases).unwrap();
    assert_eq!(plain.transcript, run.transcript);

    // A failing workload still yields the timeline gathered so far.
    let failed = profiler::run_profiled(10, |p| {
        thread::sleep(Duration::from_millis(40));
        pipeline::run_timed(
            paths,
            LoadStrategy::Eager,
            cfg,
            &dir.path().join("missing.wav"),
            p,
        )
    })
    .unwrap();
    assert!(failed.result.is_err());
    assert!(!failed.report.timeline.is_empty());
    assert!(failed.report.load_model_s > 0.0);
}

#[test]
fn calibration() {
    spin_reads_near_full_core();
    idle_timeline();
    busy_workload_shows_in_timeline();
    transcription_phases();
}

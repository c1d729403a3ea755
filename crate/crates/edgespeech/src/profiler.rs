//! Process resource sampling: CPU utilisation and resident memory over time,
//! plus the per-phase wall times of a profiled workload.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

pub const DEFAULT_INTERVAL_MS: u64 = 100;
pub const MIN_INTERVAL_MS: u64 = 10;
pub const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, thiserror::Error)]
pub enum ProfilerError {
    #[error("process metrics unavailable on this platform")]
    Unavailable,
    #[error("sampling interval must be at least {MIN_INTERVAL_MS} ms, got {0}")]
    Interval(u64),
    #[error("failed to read process metrics: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Milliseconds since the workload started.
    pub t_ms: f64,
    /// Process CPU time over wall time since the previous sample, ×100.
    /// Exceeds 100 when several cores are busy.
    pub cpu_pct: f64,
    pub rss_bytes: u64,
}

/// Total CPU time consumed by this process, all threads.
pub fn process_cpu_time() -> Result<Duration, ProfilerError> {
    clock(libc::CLOCK_PROCESS_CPUTIME_ID)
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_time() -> Result<Duration, ProfilerError> {
    clock(libc::CLOCK_THREAD_CPUTIME_ID)
}

fn clock(id: libc::clockid_t) -> Result<Duration, ProfilerError> {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid out-pointer for the duration of the call.
    if unsafe { libc::clock_gettime(id, &mut ts) } != 0 {
        return Err(std::io::Error::last_os_error().into());
    }
    Ok(Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32))
}

/// Current resident set size.
#[cfg(target_os = "linux")]
pub fn current_rss_bytes() -> Result<u64, ProfilerError> {
    let statm = std::fs::read_to_string("/proc/self/statm")?;
    let resident: u64 = statm
        .split_whitespace()
        .nth(1)
        .and_then(|f| f.parse().ok())
        .ok_or(ProfilerError::Unavailable)?;
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    Ok(resident * page.max(1) as u64)
}

#[cfg(not(target_os = "linux"))]
pub fn current_rss_bytes() -> Result<u64, ProfilerError> {
    Err(ProfilerError::Unavailable)
}

/// Differential sampler. The reading taken at construction is the baseline
/// for the first sample's CPU figure.
#[derive(Debug)]
pub struct ProcessSampler {
    origin: Instant,
    /// Most recent reading, and the one before it.
    last: (Instant, Duration),
    older: Option<(Instant, Duration)>,
}

impl ProcessSampler {
    pub fn new() -> Result<Self, ProfilerError> {
        Self::with_origin(Instant::now())
    }

    pub fn with_origin(origin: Instant) -> Result<Self, ProfilerError> {
        current_rss_bytes()?;
        Ok(Self {
            origin,
            last: (Instant::now(), process_cpu_time()?),
            older: None,
        })
    }

    /// CPU utilisation since the previous sample.
    pub fn sample(&mut self) -> Result<Sample, ProfilerError> {
        self.sample_over(Duration::ZERO)
    }

    /// Like [`sample`](Self::sample), but when the previous sample is more
    /// recent than `min_window` the CPU figure spans back to the one before
    /// it. A sample taken a few microseconds after another would otherwise
    /// report scheduler noise as utilisation.
    pub fn sample_over(&mut self, min_window: Duration) -> Result<Sample, ProfilerError> {
        let now = Instant::now();
        let cpu = process_cpu_time()?;
        let rss_bytes = current_rss_bytes()?;
        let base = match self.older {
            Some(older) if now.duration_since(self.last.0) < min_window => older,
            _ => self.last,
        };
        let wall = now.duration_since(base.0).as_secs_f64();
        let busy = cpu.saturating_sub(base.1).as_secs_f64();
        let cpu_pct = if wall > 0.0 { 100.0 * busy / wall } else { 0.0 };
        self.older = Some(self.last);
        self.last = (now, cpu);
        Ok(Sample {
            t_ms: now.duration_since(self.origin).as_secs_f64() * 1e3,
            cpu_pct,
            rss_bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub timeline: Vec<Sample>,
    pub load_model_s: f64,
    pub inference_s: f64,
    /// Wall time of the whole workload.
    pub processing_s: f64,
    pub peak_cpu_pct: f64,
    pub peak_rss_bytes: u64,
    /// Resident set size just before the workload started.
    pub baseline_rss_bytes: u64,
    pub audio_duration_s: f64,
    /// CPU time spent by the sampler thread itself.
    pub sampler_cpu_s: f64,
    /// False when the platform offers no process accounting; only wall times
    /// are meaningful then.
    pub metrics_available: bool,
}

impl BenchReport {
    /// `inference_s / audio_duration_s`, or 0 without audio.
    pub fn rtf(&self) -> f64 {
        if self.audio_duration_s > 0.0 {
            self.inference_s / self.audio_duration_s
        } else {
            0.0
        }
    }

    pub fn peak_rss_growth_bytes(&self) -> u64 {
        self.peak_rss_bytes.saturating_sub(self.baseline_rss_bytes)
    }

    /// Sampler CPU as a percentage of workload wall time.
    pub fn sampler_overhead_pct(&self) -> f64 {
        if self.processing_s > 0.0 {
            100.0 * self.sampler_cpu_s / self.processing_s
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ms,cpu_pct,rss_bytes\n");
        for s in &self.timeline {
            let _ = writeln!(out, "{},{},{}", s.t_ms, s.cpu_pct, s.rss_bytes);
        }
        out
    }

    pub fn emit_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Labelled summary, one metric per line, four significant digits.
    pub fn emit_summary(&self) -> String {
        let metric = |v: String| {
            if self.metrics_available {
                v
            } else {
                "unavailable".to_string()
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "CPU Usage ( % ): {}", metric(sig4(self.peak_cpu_pct)));
        let _ = writeln!(
            out,
            "Memory Usage ( MB ): {}",
            metric(sig4(self.peak_rss_bytes as f64 / MIB))
        );
        let _ = writeln!(out, "Processing Time ( s ): {}", sig4(self.processing_s));
        let _ = writeln!(out, "Loading Model ( s ): {}", sig4(self.load_model_s));
        let _ = writeln!(out, "Inference Time ( s ): {}", sig4(self.inference_s));
        let _ = writeln!(out, "RTF: {}", sig4(self.rtf()));
        out
    }
}

/// Formats with four significant digits (`7.000`, `102.0`, `0.003600`).
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.3}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Parses a timeline written by [`BenchReport::to_csv`].
pub fn parse_csv(text: &str) -> Option<Vec<Sample>> {
    let mut lines = text.lines();
    if lines.next()? != "t_ms,cpu_pct,rss_bytes" {
        return None;
    }
    lines
        .map(|l| {
            let mut f = l.split(',');
            let s = Sample {
                t_ms: f.next()?.parse().ok()?,
                cpu_pct: f.next()?.parse().ok()?,
                rss_bytes: f.next()?.parse().ok()?,
            };
            f.next().is_none().then_some(s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LoadModel,
    Inference,
}

/// Handed to the workload so it can report its phase timings.
#[derive(Debug, Default)]
pub struct PhaseRecorder {
    load_model: Duration,
    inference: Duration,
    audio_duration_s: f64,
}

impl PhaseRecorder {
    /// Runs `f`, adding its wall time to `phase`.
    pub fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let spent = start.elapsed();
        match phase {
            Phase::LoadModel => self.load_model += spent,
            Phase::Inference => self.inference += spent,
        }
        out
    }

    /// Accumulated (model loading, inference) wall times.
    pub fn elapsed(&self) -> (Duration, Duration) {
        (self.load_model, self.inference)
    }

    pub fn set_audio_duration(&mut self, seconds: f64) {
        self.audio_duration_s = seconds;
    }
}

/// A workload's result next to the report; the report exists even when the
/// workload failed.
#[derive(Debug)]
pub struct Profiled<T> {
    pub report: BenchReport,
    pub result: T,
}

/// Runs `workload` on the calling thread while a sampler thread records the
/// process every `interval_ms`, plus once more when the workload returns.
pub fn run_profiled<T>(
    interval_ms: u64,
    workload: impl FnOnce(&mut PhaseRecorder) -> T,
) -> Result<Profiled<T>, ProfilerError> {
    if interval_ms < MIN_INTERVAL_MS {
        return Err(ProfilerError::Interval(interval_ms));
    }
    let interval = Duration::from_millis(interval_ms);
    let origin = Instant::now();
    let sampler = ProcessSampler::with_origin(origin);
    let metrics_available = sampler.is_ok();
    let baseline_rss_bytes = current_rss_bytes().unwrap_or(0);

    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let handle = sampler.ok().map(|mut sampler| {
        thread::spawn(move || {
            let mut timeline: Vec<Sample> = Vec::new();
            let mut next = origin + interval;
            loop {
                let wait = next.saturating_duration_since(Instant::now());
                let stopping = !matches!(
                    stop_rx.recv_timeout(wait),
                    Err(mpsc::RecvTimeoutError::Timeout)
                );
                if let Ok(s) = sampler.sample_over(interval / 2) {
                    if timeline.last().is_none_or(|p| s.t_ms > p.t_ms) {
                        timeline.push(s);
                    }
                }
                if stopping {
                    break;
                }
                next += interval;
                // Skip ticks missed while descheduled instead of bursting.
                while next < Instant::now() {
                    next += interval;
                }
            }
            let own_cpu = thread_cpu_time().map(|d| d.as_secs_f64()).unwrap_or(0.0);
            (timeline, own_cpu)
        })
    });

    let mut phases = PhaseRecorder::default();
    let result = workload(&mut phases);
    let processing_s = origin.elapsed().as_secs_f64();
    let _ = stop_tx.send(());
    let (timeline, sampler_cpu_s) = match handle {
        Some(h) => h.join().unwrap_or_default(),
        None => (Vec::new(), 0.0),
    };

    let peak_cpu_pct = timeline.iter().map(|s| s.cpu_pct).fold(0.0, f64::max);
    let peak_rss_bytes = timeline.iter().map(|s| s.rss_bytes).max().unwrap_or(0);
    let report = BenchReport {
        timeline,
        load_model_s: phases.load_model.as_secs_f64(),
        inference_s: phases.inference.as_secs_f64(),
        processing_s,
        peak_cpu_pct,
        peak_rss_bytes,
        baseline_rss_bytes,
        audio_duration_s: phases.audio_duration_s,
        sampler_cpu_s,
        metrics_available,
    };
    Ok(Profiled { report, result })
}

//! The `edgespeech` command line.
//!
//! Exit codes: 0 success, 1 runtime or inference failure, 2 usage or file
//! errors.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use edgespeech_core::decoder::{Alphabet, BeamConfig};
use edgespeech_core::eval::{self, ErrorBreakdown};
use edgespeech_core::features::{self, FeatureConfig, SAMPLE_RATE};
use edgespeech_core::format;
use edgespeech_core::model::{ModelDims, DEFAULT_N_HIDDEN};
use edgespeech_core::nn::{Activation, Matrix};
use edgespeech_core::trie::VocabTrie;

use crate::io;
use crate::parallel::threads_from_env;
use crate::pipeline::{self, DecodeMode, EngineConfig, ModelPaths, PipelineError};
use crate::profiler::{self, sig4, ProfilerError};
use crate::store::{self, LoadStrategy};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "edgespeech", version, about = "Offline CTC speech recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transcribe a WAV file.
    Transcribe(TranscribeArgs),
    /// Transcribe under the resource profiler and print a usage summary.
    Bench(BenchArgs),
    /// Word and character error rates of line-aligned transcript files.
    Wer(WerArgs),
    /// Write a model with deterministic pseudo-random weights.
    GenModel(GenModelArgs),
    /// Print the feature matrix of a WAV file as CSV.
    Features(FeaturesArgs),
    /// Build a vocabulary trie from a word list.
    BuildTrie(BuildTrieArgs),
    /// Check a model file's tensor shapes and values.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SpectralArgs {
    #[arg(long, default_value_t = 25)]
    pub window_ms: u32,
    #[arg(long, default_value_t = 10)]
    pub hop_ms: u32,
    #[arg(long, default_value_t = 512)]
    pub fft_size: usize,
    /// Mel filters; 0 keeps raw power bins.
    #[arg(long, default_value_t = 26)]
    pub n_mel: usize,
}

impl SpectralArgs {
    fn config(&self, n_context: usize) -> FeatureConfig {
        FeatureConfig {
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            fft_size: self.fft_size,
            n_mel: self.n_mel,
            n_context,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One character per line; the built-in English alphabet when omitted.
    #[arg(long)]
    pub alphabet: Option<PathBuf>,
    /// Vocabulary trie used by beam decoding.
    #[arg(long)]
    pub trie: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LoadStrategy::Eager)]
    pub load_strategy: LoadStrategy,
    #[arg(long, value_enum, default_value_t = DecodeMode::Greedy)]
    pub decode: DecodeMode,
    #[arg(long, default_value_t = BeamConfig::default().beam_width)]
    pub beam_width: usize,
    /// Vocabulary weight.
    #[arg(long, default_value_t = BeamConfig::default().lm_weight)]
    pub alpha: f64,
    /// Per-word bonus.
    #[arg(long, default_value_t = BeamConfig::default().word_bonus)]
    pub beta: f64,
    /// Clip hidden activations at this value.
    #[arg(long)]
    pub relu_clip: Option<f32>,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Context frames on each side.
    #[arg(long, default_value_t = 9)]
    pub context: usize,
}

impl EngineArgs {
    fn paths(&self) -> ModelPaths<'_> {
        ModelPaths {
            model: &self.model,
            alphabet: self.alphabet.as_deref(),
            trie: self.trie.as_deref(),
        }
    }

    fn config(&self) -> EngineConfig {
        EngineConfig {
            features: self.spectral.config(self.context),
            activation: self
                .relu_clip
                .map_or(Activation::Relu, Activation::ClippedRelu),
            decode: self.decode,
            beam: BeamConfig {
                beam_width: self.beam_width,
                lm_weight: self.alpha,
                word_bonus: self.beta,
            },
            threads: threads_from_env(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TranscribeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub audio: PathBuf,
    /// Print model loading and inference times to stderr.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long, default_value_t = profiler::DEFAULT_INTERVAL_MS)]
    pub interval_ms: u64,
    /// Write the sampled timeline here as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WerArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    /// Also write the per-line breakdown as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = FeatureConfig::default().feature_dim())]
    pub feat_dim: usize,
    #[arg(long, default_value_t = DEFAULT_N_HIDDEN)]
    pub hidden: usize,
    /// Output classes follow this alphabet; English when omitted.
    #[arg(long)]
    pub alphabet_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub audio: PathBuf,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[arg(long, default_value_t = 0)]
    pub context: usize,
    /// Normalize each column to zero mean and unit variance.
    #[arg(long)]
    pub normalize: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildTrieArgs {
    /// One word per line.
    #[arg(long)]
    pub words: PathBuf,
    #[arg(long)]
    pub alphabet: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = LoadStrategy::Eager)]
    pub load_strategy: LoadStrategy,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = if e.stage.is_input() {
            EXIT_USAGE
        } else {
            EXIT_RUNTIME
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::InputError> for CliError {
    fn from(e: io::InputError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<store::StoreError> for CliError {
    fn from(e: store::StoreError) -> Self {
        Self::usage(e.to_string())
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::runtime(format!("writing output: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Transcribe(a) => transcribe(a, out, err),
        Command::Bench(a) => bench(a, out, err),
        Command::Wer(a) => wer(a, out),
        Command::GenModel(a) => gen_model(a, out),
        Command::Features(a) => features_csv(a, out),
        Command::BuildTrie(a) => build_trie(a, out),
        Command::Validate(a) => validate(a, out),
    }
}

fn transcribe(a: TranscribeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut phases = profiler::PhaseRecorder::default();
    let run = pipeline::run_timed(
        a.engine.paths(),
        a.engine.load_strategy,
        a.engine.config(),
        &a.audio,
        &mut phases,
    )?;
    write_out(out, &format!("{}\n", run.transcript.text))?;
    if a.timings {
        let (load, infer) = phases.elapsed();
        write_out(
            err,
            &format!(
                "Loading Model ( s ): {}\nInference Time ( s ): {}\n",
                sig4(load.as_secs_f64()),
                sig4(infer.as_secs_f64())
            ),
        )?;
    }
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let profiled = profiler::run_profiled(a.interval_ms, |phases| {
        pipeline::run_timed(
            a.engine.paths(),
            a.engine.load_strategy,
            a.engine.config(),
            &a.audio,
            phases,
        )
    })
    .map_err(|e| match e {
        ProfilerError::Interval(_) => CliError::usage(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    })?;
    let report = profiled.report;
    // The timeline is written even when the workload failed.
    if let Some(path) = &a.out {
        write_file(path, &report.to_csv())?;
    }
    let run = profiled.result?;
    write_out(err, &format!("Transcript: {}\n", run.transcript.text))?;
    write_out(out, &report.emit_summary())
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(io::read_text(path)?.lines().map(str::to_string).collect())
}

fn wer(a: WerArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let refs = read_lines(&a.reference)?;
    let hyps = read_lines(&a.hyp)?;
    if refs.len() != hyps.len() {
        return Err(CliError::usage(format!(
            "{} has {} lines but {} has {}",
            a.reference.display(),
            refs.len(),
            a.hyp.display(),
            hyps.len()
        )));
    }
    let mut words = Vec::with_capacity(refs.len());
    let mut chars = Vec::with_capacity(refs.len());
    for (i, (r, h)) in refs.iter().zip(&hyps).enumerate() {
        let line_err = |e: eval::EvalError| CliError::usage(format!("line {}: {e}", i + 1));
        words.push(eval::word_error_rate(r, h).map_err(line_err)?);
        chars.push(eval::char_error_rate(r, h).map_err(line_err)?);
    }
    if words.is_empty() {
        return Err(CliError::usage("no transcript lines"));
    }

    let row = |label: &str, w: &ErrorBreakdown, c: &ErrorBreakdown| {
        format!(
            "{:<8} {:>6} {:>4} {:>4} {:>4} {:>8} {:>8}\n",
            label,
            w.ref_len,
            w.substitutions,
            w.deletions,
            w.insertions,
            sig4(w.rate()),
            sig4(c.rate())
        )
    };
    let mut table = format!(
        "{:<8} {:>6} {:>4} {:>4} {:>4} {:>8} {:>8}\n",
        "line", "words", "S", "D", "I", "WER", "CER"
    );
    let mut csv = String::from("line,ref_words,substitutions,deletions,insertions,wer,cer\n");
    for (i, (w, c)) in words.iter().zip(&chars).enumerate() {
        table.push_str(&row(&(i + 1).to_string(), w, c));
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            i + 1,
            w.ref_len,
            w.substitutions,
            w.deletions,
            w.insertions,
            w.rate(),
            c.rate()
        );
    }
    let total_w: ErrorBreakdown = words.iter().copied().sum();
    let total_c: ErrorBreakdown = chars.iter().copied().sum();
    table.push_str(&row("corpus", &total_w, &total_c));
    let _ = writeln!(
        csv,
        "corpus,{},{},{},{},{},{}",
        total_w.ref_len,
        total_w.substitutions,
        total_w.deletions,
        total_w.insertions,
        total_w.rate(),
        total_c.rate()
    );
    if let Some(path) = &a.csv {
        write_file(path, &csv)?;
    }
    write_out(out, &table)
}

fn alphabet_or_english(path: Option<&Path>) -> Result<Alphabet, CliError> {
    Ok(match path {
        Some(p) => io::load_alphabet(p)?,
        None => Alphabet::english(),
    })
}

fn gen_model(a: GenModelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ab = alphabet_or_english(a.alphabet_file.as_deref())?;
    let dims = ModelDims {
        feat_dim: a.feat_dim,
        n_hidden: a.hidden,
        alphabet_size: ab.size(),
    };
    dims.validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let bytes = store::save_model(&format::gen_model(a.seed, dims), &a.out)?;
    write_out(
        out,
        &format!(
            "wrote {} ({} parameters, {} bytes)\n",
            a.out.display(),
            dims.parameter_count(),
            bytes
        ),
    )
}

fn features_csv(a: FeaturesArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.spectral.config(a.context);
    let audio = io::load_wav(&a.audio)?;
    let feat = (|| {
        cfg.validate()?;
        let audio = features::resample(&audio, SAMPLE_RATE)?;
        let spec = features::spectrogram(&audio, &cfg)?;
        let ctx = features::add_context(&spec, cfg.n_context)?;
        if a.normalize {
            features::normalize(&ctx)
        } else {
            Ok(ctx)
        }
    })()
    .map_err(|e| CliError::runtime(format!("features failed: {e}")))?;
    let csv = matrix_csv(&feat);
    match &a.out {
        Some(path) => write_file(path, &csv),
        None => write_out(out, &csv),
    }
}

/// Header `t,f0,f1,...`, then one row per frame led by its index.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::from("t");
    for j in 0..m.cols() {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for t in 0..m.rows() {
        let _ = write!(s, "{t}");
        for v in m.row(t) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn build_trie(a: BuildTrieArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ab = alphabet_or_english(a.alphabet.as_deref())?;
    let words = io::load_word_list(&a.words)?;
    let trie = VocabTrie::build(&words, &ab)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.words.display())))?;
    let bytes = store::save_trie(&trie, &a.out)?;
    write_out(
        out,
        &format!(
            "wrote {} ({} nodes, {} bytes)\n",
            a.out.display(),
            trie.nodes().len(),
            bytes
        ),
    )
}

fn validate(a: ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = store::load_model(&a.model, a.load_strategy)?;
    let d = model.dims();
    let report = model.validate();
    write_out(
        out,
        &format!(
            "feat_dim {} n_hidden {} alphabet_size {}\n{report}\n",
            d.feat_dim, d.n_hidden, d.alphabet_size
        ),
    )?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::runtime("model failed validation"))
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to `err` prefixed with `error:`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn gen_model_defaults_match_feature_width() {
        let cli = Cli::try_parse_from(["edgespeech", "gen-model", "--out", "x"]).unwrap();
        let Command::GenModel(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.feat_dim, 494);
        assert_eq!(a.seed, 42);
    }

    #[test]
    fn usage_error_exit_code() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(
            main_with(["edgespeech", "transcribe"], &mut o, &mut e),
            EXIT_USAGE
        );
        assert_eq!(main_with(["edgespeech", "--help"], &mut o, &mut e), 0);
    }

    #[test]
    fn matrix_csv_layout() {
        let m = Matrix::new(2, 2, vec![1.0, 2.5, -3.0, 0.0]).unwrap();
        assert_eq!(matrix_csv(&m), "t,f0,f1\n0,1,2.5\n1,-3,0\n");
    }
}

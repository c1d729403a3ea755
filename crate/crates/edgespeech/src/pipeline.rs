//! End-to-end transcription: WAV → 16 kHz → features → acoustic model →
//! CTC decode.

use std::fmt;
use std::path::Path;

use edgespeech_core::decoder::{self, Alphabet, BeamConfig, DecodeError, Transcript, Vocabulary};
use edgespeech_core::features::{self, AudioBuffer, FeatureConfig, FeatureError};
use edgespeech_core::model::{self, CharDistribution, ModelError};
use edgespeech_core::nn::Activation;

use crate::io::{self, InputError};
use crate::parallel::ThreadJoin;
use crate::profiler::{Phase, PhaseRecorder};
use crate::store::{self, LoadStrategy, LoadedModel, LoadedTrie, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    LoadModel,
    LoadAlphabet,
    LoadTrie,
    LoadAudio,
    Configure,
    Features,
    Forward,
    Decode,
}

impl Stage {
    /// Whether a failure at this stage is the caller's input rather than the
    /// engine. Input failures exit with 2, the rest with 1.
    pub fn is_input(self) -> bool {
        matches!(
            self,
            Stage::LoadModel
                | Stage::LoadAlphabet
                | Stage::LoadTrie
                | Stage::LoadAudio
                | Stage::Configure
        )
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::LoadModel => "load model",
            Stage::LoadAlphabet => "load alphabet",
            Stage::LoadTrie => "load trie",
            Stage::LoadAudio => "load audio",
            Stage::Configure => "configure",
            Stage::Features => "features",
            Stage::Forward => "forward",
            Stage::Decode => "decode",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: e.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub features: FeatureConfig,
    pub activation: Activation,
    pub decode: DecodeMode,
    pub beam: BeamConfig,
    pub threads: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            activation: Activation::Relu,
            decode: DecodeMode::Greedy,
            beam: BeamConfig::default(),
            threads: 1,
        }
    }
}

/// Where the engine's inputs live on disk.
#[derive(Debug, Clone, Copy)]
pub struct ModelPaths<'a> {
    pub model: &'a Path,
    /// `None` selects the built-in English alphabet.
    pub alphabet: Option<&'a Path>,
    pub trie: Option<&'a Path>,
}

pub struct Engine {
    model: LoadedModel,
    alphabet: Alphabet,
    trie: Option<LoadedTrie>,
    cfg: EngineConfig,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("dims", self.model.dims())
            .field("alphabet", &self.alphabet.size())
            .field("trie", &self.trie.is_some())
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl Engine {
    pub fn load(
        paths: ModelPaths<'_>,
        strategy: LoadStrategy,
        cfg: EngineConfig,
    ) -> Result<Self, PipelineError> {
        let alphabet = match paths.alphabet {
            Some(p) => io::load_alphabet(p).map_err(at(Stage::LoadAlphabet))?,
            None => Alphabet::english(),
        };
        let model = store::load_model(paths.model, strategy).map_err(at(Stage::LoadModel))?;
        let trie = paths
            .trie
            .map(|p| store::load_trie(p, strategy))
            .transpose()
            .map_err(at(Stage::LoadTrie))?;
        Self::from_parts(model, alphabet, trie, cfg)
    }

    /// Checks that the pieces fit together: feature width against the model
    /// input, alphabet against the model output.
    pub fn from_parts(
        model: LoadedModel,
        alphabet: Alphabet,
        trie: Option<LoadedTrie>,
        cfg: EngineConfig,
    ) -> Result<Self, PipelineError> {
        let mismatch = |msg: String| PipelineError {
            stage: Stage::Configure,
            source: StageError::Mismatch(msg),
        };
        cfg.features.validate().map_err(at(Stage::Configure))?;
        let dims = *model.dims();
        if cfg.features.feature_dim() != dims.feat_dim {
            return Err(mismatch(format!(
                "model expects {} features per frame, feature settings produce {}",
                dims.feat_dim,
                cfg.features.feature_dim()
            )));
        }
        if alphabet.size() != dims.alphabet_size {
            return Err(mismatch(format!(
                "model has {} output classes, alphabet has {} (blank included)",
                dims.alphabet_size,
                alphabet.size()
            )));
        }
        Ok(Self {
            model,
            alphabet,
            trie,
            cfg,
        })
    }

    pub fn model(&self) -> &LoadedModel {
        &self.model
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn distribution(&self, audio: &AudioBuffer) -> Result<CharDistribution, PipelineError> {
        let x = features::extract(audio, &self.cfg.features).map_err(at(Stage::Features))?;
        model::forward_with(
            &self.model,
            &x,
            self.cfg.activation,
            &ThreadJoin::new(self.cfg.threads),
        )
        .map_err(at(Stage::Forward))
    }

    pub fn decode(&self, dist: &CharDistribution) -> Result<Transcript, PipelineError> {
        match self.cfg.decode {
            DecodeMode::Greedy => decoder::greedy_decode(dist, &self.alphabet),
            DecodeMode::Beam => decoder::beam_decode(
                dist,
                &self.alphabet,
                &self.cfg.beam,
                self.trie.as_ref().map(|t| t as &dyn Vocabulary),
            ),
        }
        .map_err(at(Stage::Decode))
    }

    pub fn transcribe(&self, audio: &AudioBuffer) -> Result<Transcript, PipelineError> {
        self.decode(&self.distribution(audio)?)
    }

    pub fn transcribe_file(&self, path: &Path) -> Result<Transcript, PipelineError> {
        let audio = io::load_wav(path).map_err(at(Stage::LoadAudio))?;
        self.transcribe(&audio)
    }
}

/// What one timed transcription produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub transcript: Transcript,
    pub audio_duration_s: f64,
}

/// Loads the engine and transcribes `audio`, reporting model loading and
/// inference into `phases`. Audio decoding is in neither phase.
pub fn run_timed(
    paths: ModelPaths<'_>,
    strategy: LoadStrategy,
    cfg: EngineConfig,
    audio: &Path,
    phases: &mut PhaseRecorder,
) -> Result<Run, PipelineError> {
    let engine = phases.time(Phase::LoadModel, || Engine::load(paths, strategy, cfg))?;
    let buf = io::load_wav(audio).map_err(at(Stage::LoadAudio))?;
    phases.set_audio_duration(buf.duration_s());
    let transcript = phases.time(Phase::Inference, || engine.transcribe(&buf))?;
    Ok(Run {
        transcript,
        audio_duration_s: buf.duration_s(),
    })
}

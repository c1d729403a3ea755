//! Reading the text and audio inputs named on the command line.

use std::fs;
use std::path::{Path, PathBuf};

use edgespeech_core::decoder::{Alphabet, DecodeError};
use edgespeech_core::features::AudioBuffer;
use edgespeech_core::wav::{self, WavError};

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("{}: {source}", path.display())]
    Alphabet {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, InputError> {
    fs::read(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_wav(path: &Path) -> Result<AudioBuffer, InputError> {
    wav::decode(&read_bytes(path)?).map_err(|source| InputError::Wav {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), InputError> {
    let bytes = wav::encode_pcm16(audio.samples(), audio.sample_rate());
    fs::write(path, bytes).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_alphabet(path: &Path) -> Result<Alphabet, InputError> {
    Alphabet::parse(&read_text(path)?).map_err(|source| InputError::Alphabet {
        path: path.to_path_buf(),
        source,
    })
}

/// One word per line; surrounding whitespace trimmed, blank lines skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn load_word_list(path: &Path) -> Result<Vec<String>, InputError> {
    Ok(parse_word_list(&read_text(path)?))
}

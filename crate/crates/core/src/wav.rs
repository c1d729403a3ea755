//! RIFF/WAVE decoding for 16-bit PCM.

use alloc::vec::Vec;

use crate::features::AudioBuffer;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported WAV compression code {0} (only PCM = 1)")]
    UnsupportedCompression(u16),
    #[error("unsupported bit depth {0} (only 16-bit PCM)")]
    UnsupportedBitDepth(u16),
    #[error("unsupported channel count {0} (1 or 2)")]
    UnsupportedChannels(u16),
}

const PCM: u16 = 1;
const EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a 16-bit PCM WAV image, averaging stereo channels into mono.
pub fn decode(bytes: &[u8]) -> Result<AudioBuffer, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing RIFF/WAVE magic"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .ok_or(WavError::MalformedHeader("chunk size overflow"))?;
        match id {
            b"fmt " => {
                if size < 16 || end > bytes.len() {
                    return Err(WavError::MalformedHeader("short fmt chunk"));
                }
                let mut code = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if code == EXTENSIBLE && size >= 40 {
                    // The sub-format GUID starts with the real format code.
                    code = u16_at(bytes, body + 24);
                }
                if code != PCM {
                    return Err(WavError::UnsupportedCompression(code));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedBitDepth(bits));
                }
                if channels != 1 && channels != 2 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                if rate == 0 {
                    return Err(WavError::MalformedHeader("zero sample rate"));
                }
                fmt = Some((channels, rate, bits));
            }
            b"data" => {
                let (channels, rate, _) =
                    fmt.ok_or(WavError::MalformedHeader("data chunk before fmt chunk"))?;
                // Tolerate writers that leave the data size at its placeholder.
                let data = &bytes[body..end.min(bytes.len())];
                let frame = 2 * channels as usize;
                let samples = data
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: i32 = f
                            .chunks_exact(2)
                            .map(|s| i16::from_le_bytes([s[0], s[1]]) as i32)
                            .sum();
                        sum as f32 / channels as f32 / 32768.0
                    })
                    .collect();
                return Ok(AudioBuffer::new(samples, rate));
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(WavError::MalformedHeader(if fmt.is_some() {
        "missing data chunk"
    } else {
        "missing fmt chunk"
    }))
}

/// Encodes mono samples as 16-bit PCM, clamping to the representable range.
pub fn encode_pcm16(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    encode_pcm16_channels(&[samples], sample_rate)
}

/// Encodes interleaved channels (all of equal length) as 16-bit PCM.
pub fn encode_pcm16_channels(channels: &[&[f32]], sample_rate: u32) -> Vec<u8> {
    let n_ch = channels.len() as u16;
    let frames = channels.first().map_or(0, |c| c.len());
    let data_len = frames * channels.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2 * n_ch as u32).to_le_bytes());
    out.extend_from_slice(&(2 * n_ch).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..frames {
        for ch in channels {
            let v = libm::roundf(ch[i].clamp(-1.0, 1.0) * 32768.0).clamp(-32768.0, 32767.0);
            out.extend_from_slice(&(v as i16).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(channels: u16, samples: &[i16]) -> Vec<u8> {
        let mut v = encode_pcm16(&[], 16000);
        v[22..24].copy_from_slice(&channels.to_le_bytes());
        v.truncate(40);
        v.extend_from_slice(&((samples.len() * 2) as u32).to_le_bytes());
        for s in samples {
            v.extend_from_slice(&s.to_le_bytes());
        }
        v
    }

    #[test]
    fn mono_scaling() {
        let buf = decode(&raw(1, &[0, 16384, -32768])).unwrap();
        assert_eq!(buf.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(buf.sample_rate(), 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let buf = decode(&raw(2, &[16384, 0, 16384, 0])).unwrap();
        assert_eq!(buf.samples(), &[0.25, 0.25]);
        let full = encode_pcm16_channels(&[&[0.99, 0.99], &[0.0, 0.0]], 8000);
        let buf = decode(&full).unwrap();
        assert!((buf.samples()[0] - 0.495).abs() < 1e-4);
        assert_eq!(buf.sample_rate(), 8000);
    }

    #[test]
    fn rifx_is_rejected() {
        let mut v = raw(1, &[1, 2]);
        v[0..4].copy_from_slice(b"RIFX");
        let err = decode(&v).unwrap_err();
        assert!(alloc::format!("{err}").starts_with("malformed WAV header"));
    }

    #[test]
    fn unsupported_depth_and_codec() {
        let mut v = raw(1, &[1, 2]);
        v[34..36].copy_from_slice(&8u16.to_le_bytes());
        assert_eq!(decode(&v), Err(WavError::UnsupportedBitDepth(8)));
        let mut v = raw(1, &[1, 2]);
        v[20..22].copy_from_slice(&3u16.to_le_bytes());
        assert_eq!(decode(&v), Err(WavError::UnsupportedCompression(3)));
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(decode(b"RIFF"), Err(WavError::MalformedHeader(_))));
        let v = raw(1, &[]);
        assert!(matches!(
            decode(&v[..20]),
            Err(WavError::MalformedHeader(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let base = raw(1, &[16384]);
        let mut v = base[..36].to_vec();
        v.extend_from_slice(b"LIST");
        v.extend_from_slice(&3u32.to_le_bytes());
        v.extend_from_slice(&[1, 2, 3, 0]); // odd size, padded
        v.extend_from_slice(&base[36..]);
        assert_eq!(decode(&v).unwrap().samples(), &[0.5]);
    }
}

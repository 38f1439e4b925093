//! WAV ingestion (RIFF, 16-bit PCM, mono) and fixed-length conditioning.
//!
//! The parser is defensive: every length is bounds-checked against the
//! bytes actually present, so malformed files produce [`WavError`] values,
//! never panics or out-of-range reads.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file too short for a RIFF header ({0} bytes)")]
    TooShort(usize),
    #[error("missing RIFF magic")]
    NotRiff,
    #[error("missing WAVE form type")]
    NotWave,
    #[error("chunk header at offset {0} runs past the file")]
    BadChunkHeader(usize),
    #[error("chunk '{id}' declares {declared} bytes but only {available} remain")]
    TruncatedChunk { id: String, declared: usize, available: usize },
    #[error("fmt chunk too small ({0} bytes)")]
    BadFmtChunk(usize),
    #[error("no fmt chunk before the data chunk")]
    MissingFmt,
    #[error("no data chunk")]
    MissingData,
    #[error("unsupported audio format tag {0}, want PCM (1)")]
    UnsupportedFormat(u16),
    #[error("unsupported channel count {0}, want mono")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0}, want 16")]
    UnsupportedBits(u16),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("data chunk holds {0} bytes, not a whole number of 16-bit samples")]
    OddDataSize(usize),
    #[error("waveform is empty")]
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    /// Samples scaled by 1/32768, so they lie in [-1, 32767/32768].
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn u16le(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32le(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse a RIFF/WAVE byte buffer holding 16-bit PCM mono audio.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::TooShort(bytes.len()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::NotRiff);
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }
    // The RIFF size field is ignored in favor of the real buffer length;
    // individual chunk sizes are still honored exactly.
    let mut at = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while at < bytes.len() {
        if at + 8 > bytes.len() {
            return Err(WavError::BadChunkHeader(at));
        }
        let id = &bytes[at..at + 4];
        let size = u32le(bytes, at + 4) as usize;
        let body = at + 8;
        if size > bytes.len() - body {
            return Err(WavError::TruncatedChunk {
                id: String::from_utf8_lossy(id).into_owned(),
                declared: size,
                available: bytes.len() - body,
            });
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::BadFmtChunk(size));
                }
                fmt = Some((
                    u16le(bytes, body),
                    u16le(bytes, body + 2),
                    u32le(bytes, body + 4),
                    u16le(bytes, body + 14),
                ));
            }
            b"data" => {
                let (format, channels, rate, bits) = fmt.ok_or(WavError::MissingFmt)?;
                if format != 1 {
                    return Err(WavError::UnsupportedFormat(format));
                }
                if channels != 1 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedBits(bits));
                }
                if rate == 0 {
                    return Err(WavError::ZeroSampleRate);
                }
                if size % 2 != 0 {
                    return Err(WavError::OddDataSize(size));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|p| i16::from_le_bytes([p[0], p[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(Waveform { samples, sample_rate: rate });
            }
            _ => {} // skip unknown chunks (fact, LIST, ...)
        }
        // chunks are word-aligned: odd sizes carry one pad byte
        at = body + size + (size % 2);
    }
    Err(WavError::MissingData)
}

pub fn read_wav(path: &Path) -> Result<Waveform, WavError> {
    parse_wav(&std::fs::read(path)?)
}

/// Serialize samples as RIFF/WAVE 16-bit PCM mono. Values are clamped to
/// [-1, 1] and scaled by 32768 (the inverse of the read normalization).
pub fn wav_bytes(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), WavError> {
    std::fs::write(path, wav_bytes(samples, sample_rate))?;
    Ok(())
}

/// Condition a waveform to exactly `target` samples: long inputs keep their
/// first `target` samples, short inputs repeat from the start. Either way
/// `out[i] == samples[i % len]`.
pub fn crop_or_tile(samples: &[f64], target: usize) -> Result<Vec<f64>, WavError> {
    if samples.is_empty() {
        return Err(WavError::Empty);
    }
    Ok((0..target).map(|i| samples[i % samples.len()]).collect())
}

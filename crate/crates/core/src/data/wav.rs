//! RIFF/WAVE reading and writing for PCM16 and IEEE float32.
//!
//! Multichannel input is downmixed to mono by averaging channels.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::WavParse {
        offset: offset as u64,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&self, at: usize, n: usize, what: &str) -> Result<&[u8]> {
        self.bytes
            .get(at..at + n)
            .ok_or_else(|| parse_err(self.bytes.len(), format!("truncated while reading {what}")))
    }

    fn u16(&self, at: usize, what: &str) -> Result<u16> {
        let b = self.take(at, 2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, at: usize, what: &str) -> Result<u32> {
        let b = self.take(at, 4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    codec: WavFormat,
    channels: usize,
    sample_rate: u32,
}

fn parse_fmt(r: &Reader, at: usize, size: usize) -> Result<Format> {
    if size < 16 {
        return Err(parse_err(at, format!("fmt chunk of {size} bytes is too short")));
    }
    let mut tag = r.u16(at, "format tag")?;
    let channels = r.u16(at + 2, "channel count")? as usize;
    let sample_rate = r.u32(at + 4, "sample rate")?;
    let bits = r.u16(at + 14, "bits per sample")?;
    if tag == FORMAT_EXTENSIBLE {
        if size < 26 {
            return Err(parse_err(at, "extensible fmt chunk lacks a subformat"));
        }
        tag = r.u16(at + 24, "subformat")?;
    }
    let codec = match (tag, bits) {
        (FORMAT_PCM, 16) => WavFormat::Pcm16,
        (FORMAT_FLOAT, 32) => WavFormat::Float32,
        _ => {
            return Err(Error::UnsupportedCodec(format!(
                "format tag {tag} with {bits} bits per sample"
            )))
        }
    };
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedCodec(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(parse_err(at + 4, "sample rate is zero"));
    }
    Ok(Format {
        codec,
        channels,
        sample_rate,
    })
}

/// Decodes a WAV file held in memory.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let r = Reader { bytes };
    if r.take(0, 4, "RIFF tag")? != b"RIFF" {
        return Err(parse_err(0, "missing RIFF tag"));
    }
    if r.take(8, 4, "WAVE tag")? != b"WAVE" {
        return Err(parse_err(8, "missing WAVE tag"));
    }
    let mut fmt = None;
    let mut at = 12;
    while at < bytes.len() {
        let id = r.take(at, 4, "chunk id")?;
        let size = r.u32(at + 4, "chunk size")? as usize;
        let body = at + 8;
        if id == b"fmt " {
            fmt = Some(parse_fmt(&r, body, size)?);
        } else if id == b"data" {
            let f = fmt.ok_or_else(|| parse_err(at, "data chunk before fmt chunk"))?;
            let avail = bytes.len() - body.min(bytes.len());
            if size > avail {
                return Err(parse_err(
                    bytes.len(),
                    format!("data chunk declares {size} bytes but only {avail} remain"),
                ));
            }
            return decode_samples(&bytes[body..body + size], &f, body);
        }
        at = body + size + (size & 1);
    }
    Err(parse_err(bytes.len(), "no data chunk"))
}

fn decode_samples(data: &[u8], f: &Format, offset: usize) -> Result<Waveform> {
    let width = match f.codec {
        WavFormat::Pcm16 => 2,
        WavFormat::Float32 => 4,
    };
    let frame = width * f.channels;
    if !data.len().is_multiple_of(frame) {
        return Err(parse_err(
            offset + data.len(),
            format!("data length {} is not a multiple of the frame size {frame}", data.len()),
        ));
    }
    let sample = |b: &[u8]| -> f64 {
        match f.codec {
            WavFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
            WavFormat::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        }
    };
    let samples: Vec<f64> = data
        .chunks_exact(frame)
        .map(|fr| {
            let sum: f64 = fr.chunks_exact(width).map(sample).sum();
            sum / f.channels as f64
        })
        .collect();
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(parse_err(offset + i * frame, "non-finite sample"));
    }
    Waveform::new(samples, f.sample_rate)
}

pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_wav(&bytes)
}

/// Encodes a mono waveform.
pub fn encode_wav(w: &Waveform, format: WavFormat) -> Vec<u8> {
    let (tag, width) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 2u32),
        WavFormat::Float32 => (FORMAT_FLOAT, 4u32),
    };
    let data_len = w.len() as u32 * width;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&(width as u16 * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        match format {
            WavFormat::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            WavFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}

/// Writes `w` as float32.
pub fn save_wav(path: &Path, w: &Waveform) -> Result<()> {
    save_wav_as(path, w, WavFormat::Float32)
}

pub fn save_wav_as(path: &Path, w: &Waveform, format: WavFormat) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&encode_wav(w, format))?;
    f.flush()?;
    Ok(())
}

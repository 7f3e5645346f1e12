//! RIFF/WAVE reading and writing, 16-bit PCM mono only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::wave::Waveform;

const SCALE: f64 = 32767.0;

pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let data_len = (wave.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let q = (s.clamp(-1.0, 1.0) * SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

fn wav_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Wav {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| wav_err(at, "unexpected end of file"))
}

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| wav_err(at, "unexpected end of file"))
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(wav_err(bytes.len(), "truncated RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(wav_err(0, "missing `RIFF` tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(wav_err(8, "missing `WAVE` tag"));
    }
    let mut pos = 12;
    let mut format: Option<u32> = None;
    loop {
        if pos + 8 > bytes.len() {
            let missing = if format.is_none() { "fmt " } else { "data" };
            return Err(wav_err(pos, format!("missing `{missing}` chunk")));
        }
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(wav_err(body, "truncated `fmt ` chunk"));
                }
                let tag = read_u16(bytes, body)?;
                let channels = read_u16(bytes, body + 2)?;
                let rate = read_u32(bytes, body + 4)?;
                let bits = read_u16(bytes, body + 14)?;
                if tag != 1 {
                    return Err(wav_err(body, format!("unsupported encoding: format tag {tag} (only PCM)")));
                }
                if channels != 1 {
                    return Err(wav_err(
                        body + 2,
                        format!("unsupported format: {channels} channels (only mono)"),
                    ));
                }
                if bits != 16 {
                    return Err(wav_err(body + 14, format!("unsupported encoding: {bits}-bit (only 16-bit)")));
                }
                format = Some(rate);
            }
            b"data" => {
                let Some(rate) = format else {
                    return Err(wav_err(pos, "`data` chunk before `fmt ` chunk"));
                };
                if body + size > bytes.len() {
                    return Err(wav_err(bytes.len(), format!(
                        "truncated `data` chunk: header says {size} bytes, {} present",
                        bytes.len() - body
                    )));
                }
                if !size.is_multiple_of(2) {
                    return Err(wav_err(body, "odd `data` chunk length for 16-bit samples"));
                }
                let samples: Vec<f64> = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / SCALE)
                    .collect();
                if samples.is_empty() {
                    return Err(wav_err(body, "empty `data` chunk"));
                }
                return Ok(Waveform {
                    samples,
                    sample_rate: rate,
                });
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
}

pub fn wav_write(path: &Path, wave: &Waveform) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_wav(wave)).map_err(|e| Error::io(path, e))
}

pub fn wav_read(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

//! 16-bit PCM mono WAV files.

use std::fs;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::tts::Waveform;
use crate::error::{Error, Result};

pub fn encode_wav(wav: &Waveform) -> Vec<u8> {
    let data_len = (wav.samples.len() * 2) as u32;
    let mut b = Vec::with_capacity(44 + data_len as usize);
    b.extend_from_slice(b"RIFF");
    b.write_u32::<LittleEndian>(36 + data_len).expect("vec write");
    b.extend_from_slice(b"WAVEfmt ");
    b.write_u32::<LittleEndian>(16).expect("vec write");
    b.write_u16::<LittleEndian>(1).expect("vec write"); // PCM
    b.write_u16::<LittleEndian>(1).expect("vec write"); // mono
    b.write_u32::<LittleEndian>(wav.sample_rate).expect("vec write");
    b.write_u32::<LittleEndian>(wav.sample_rate * 2).expect("vec write");
    b.write_u16::<LittleEndian>(2).expect("vec write");
    b.write_u16::<LittleEndian>(16).expect("vec write");
    b.extend_from_slice(b"data");
    b.write_u32::<LittleEndian>(data_len).expect("vec write");
    for &s in &wav.samples {
        b.write_i16::<LittleEndian>((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).expect("vec write");
    }
    b
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |m: &str| Error::Config(format!("wav: {m}"));
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = (&bytes[pos + 4..pos + 8]).read_u32::<LittleEndian>().map_err(|_| bad("truncated chunk"))? as usize;
        let body = bytes.get(pos + 8..pos + 8 + len).ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                let mut r = body;
                let format = r.read_u16::<LittleEndian>().map_err(|_| bad("short fmt"))?;
                let channels = r.read_u16::<LittleEndian>().map_err(|_| bad("short fmt"))?;
                let sr = r.read_u32::<LittleEndian>().map_err(|_| bad("short fmt"))?;
                r = &r[6.min(r.len())..];
                let bits = r.read_u16::<LittleEndian>().map_err(|_| bad("short fmt"))?;
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(bad("only 16-bit PCM mono is supported"));
                }
                rate = Some(sr);
            }
            b"data" => {
                let sr = rate.ok_or_else(|| bad("data before fmt"))?;
                let samples = body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32767.0).collect();
                return Waveform::new(samples, sr);
            }
            _ => {}
        }
        pos += 8 + len + (len & 1);
    }
    Err(bad("no data chunk"))
}

pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_wav(wav)).map_err(|e| Error::io(path, e))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_within_quantisation() {
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 1.0, -1.0], 16000).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(encode_wav(&back), encode_wav(&w));
    }

    #[test]
    fn header_layout() {
        let b = encode_wav(&Waveform::silence(0.001, 16000));
        assert_eq!(&b[..4], b"RIFF");
        assert_eq!(b.len(), 44 + 32);
        assert!(decode_wav(b"junk").is_err());
    }
}

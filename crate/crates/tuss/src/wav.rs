//! WAV reading and writing. Multi-channel input is averaged to mono.

use std::path::Path;

use tuss_core::dsp::AudioBuffer;

use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer<f32>> {
    let path = path.as_ref();
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav)?;
    let spec = reader.spec();
    let interleaved = read_samples(&mut reader, spec).map_err(wav)?;
    Ok(AudioBuffer::new(downmix(&interleaved, spec.channels as usize), spec.sample_rate)?)
}

/// `len` mono samples starting at frame `offset`; frames beyond the end are zero.
pub fn read_wav_window(path: impl AsRef<Path>, offset: usize, len: usize) -> Result<(Vec<f32>, u32)> {
    let path = path.as_ref();
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav)?;
    let spec = reader.spec();
    let mut out = vec![0.0; len];
    let frames = reader.duration() as usize;
    if offset < frames {
        reader.seek(offset as u32).map_err(|e| wav(hound::Error::IoError(e)))?;
        let n = len.min(frames - offset);
        let ch = spec.channels as usize;
        let mut buf = Vec::with_capacity(n * ch);
        match spec.sample_format {
            hound::SampleFormat::Float => {
                for s in reader.samples::<f32>().take(n * ch) {
                    buf.push(s.map_err(wav)?);
                }
            }
            hound::SampleFormat::Int => {
                let scale = int_scale(spec.bits_per_sample);
                for s in reader.samples::<i32>().take(n * ch) {
                    buf.push(s.map_err(wav)? as f32 * scale);
                }
            }
        }
        let mono = downmix(&buf, ch);
        out[..mono.len()].copy_from_slice(&mono);
    }
    Ok((out, spec.sample_rate))
}

fn int_scale(bits: u16) -> f32 {
    1.0 / (1u64 << (bits - 1)) as f32
}

fn read_samples<R: std::io::Read>(reader: &mut hound::WavReader<R>, spec: hound::WavSpec) -> hound::Result<Vec<f32>> {
    match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect(),
        hound::SampleFormat::Int => {
            let scale = int_scale(spec.bits_per_sample);
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect()
        }
    }
}

fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f32>() / channels as f32).collect()
}

/// Writes 32-bit float mono, so samples survive a round trip exactly.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer<f32>) -> Result<()> {
    let path = path.as_ref();
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav)?;
    for s in &audio.samples {
        w.write_sample(*s).map_err(wav)?;
    }
    w.finalize().map_err(wav)
}

/// Sample rate and frame count without decoding.
pub fn probe_wav(path: impl AsRef<Path>) -> Result<(u32, usize)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav { path: path.to_path_buf(), source })?;
    Ok((reader.spec().sample_rate, reader.duration() as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_and_window() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..100).map(|i| (i as f32 * 0.1).sin() * 0.5).collect();
        write_wav(&p, &AudioBuffer::new(samples.clone(), 16_000).unwrap()).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples, samples);
        assert_eq!(back.sample_rate_hz, 16_000);
        assert_eq!(probe_wav(&p).unwrap(), (16_000, 100));
        let (w, rate) = read_wav_window(&p, 90, 20).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(&w[..10], &samples[90..]);
        assert!(w[10..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stereo_int_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.samples, vec![0.25; 4]);
    }
}

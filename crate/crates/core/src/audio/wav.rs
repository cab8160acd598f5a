use std::io::{Cursor, Read};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, AudioError};

/// Reads 16/24/32-bit integer or 32-bit float PCM into a clip scaled to [-1, 1].
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let reader = WavReader::open(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let mut clip = decode(reader)?;
    clip.id = id;
    Ok(clip)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    decode(WavReader::new(Cursor::new(bytes))?)
}

fn decode<R: Read>(reader: WavReader<R>) -> Result<AudioClip, AudioError> {
    let spec = reader.spec();
    let samples: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader.into_samples::<f32>().collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()?
        }
    };
    let clip = AudioClip { id: None, samples, sample_rate: spec.sample_rate, channels: spec.channels };
    clip.validate()?;
    Ok(clip)
}

pub fn write_wav_16bit(clip: &AudioClip) -> Result<Vec<u8>, AudioError> {
    let spec = WavSpec {
        channels: clip.channels,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut buf, spec)?;
        for &s in &clip.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
        }
        writer.finalize()?;
    }
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip() {
        let clip = AudioClip::mono(vec![0.0, 0.5, -0.5, 0.25], 22_050);
        let back = read_wav_bytes(&write_wav_16bit(&clip).unwrap()).unwrap();
        assert_eq!(back.sample_rate, 22_050);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn twenty_four_bit_input() {
        let spec = WavSpec { channels: 2, sample_rate: 48_000, bits_per_sample: 24, sample_format: SampleFormat::Int };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut buf, spec).unwrap();
            for v in [4_194_304i32, -4_194_304, 0, 8_388_607] {
                w.write_sample(v).unwrap();
            }
            w.finalize().unwrap();
        }
        let clip = read_wav_bytes(&buf.into_inner()).unwrap();
        assert_eq!(clip.channels, 2);
        assert_eq!(clip.samples[0], 0.5);
        assert_eq!(clip.samples[1], -0.5);
        assert!((clip.samples[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(read_wav_bytes(b"not a wav file").is_err());
    }
}

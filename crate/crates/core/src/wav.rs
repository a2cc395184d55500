//! Mono 32-bit float WAV files and per-microphone directory layouts.

use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::recording::MultichannelRecording;

pub fn mic_file_name(mic: usize) -> String {
    format!("mic_{mic}.wav")
}

pub fn target_file_name(source: usize, mic: usize) -> String {
    format!("src{source}_mic{mic}.wav")
}

/// Writes `samples` as a mono IEEE-float RIFF file.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: f64) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a mono file, float or integer PCM, as samples in [-1, 1] for integers.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, f64)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidConfig(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    let samples = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
    };
    Ok((samples, f64::from(spec.sample_rate)))
}

/// Writes every channel to `dir/mic_<i>.wav`.
pub fn write_recording(dir: impl AsRef<Path>, rec: &MultichannelRecording) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    rec.channels()
        .iter()
        .enumerate()
        .map(|(i, ch)| {
            let path = dir.join(mic_file_name(i));
            write_wav(&path, ch, rec.sample_rate())?;
            Ok(path)
        })
        .collect()
}

/// Reads `mic_0.wav`, `mic_1.wav`, ... from `dir` until the first gap.
pub fn read_recording(dir: impl AsRef<Path>) -> Result<MultichannelRecording> {
    let dir = dir.as_ref();
    let mut channels = Vec::new();
    let mut rate = None;
    loop {
        let path = dir.join(mic_file_name(channels.len()));
        if !path.exists() {
            break;
        }
        let (samples, fs) = read_wav(&path)?;
        match rate {
            None => rate = Some(fs),
            Some(r) if r != fs => {
                return Err(Error::InvalidConfig(format!(
                    "{} has sample rate {fs}, expected {r}",
                    path.display()
                )))
            }
            _ => {}
        }
        channels.push(samples);
    }
    let Some(rate) = rate else {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {} in {}", mic_file_name(0), dir.display()),
        )));
    };
    MultichannelRecording::new(rate, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.7).collect();
        write_wav(&path, &x, 16_000.0).unwrap();
        let (y, fs) = read_wav(&path).unwrap();
        assert_eq!(fs, 16_000.0);
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RIFF");
    }

    #[test]
    fn recording_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = MultichannelRecording::new(8_000.0, vec![vec![0.5; 64], vec![-0.25; 64], vec![0.0; 64]])
            .unwrap();
        let paths = write_recording(dir.path(), &rec).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths[2].ends_with("mic_2.wav"));
        let back = read_recording(dir.path()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn missing_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_recording(dir.path()), Err(Error::Io(_))));
    }
}

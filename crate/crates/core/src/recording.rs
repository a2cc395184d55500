use crate::error::{Error, Result};

/// `M` synchronized sample streams sharing one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelRecording {
    sample_rate: f64,
    channels: Vec<Vec<f64>>,
}

impl MultichannelRecording {
    pub fn new(sample_rate: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("sample rate {sample_rate}")));
        }
        if let Some(first) = channels.first() {
            let len = first.len();
            if let Some(bad) = channels.iter().find(|c| c.len() != len) {
                return Err(Error::LengthMismatch {
                    expected: len,
                    got: bad.len(),
                });
            }
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let channels = indices
            .iter()
            .map(|&i| {
                self.channels
                    .get(i)
                    .cloned()
                    .ok_or(Error::IndexOutOfRange {
                        index: i,
                        len: self.channels.len(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.sample_rate, channels)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * gain).collect())
                .collect(),
        }
    }
}

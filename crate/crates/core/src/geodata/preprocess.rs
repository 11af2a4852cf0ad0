use std::fmt::Write as _;
use std::path::Path;

use super::{RasterImage, Role};
use crate::error::{Error, Result};

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Stats of the listed channels only, in the given order.
    pub fn select(&self, channels: &[usize]) -> Self {
        Self {
            mean: channels.iter().map(|&c| self.mean[c]).collect(),
            std: channels.iter().map(|&c| self.std[c]).collect(),
        }
    }

    pub fn concat(&self, other: &ChannelStats) -> Self {
        Self {
            mean: self.mean.iter().chain(&other.mean).copied().collect(),
            std: self.std.iter().chain(&other.std).copied().collect(),
        }
    }
}

/// Running per-channel sums over many rasters.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: u64,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, img: &RasterImage) -> Result<()> {
        if self.count == 0 && self.sum.is_empty() {
            self.sum = vec![0.0; img.channels];
            self.sum_sq = vec![0.0; img.channels];
        }
        if img.channels != self.sum.len() {
            return Err(Error::DimensionMismatch {
                op: "channel statistics",
                axis: 0,
                left: img.channels,
                right: self.sum.len(),
            });
        }
        for c in 0..img.channels {
            for v in img.channel_f32(c) {
                let v = v as f64;
                self.sum[c] += v;
                self.sum_sq[c] += v * v;
            }
        }
        self.count += img.plane_len() as u64;
        Ok(())
    }

    /// Population statistics. Fails when nothing was pushed.
    pub fn finish(&self) -> Result<ChannelStats> {
        if self.count == 0 {
            return Err(Error::DegenerateInput("channel statistics over zero pixels".into()));
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
            .collect();
        Ok(ChannelStats { mean, std })
    }
}

/// `(x - mean) / std` per channel.
pub fn normalize(img: &RasterImage, stats: &ChannelStats) -> Result<RasterImage> {
    if stats.channels() != img.channels {
        return Err(Error::DimensionMismatch {
            op: "normalize",
            axis: 0,
            left: img.channels,
            right: stats.channels(),
        });
    }
    if let Some(c) = stats.std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateInput(format!(
            "channel {c} has standard deviation {}; cannot normalize",
            stats.std[c]
        )));
    }
    let p = img.plane_len();
    let mut data = img.to_f32_vec();
    for c in 0..img.channels {
        let (m, s) = (stats.mean[c], stats.std[c]);
        for v in &mut data[c * p..(c + 1) * p] {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    RasterImage::from_f32(img.width, img.height, img.channels, img.role, data)
}

/// `(nir - red) / (nir + red)`, zero where the denominator vanishes and
/// clamped to `[-1, 1]` so mixed-sign inputs stay in range.
pub fn compute_ndvi(nir: &[f32], red: &[f32]) -> Result<Vec<f32>> {
    if nir.len() != red.len() {
        return Err(Error::Geometry(format!(
            "NDVI bands differ in size: {} vs {}",
            nir.len(),
            red.len()
        )));
    }
    Ok(nir
        .iter()
        .zip(red)
        .map(|(&n, &r)| {
            let d = n + r;
            if d == 0.0 {
                0.0
            } else {
                ((n - r) / d).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

impl RasterImage {
    /// NDVI from an optical raster whose channel 0 is near-infrared and channel 1 red.
    pub fn ndvi(&self) -> Result<RasterImage> {
        if self.channels < 2 {
            return Err(Error::Contract("NDVI needs near-infrared and red channels".into()));
        }
        let v = compute_ndvi(&self.channel_f32(0), &self.channel_f32(1))?;
        RasterImage::from_f32(self.width, self.height, 1, Role::Ndvi, v)
    }
}

pub fn write_stats(path: &Path, stats: &ChannelStats) -> Result<()> {
    let mut s = String::from("channel,mean,std\n");
    for (c, (m, d)) in stats.mean.iter().zip(&stats.std).enumerate() {
        writeln!(s, "{c},{m},{d}").expect("string write");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_stats(path: &Path) -> Result<ChannelStats> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stats(&text)
}

fn parse_stats(text: &str) -> Result<ChannelStats> {
    let mut stats = ChannelStats {
        mean: Vec::new(),
        std: Vec::new(),
    };
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let row = line.trim();
        let here = offset;
        offset += line.len();
        if row.is_empty() || row == "channel,mean,std" {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            offset: here,
            message: format!("stats row {row:?}: {m}"),
        };
        let f: Vec<&str> = row.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad("expected channel,mean,std"));
        }
        let c: usize = f[0].parse().map_err(|_| bad("channel is not an integer"))?;
        if c != stats.mean.len() {
            return Err(bad("channels must be listed in order from 0"));
        }
        stats.mean.push(f[1].parse().map_err(|_| bad("mean is not a number"))?);
        stats.std.push(f[2].parse().map_err(|_| bad("std is not a number"))?);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndvi_cases() {
        assert_eq!(compute_ndvi(&[0.75, 0.4, 0.0], &[0.25, 0.4, 0.0]).unwrap(), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn stats_text_round_trip() {
        let s = ChannelStats {
            mean: vec![0.1, 120.5],
            std: vec![1.0 / 3.0, 7.25],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stats.csv");
        write_stats(&p, &s).unwrap();
        assert_eq!(read_stats(&p).unwrap(), s);
        assert!(matches!(parse_stats("channel,mean,std\n1,0,1\n"), Err(Error::Parse { offset: 17, .. })));
    }

    #[test]
    fn zero_std_is_degenerate() {
        let img = RasterImage::from_f32(1, 1, 1, Role::Dsm, vec![1.0]).unwrap();
        let s = ChannelStats {
            mean: vec![0.0],
            std: vec![0.0],
        };
        assert!(matches!(normalize(&img, &s), Err(Error::DegenerateInput(_))));
    }
}

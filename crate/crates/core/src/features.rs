//! Flow-level and packet-level window features.
//!
//! Flow view (39 values, fixed order):
//! `rate_{mean,max,min,median,std}` over per-second packet counts, then the
//! uplink and downlink size [`StatBlock`]s (17 values each).
//!
//! Packet view (29 values with the default config): a 25-bin direction-free
//! size histogram (64-byte bins, last bin open-ended), then first/last packet
//! size and first/last inter-arrival time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Direction, PacketRecord};
use crate::segmentation::TrafficWindow;

pub const FLOW_DIM: usize = 5 + 2 * StatBlock::DIM;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("empty input")]
    EmptyInput,
    #[error("window has no packets")]
    EmptyWindow,
}

/// Descriptive statistics of one sample. Moments are population moments;
/// percentiles interpolate linearly between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatBlock {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub variance: f64,
    pub std: f64,
    /// Median absolute deviation from the median.
    pub mad: f64,
    /// m3 / m2^1.5; 0 when m2 = 0.
    pub skewness: f64,
    /// Pearson kurtosis m4 / m2^2; 0 when m2 = 0.
    pub kurtosis: f64,
    /// 10th, 20th, ..., 90th percentiles.
    pub deciles: [f64; 9],
}

impl StatBlock {
    pub const DIM: usize = 17;

    pub const NAMES: [&'static str; Self::DIM] = [
        "mean", "max", "min", "var", "std", "mad", "skew", "kurt", "p10", "p20", "p30", "p40",
        "p50", "p60", "p70", "p80", "p90",
    ];

    /// The 50th percentile, stored as the fifth decile.
    pub fn median(&self) -> f64 {
        self.deciles[4]
    }

    /// Sentinel for a direction with no packets.
    pub fn zero() -> Self {
        StatBlock::default()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.mean,
            self.max,
            self.min,
            self.variance,
            self.std,
            self.mad,
            self.skewness,
            self.kurtosis,
        ];
        v.extend_from_slice(&self.deciles);
        v
    }
}

/// Percentile `q` in [0, 1] of an ascending slice, linear interpolation.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn median_sorted(sorted: &[f64]) -> f64 {
    percentile_sorted(sorted, 0.5)
}

pub fn summary_stats(values: &[f64]) -> Result<StatBlock, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = median_sorted(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);

    let mut deciles = [0.0; 9];
    for (i, d) in deciles.iter_mut().enumerate() {
        *d = percentile_sorted(&sorted, (i + 1) as f64 / 10.0);
    }

    Ok(StatBlock {
        mean,
        max: sorted[sorted.len() - 1],
        min: sorted[0],
        variance: m2,
        std: m2.sqrt(),
        mad: median_sorted(&dev),
        skewness,
        kurtosis,
        deciles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub hist_bin_width: u32,
    /// Number of histogram bins; the last one is open-ended.
    pub hist_bins: usize,
    /// Measure the first IAT from the window start rather than reporting 0.
    pub first_iat_from_window_start: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hist_bin_width: 64,
            hist_bins: 25,
            first_iat_from_window_start: true,
        }
    }
}

impl FeatureConfig {
    pub fn packet_dim(&self) -> usize {
        self.hist_bins + 4
    }

    pub fn packet_feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.hist_bins)
            .map(|b| {
                let lo = b as u32 * self.hist_bin_width;
                if b + 1 == self.hist_bins {
                    format!("hist_{lo}_inf")
                } else {
                    format!("hist_{lo}_{}", lo + self.hist_bin_width)
                }
            })
            .collect();
        names.extend(
            ["first_size", "last_size", "first_iat", "last_iat"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }
}

pub fn flow_feature_names() -> Vec<String> {
    let mut names: Vec<String> = ["rate_mean", "rate_max", "rate_min", "rate_median", "rate_std"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for dir in ["up", "down"] {
        names.extend(StatBlock::NAMES.iter().map(|n| format!("{dir}_size_{n}")));
    }
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowFeatures {
    /// mean, max, min, median, std of per-second packet counts.
    pub rate_stats: [f64; 5],
    pub up_size: StatBlock,
    pub down_size: StatBlock,
}

impl FlowFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.rate_stats.to_vec();
        v.extend(self.up_size.to_vec());
        v.extend(self.down_size.to_vec());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketFeatures {
    pub length_histogram: Vec<f64>,
    pub first_size: f64,
    pub last_size: f64,
    pub first_iat: f64,
    pub last_iat: f64,
}

impl PacketFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.length_histogram.clone();
        v.extend([self.first_size, self.last_size, self.first_iat, self.last_iat]);
        v
    }
}

fn direction_stats(packets: &[PacketRecord], dir: Direction) -> StatBlock {
    let sizes: Vec<f64> = packets
        .iter()
        .filter(|p| p.direction == dir)
        .map(|p| p.size_bytes as f64)
        .collect();
    summary_stats(&sizes).unwrap_or_else(|_| StatBlock::zero())
}

/// Per-second packet counts over `ceil(duration)` bins aligned to the window
/// start.
pub fn per_second_counts(window: &TrafficWindow) -> Vec<f64> {
    let bins = window.duration_us.div_ceil(1_000_000).max(1) as usize;
    let mut counts = vec![0.0; bins];
    for p in &window.packets {
        let b = ((p.timestamp_us - window.start_us) / 1_000_000) as usize;
        counts[b.min(bins - 1)] += 1.0;
    }
    counts
}

pub fn flow_features(window: &TrafficWindow) -> Result<FlowFeatures, FeatureError> {
    if window.packets.is_empty() {
        return Err(FeatureError::EmptyWindow);
    }
    let rate = summary_stats(&per_second_counts(window))?;
    Ok(FlowFeatures {
        rate_stats: [rate.mean, rate.max, rate.min, rate.median(), rate.std],
        up_size: direction_stats(&window.packets, Direction::Uplink),
        down_size: direction_stats(&window.packets, Direction::Downlink),
    })
}

pub fn packet_features(
    window: &TrafficWindow,
    cfg: &FeatureConfig,
) -> Result<PacketFeatures, FeatureError> {
    let (Some(first), Some(last)) = (window.packets.first(), window.packets.last()) else {
        return Err(FeatureError::EmptyWindow);
    };
    let mut hist = vec![0.0; cfg.hist_bins];
    let width = cfg.hist_bin_width.max(1);
    for p in &window.packets {
        let b = ((p.size_bytes / width) as usize).min(cfg.hist_bins - 1);
        hist[b] += 1.0;
    }
    let n = window.packets.len() as f64;
    for h in &mut hist {
        *h /= n;
    }
    let first_iat = if cfg.first_iat_from_window_start {
        (first.timestamp_us - window.start_us) as f64 / 1e6
    } else {
        0.0
    };
    let last_iat = match window.packets.len() {
        0 | 1 => 0.0,
        k => (window.packets[k - 1].timestamp_us - window.packets[k - 2].timestamp_us) as f64 / 1e6,
    };
    Ok(PacketFeatures {
        length_histogram: hist,
        first_size: first.size_bytes as f64,
        last_size: last.size_bytes as f64,
        first_iat,
        last_iat,
    })
}

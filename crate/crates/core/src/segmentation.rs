//! Fixed-duration observation windows and the activity (τ) filter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::ArchLabel;
use crate::ingest::{seconds_to_micros, ClientTrace, PacketRecord, StationId};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("trace has no packets")]
    EmptyTrace,
    #[error("invalid window config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_s: f64,
    pub stride_s: f64,
    /// A window (or trace) is active when some packet is strictly larger.
    pub tau_bytes: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_s: 300.0,
            stride_s: 300.0,
            tau_bytes: 66,
        }
    }
}

impl WindowConfig {
    pub fn with_window(window_s: f64) -> Self {
        WindowConfig {
            window_s,
            stride_s: window_s,
            ..WindowConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(SegmentError::InvalidConfig(format!(
                "window_s must be positive, got {}",
                self.window_s
            )));
        }
        if !(self.stride_s.is_finite() && self.stride_s > 0.0) {
            return Err(SegmentError::InvalidConfig(format!(
                "stride_s must be positive, got {}",
                self.stride_s
            )));
        }
        if self.stride_s > self.window_s {
            return Err(SegmentError::InvalidConfig(format!(
                "stride_s {} exceeds window_s {}; packets between windows would be dropped",
                self.stride_s, self.window_s
            )));
        }
        if self.tau_bytes == 0 {
            return Err(SegmentError::InvalidConfig("tau_bytes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowOrigin {
    pub client_id: StationId,
    pub trace_id: String,
    /// Position of the window start on the trace's stride grid.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficWindow {
    pub start_us: u64,
    pub duration_us: u64,
    pub packets: Vec<PacketRecord>,
    pub origin: WindowOrigin,
    pub label: Option<ArchLabel>,
}

impl TrafficWindow {
    pub fn start_s(&self) -> f64 {
        self.start_us as f64 / 1e6
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_us as f64 / 1e6
    }

    pub fn window_id(&self) -> String {
        format!("{}#{}", self.origin.trace_id, self.origin.index)
    }

    pub fn is_active(&self, tau_bytes: u32) -> bool {
        has_packet_above(&self.packets, tau_bytes)
    }
}

pub(crate) fn has_packet_above(packets: &[PacketRecord], tau_bytes: u32) -> bool {
    packets.iter().any(|p| p.size_bytes > tau_bytes)
}

/// Whole-trace activity test applied before training.
pub fn trace_is_active(trace: &ClientTrace, tau_bytes: u32) -> bool {
    has_packet_above(&trace.packets, tau_bytes)
}

/// Cuts a trace into windows starting at `first packet + k * stride`. Only
/// windows holding at least one packet are emitted; membership is half-open.
pub fn segment(trace: &ClientTrace, cfg: &WindowConfig) -> Result<Vec<TrafficWindow>, SegmentError> {
    cfg.validate()?;
    let (Some(first), Some(last)) = (trace.packets.first(), trace.packets.last()) else {
        return Err(SegmentError::EmptyTrace);
    };
    let window_us = seconds_to_micros(cfg.window_s).max(1);
    let stride_us = seconds_to_micros(cfg.stride_s).max(1);
    let origin = first.timestamp_us;
    let trace_id = trace.trace_id();

    let mut windows = Vec::new();
    let mut k = 0usize;
    loop {
        let start = origin + k as u64 * stride_us;
        if start > last.timestamp_us {
            break;
        }
        let end = start + window_us;
        let lo = trace.packets.partition_point(|p| p.timestamp_us < start);
        let hi = trace.packets.partition_point(|p| p.timestamp_us < end);
        if hi > lo {
            windows.push(TrafficWindow {
                start_us: start,
                duration_us: window_us,
                packets: trace.packets[lo..hi].to_vec(),
                origin: WindowOrigin {
                    client_id: trace.client_id,
                    trace_id: trace_id.clone(),
                    index: k,
                },
                label: trace.label.clone(),
            });
        }
        k += 1;
    }
    Ok(windows)
}

/// Keeps the windows with at least one packet larger than `tau_bytes`.
pub fn filter_active(windows: Vec<TrafficWindow>, tau_bytes: u32) -> Vec<TrafficWindow> {
    windows
        .into_iter()
        .filter(|w| w.is_active(tau_bytes))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ingest::Direction;

    fn station() -> StationId {
        StationId([2, 0, 0, 0, 0, 1])
    }

    fn trace_from(ts_us: &[u64], sizes: &[u32]) -> ClientTrace {
        ClientTrace {
            client_id: station(),
            ap_id: StationId([2, 0, 0, 0, 0, 0xff]),
            packets: ts_us
                .iter()
                .zip(sizes)
                .map(|(&t, &s)| PacketRecord {
                    timestamp_us: t,
                    size_bytes: s,
                    direction: Direction::Uplink,
                    station_id: station(),
                })
                .collect(),
            label: None,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn six_hundred_seconds_two_windows() {
        let ts: Vec<u64> = (0..600).map(|s| s * 1_000_000).collect();
        let t = trace_from(&ts, &vec![100; ts.len()]);
        let w = segment(&t, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].packets.len(), 300);
        assert_eq!(w[1].packets.len(), 300);
    }

    #[test]
    fn short_trace_single_window() {
        let ts: Vec<u64> = (0..10).map(|s| s * 1_000_000).collect();
        let t = trace_from(&ts, &[100; 10]);
        let w = segment(&t, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].packets.len(), 10);
    }

    #[test]
    fn empty_trace_rejected() {
        let t = trace_from(&[], &[]);
        assert_eq!(segment(&t, &WindowConfig::default()), Err(SegmentError::EmptyTrace));
    }

    #[test]
    fn stride_larger_than_window_rejected() {
        let cfg = WindowConfig {
            window_s: 100.0,
            stride_s: 200.0,
            tau_bytes: 66,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overlapping_windows_match_interval_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ts: Vec<u64> = (0..5000).map(|_| rng.random_range(0..1_500_000_000u64)).collect();
        ts.sort_unstable();
        ts[0] = 0;
        let t = trace_from(&ts, &vec![100; ts.len()]);
        let cfg = WindowConfig {
            window_s: 300.0,
            stride_s: 150.0,
            tau_bytes: 66,
        };
        let windows = segment(&t, &cfg).unwrap();
        // brute force: membership of every packet in every grid window
        let (w_us, s_us) = (300_000_000u64, 150_000_000u64);
        for (i, &p) in ts.iter().enumerate() {
            let expected: Vec<usize> = (0..20)
                .filter(|&k| {
                    let start = k as u64 * s_us;
                    p >= start && p < start + w_us
                })
                .collect();
            let actual: Vec<usize> = windows
                .iter()
                .filter(|w| {
                    let lo = w.packets.partition_point(|q| q.timestamp_us < p);
                    w.packets[lo..]
                        .iter()
                        .take_while(|q| q.timestamp_us == p)
                        .count()
                        > 0
                })
                .map(|w| w.origin.index)
                .collect();
            assert_eq!(actual, expected, "packet {i} at {p}");
        }
        for w in &windows {
            assert!(w
                .packets
                .iter()
                .all(|p| p.timestamp_us >= w.start_us && p.timestamp_us < w.start_us + w.duration_us));
        }
    }

    #[test]
    fn tau_filter_examples() {
        let mk = |sizes: &[u32]| {
            let ts: Vec<u64> = (0..sizes.len() as u64).collect();
            segment(&trace_from(&ts, sizes), &WindowConfig::default())
                .unwrap()
                .remove(0)
        };
        let quiet = mk(&[40, 60, 66]);
        let busy = mk(&[40, 1500]);
        let kept = filter_active(vec![quiet.clone(), busy.clone()], 66);
        assert_eq!(kept, vec![busy]);
        assert!(filter_active(vec![quiet], 66).is_empty());
    }

    #[test]
    fn tau_filter_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let windows: Vec<TrafficWindow> = (0..20)
            .map(|_| {
                let n = rng.random_range(1..8);
                let sizes: Vec<u32> = (0..n).map(|_| rng.random_range(30..90)).collect();
                let ts: Vec<u64> = (0..n as u64).collect();
                segment(&trace_from(&ts, &sizes), &WindowConfig::default())
                    .unwrap()
                    .remove(0)
            })
            .collect();
        let expected: Vec<TrafficWindow> = windows
            .iter()
            .filter(|w| w.packets.iter().map(|p| p.size_bytes).max().unwrap() > 66)
            .cloned()
            .collect();
        let once = filter_active(windows, 66);
        assert_eq!(once, expected);
        assert_eq!(filter_active(once.clone(), 66), once);
    }
}

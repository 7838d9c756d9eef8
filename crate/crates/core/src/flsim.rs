//! Deterministic synthetic federated-learning client traffic, plus the
//! resource-denial (throughput throttling) emulator.
//!
//! A session alternates downlink broadcasts of the global model, local
//! compute gaps and uplink updates. Payloads are `4 * theta` bytes cut into
//! MSS-sized frames. RNN-style profiles add small periodic control packets
//! and every trace carries low-rate background frames of at most 66 bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fusion::{ArchFamily, ArchLabel};
use crate::ingest::{trace_to_string, ClientTrace, Direction, PacketRecord, StationId};
use crate::par;

/// Access-point address shared by every simulated session.
pub const SIM_AP: StationId = StationId([0x02, 0x00, 0x00, 0x00, 0x00, 0x01]);

const FEDPROX_COMPUTE_FACTOR: f64 = 1.15;
const DOWNLINK_TRAIN: usize = 32;
const BACKGROUND_RATE_HZ: f64 = 2.0;
const BACKGROUND_SIZE: (u32, u32) = (40, 66);
const CHATTER_UP: (u32, u32) = (120, 260);
const CHATTER_DOWN: (u32, u32) = (90, 140);
const CHATTER_JITTER: f64 = 0.03;
const SERVER_AGGREGATION_S: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid session spec: {0}")]
    InvalidSpec(String),
    #[error("invalid throughput: {0}")]
    InvalidThroughput(String),
}

/// Update size in bytes for `theta` 32-bit parameters.
pub fn payload_bytes(theta: u64) -> u64 {
    4 * theta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub family: ArchFamily,
    pub name: String,
    pub dataset: String,
    pub theta: u64,
    pub rounds_to_converge: u32,
    /// Mean local computation time per round, seconds.
    pub compute_s_per_round: f64,
    /// Uplink burst concentration; uplink trains hold `ceil(4 * burstiness)` frames.
    pub burstiness: f64,
    pub periodicity_s: Option<f64>,
}

impl ModelProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(format!("model `{}`: {m}", self.name)));
        if self.theta == 0 {
            return bad("theta must be at least 1".into());
        }
        if self.rounds_to_converge == 0 {
            return bad("rounds_to_converge must be positive".into());
        }
        if !(self.compute_s_per_round > 0.0 && self.compute_s_per_round.is_finite()) {
            return bad(format!("compute_s_per_round must be positive, got {}", self.compute_s_per_round));
        }
        if !(self.burstiness >= 1.0 && self.burstiness.is_finite()) {
            return bad(format!("burstiness must be >= 1, got {}", self.burstiness));
        }
        if let Some(p) = self.periodicity_s {
            if !(p > 0.0 && p.is_finite()) {
                return bad(format!("periodicity_s must be positive, got {p}"));
            }
        }
        ArchLabel::new(self.family, self.name.clone(), self.dataset.clone())
            .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        Ok(())
    }

    pub fn payload_bytes(&self) -> u64 {
        payload_bytes(self.theta)
    }

    fn uplink_train(&self) -> usize {
        (4.0 * self.burstiness).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub name: String,
    pub compute_multiplier: f64,
    /// Scale of the lognormal noise on compute times.
    pub jitter_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkProfile {
    pub throughput_mbps: f64,
    pub mss_bytes: u32,
    pub base_latency_ms: f64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        LinkProfile {
            throughput_mbps: 216.0,
            mss_bytes: 1448,
            base_latency_ms: 2.0,
        }
    }
}

impl LinkProfile {
    fn frame_time_s(&self, bytes: u32) -> f64 {
        bytes as f64 * 8.0 / (self.throughput_mbps * 1e6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    FedAvg,
    WeightedFedAvg,
    FedProx,
}

impl Aggregation {
    fn compute_factor(self) -> f64 {
        match self {
            Aggregation::FedProx => FEDPROX_COMPUTE_FACTOR,
            Aggregation::FedAvg | Aggregation::WeightedFedAvg => 1.0,
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::FedAvg => "fedavg",
            Aggregation::WeightedFedAvg => "weighted_fedavg",
            Aggregation::FedProx => "fedprox",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    Sync,
    Async,
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncMode::Sync => "sync",
            SyncMode::Async => "async",
        })
    }
}

impl FromStr for SyncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sync" => Ok(SyncMode::Sync),
            "async" => Ok(SyncMode::Async),
            _ => Err(format!("unknown sync mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub model: ModelProfile,
    pub client: ClientProfile,
    pub link: LinkProfile,
    pub aggregation: Aggregation,
    pub sync_mode: SyncMode,
    pub duration_s: f64,
    pub seed: u64,
}

impl SessionSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.model.validate()?;
        let c = &self.client;
        if !(c.compute_multiplier > 0.0 && c.compute_multiplier.is_finite()) {
            return Err(SimError::InvalidSpec(format!(
                "client `{}`: compute_multiplier must be positive",
                c.name
            )));
        }
        if !(0.0..1.0).contains(&c.jitter_frac) {
            return Err(SimError::InvalidSpec(format!(
                "client `{}`: jitter_frac must be in [0, 1)",
                c.name
            )));
        }
        let l = &self.link;
        if !(l.throughput_mbps > 0.0 && l.throughput_mbps.is_finite()) {
            return Err(SimError::InvalidSpec("throughput_mbps must be positive".into()));
        }
        if l.mss_bytes == 0 || l.mss_bytes > 1500 {
            return Err(SimError::InvalidSpec(format!("mss_bytes must be in 1..=1500, got {}", l.mss_bytes)));
        }
        if !(l.base_latency_ms >= 0.0 && l.base_latency_ms.is_finite()) {
            return Err(SimError::InvalidSpec("base_latency_ms must be non-negative".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::InvalidSpec("duration_s must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic locally administered client address.
    pub fn client_station(&self) -> StationId {
        let mut h = Sha256::new();
        h.update(self.client.name.as_bytes());
        h.update(self.seed.to_le_bytes());
        let d = h.finalize();
        StationId([0x02, d[0], d[1], d[2], d[3], d[4].max(2)])
    }

    fn compute_mean_s(&self) -> f64 {
        self.model.compute_s_per_round * self.client.compute_multiplier * self.aggregation.compute_factor()
    }
}

/// Bytes emitted during one training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLedger {
    pub round: u32,
    pub downlink_data_bytes: u64,
    pub uplink_data_bytes: u64,
    /// Both transfers fit inside the session duration.
    pub complete: bool,
}

/// Per-category byte totals of a simulated trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionLedger {
    pub rounds: Vec<RoundLedger>,
    pub uplink_control_bytes: u64,
    pub downlink_control_bytes: u64,
    /// Traffic note, e.g. aggregation strategies with identical signatures.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Data(u32),
    Control,
}

struct Emitter {
    events: Vec<(f64, u32, Direction, Kind)>,
    horizon: f64,
}

impl Emitter {
    fn push(&mut self, t: f64, size: u32, dir: Direction, kind: Kind) -> bool {
        if t < self.horizon {
            self.events.push((t, size, dir, kind));
            true
        } else {
            false
        }
    }
}

/// Sends `bytes` as trains of at most `train` frames starting at `t`; a
/// `partial` train ends with a short frame. Returns the finish time and the
/// bytes emitted before the horizon.
#[allow(clippy::too_many_arguments)]
fn transfer(
    em: &mut Emitter,
    rng: &mut ChaCha8Rng,
    link: &LinkProfile,
    mut t: f64,
    bytes: u64,
    train: usize,
    partial: bool,
    dir: Direction,
    round: u32,
) -> (f64, u64) {
    let mss = link.mss_bytes as u64;
    let mut left = bytes;
    let mut sent = 0u64;
    while left > 0 {
        let mut chunk = (train as u64 * mss).min(left);
        if partial && chunk == train as u64 * mss && chunk < left && mss > 1 {
            chunk -= rng.random_range(0..mss);
        }
        left -= chunk;
        while chunk > 0 {
            let size = chunk.min(mss) as u32;
            if em.push(t, size, dir, Kind::Data(round)) {
                sent += size as u64;
            }
            t += link.frame_time_s(size) * rng.random_range(1.0..1.1);
            chunk -= size as u64;
        }
        if left > 0 {
            t += link.base_latency_ms / 1e3 * rng.random_range(1.0..1.5);
        }
    }
    (t, sent)
}

/// Simulated trace plus the byte ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSession {
    pub trace: ClientTrace,
    pub ledger: SessionLedger,
}

pub fn simulate_session(spec: &SessionSpec) -> Result<ClientTrace, SimError> {
    simulate_session_with_ledger(spec).map(|s| s.trace)
}

pub fn simulate_session_with_ledger(spec: &SessionSpec) -> Result<SimulatedSession, SimError> {
    spec.validate()?;
    let s = spec.model.payload_bytes();
    let horizon = spec.duration_s;
    let mut em = Emitter {
        events: Vec::new(),
        horizon,
    };
    let mut ledger = SessionLedger::default();
    if spec.aggregation == Aggregation::WeightedFedAvg {
        ledger
            .notes
            .push("weighted_fedavg: sample weighting is server-side; traffic identical to fedavg".into());
    }

    // rounds
    let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(spec.seed, 1));
    let sigma = spec.client.jitter_frac;
    let jitter = LogNormal::new(-0.5 * sigma * sigma, sigma).expect("sigma is finite and non-negative");
    let mean_compute = spec.compute_mean_s();
    let straggler = Exp::new(1.0 / (0.05 * mean_compute)).expect("positive rate");
    let mut t = rng.random_range(0.0..2.0);
    let mut round = 0u32;
    while t < horizon {
        let (t_down, down) = transfer(
            &mut em,
            &mut rng,
            &spec.link,
            t,
            s,
            DOWNLINK_TRAIN,
            false,
            Direction::Downlink,
            round,
        );
        let compute = mean_compute * jitter.sample(&mut rng);
        let (t_up, up) = transfer(
            &mut em,
            &mut rng,
            &spec.link,
            t_down + compute,
            s,
            spec.model.uplink_train(),
            true,
            Direction::Uplink,
            round,
        );
        ledger.rounds.push(RoundLedger {
            round,
            downlink_data_bytes: down,
            uplink_data_bytes: up,
            complete: down == s && up == s,
        });
        t = t_up + SERVER_AGGREGATION_S;
        if spec.sync_mode == SyncMode::Sync {
            t += straggler.sample(&mut rng);
        }
        round += 1;
    }

    // periodic chatter
    if let Some(period) = spec.model.periodicity_s {
        let mut crng = ChaCha8Rng::seed_from_u64(par::derive_seed(spec.seed, 2));
        let noise = Normal::new(0.0, CHATTER_JITTER * period).expect("finite std");
        let phase = crng.random_range(0.0..period);
        let mut k = 0u64;
        loop {
            let tick = phase + k as f64 * period + noise.sample(&mut crng);
            if tick >= horizon {
                break;
            }
            let up = crng.random_range(CHATTER_UP.0..=CHATTER_UP.1);
            let down = crng.random_range(CHATTER_DOWN.0..=CHATTER_DOWN.1);
            let reply = tick + spec.link.base_latency_ms / 1e3 * crng.random_range(1.0..2.0);
            if tick >= 0.0 && em.push(tick, up, Direction::Uplink, Kind::Control) {
                ledger.uplink_control_bytes += up as u64;
            }
            if reply >= 0.0 && em.push(reply, down, Direction::Downlink, Kind::Control) {
                ledger.downlink_control_bytes += down as u64;
            }
            k += 1;
        }
    }

    // background control frames
    let mut brng = ChaCha8Rng::seed_from_u64(par::derive_seed(spec.seed, 3));
    let gap = Exp::new(BACKGROUND_RATE_HZ).expect("positive rate");
    let mut tb = gap.sample(&mut brng);
    while tb < horizon {
        let size = brng.random_range(BACKGROUND_SIZE.0..=BACKGROUND_SIZE.1);
        let dir = if brng.random_bool(0.5) {
            Direction::Uplink
        } else {
            Direction::Downlink
        };
        em.push(tb, size, dir, Kind::Control);
        match dir {
            Direction::Uplink => ledger.uplink_control_bytes += size as u64,
            Direction::Downlink => ledger.downlink_control_bytes += size as u64,
        }
        tb += gap.sample(&mut brng);
    }

    let mut events = em.events;
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let client = spec.client_station();
    let origin = events.first().map_or(0.0, |e| e.0);
    let packets: Vec<PacketRecord> = events
        .iter()
        .map(|&(t, size, direction, _)| PacketRecord {
            timestamp_us: ((t - origin) * 1e6).round() as u64,
            size_bytes: size,
            direction,
            station_id: match direction {
                Direction::Uplink => client,
                Direction::Downlink => SIM_AP,
            },
        })
        .collect();

    let label = ArchLabel::new(spec.model.family, spec.model.name.clone(), spec.model.dataset.clone())
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let mut meta = BTreeMap::new();
    meta.insert("trace_id".into(), format!("{}-{}-{:016x}", spec.model.name, spec.client.name, spec.seed));
    meta.insert("client".into(), spec.client.name.clone());
    meta.insert("aggregation".into(), spec.aggregation.to_string());
    meta.insert("sync_mode".into(), spec.sync_mode.to_string());
    meta.insert("seed".into(), spec.seed.to_string());
    Ok(SimulatedSession {
        trace: ClientTrace {
            client_id: client,
            ap_id: SIM_AP,
            packets,
            label: Some(label),
            meta,
        },
        ledger,
    })
}

#[allow(clippy::too_many_arguments)]
fn model(
    family: ArchFamily,
    name: &str,
    dataset: &str,
    theta: u64,
    rounds: u32,
    compute: f64,
    burstiness: f64,
    periodicity_s: Option<f64>,
) -> ModelProfile {
    ModelProfile {
        family,
        name: name.into(),
        dataset: dataset.into(),
        theta,
        rounds_to_converge: rounds,
        compute_s_per_round: compute,
        burstiness,
        periodicity_s,
    }
}

/// Synthetic archetypes; they do not reconstruct any real network's traffic.
pub fn default_model_profiles() -> Vec<ModelProfile> {
    use ArchFamily::*;
    vec![
        model(Cnn, "custom_cnn", "cifar10", 600_000, 30, 30.0, 3.0, None),
        model(Cnn, "resnet18", "cifar10", 1_600_000, 40, 45.0, 4.0, None),
        model(Cnn, "mobilenetv2", "cifar10", 1_000_000, 35, 35.0, 3.5, None),
        model(Rnn, "lstm", "shakespeare", 150_000, 50, 9.0, 1.2, Some(2.0)),
        model(Rnn, "bilstm", "shakespeare", 300_000, 50, 12.0, 1.5, Some(2.5)),
        model(Rnn, "gru", "har", 100_000, 40, 7.0, 1.2, Some(1.5)),
        model(Other, "mlp", "mnist", 250_000, 20, 5.0, 1.5, None),
        model(Other, "autoencoder", "mnist", 500_000, 25, 10.0, 2.0, None),
    ]
}

pub fn default_client_profiles() -> Vec<ClientProfile> {
    let c = |name: &str, compute_multiplier, jitter_frac| ClientProfile {
        name: name.into(),
        compute_multiplier,
        jitter_frac,
    };
    vec![c("orin", 1.0, 0.08), c("macbook", 0.8, 0.05), c("laptop", 1.3, 0.12)]
}

/// Models held out in the default open-world scenario: one CNN and one
/// Other archetype.
pub fn default_open_world_holdout() -> Vec<String> {
    vec!["mobilenetv2".into(), "mlp".into()]
}

/// Scenario description: profiles crossed into corpus templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub models: Vec<ModelProfile>,
    pub clients: Vec<ClientProfile>,
    pub link: LinkProfile,
    /// Aggregation strategies assigned to clients round-robin.
    pub aggregations: Vec<Aggregation>,
    pub sync_mode: SyncMode,
    pub duration_s: f64,
    pub traces_per_template: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            models: default_model_profiles(),
            clients: default_client_profiles(),
            link: LinkProfile::default(),
            aggregations: vec![Aggregation::FedAvg, Aggregation::WeightedFedAvg, Aggregation::FedProx],
            sync_mode: SyncMode::Sync,
            duration_s: 1200.0,
            traces_per_template: 3,
            seed: 2024,
        }
    }
}

impl ScenarioConfig {
    /// One template per (model, client) pair, models outermost.
    pub fn templates(&self) -> Result<Vec<SessionSpec>, SimError> {
        if self.aggregations.is_empty() {
            return Err(SimError::InvalidSpec("at least one aggregation strategy is required".into()));
        }
        let mut out = Vec::new();
        for m in &self.models {
            for (ci, c) in self.clients.iter().enumerate() {
                let spec = SessionSpec {
                    model: m.clone(),
                    client: c.clone(),
                    link: self.link.clone(),
                    aggregation: self.aggregations[ci % self.aggregations.len()],
                    sync_mode: self.sync_mode,
                    duration_s: self.duration_s,
                    seed: 0,
                };
                spec.validate()?;
                out.push(spec);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trace_id: String,
    pub family: ArchFamily,
    pub model: String,
    pub client: String,
    pub seed: u64,
    pub packets: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub traces_per_template: usize,
    pub entries: Vec<ManifestEntry>,
    /// SHA-256 over the entries' JSON.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub traces: Vec<ClientTrace>,
    pub manifest: CorpusManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Expands every template `n_per_spec` times with per-trace seeds derived
/// from `seed`. Trace ids are `{model}_{client}_{k}`.
pub fn make_corpus(templates: &[SessionSpec], n_per_spec: usize, seed: u64) -> Result<Corpus, SimError> {
    if n_per_spec == 0 {
        return Err(SimError::InvalidSpec("n_per_spec must be at least 1".into()));
    }
    let results = par::map_range(templates.len() * n_per_spec, |u| {
        let (ti, k) = (u / n_per_spec, u % n_per_spec);
        let spec = SessionSpec {
            seed: par::derive_seed(seed, u as u64),
            ..templates[ti].clone()
        };
        let mut trace = simulate_session(&spec)?;
        let id = format!("{}_{}_{}", spec.model.name, spec.client.name, k);
        trace.meta.insert("trace_id".into(), id.clone());
        let entry = ManifestEntry {
            trace_id: id,
            family: spec.model.family,
            model: spec.model.name.clone(),
            client: spec.client.name.clone(),
            seed: spec.seed,
            packets: trace.packets.len(),
            sha256: sha256_hex(trace_to_string(&trace).as_bytes()),
        };
        Ok::<_, SimError>((trace, entry))
    });
    let mut traces = Vec::with_capacity(results.len());
    let mut entries = Vec::with_capacity(results.len());
    for r in results {
        let (t, e) = r?;
        traces.push(t);
        entries.push(e);
    }
    let hash = sha256_hex(serde_json::to_string(&entries).expect("entries serialise").as_bytes());
    Ok(Corpus {
        traces,
        manifest: CorpusManifest {
            seed,
            traces_per_template: n_per_spec,
            entries,
            hash,
        },
    })
}

/// The default benchmark corpus: 8 models x 3 clients x 3 traces.
pub fn default_corpus(seed: u64) -> Result<Corpus, SimError> {
    let cfg = ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    };
    make_corpus(&cfg.templates()?, cfg.traces_per_template, cfg.seed)
}

/// `n_c * B_uncomp / B_denied`.
pub fn cost_of_attack(n_c: usize, b_uncomp_mbps: f64, b_denied_mbps: f64) -> Result<f64, SimError> {
    if n_c == 0 {
        return Err(SimError::InvalidThroughput("n_c must be at least 1".into()));
    }
    if !(b_uncomp_mbps > 0.0 && b_uncomp_mbps.is_finite()) || !(b_denied_mbps > 0.0 && b_denied_mbps.is_finite()) {
        return Err(SimError::InvalidThroughput(format!(
            "throughputs must be positive, got {b_uncomp_mbps} and {b_denied_mbps}"
        )));
    }
    if b_denied_mbps > b_uncomp_mbps {
        return Err(SimError::InvalidThroughput(format!(
            "denied throughput {b_denied_mbps} exceeds uncompromised {b_uncomp_mbps}"
        )));
    }
    Ok(n_c as f64 * b_uncomp_mbps / b_denied_mbps)
}

/// When the attacker's throttle is engaged on an attacked client's link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThrottleGate {
    /// Throttled for the whole session.
    Always,
    /// Engaged for `on_s` seconds whenever a model transfer starts.
    Triggered { on_s: f64 },
}

impl ThrottleGate {
    /// Trigger window sized for `model`'s throttled transfer, with 10% slack.
    pub fn tuned_for(model: &ModelProfile, link: &LinkProfile, denial_frac: f64) -> ThrottleGate {
        let rate = link.throughput_mbps * 1e6 * (1.0 - denial_frac);
        let on_s = 1.1 * (model.payload_bytes() as f64 * 8.0 / rate + link.base_latency_ms / 1e3);
        ThrottleGate::Triggered { on_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleSpec {
    /// Indices into the session list.
    pub attacked: Vec<usize>,
    pub denial_frac: f64,
    pub sync_mode: SyncMode,
    pub gate: ThrottleGate,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleReport {
    pub model: String,
    pub sync_mode: SyncMode,
    pub rounds_to_converge: u32,
    pub baseline_time_s: f64,
    pub attacked_time_s: f64,
    /// `attacked / baseline - 1`.
    pub relative_delay: f64,
    /// Fraction of the attacked run during which the throttle was engaged.
    pub duty_cycle: f64,
    pub cost: f64,
    pub delay_per_cost: f64,
}

/// Global accuracy after `n` aggregated rounds.
pub fn accuracy_curve(n: f64, rounds_to_converge: u32) -> f64 {
    let tau = (rounds_to_converge as f64 - 0.5) / 11f64.ln();
    0.99 * (1.0 - (-n / tau).exp())
}

/// Smallest round count with accuracy at least 0.90.
pub fn rounds_to_target(rounds_to_converge: u32) -> u32 {
    let mut n = 1;
    while accuracy_curve(n as f64, rounds_to_converge) < 0.90 {
        n += 1;
    }
    n
}

struct Throttle {
    rate_bps: f64,
    gate: ThrottleGate,
}

/// Seconds to move `bytes` starting now; second value is throttle on-time.
fn transfer_time(bytes: u64, link: &LinkProfile, throttle: Option<&Throttle>) -> (f64, f64) {
    let bits = bytes as f64 * 8.0;
    let full = link.throughput_mbps * 1e6;
    let latency = link.base_latency_ms / 1e3;
    match throttle {
        None => (latency + bits / full, 0.0),
        Some(th) => match th.gate {
            ThrottleGate::Always => {
                let d = latency + bits / th.rate_bps;
                (d, d)
            }
            ThrottleGate::Triggered { on_s } => {
                let slow = latency + bits / th.rate_bps;
                if slow <= on_s {
                    (slow, on_s)
                } else {
                    let sent = ((on_s - latency).max(0.0)) * th.rate_bps;
                    (on_s + (bits - sent) / full, on_s)
                }
            }
        },
    }
}

struct ClientClock {
    link: LinkProfile,
    bytes: u64,
    mean_compute: f64,
    jitter: LogNormal<f64>,
    rng: ChaCha8Rng,
}

impl ClientClock {
    /// Duration of one download-compute-upload cycle and its throttle on-time.
    fn cycle(&mut self, throttle: Option<&Throttle>) -> (f64, f64) {
        let compute = self.mean_compute * self.jitter.sample(&mut self.rng);
        let (down, on_d) = transfer_time(self.bytes, &self.link, throttle);
        let (up, on_u) = transfer_time(self.bytes, &self.link, throttle);
        (down + compute + up, on_d + on_u)
    }
}

fn clocks(sessions: &[SessionSpec], seed: u64) -> Vec<ClientClock> {
    sessions
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let sigma = s.client.jitter_frac;
            ClientClock {
                link: s.link.clone(),
                bytes: s.model.payload_bytes(),
                mean_compute: s.compute_mean_s(),
                jitter: LogNormal::new(-0.5 * sigma * sigma, sigma).expect("valid sigma"),
                rng: ChaCha8Rng::seed_from_u64(par::derive_seed(seed, k as u64)),
            }
        })
        .collect()
}

/// Wall-clock time to reach the accuracy target and the per-client
/// throttle on-time.
fn convergence_time(
    sessions: &[SessionSpec],
    throttles: &[Option<Throttle>],
    mode: SyncMode,
    seed: u64,
) -> (f64, Vec<f64>) {
    let target = rounds_to_target(sessions[0].model.rounds_to_converge) as usize;
    let mut cl = clocks(sessions, seed);
    let k = cl.len();
    let mut on = vec![0.0; k];
    match mode {
        SyncMode::Sync => {
            let mut t = 0.0;
            for _ in 0..target {
                let mut slowest: f64 = 0.0;
                for (i, c) in cl.iter_mut().enumerate() {
                    let (d, o) = c.cycle(throttles[i].as_ref());
                    on[i] += o;
                    slowest = slowest.max(d);
                }
                t += slowest + SERVER_AGGREGATION_S;
            }
            (t, on)
        }
        SyncMode::Async => {
            // each update advances the global model by 1/K of a round
            let needed = target * k;
            let mut updates: Vec<(f64, usize)> = Vec::with_capacity(needed * k);
            let mut on_times: Vec<Vec<f64>> = vec![Vec::new(); k];
            for (i, c) in cl.iter_mut().enumerate() {
                let mut t = 0.0;
                for _ in 0..needed {
                    let (d, o) = c.cycle(throttles[i].as_ref());
                    t += d + SERVER_AGGREGATION_S;
                    updates.push((t, i));
                    on_times[i].push(o);
                }
            }
            updates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut counts = vec![0usize; k];
            for &(_, i) in &updates[..needed] {
                counts[i] += 1;
            }
            for i in 0..k {
                on[i] = on_times[i][..counts[i]].iter().sum();
            }
            (updates[needed - 1].0, on)
        }
    }
}

/// Convergence delay caused by throttling `spec.attacked` clients, with the
/// attack cost computed from the time-averaged denied throughput.
pub fn emulate_throttle(sessions: &[SessionSpec], spec: &ThrottleSpec) -> Result<ThrottleReport, SimError> {
    if sessions.is_empty() {
        return Err(SimError::InvalidSpec("at least one client session is required".into()));
    }
    for s in sessions {
        s.validate()?;
        if s.model != sessions[0].model {
            return Err(SimError::InvalidSpec("all sessions must train the same model".into()));
        }
    }
    if !(spec.denial_frac > 0.0 && spec.denial_frac < 1.0) {
        return Err(SimError::InvalidSpec(format!(
            "denial_frac must be in (0, 1), got {}",
            spec.denial_frac
        )));
    }
    if spec.attacked.is_empty() {
        return Err(SimError::InvalidSpec("no attacked clients".into()));
    }
    let mut attacked = spec.attacked.clone();
    attacked.sort_unstable();
    attacked.dedup();
    if let Some(&i) = attacked.iter().find(|&&i| i >= sessions.len()) {
        return Err(SimError::InvalidSpec(format!("attacked client {i} is not in the session list")));
    }
    if let ThrottleGate::Triggered { on_s } = spec.gate {
        if !(on_s > 0.0 && on_s.is_finite()) {
            return Err(SimError::InvalidSpec(format!("trigger window must be positive, got {on_s}")));
        }
    }

    let none: Vec<Option<Throttle>> = sessions.iter().map(|_| None).collect();
    let (base, _) = convergence_time(sessions, &none, spec.sync_mode, spec.seed);
    let throttles: Vec<Option<Throttle>> = sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            attacked.binary_search(&i).is_ok().then_some(Throttle {
                rate_bps: s.link.throughput_mbps * 1e6 * (1.0 - spec.denial_frac),
                gate: spec.gate,
            })
        })
        .collect();
    let (hit, on) = convergence_time(sessions, &throttles, spec.sync_mode, spec.seed);

    let duty = match spec.gate {
        ThrottleGate::Always => 1.0,
        ThrottleGate::Triggered { .. } => {
            attacked.iter().map(|&i| (on[i] / hit).min(1.0)).sum::<f64>() / attacked.len() as f64
        }
    };
    let b = sessions[attacked[0]].link.throughput_mbps;
    let cost = cost_of_attack(attacked.len(), b, b * (1.0 - spec.denial_frac * duty))?;
    let relative_delay = hit / base - 1.0;
    Ok(ThrottleReport {
        model: sessions[0].model.name.clone(),
        sync_mode: spec.sync_mode,
        rounds_to_converge: rounds_to_target(sessions[0].model.rounds_to_converge),
        baseline_time_s: base,
        attacked_time_s: hit,
        relative_delay,
        duty_cycle: duty,
        cost,
        delay_per_cost: relative_delay / cost,
    })
}

/// One session per default client profile for `model`.
pub fn federation(model: &ModelProfile, link: &LinkProfile, mode: SyncMode) -> Vec<SessionSpec> {
    default_client_profiles()
        .into_iter()
        .map(|client| SessionSpec {
            model: model.clone(),
            client,
            link: link.clone(),
            aggregation: Aggregation::FedAvg,
            sync_mode: mode,
            duration_s: 1200.0,
            seed: 0,
        })
        .collect()
}

/// Mean number of uplink frames per burst, bursts being runs of uplink
/// frames above `tau_bytes` separated by less than `gap_us`.
pub fn mean_uplink_burst_size(trace: &ClientTrace, tau_bytes: u32, gap_us: u64) -> f64 {
    let up: Vec<u64> = trace
        .packets
        .iter()
        .filter(|p| p.direction == Direction::Uplink && p.size_bytes > tau_bytes)
        .map(|p| p.timestamp_us)
        .collect();
    if up.is_empty() {
        return 0.0;
    }
    let bursts = 1 + up.windows(2).filter(|w| w[1] - w[0] >= gap_us).count();
    up.len() as f64 / bursts as f64
}

/// Peak-to-context ratio above which [`has_periodic_peak`] reports a peak.
pub const PERIODIC_PEAK_RATIO: f64 = 80.0;

/// Power-spectrum check for a periodic component at `period_s` (within
/// +-10%) in the 0.25 s occupancy series of frames above `tau_bytes`. The
/// band's peak must exceed `ratio` times the median power over
/// `[f/2, 2f]`, so broadband burst energy does not count as a peak, and must
/// beat the band around `f/2`.
pub fn has_periodic_peak(trace: &ClientTrace, period_s: f64, tau_bytes: u32, ratio: f64) -> bool {
    periodic_peak_ratio(trace, period_s, tau_bytes, u32::MAX) > ratio
}

/// Band peak over context median for frames with size in
/// `(lo_bytes, hi_bytes]`; 0 when undefined or when the band is dominated by
/// its sub-harmonic.
pub fn periodic_peak_ratio(trace: &ClientTrace, period_s: f64, lo_bytes: u32, hi_bytes: u32) -> f64 {
    const BIN_S: f64 = 0.25;
    let span = trace.span_us() as f64 / 1e6;
    let n = (span / BIN_S).floor() as usize + 1;
    if n < 64 || period_s <= 2.0 * BIN_S || period_s * 4.0 > span {
        return 0.0;
    }
    let mut series = vec![0.0f64; n];
    for p in &trace.packets {
        if p.size_bytes > lo_bytes && p.size_bytes <= hi_bytes {
            series[((p.timestamp_us as f64 / 1e6) / BIN_S) as usize] = 1.0;
        }
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - m, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let f0 = 1.0 / period_s;
    let freq = |i: usize| i as f64 / (n as f64 * BIN_S);
    let (mut band, mut context) = (Vec::new(), Vec::new());
    let mut sub_peak = 0.0f64;
    for (i, c) in buf.iter().enumerate().take(n / 2).skip(1) {
        let f = freq(i);
        if (f0 / 1.1..=f0 / 0.9).contains(&f) {
            band.push(c.norm_sqr());
        } else if (0.5 * f0..=(2.0 * f0)).contains(&f) {
            context.push(c.norm_sqr());
        }
        if (0.5 * f0 / 1.1..=0.5 * f0 / 0.9).contains(&f) {
            sub_peak = sub_peak.max(c.norm_sqr());
        }
    }
    if band.is_empty() || context.is_empty() {
        return 0.0;
    }
    context.sort_by(f64::total_cmp);
    let median = context[context.len() / 2];
    let peak = band.into_iter().fold(0.0, f64::max);
    // an overtone of a slower process (e.g. the training round) is not a
    // periodic component of its own
    if sub_peak >= peak {
        return 0.0;
    }
    if median > 0.0 {
        peak / median
    } else {
        0.0
    }
}

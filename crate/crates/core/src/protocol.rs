//! Round orchestration for the two-server protocol and its baselines.
//!
//! Each round selects clients independently with probability `q`. Under
//! [`Variant::Precad`] selected clients send additive shares of their
//! doubly clipped update, the servers validate every submission's norm under
//! MPC, sum the valid ones, add one Gaussian noise vector each, exchange the
//! noisy accumulators and apply
//!
//! ```text
//! theta <- theta + eta / W * (sum_{i in I*} delta_i + xi_A + xi_B),  W = sum_{i in I*} p_i |D_i|
//! ```
//!
//! [`Variant::Ldp`] has every benign client add its own noise and send in the
//! clear; [`Variant::NonPrivate`] sends raw updates.
//!
//! All randomness comes from streams derived from one root seed, keyed by
//! purpose, round and client. The threaded execution mode therefore produces
//! exactly the same results and transcripts as the sequential one.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{self, AccountantError};
use crate::ffield::{FieldError, FixedPointCodec, PrimeField};
use crate::learn::{
    clip_to_norm, clipped_update, eval_metrics, local_update, raw_update, sample_records, sgd_epochs,
    ClientConfig, Dataset, LearnError, Model,
};
use crate::mpc::{validate_update, validation_headroom_ok, MpcError, TrustedDealer};
use crate::seed::{derive_rng, derive_seed, seal};
use crate::sharing::{accumulate, reconstruct, split, PartyId, ShareVector, SharingError};
use crate::transcript::{BytesPerParty, Endpoint, MessageKind, MessageLog, RoundRecord, Transcript, TranscriptLevel};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{malicious} malicious clients is not fewer than {benign} benign clients")]
    TooManyMalicious { malicious: usize, benign: usize },
    #[error("client clip {bound} leaves no headroom for validation in the field")]
    Headroom { bound: f64 },
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Precad,
    Ldp,
    NonPrivate,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "precad" => Ok(Variant::Precad),
            "ldp" => Ok(Variant::Ldp),
            "nonprivate" => Ok(Variant::NonPrivate),
            other => Err(format!("unknown variant `{other}` (expected precad, ldp or nonprivate)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Precad => "precad",
            Variant::Ldp => "ldp",
            Variant::NonPrivate => "nonprivate",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Sequential,
    /// Per-client work runs on the rayon pool.
    Threaded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    /// Client selection probability.
    pub q: f64,
    /// Global learning rate.
    pub eta: f64,
    /// Noise multiplier.
    pub sigma: f64,
    pub record_clip: f64,
    pub client_clip: f64,
    /// Added to the client clip before the validation threshold is encoded,
    /// so honest updates survive fixed-point rounding.
    pub slack: f64,
    pub rounds: u64,
    /// LDP variant only: clip the noisy update to `client_clip` before sending.
    pub ldp_post_noise_clip: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            q: 0.5,
            eta: 1.0,
            sigma: 1.0,
            record_clip: 1.0,
            client_clip: 2.0,
            slack: 1e-5,
            rounds: 100,
            ldp_post_noise_clip: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(invalid("q", format!("{} is not in (0, 1]", self.q)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("{} must be positive", self.eta)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("{} must be non-negative", self.sigma)));
        }
        if !(self.record_clip > 0.0 && self.record_clip.is_finite()) {
            return Err(invalid("record_clip", format!("{} must be positive", self.record_clip)));
        }
        if !(self.client_clip > 0.0 && self.client_clip.is_finite()) {
            return Err(invalid("client_clip", format!("{} must be positive", self.client_clip)));
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(invalid("slack", format!("{} must be non-negative", self.slack)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Benign,
    MaliciousBackdoor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Client {
    pub kind: ClientKind,
    /// Malicious clients hold their poisoned mix here.
    pub data: Dataset,
    pub sampling_prob: f64,
}

impl Client {
    /// Aggregation weight `p_i |D_i|`.
    pub fn weight(&self) -> f64 {
        self.sampling_prob * self.data.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AttackSchedule {
    /// Attack in every round where at least one malicious client is selected.
    EverySelectedRound,
    /// Attack only in round `round` (0-based); malicious clients submit zero
    /// updates otherwise.
    SingleShot { round: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub target: usize,
    pub local_iters: usize,
    pub local_lr: f64,
    pub schedule: AttackSchedule,
}

/// Everything the simulation needs about who participates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Federation {
    pub clients: Vec<Client>,
    pub test: Dataset,
    /// Triggered test inputs, present when an attack is configured.
    pub triggered_test: Option<Dataset>,
    pub attack: Option<AttackParams>,
}

impl Federation {
    pub fn malicious_count(&self) -> usize {
        self.clients
            .iter()
            .filter(|c| c.kind == ClientKind::MaliciousBackdoor)
            .count()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let k = self.malicious_count();
        let benign = self.clients.len() - k;
        if k > 0 && k >= benign {
            return Err(ProtocolError::TooManyMalicious { malicious: k, benign });
        }
        if k > 0 && self.attack.is_none() {
            return Err(invalid("attack", "malicious clients need attack parameters"));
        }
        Ok(())
    }
}

/// Global model plus bookkeeping carried across rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub model: Model,
    pub round: u64,
    /// Rounds in which each client was selected.
    pub participations: Vec<u64>,
}

impl ServerState {
    pub fn new(model: Model, num_clients: usize) -> Self {
        ServerState {
            model,
            round: 0,
            participations: vec![0; num_clients],
        }
    }
}

/// Internals of one aggregation, kept for exactness checks.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundAudit {
    /// `sum_{I*} delta_i + xi_A + xi_B` in floating point.
    pub plaintext_aggregate: Vec<f64>,
    /// What the servers decoded from the opened accumulators.
    pub decoded_aggregate: Vec<f64>,
    pub valid_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub audit: Option<RoundAudit>,
}

/// Independent inclusion of each of `n` clients with probability `q`.
pub fn select_clients<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Model-replacement submission: `(theta* - theta) / (eta * weight)` split
/// evenly over the active malicious clients, then clipped to `clip`.
pub fn malicious_update(
    theta: &[f64],
    theta_star: &[f64],
    eta: f64,
    weight: f64,
    k_active: usize,
    clip: Option<f64>,
) -> Vec<f64> {
    let scale = 1.0 / (eta * weight * k_active.max(1) as f64);
    let raw: Vec<f64> = theta_star.iter().zip(theta).map(|(s, t)| (s - t) * scale).collect();
    match clip {
        Some(c) => clip_to_norm(&raw, c),
        None => raw,
    }
}

/// `L` epochs of SGD from the current global model on the attacker's data.
pub fn train_backdoor_model<R: Rng + ?Sized>(
    theta: &Model,
    poisoned: &Dataset,
    local_iters: usize,
    local_lr: f64,
    rng: &mut R,
) -> Model {
    let mut m = theta.clone();
    sgd_epochs(&mut m, poisoned, local_iters, local_lr, rng);
    m
}

/// Gaussian noise `N(0, (sigma R)^2 I)` drawn by `party` in round `t`.
/// Returns the sealed seed alongside the draw.
pub fn server_noise(root: u64, t: u64, party: PartyId, d: usize, std: f64) -> (String, Vec<f64>) {
    let seed = derive_seed(root, "noise", &[t, party.index() as u64]);
    let mut rng = <crate::seed::StreamRng as rand::SeedableRng>::from_seed(seed);
    (seal(&seed), gaussian_vec(d, std, &mut rng))
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, std: f64, rng: &mut R) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; d];
    }
    let n = Normal::new(0.0, std).expect("finite std");
    (0..d).map(|_| n.sample(rng)).collect()
}

/// Encodes `noise` at scale `f` and adds it into `acc`.
pub fn add_encoded_noise(
    field: &PrimeField,
    codec: &FixedPointCodec,
    acc: &mut ShareVector,
    noise: &[f64],
) -> Result<(), ProtocolError> {
    let enc = ShareVector {
        owner: acc.owner,
        values: codec.encode_vec(field, noise)?,
    };
    accumulate(field, acc, &enc)?;
    Ok(())
}

/// Adds local noise to an LDP client's update, then optionally clips it.
pub fn ldp_noisy_update<R: Rng + ?Sized>(update: &[f64], std: f64, post_clip: Option<f64>, rng: &mut R) -> Vec<f64> {
    let noise = gaussian_vec(update.len(), std, rng);
    let noisy: Vec<f64> = update.iter().zip(&noise).map(|(u, n)| u + n).collect();
    match post_clip {
        Some(c) => clip_to_norm(&noisy, c),
        None => noisy,
    }
}

/// One row of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub main_acc: f64,
    pub backdoor_acc: Option<f64>,
    pub eps_server: Option<f64>,
    pub eps_client: Option<f64>,
    /// Cumulative bytes sent since round 0.
    pub bytes_sent_per_party: BytesPerParty,
    /// Only filled when timing is requested; timings break bitwise
    /// reproducibility of the metrics files.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub eval_every: u64,
    pub delta: f64,
    pub transcript_level: TranscriptLevel,
    pub mode: ExecutionMode,
    pub keep_audits: bool,
    pub record_timing: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            eval_every: 10,
            delta: 1e-5,
            transcript_level: TranscriptLevel::Summary,
            mode: ExecutionMode::Sequential,
            keep_audits: false,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub history: Vec<MetricsRow>,
    pub transcript: Transcript,
    pub audits: Vec<RoundAudit>,
}

/// A configured simulation. Borrowing the federation keeps per-seed runs
/// cheap to set up.
pub struct Simulator<'a> {
    pub field: PrimeField,
    pub codec: FixedPointCodec,
    pub cfg: RoundConfig,
    pub fed: &'a Federation,
    pub root_seed: u64,
    pub level: TranscriptLevel,
    pub mode: ExecutionMode,
}

const SA: Endpoint = Endpoint::Server(PartyId::ServerA);
const SB: Endpoint = Endpoint::Server(PartyId::ServerB);

struct Submission {
    client: usize,
    update: Vec<f64>,
    valid: bool,
    shares: (ShareVector, ShareVector),
    log: MessageLog,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: RoundConfig, fed: &'a Federation, root_seed: u64) -> Self {
        Simulator {
            field: PrimeField::default(),
            codec: FixedPointCodec::default(),
            cfg,
            fed,
            root_seed,
            level: TranscriptLevel::Summary,
            mode: ExecutionMode::Sequential,
        }
    }

    fn select(&self, t: u64) -> Vec<usize> {
        select_clients(self.fed.clients.len(), self.cfg.q, &mut derive_rng(self.root_seed, "select", &[t]))
    }

    fn attacking(&self, t: u64) -> bool {
        match self.fed.attack.map(|a| a.schedule) {
            Some(AttackSchedule::EverySelectedRound) => true,
            Some(AttackSchedule::SingleShot { round }) => round == t,
            None => false,
        }
    }

    /// The coordinated malicious submission for round `t`, if any malicious
    /// client is selected and scheduled to attack. The attacker estimates the
    /// aggregation weight from the whole selected set.
    fn attack_update(&self, model: &Model, t: u64, selected: &[usize], clip: Option<f64>) -> Option<Vec<f64>> {
        let attack = self.fed.attack?;
        if !self.attacking(t) {
            return None;
        }
        let active: Vec<usize> = selected
            .iter()
            .copied()
            .filter(|&i| self.fed.clients[i].kind == ClientKind::MaliciousBackdoor)
            .collect();
        if active.is_empty() {
            return None;
        }
        let poisoned = Dataset::new(
            active
                .iter()
                .flat_map(|&i| self.fed.clients[i].data.records.iter().cloned())
                .collect(),
        );
        let mut rng = derive_rng(self.root_seed, "attacker", &[t]);
        let star = train_backdoor_model(model, &poisoned, attack.local_iters, attack.local_lr, &mut rng);
        let total_weight: f64 = selected.iter().map(|&i| self.fed.clients[i].weight()).sum();
        Some(malicious_update(
            &model.theta,
            &star.theta,
            self.cfg.eta,
            1.0 / total_weight,
            active.len(),
            clip,
        ))
    }

    fn client_update(&self, variant: Variant, model: &Model, t: u64, i: usize, attack: Option<&Vec<f64>>) -> Vec<f64> {
        let client = &self.fed.clients[i];
        if client.kind == ClientKind::MaliciousBackdoor {
            return match attack {
                Some(a) => a.clone(),
                None => vec![0.0; model.dimension()],
            };
        }
        let mut rng = derive_rng(self.root_seed, "client", &[t, i as u64]);
        let cfg = &self.cfg;
        match variant {
            Variant::Precad => {
                let cc = ClientConfig {
                    sampling_prob: client.sampling_prob,
                    record_clip: cfg.record_clip,
                    client_clip: Some(cfg.client_clip),
                };
                local_update(model, &client.data, &cc, &mut rng)
            }
            Variant::Ldp => {
                let idx = sample_records(client.data.len(), client.sampling_prob, &mut rng);
                let u = clipped_update(model, idx.iter().map(|&j| &client.data.records[j]), cfg.record_clip, None);
                let post = cfg.ldp_post_noise_clip.then_some(cfg.client_clip);
                ldp_noisy_update(&u, cfg.sigma * cfg.record_clip, post, &mut rng)
            }
            Variant::NonPrivate => {
                let idx = sample_records(client.data.len(), client.sampling_prob, &mut rng);
                raw_update(model, idx.iter().map(|&j| &client.data.records[j]))
            }
        }
    }

    fn map_clients<T: Send>(
        &self,
        selected: &[usize],
        f: impl Fn(usize) -> Result<T, ProtocolError> + Sync + Send,
    ) -> Result<Vec<T>, ProtocolError> {
        match self.mode {
            ExecutionMode::Sequential => selected.iter().map(|&i| f(i)).collect(),
            ExecutionMode::Threaded => selected.par_iter().map(|&i| f(i)).collect(),
        }
    }

    fn precad_submission(&self, model: &Model, t: u64, i: usize, attack: Option<&Vec<f64>>) -> Result<Submission, ProtocolError> {
        let update = self.client_update(Variant::Precad, model, t, i, attack);
        let mut share_rng = derive_rng(self.root_seed, "share", &[t, i as u64]);
        let (xa, xb) = split(&self.field, &self.codec.encode_vec(&self.field, &update)?, &mut share_rng);
        let mut log = MessageLog::new(self.level);
        log.record(Endpoint::Client(i), SA, MessageKind::ClientShare, Some(i), &xa.values);
        log.record(Endpoint::Client(i), SB, MessageKind::ClientShare, Some(i), &xb.values);
        let mut dealer = TrustedDealer::new(self.field, derive_rng(self.root_seed, "dealer", &[t, i as u64]));
        let verdict = validate_update(
            &self.field,
            &self.codec,
            &xa,
            &xb,
            self.cfg.client_clip,
            self.cfg.slack,
            &mut dealer,
            Some(i),
            &mut log,
        )?;
        Ok(Submission {
            client: i,
            update,
            valid: verdict.valid,
            shares: (xa, xb),
            log,
        })
    }

    /// One round of the two-server protocol.
    pub fn round_precad(&self, state: &mut ServerState) -> Result<RoundOutcome, ProtocolError> {
        if !validation_headroom_ok(&self.field, &self.codec, self.cfg.client_clip + self.cfg.slack) {
            return Err(ProtocolError::Headroom {
                bound: self.cfg.client_clip,
            });
        }
        let t = state.round;
        let selected = self.select(t);
        let attack = self.attack_update(&state.model, t, &selected, Some(self.cfg.client_clip));
        let model = &state.model;
        let subs = self.map_clients(&selected, |i| self.precad_submission(model, t, i, attack.as_ref()))?;
        self.aggregate_precad(state, selected, subs)
    }

    /// Server side of a round: filter by verdict, sum shares, add noise,
    /// exchange, open and update.
    fn aggregate_precad(
        &self,
        state: &mut ServerState,
        selected: Vec<usize>,
        subs: Vec<Submission>,
    ) -> Result<RoundOutcome, ProtocolError> {
        let t = state.round;
        let d = state.model.dimension();
        let mut record = RoundRecord {
            round: t,
            selected: selected.clone(),
            log: MessageLog::new(self.level),
            ..Default::default()
        };
        let mut acc = [ShareVector::zeros(PartyId::ServerA, d), ShareVector::zeros(PartyId::ServerB, d)];
        let mut plain = vec![0.0; d];
        let mut weight = 0.0;
        for s in subs {
            record.log.append(s.log);
            record.verdicts.push((s.client, s.valid));
            if !s.valid {
                continue;
            }
            record.valid.push(s.client);
            weight += self.fed.clients[s.client].weight();
            let (xa, xb) = s.shares;
            accumulate(&self.field, &mut acc[0], &xa)?;
            accumulate(&self.field, &mut acc[1], &xb)?;
            for (p, u) in plain.iter_mut().zip(&s.update) {
                *p += u;
            }
        }
        for &i in &selected {
            state.participations[i] += 1;
        }
        state.round += 1;

        if record.valid.is_empty() || weight == 0.0 {
            record.skipped = true;
            return Ok(RoundOutcome { record, audit: None });
        }

        let std = self.cfg.sigma * self.cfg.record_clip;
        for party in PartyId::BOTH {
            let (sealed, xi) = server_noise(self.root_seed, t, party, d, std);
            record.noise_seals.push(sealed);
            add_encoded_noise(&self.field, &self.codec, &mut acc[party.index()], &xi)?;
            for (p, v) in plain.iter_mut().zip(&xi) {
                *p += v;
            }
        }
        record.log.record(SA, SB, MessageKind::NoisyAccumulator, None, &acc[0].values);
        record.log.record(SB, SA, MessageKind::NoisyAccumulator, None, &acc[1].values);
        let opened = reconstruct(&self.field, &acc[0], &acc[1])?;
        let decoded = self.codec.decode_vec(&self.field, &opened);
        let step = self.cfg.eta / weight;
        for (th, g) in state.model.theta.iter_mut().zip(&decoded) {
            *th += step * g;
        }
        let audit = RoundAudit {
            plaintext_aggregate: plain,
            decoded_aggregate: decoded,
            valid_count: record.valid.len(),
        };
        Ok(RoundOutcome {
            record,
            audit: Some(audit),
        })
    }

    /// One plaintext round: local-noise (`Ldp`) or raw (`NonPrivate`) updates.
    pub fn round_plaintext(&self, variant: Variant, state: &mut ServerState) -> Result<RoundOutcome, ProtocolError> {
        assert!(variant != Variant::Precad, "use round_precad");
        let t = state.round;
        let d = state.model.dimension();
        let selected = self.select(t);
        let clip = match variant {
            Variant::Ldp if self.cfg.ldp_post_noise_clip => Some(self.cfg.client_clip),
            _ => None,
        };
        let attack = self.attack_update(&state.model, t, &selected, clip);
        let model = &state.model;
        let updates = self.map_clients(&selected, |i| Ok(self.client_update(variant, model, t, i, attack.as_ref())))?;

        let mut record = RoundRecord {
            round: t,
            selected: selected.clone(),
            valid: selected.clone(),
            log: MessageLog::new(self.level),
            ..Default::default()
        };
        let mut sum = vec![0.0; d];
        let mut weight = 0.0;
        for (&i, u) in selected.iter().zip(&updates) {
            record.log.record_plaintext(Endpoint::Client(i), SA, i, u);
            weight += self.fed.clients[i].weight();
            for (s, v) in sum.iter_mut().zip(u) {
                *s += v;
            }
        }
        for &i in &selected {
            state.participations[i] += 1;
        }
        state.round += 1;
        if selected.is_empty() || weight == 0.0 {
            record.skipped = true;
            return Ok(RoundOutcome { record, audit: None });
        }
        let step = self.cfg.eta / weight;
        for (th, g) in state.model.theta.iter_mut().zip(&sum) {
            *th += step * g;
        }
        Ok(RoundOutcome { record, audit: None })
    }

    pub fn round(&self, variant: Variant, state: &mut ServerState) -> Result<RoundOutcome, ProtocolError> {
        match variant {
            Variant::Precad => self.round_precad(state),
            v => self.round_plaintext(v, state),
        }
    }

    /// Record-level epsilons after the rounds in `state`. Case 1 uses the
    /// largest realized participation count; case 2 uses the configured
    /// `q` and the number of rounds so far.
    pub fn epsilons(&self, variant: Variant, state: &ServerState, delta: f64) -> Result<(Option<f64>, Option<f64>), ProtocolError> {
        if variant == Variant::NonPrivate || self.cfg.sigma == 0.0 {
            return Ok((None, None));
        }
        let (p, t_i) = self
            .fed
            .clients
            .iter()
            .zip(&state.participations)
            .filter(|(c, _)| c.kind == ClientKind::Benign)
            .map(|(c, &n)| (c.sampling_prob, n))
            .fold((0.0f64, 0u64), |(p, n), (cp, cn)| (p.max(cp), n.max(cn)));
        if p == 0.0 {
            return Ok((Some(0.0), Some(0.0)));
        }
        let server = accountant::eps_for_delta(
            accountant::mu_record_server_corrupted(p, t_i as f64, self.cfg.sigma)?,
            delta,
        )?;
        let client = match variant {
            Variant::Precad => accountant::eps_for_delta(
                accountant::mu_record_clients_only(self.cfg.q, p, state.round as f64, self.cfg.sigma)?,
                delta,
            )?,
            // every observer sees the same locally noised update
            _ => server,
        };
        Ok((Some(server), Some(client)))
    }

    fn metrics_row(&self, variant: Variant, state: &ServerState, bytes: BytesPerParty, delta: f64) -> Result<MetricsRow, ProtocolError> {
        let target = self.fed.attack.map(|a| a.target).unwrap_or(0);
        let m = eval_metrics(&state.model, &self.fed.test, self.fed.triggered_test.as_ref(), target)?;
        let (eps_server, eps_client) = self.epsilons(variant, state, delta)?;
        Ok(MetricsRow {
            round: state.round,
            main_acc: m.main_acc,
            backdoor_acc: m.backdoor_acc,
            eps_server,
            eps_client,
            bytes_sent_per_party: bytes,
            wall_ms: None,
        })
    }

    /// Runs `cfg.rounds` rounds from `initial`, evaluating every
    /// `opts.eval_every` rounds and after the last one.
    pub fn train(&self, variant: Variant, initial: Model, opts: &TrainOptions) -> Result<TrainOutput, ProtocolError> {
        self.cfg.validate()?;
        self.fed.validate()?;
        let mut state = ServerState::new(initial, self.fed.clients.len());
        let mut transcript = Transcript::default();
        let mut audits = Vec::new();
        let mut history = Vec::new();
        let mut bytes = BytesPerParty::default();
        let every = opts.eval_every.max(1);
        let start = std::time::Instant::now();
        while state.round < self.cfg.rounds {
            let out = self.round(variant, &mut state)?;
            bytes += out.record.bytes_sent_per_party();
            transcript.rounds.push(out.record);
            if opts.keep_audits {
                audits.extend(out.audit);
            }
            if state.round % every == 0 || state.round == self.cfg.rounds {
                let mut row = self.metrics_row(variant, &state, bytes, opts.delta)?;
                if opts.record_timing {
                    row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                }
                history.push(row);
            }
        }
        Ok(TrainOutput {
            model: state.model,
            history,
            transcript,
            audits,
        })
    }
}

/// Convenience wrapper around [`Simulator::train`].
pub fn train(
    variant: Variant,
    cfg: RoundConfig,
    fed: &Federation,
    initial: Model,
    root_seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutput, ProtocolError> {
    let mut sim = Simulator::new(cfg, fed, root_seed);
    sim.level = opts.transcript_level;
    sim.mode = opts.mode;
    sim.train(variant, initial, opts)
}

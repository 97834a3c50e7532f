//! Experiment configuration, multi-seed runs, sweeps and metrics files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{self, AccountantError, RobustnessInputs};
use crate::ffield::{FixedPointCodec, PrimeField};
use crate::learn::{make_population, poison_backdoor, triggered_test_set, Arch, DataSpec, Model, Trigger};
use crate::mpc::{validate_update, validation_headroom_ok, TrustedDealer};
use crate::protocol::{
    self, AttackParams, AttackSchedule, Client, ClientKind, ExecutionMode, Federation, MetricsRow, ProtocolError,
    RoundConfig, TrainOptions, Variant,
};
use crate::seed::derive_rng;
use crate::sharing::split;
use crate::transcript::{MessageLog, Transcript, TranscriptLevel};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config { .. } | ExperimentError::Parse(_))
    }
}

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: usize,
    pub per_client: usize,
    pub shards_per_client: usize,
    pub test_size: usize,
    /// Number of malicious clients `K`; they are clients `0..K`.
    pub malicious: usize,
    pub sampling_prob: f64,
    pub data: DataSpec,
    pub arch: Arch,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            n: 50,
            per_client: 100,
            shards_per_client: 2,
            test_size: 2000,
            malicious: 0,
            sampling_prob: 0.02,
            data: DataSpec::default(),
            arch: Arch::Logistic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    /// Defaults to every background (trigger) feature.
    pub trigger_indices: Option<Vec<usize>>,
    pub trigger_value: f64,
    pub target: usize,
    pub local_iters: usize,
    pub local_lr: f64,
    pub poison_fraction: f64,
    pub schedule: AttackSchedule,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            trigger_indices: None,
            trigger_value: 3.0,
            target: 0,
            local_iters: 5,
            local_lr: 0.02,
            poison_fraction: 0.5,
            schedule: AttackSchedule::EverySelectedRound,
        }
    }
}

impl AttackSpec {
    pub fn trigger(&self, data: &DataSpec) -> Trigger {
        let indices = self
            .trigger_indices
            .clone()
            .unwrap_or_else(|| (data.num_features - data.trigger_dims..data.num_features).collect());
        Trigger {
            indices,
            value: self.trigger_value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub population: PopulationSpec,
    pub round: RoundConfig,
    /// Target `delta` for reported epsilons.
    pub delta: f64,
    pub attack: Option<AttackSpec>,
    pub seeds: Vec<u64>,
    pub eval_every: u64,
    pub mode: ExecutionMode,
    pub transcript_level: TranscriptLevel,
    pub write_transcripts: bool,
    /// Adds wall-clock timings to metrics; outputs then differ run to run.
    pub record_timing: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::Precad,
            population: PopulationSpec::default(),
            round: RoundConfig::default(),
            delta: 1e-5,
            attack: None,
            seeds: vec![1],
            eval_every: 10,
            mode: ExecutionMode::Sequential,
            transcript_level: TranscriptLevel::Summary,
            write_transcripts: false,
            record_timing: false,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let p = &self.population;
        let d = &p.data;
        if p.n == 0 {
            return Err(config_err("population.n", "need at least one client"));
        }
        if p.shards_per_client == 0 || p.per_client < p.shards_per_client {
            return Err(config_err(
                "population.shards_per_client",
                "must be between 1 and population.per_client",
            ));
        }
        if p.test_size == 0 {
            return Err(config_err("population.test_size", "must be positive"));
        }
        if !(p.sampling_prob > 0.0 && p.sampling_prob <= 1.0) {
            return Err(config_err("population.sampling_prob", "must lie in (0, 1]"));
        }
        if d.num_classes < 2 {
            return Err(config_err("population.data.num_classes", "need at least two classes"));
        }
        if d.trigger_dims >= d.num_features {
            return Err(config_err(
                "population.data.trigger_dims",
                "must leave at least one informative feature",
            ));
        }
        if let Arch::Mlp { hidden: 0 } = p.arch {
            return Err(config_err("population.arch.hidden", "must be positive"));
        }
        if p.malicious > 0 && 2 * p.malicious >= p.n {
            return Err(config_err(
                "population.malicious",
                format!("{} malicious of {} clients; must be fewer than the benign ones", p.malicious, p.n),
            ));
        }
        if p.malicious > 0 && self.attack.is_none() {
            return Err(config_err("attack", "required when population.malicious > 0"));
        }
        if let Some(a) = &self.attack {
            if a.target >= d.num_classes {
                return Err(config_err("attack.target", "must be a valid class label"));
            }
            if let Some(&i) = a.trigger(d).indices.iter().find(|&&i| i >= d.num_features) {
                return Err(config_err("attack.trigger_indices", format!("index {i} out of range")));
            }
            if !(0.0..=1.0).contains(&a.poison_fraction) {
                return Err(config_err("attack.poison_fraction", "must lie in [0, 1]"));
            }
            if !(a.local_lr >= 0.0 && a.local_lr.is_finite()) {
                return Err(config_err("attack.local_lr", "must be non-negative"));
            }
        }
        if let Err(ProtocolError::InvalidConfig { field, reason }) = self.round.validate() {
            return Err(config_err(format!("round.{field}"), reason));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_err("delta", "must lie in (0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "need at least one seed"));
        }
        if self.eval_every == 0 {
            return Err(config_err("eval_every", "must be positive"));
        }
        if self.variant == Variant::Precad {
            let field = PrimeField::default();
            let codec = FixedPointCodec::default();
            let bound = self.round.client_clip + self.round.slack;
            let aggregate = p.n as f64 * bound / codec.resolution() + 2.0 * noise_headroom(&codec, &self.round);
            if aggregate >= field.modulus() as f64 / 2.0 || !validation_headroom_ok(&field, &codec, bound) {
                return Err(config_err("round.client_clip", "too large for the field: n * C * 2^f must stay below p / 2"));
            }
        }
        Ok(())
    }
}

/// Ten standard deviations of one server's noise, at the encoding scale.
fn noise_headroom(codec: &FixedPointCodec, round: &RoundConfig) -> f64 {
    10.0 * round.sigma * round.record_clip / codec.resolution()
}

/// Builds the population for `seed`. Independent of the variant, so every
/// variant sees the same clients for the same seed.
pub fn build_federation(cfg: &ExperimentConfig, seed: u64) -> Result<(Federation, Model), ExperimentError> {
    let p = &cfg.population;
    let mut rng = derive_rng(seed, "population", &[]);
    let pop = make_population(&p.data, p.n, p.per_client, p.shards_per_client, p.test_size, &mut rng);
    let mut attack_params = None;
    let mut triggered = None;
    let mut clients: Vec<Client> = pop
        .clients
        .into_iter()
        .map(|data| Client {
            kind: ClientKind::Benign,
            data,
            sampling_prob: p.sampling_prob,
        })
        .collect();
    if let Some(a) = &cfg.attack {
        let trigger = a.trigger(&p.data);
        let mut poison_rng = derive_rng(seed, "poison", &[]);
        for c in clients.iter_mut().take(p.malicious) {
            c.kind = ClientKind::MaliciousBackdoor;
            c.data = poison_backdoor(&c.data, &trigger, a.target, a.poison_fraction, &mut poison_rng)
                .map_err(ProtocolError::from)?;
        }
        triggered = Some(triggered_test_set(&pop.test, &trigger, a.target).map_err(ProtocolError::from)?);
        attack_params = Some(AttackParams {
            target: a.target,
            local_iters: a.local_iters,
            local_lr: a.local_lr,
            schedule: a.schedule,
        });
    }
    let model = Model::init(
        p.arch,
        p.data.num_features,
        p.data.num_classes,
        &mut derive_rng(seed, "init", &[]),
    );
    Ok((
        Federation {
            clients,
            test: pop.test,
            triggered_test: triggered,
            attack: attack_params,
        },
        model,
    ))
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub history: Vec<MetricsRow>,
    pub transcript: Transcript,
}

/// Mean over seeds of the rows sharing a round index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub round: u64,
    pub runs: usize,
    pub main_acc: f64,
    pub main_acc_std: f64,
    pub backdoor_acc: Option<f64>,
    pub eps_server: Option<f64>,
    pub eps_client: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    pub mean: Vec<MeanRow>,
}

impl ExperimentResult {
    pub fn final_mean(&self) -> Option<&MeanRow> {
        self.mean.last()
    }
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn mean_rows(runs: &[RunResult]) -> Vec<MeanRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .history
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let rows: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.history.get(k)).collect();
            let n = rows.len() as f64;
            let main = rows.iter().map(|r| r.main_acc).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.main_acc - main).powi(2)).sum::<f64>() / n;
            MeanRow {
                round: row.round,
                runs: rows.len(),
                main_acc: main,
                main_acc_std: var.sqrt(),
                backdoor_acc: mean_of(rows.iter().map(|r| r.backdoor_acc)),
                eps_server: mean_of(rows.iter().map(|r| r.eps_server)),
                eps_client: mean_of(rows.iter().map(|r| r.eps_client)),
            }
        })
        .collect()
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, ExperimentError> {
    let (fed, model) = build_federation(cfg, seed)?;
    let opts = TrainOptions {
        eval_every: cfg.eval_every,
        delta: cfg.delta,
        transcript_level: cfg.transcript_level,
        mode: cfg.mode,
        keep_audits: false,
        record_timing: cfg.record_timing,
    };
    let out = protocol::train(cfg.variant, cfg.round, &fed, model, seed, &opts)?;
    Ok(RunResult {
        seed,
        history: out.history,
        transcript: out.transcript,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Runs every seed, then writes `run_<seed>.jsonl`, `mean.jsonl` and, when
/// requested, `transcript_<seed>.jsonl` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    cfg.validate()?;
    let runs: Vec<RunResult> = match cfg.mode {
        ExecutionMode::Sequential => cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<_, _>>(),
        ExecutionMode::Threaded => cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<_, _>>(),
    }?;
    let mean = mean_rows(&runs);
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for r in &runs {
            write_jsonl(&dir.join(format!("run_{}.jsonl", r.seed)), &r.history)?;
            if cfg.write_transcripts {
                let path = dir.join(format!("transcript_{}.jsonl", r.seed));
                let file = File::create(&path).map_err(io_err(&path))?;
                let mut w = BufWriter::new(file);
                r.transcript.write_jsonl(&mut w).map_err(io_err(&path))?;
                w.flush().map_err(io_err(&path))?;
            }
        }
        write_jsonl(&dir.join("mean.jsonl"), &mean)?;
    }
    Ok(ExperimentResult { runs, mean })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    N,
    K,
    C,
    Sigma,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" => Ok(SweepAxis::N),
            "k" | "K" => Ok(SweepAxis::K),
            "c" | "C" => Ok(SweepAxis::C),
            "sigma" => Ok(SweepAxis::Sigma),
            other => Err(format!("unknown sweep axis `{other}` (expected n, k, c or sigma)")),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::N => "n",
            SweepAxis::K => "k",
            SweepAxis::C => "c",
            SweepAxis::Sigma => "sigma",
        })
    }
}

impl SweepAxis {
    /// A copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, ExperimentError> {
        let mut c = cfg.clone();
        let count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(config_err(self.to_string(), format!("{v} is not a count")))
            }
        };
        match self {
            SweepAxis::N => c.population.n = count(value)?,
            SweepAxis::K => c.population.malicious = count(value)?,
            SweepAxis::C => c.round.client_clip = value,
            SweepAxis::Sigma => c.round.sigma = value,
        }
        c.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("{self}_{value}")));
        Ok(c)
    }
}

/// One line of `sweep.csv`: the final seed-averaged row of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub variant: Variant,
    pub round: u64,
    pub runs: usize,
    pub main_acc: f64,
    pub main_acc_std: f64,
    pub backdoor_acc: Option<f64>,
    pub eps_server: Option<f64>,
    pub eps_client: Option<f64>,
}

/// One experiment per value; rows come back in the order of `values`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>, ExperimentError> {
    if values.is_empty() {
        return Err(config_err("sweep.values", "need at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let point = axis.apply(cfg, v)?;
        let res = run_experiment(&point)?;
        let last = res
            .final_mean()
            .cloned()
            .ok_or_else(|| config_err("round.rounds", "sweep points need at least one round"))?;
        rows.push(SweepRow {
            axis,
            value: v,
            variant: cfg.variant,
            round: last.round,
            runs: last.runs,
            main_acc: last.main_acc,
            main_acc_std: last.main_acc_std,
            backdoor_acc: last.backdoor_acc,
            eps_server: last.eps_server,
            eps_client: last.eps_client,
        });
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Inputs of the `accountant` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountantQuery {
    pub q: f64,
    pub p_i: f64,
    pub rounds: u64,
    /// Realized participation count; defaults to `q * rounds`.
    pub participations: Option<u64>,
    pub sigma: f64,
    pub record_clip: f64,
    pub client_clip: f64,
    pub delta: f64,
    /// Expected bounded loss of the clean run, for the robustness bounds.
    pub expected_loss: f64,
    pub loss_bound: f64,
    pub malicious: u32,
}

impl Default for AccountantQuery {
    fn default() -> Self {
        AccountantQuery {
            q: 0.1,
            p_i: 0.05,
            rounds: 5000,
            participations: None,
            sigma: 1.0,
            record_clip: 1.0,
            client_clip: 1.0,
            delta: 1e-5,
            expected_loss: 0.5,
            loss_bound: 1.0,
            malicious: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantReport {
    pub mu_server: f64,
    pub mu_client: f64,
    pub eps_server: f64,
    pub eps_client: f64,
    pub mu_client_level: f64,
    pub robust_lower: f64,
    pub robust_upper: f64,
}

pub fn account(q: &AccountantQuery) -> Result<AccountantReport, ExperimentError> {
    let params = accountant::PrivacyParams {
        q: q.q,
        p_i: q.p_i,
        rounds: q.rounds,
        participations: q.participations,
        sigma: q.sigma,
        record_clip: q.record_clip,
        client_clip: q.client_clip,
    };
    params.validate()?;
    let row = accountant::privacy_at(&params, q.rounds, params.victim_rounds(), q.delta)?;
    let mu_cl = accountant::mu_client_level(q.q, q.rounds as f64, q.sigma, q.record_clip, q.client_clip)?;
    let bounds = accountant::robustness_bounds(&RobustnessInputs {
        expected_loss: q.expected_loss,
        loss_bound: q.loss_bound,
        malicious: q.malicious,
        mu: mu_cl,
    })?;
    Ok(AccountantReport {
        mu_server: row.mu_server,
        mu_client: row.mu_client,
        eps_server: row.eps_server,
        eps_client: row.eps_client,
        mu_client_level: mu_cl.value(),
        robust_lower: bounds.lower,
        robust_upper: bounds.upper,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub d: usize,
    pub trials: usize,
    pub mean_ms: f64,
    pub verdict_error_count: usize,
}

/// Times secure validation on random vectors whose norms straddle `clip`
/// and counts verdicts that disagree with the plaintext predicate.
pub fn validate_bench(dims: &[usize], trials: usize, clip: f64, seed: u64) -> Result<Vec<BenchRow>, ExperimentError> {
    let field = PrimeField::default();
    let codec = FixedPointCodec::default();
    let slack = RoundConfig::default().slack;
    let mut rows = Vec::new();
    for &d in dims {
        if d == 0 {
            return Err(config_err("dims", "dimensions must be positive"));
        }
        let mut rng = derive_rng(seed, "bench", &[d as u64]);
        let mut dealer = TrustedDealer::from_seed(field, seed);
        let mut errors = 0;
        let mut elapsed = 0.0;
        for _ in 0..trials {
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = crate::learn::l2_norm(&raw).max(1e-12);
            let target = clip * rng.random_range(0.5..1.5);
            let x: Vec<f64> = raw.iter().map(|v| v * target / norm).collect();
            let enc = codec.encode_vec(&field, &x).map_err(ProtocolError::from)?;
            let decoded_norm = crate::learn::l2_norm(&codec.decode_vec(&field, &enc));
            let (xa, xb) = split(&field, &enc, &mut rng);
            let mut log = MessageLog::new(TranscriptLevel::Summary);
            let start = Instant::now();
            let v = validate_update(&field, &codec, &xa, &xb, clip, slack, &mut dealer, None, &mut log)
                .map_err(ProtocolError::from)?;
            elapsed += start.elapsed().as_secs_f64();
            let bound = clip + slack;
            // the threshold itself is rounded to the grid; ignore the sliver
            // of norms within one quantum of it
            let ambiguous = (decoded_norm * decoded_norm - bound * bound).abs() <= 2.0 * codec.resolution();
            if !ambiguous && v.valid != (decoded_norm <= bound) {
                errors += 1;
            }
        }
        rows.push(BenchRow {
            d,
            trials,
            mean_ms: if trials == 0 { 0.0 } else { elapsed * 1e3 / trials as f64 },
            verdict_error_count: errors,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| ExperimentError::Io {
        path: PathBuf::from("<output>"),
        source,
    })
}

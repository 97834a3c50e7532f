//! Gaussian-DP accounting and the robustness bounds derived from it.
//!
//! Record-level privacy has two cases depending on whether the adversary
//! holds one of the servers:
//!
//! * one server corrupted: `mu = p_i * sqrt(T_i * (e^{1/sigma^2} - 1))`
//! * clients only:         `mu = q * p_i * sqrt(T * (e^{1/(2 sigma^2)} - 1))`
//!
//! Client-level privacy uses `sigma~ = sqrt(2) * sigma * R / C` and
//! `mu = q * sqrt(T * (e^{1/sigma~^2} - 1))`; with group size `K` it bounds
//! how far `K` malicious clients can move the expected loss of any test point.
//!
//! A `mu`-GDP mechanism is `(eps, delta(eps))`-DP for every `eps >= 0` with
//! `delta(eps) = Phi(-eps/mu + mu/2) - e^eps * Phi(-eps/mu - mu/2)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountantError {
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> AccountantError {
    AccountantError::InvalidParameter {
        name,
        value,
        reason,
    }
}

fn check_probability(name: &'static str, v: f64) -> Result<(), AccountantError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(name, v, "must lie in [0, 1]"));
    }
    Ok(())
}

fn check_positive(name: &'static str, v: f64) -> Result<(), AccountantError> {
    if !(v > 0.0) || v.is_nan() {
        return Err(invalid(name, v, "must be positive"));
    }
    Ok(())
}

fn check_non_negative(name: &'static str, v: f64) -> Result<(), AccountantError> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(invalid(name, v, "must be finite and non-negative"));
    }
    Ok(())
}

/// The GDP privacy parameter.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GdpMu(f64);

impl GdpMu {
    pub const ZERO: GdpMu = GdpMu(0.0);

    pub fn new(mu: f64) -> Result<Self, AccountantError> {
        check_non_negative("mu", mu)?;
        Ok(GdpMu(mu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpPoint {
    pub eps: f64,
    pub delta: f64,
}

/// Inputs to the record-level and client-level accountants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// Client selection probability.
    pub q: f64,
    /// Record sampling probability.
    pub p_i: f64,
    /// Total global rounds.
    pub rounds: u64,
    /// Rounds the victim actually took part in. `None` means use `q * T`.
    pub participations: Option<u64>,
    pub sigma: f64,
    pub record_clip: f64,
    pub client_clip: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<(), AccountantError> {
        check_probability("q", self.q)?;
        check_probability("p_i", self.p_i)?;
        check_positive("sigma", self.sigma)?;
        check_positive("record_clip", self.record_clip)?;
        check_positive("client_clip", self.client_clip)?;
        if let Some(t_i) = self.participations {
            if t_i > self.rounds {
                return Err(invalid("participations", t_i as f64, "cannot exceed rounds"));
            }
        }
        Ok(())
    }

    /// `T_i`, realized if known, otherwise its expectation `q * T`.
    pub fn victim_rounds(&self) -> f64 {
        self.participations
            .map(|t| t as f64)
            .unwrap_or(self.q * self.rounds as f64)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, accurate far into the lower tail where `Phi` underflows.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    // Mills-ratio asymptotic series.
    let z2 = x * x;
    let w = 1.0 / z2;
    let series = 1.0 + w * (-1.0 + w * (3.0 + w * (-15.0 + w * (105.0 + w * (-945.0 + w * 10395.0)))));
    -0.5 * z2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

fn subsampled_gaussian_mu(rate: f64, steps: f64, noise_multiplier: f64) -> f64 {
    rate * (steps * (1.0 / (noise_multiplier * noise_multiplier)).exp_m1()).sqrt()
}

/// Record-level `mu` against an adversary holding one server.
pub fn mu_record_server_corrupted(p_i: f64, t_i: f64, sigma: f64) -> Result<GdpMu, AccountantError> {
    check_probability("p_i", p_i)?;
    check_non_negative("t_i", t_i)?;
    check_positive("sigma", sigma)?;
    GdpMu::new(subsampled_gaussian_mu(p_i, t_i, sigma))
}

/// Record-level `mu` against an adversary holding clients only. Both
/// servers' noise counts, so the multiplier is `sqrt(2) * sigma`.
pub fn mu_record_clients_only(q: f64, p_i: f64, rounds: f64, sigma: f64) -> Result<GdpMu, AccountantError> {
    check_probability("q", q)?;
    check_probability("p_i", p_i)?;
    check_non_negative("rounds", rounds)?;
    check_positive("sigma", sigma)?;
    GdpMu::new(subsampled_gaussian_mu(
        q * p_i,
        rounds,
        std::f64::consts::SQRT_2 * sigma,
    ))
}

/// Client-level `mu` with effective multiplier `sqrt(2) * sigma * R / C`.
pub fn mu_client_level(
    q: f64,
    rounds: f64,
    sigma: f64,
    record_clip: f64,
    client_clip: f64,
) -> Result<GdpMu, AccountantError> {
    check_probability("q", q)?;
    check_non_negative("rounds", rounds)?;
    check_positive("sigma", sigma)?;
    check_positive("record_clip", record_clip)?;
    check_positive("client_clip", client_clip)?;
    let sigma_tilde = std::f64::consts::SQRT_2 * sigma * record_clip / client_clip;
    GdpMu::new(subsampled_gaussian_mu(q, rounds, sigma_tilde))
}

pub fn gdp_compose(mus: &[GdpMu]) -> GdpMu {
    GdpMu(mus.iter().map(|m| m.0 * m.0).sum::<f64>().sqrt())
}

/// Group privacy for a group of `k >= 1`.
pub fn gdp_group(mu: GdpMu, k: u32) -> Result<GdpMu, AccountantError> {
    if k < 1 {
        return Err(invalid("k", k as f64, "group size must be at least 1"));
    }
    Ok(GdpMu(mu.0 * k as f64))
}

fn delta_unchecked(mu: f64, eps: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    // head - tail = head * (1 - tail / head), with the ratio taken in logs so
    // the far tail keeps full relative precision
    let a = -eps / mu + mu / 2.0;
    let log_head = log_normal_cdf(a);
    let log_tail = eps + log_normal_cdf(a - mu);
    (log_head.exp() * -(log_tail - log_head).exp_m1()).clamp(0.0, 1.0)
}

/// `delta(eps)` of a `mu`-GDP mechanism.
pub fn gdp_to_dp_delta(mu: GdpMu, eps: f64) -> Result<f64, AccountantError> {
    check_non_negative("eps", eps)?;
    Ok(delta_unchecked(mu.0, eps))
}

/// Smallest `eps` with `delta(eps) <= delta_target`, by bisection on the
/// decreasing curve. Returns 0 when `eps = 0` already meets the target.
pub fn eps_for_delta(mu: GdpMu, delta_target: f64) -> Result<f64, AccountantError> {
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(invalid("delta", delta_target, "must lie in (0, 1)"));
    }
    let m = mu.0;
    if delta_unchecked(m, 0.0) <= delta_target {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while delta_unchecked(m, hi) > delta_target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(invalid("delta", delta_target, "unreachable for this mu"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if delta_unchecked(m, mid) > delta_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

/// Inputs to the poisoning-robustness bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessInputs {
    /// Expected loss without attack, in `[0, B]`.
    pub expected_loss: f64,
    pub loss_bound: f64,
    pub malicious: u32,
    /// Client-level GDP parameter of a single client.
    pub mu: GdpMu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessBounds {
    pub lower: f64,
    pub upper: f64,
    /// Optimizing `eps` for each side.
    pub eps_lower: f64,
    pub eps_upper: f64,
}

const GRID_POINTS: usize = 4001;
const EPS_CAP: f64 = 700.0;

/// Upper end of the search range: where `delta_K` drops below 1e-16.
fn robustness_eps_max(group_mu: f64) -> f64 {
    let mut hi = 1.0;
    while hi < EPS_CAP && delta_unchecked(group_mu, hi) >= 1e-16 {
        hi *= 2.0;
    }
    hi.min(EPS_CAP)
}

/// Minimizes `objective` on `[0, hi]`: dense grid, then golden-section
/// search inside the bracket around the best grid point.
fn grid_then_refine(hi: f64, objective: impl Fn(f64) -> f64) -> (f64, f64) {
    let step = hi / (GRID_POINTS - 1) as f64;
    let mut best = (0.0, objective(0.0));
    for i in 1..GRID_POINTS {
        let e = i as f64 * step;
        let v = objective(e);
        if v < best.1 {
            best = (e, v);
        }
    }
    let mut a = (best.0 - step).max(0.0);
    let mut b = (best.0 + step).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-12 * hi.max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    for (e, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (e, v);
        }
    }
    best
}

/// Bounds on the attacked expected loss:
/// `upper = inf_eps e^eps L + B delta_K(eps)`,
/// `lower = sup_eps e^-eps (L - B delta_K(eps))`, where `delta_K` uses the
/// group parameter `K mu`. Clamped to `[0, B]`.
pub fn robustness_bounds(inputs: &RobustnessInputs) -> Result<RobustnessBounds, AccountantError> {
    check_positive("loss_bound", inputs.loss_bound)?;
    check_non_negative("expected_loss", inputs.expected_loss)?;
    if inputs.expected_loss > inputs.loss_bound {
        return Err(invalid(
            "expected_loss",
            inputs.expected_loss,
            "must not exceed the loss bound",
        ));
    }
    let l = inputs.expected_loss;
    let b = inputs.loss_bound;
    if inputs.malicious == 0 {
        return Ok(RobustnessBounds {
            lower: l,
            upper: l,
            eps_lower: 0.0,
            eps_upper: 0.0,
        });
    }
    let group_mu = inputs.mu.0 * inputs.malicious as f64;
    let hi = robustness_eps_max(group_mu);
    let (eps_upper, upper) = grid_then_refine(hi, |e| {
        (e.exp() * l + b * delta_unchecked(group_mu, e)).min(f64::MAX)
    });
    let (eps_lower, neg_lower) = grid_then_refine(hi, |e| {
        -((-e).exp() * (l - b * delta_unchecked(group_mu, e)))
    });
    Ok(RobustnessBounds {
        lower: (-neg_lower).clamp(0.0, l),
        upper: upper.clamp(l, b),
        eps_lower,
        eps_upper,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReportRow {
    pub round: u64,
    pub mu_server: f64,
    pub mu_client: f64,
    pub eps_server: f64,
    pub eps_client: f64,
}

/// Record-level `eps` at `delta_target` for both corruption cases after each
/// `t` in `0..=T` (step `stride`), using the expected participation `q t`.
pub fn privacy_report(
    params: &PrivacyParams,
    delta_target: f64,
    stride: u64,
) -> Result<Vec<PrivacyReportRow>, AccountantError> {
    params.validate()?;
    let stride = stride.max(1);
    let mut rows = Vec::new();
    let mut t = 0;
    loop {
        rows.push(privacy_at(params, t, params.q * t as f64, delta_target)?);
        if t == params.rounds {
            break;
        }
        t = (t + stride).min(params.rounds);
    }
    Ok(rows)
}

/// Both record-level cases after `t` rounds, with the victim having taken
/// part in `t_i` of them.
pub fn privacy_at(
    params: &PrivacyParams,
    t: u64,
    t_i: f64,
    delta_target: f64,
) -> Result<PrivacyReportRow, AccountantError> {
    let mu_server = mu_record_server_corrupted(params.p_i, t_i, params.sigma)?;
    let mu_client = mu_record_clients_only(params.q, params.p_i, t as f64, params.sigma)?;
    Ok(PrivacyReportRow {
        round: t,
        mu_server: mu_server.value(),
        mu_client: mu_client.value(),
        eps_server: eps_for_delta(mu_server, delta_target)?,
        eps_client: eps_for_delta(mu_client, delta_target)?,
    })
}

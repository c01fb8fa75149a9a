//! Provider scoring.
//!
//! Each provider is described by four metrics in `[0, 1]`, all oriented so
//! that higher is better: time `T`, cost `C`, security `S` and privacy `P`.
//! The score is the weighted sum `a1 T + a2 C + a3 S + a4 P` with the weights
//! normalized to sum to one, so scores stay in `[0, 1]`.
//!
//! Raw measurements are turned into metrics by [`normalize_profiles`]: every
//! raw value is divided by the largest value of its kind across the provider
//! set, and time and cost are then flipped (`1 - x`) because less is better.
//! Dividing by the maximum makes the result independent of the unit the raw
//! numbers were reported in.
//!
//! The breach model multiplies three probabilities: getting past the
//! provider's authentication, reaching the hierarchy level the data sits on,
//! and the fraction of the object's information held there.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankingError {
    #[error("invalid profile {id}: {reason}")]
    InvalidProfile { id: String, reason: String },
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("depth {depth} outside 1..={levels}")]
    DepthOutOfRange { depth: usize, levels: usize },
    #[error("no providers to rank")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub id: String,
    pub time: f64,
    pub cost: f64,
    pub security: f64,
    pub privacy: f64,
    pub p_auth_bypass: f64,
    /// Index 0 is depth 1. Non-increasing with depth.
    pub p_hier_access: Vec<f64>,
    pub info_fraction: f64,
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ProviderProfile {
    pub fn validate(&self) -> Result<(), RankingError> {
        let bad = |reason: &str| RankingError::InvalidProfile {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        for (name, v) in [
            ("time", self.time),
            ("cost", self.cost),
            ("security", self.security),
            ("privacy", self.privacy),
            ("p_auth_bypass", self.p_auth_bypass),
            ("info_fraction", self.info_fraction),
        ] {
            if !unit(v) {
                return Err(bad(&format!("{name}={v} outside [0, 1]")));
            }
        }
        if self.p_hier_access.iter().any(|&p| !unit(p)) {
            return Err(bad("hierarchy probability outside [0, 1]"));
        }
        if self.p_hier_access.windows(2).any(|w| w[1] > w[0]) {
            return Err(bad("hierarchy probabilities must not increase with depth"));
        }
        Ok(())
    }

    /// Metrics that all equal `v`; handy for tests and defaults.
    pub fn uniform(id: impl Into<String>, v: f64) -> Self {
        ProviderProfile {
            id: id.into(),
            time: v,
            cost: v,
            security: v,
            privacy: v,
            p_auth_bypass: 0.0,
            p_hier_access: vec![1.0],
            info_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights([f64; 4]);

impl Weights {
    /// Weights for time, cost, security and privacy; normalized to sum 1.
    pub fn new(time: f64, cost: f64, security: f64, privacy: f64) -> Result<Self, RankingError> {
        let w = [time, cost, security, privacy];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(RankingError::InvalidWeights);
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(RankingError::InvalidWeights);
        }
        Ok(Weights(w.map(|x| x / sum)))
    }

    pub fn equal() -> Self {
        Weights([0.25; 4])
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::equal()
    }
}

pub fn rank_score(profile: &ProviderProfile, w: &Weights) -> f64 {
    let [a1, a2, a3, a4] = w.0;
    a1 * profile.time + a2 * profile.cost + a3 * profile.security + a4 * profile.privacy
}

/// Descending by score; equal scores fall back to ascending provider id.
pub fn rank_providers(profiles: &[ProviderProfile], w: &Weights) -> Vec<ProviderProfile> {
    let mut scored: Vec<(f64, &ProviderProfile)> =
        profiles.iter().map(|p| (rank_score(p, w), p)).collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().map(|(_, p)| p.clone()).collect()
}

/// `p_auth_bypass * p_hier_access[depth - 1] * info_fraction`.
pub fn breach_probability(profile: &ProviderProfile, depth: usize) -> Result<f64, RankingError> {
    let levels = profile.p_hier_access.len();
    if depth == 0 || depth > levels {
        return Err(RankingError::DepthOutOfRange { depth, levels });
    }
    Ok(profile.p_auth_bypass * profile.p_hier_access[depth - 1] * profile.info_fraction)
}

/// Raw measurements as ingested from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProfile {
    pub id: String,
    /// Lower is better (e.g. milliseconds).
    pub time: f64,
    /// Lower is better (e.g. price per GB).
    pub cost: f64,
    pub security: f64,
    /// `None` reuses the security value.
    pub privacy: Option<f64>,
    pub p_auth_bypass: f64,
    pub p_hier_access: Vec<f64>,
    pub info_fraction: f64,
}

impl RawProfile {
    pub fn new(id: impl Into<String>, time: f64, cost: f64, security: f64) -> Self {
        RawProfile {
            id: id.into(),
            time,
            cost,
            security,
            privacy: None,
            p_auth_bypass: 0.0,
            p_hier_access: vec![1.0],
            info_fraction: 1.0,
        }
    }
}

/// Turn raw measurements into validated `[0, 1]` metrics.
pub fn normalize_profiles(raw: &[RawProfile]) -> Result<Vec<ProviderProfile>, RankingError> {
    if raw.is_empty() {
        return Err(RankingError::Empty);
    }
    for r in raw {
        let values = [Some(r.time), Some(r.cost), Some(r.security), r.privacy];
        if values.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RankingError::InvalidProfile {
                id: r.id.clone(),
                reason: "raw metrics must be finite and non-negative".into(),
            });
        }
    }
    let max = |f: &dyn Fn(&RawProfile) -> f64| raw.iter().map(f).fold(0.0, f64::max);
    let scale = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    let t_max = max(&|r| r.time);
    let c_max = max(&|r| r.cost);
    let s_max = max(&|r| r.security);
    let p_max = max(&|r| r.privacy.unwrap_or(r.security));

    raw.iter()
        .map(|r| {
            let p = ProviderProfile {
                id: r.id.clone(),
                time: 1.0 - scale(r.time, t_max),
                cost: 1.0 - scale(r.cost, c_max),
                security: scale(r.security, s_max),
                privacy: scale(r.privacy.unwrap_or(r.security), p_max),
                p_auth_bypass: r.p_auth_bypass,
                p_hier_access: r.p_hier_access.clone(),
                info_fraction: r.info_fraction,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}

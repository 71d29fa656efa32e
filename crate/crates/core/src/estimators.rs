//! Per-block estimates of the own effective gain `alpha_lk^lk`.
//!
//! Four strategies are provided:
//!
//! * hardening: the mean `E{alpha}`;
//! * model-aided: invert the sample power, `sqrt((xi - T) / eta)` above a
//!   threshold, the mean otherwise;
//! * genie: the model-aided rule fed with the asymptotic sample power of the
//!   block instead of the measured one;
//! * learned: the feed-forward regressor of [`crate::learn`].
//!
//! All of them are pure functions of the block observations and the
//! drop-static [`InterferenceProfile`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::CorrelationSet;
use crate::downlink::EffectiveGains;
use crate::learn::MlpModel;
use crate::linalg::trace_product;
use crate::scenario::{Scenario, UserDrop};
use crate::uplink::EstimationStatistics;
use crate::{Error, Result};

/// Mean interference-plus-noise power under MR precoding with MMSE estimates.
///
/// For user `u` in cell `l`, every other precoder `v` (served from cell `l'`)
/// contributes `rho eta_v tr(Phi_v R^{l'}_u) / tr(Phi_v)`. Co-pilot users
/// in other cells add the coherent term
/// `rho eta_v tau_p^2 p_u |tr(F_v R^{l'}_u)|^2 / tr(Phi_v)` with
/// `F_v = sqrt(p_v) R_v Psi_v^{-1}` the estimation filter of `v`.
pub fn compute_t(
    scenario: &Scenario,
    corr: &CorrelationSet,
    stats: &[EstimationStatistics],
    cell: usize,
    k: usize,
) -> Result<f64> {
    let u = scenario.user(cell, k);
    let rho = scenario.rho_dl();
    let tau_p = scenario.tau_p() as f64;
    let mut t = scenario.config.sigma2_dl;
    for (v, st) in stats.iter().enumerate() {
        if v == u {
            continue;
        }
        if !(st.trace_phi > 0.0) {
            return Err(Error::Numeric(format!("tr(Phi) of user {v} is zero")));
        }
        let bs = scenario.cell_of(v);
        let r = corr.get(bs, u).matrix();
        t += rho * scenario.eta(v) * trace_product(&st.phi, r).re / st.trace_phi;
        if bs != cell && scenario.slot_of(v) == k && scenario.pilots.co_pilot_cells(cell).contains(&bs) {
            let coherent = trace_product(&st.filter, r).norm_sqr();
            t += rho * scenario.eta(v) * tau_p * tau_p * scenario.p_hat(u) * coherent / st.trace_phi;
        }
    }
    Ok(t)
}

/// Drop-static quantities the estimators of one user need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceProfile {
    /// Mean interference-plus-noise power `T_lk`, mW.
    pub t: f64,
    /// `E{alpha_lk^lk} = sqrt(rho tr(Phi_lk))`.
    pub alpha_mean: f64,
    /// Threshold `Theta_lk = theta T_lk`.
    pub theta: f64,
    /// Power fraction `eta_lk`.
    pub eta: f64,
    /// `eta_lk rho beta^l_lk`, the third learned feature.
    pub eta_rho_beta: f64,
}

impl InterferenceProfile {
    pub fn new(t: f64, alpha_mean: f64, theta_mult: f64, eta: f64, eta_rho_beta: f64) -> Result<Self> {
        if !(theta_mult >= 1.0) {
            return Err(Error::Config(format!(
                "threshold multiplier must be >= 1, got {theta_mult}"
            )));
        }
        Ok(Self {
            t,
            alpha_mean,
            theta: theta_mult * t,
            eta,
            eta_rho_beta,
        })
    }
}

/// Profiles of every user of a drop.
pub fn build_profiles(
    scenario: &Scenario,
    drop: &UserDrop,
    corr: &CorrelationSet,
    stats: &[EstimationStatistics],
    theta_mult: f64,
) -> Result<Vec<InterferenceProfile>> {
    (0..scenario.num_users())
        .map(|u| {
            let (cell, k) = (scenario.cell_of(u), scenario.slot_of(u));
            let t = compute_t(scenario, corr, stats, cell, k)?;
            let alpha_mean = (scenario.rho_dl() * stats[u].trace_phi).sqrt();
            let eta = scenario.eta(u);
            InterferenceProfile::new(t, alpha_mean, theta_mult, eta, eta * scenario.rho_dl() * drop.beta(cell, u))
        })
        .collect()
}

/// Which case of the thresholded rule produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Formula,
    FallbackMean,
    Learned,
}

/// Estimator identifiers, as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Hardening,
    ModelAided,
    Genie,
    Learned,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Hardening, Method::ModelAided, Method::Genie, Method::Learned];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hardening => "hardening",
            Method::ModelAided => "model",
            Method::Genie => "genie",
            Method::Learned => "learned",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (hardening | model | genie | learned)")))
    }
}

/// Real, non-negative estimate of `alpha_lk^lk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub value: f64,
    pub branch: Branch,
    pub method: Method,
}

pub fn estimate_hardening(profile: &InterferenceProfile) -> GainEstimate {
    GainEstimate {
        value: profile.alpha_mean,
        branch: Branch::FallbackMean,
        method: Method::Hardening,
    }
}

fn thresholded(xi: f64, profile: &InterferenceProfile, eta: f64, method: Method) -> Result<GainEstimate> {
    if !(eta > 0.0) {
        return Err(Error::Config("eta_lk must be positive for the model-aided estimator".into()));
    }
    Ok(if xi > profile.theta {
        GainEstimate {
            value: ((xi - profile.t) / eta).sqrt(),
            branch: Branch::Formula,
            method,
        }
    } else {
        GainEstimate {
            value: profile.alpha_mean,
            branch: Branch::FallbackMean,
            method,
        }
    })
}

/// Thresholded inversion of the sample power `xi`.
pub fn estimate_model_aided(xi: f64, profile: &InterferenceProfile, eta: f64) -> Result<GainEstimate> {
    thresholded(xi, profile, eta, Method::ModelAided)
}

/// The model-aided rule evaluated at the exact asymptotic sample power of the
/// block, which only the simulator knows.
pub fn estimate_genie_asymptotic(
    scenario: &Scenario,
    gains: &EffectiveGains,
    user: usize,
    profile: &InterferenceProfile,
) -> Result<GainEstimate> {
    let xi_inf = gains.asymptotic_power(scenario, user);
    thresholded(xi_inf, profile, scenario.eta(user), Method::Genie)
}

pub fn estimate_learned(features: &[f64], model: &MlpModel) -> Result<GainEstimate> {
    Ok(GainEstimate {
        value: model.predict(features)?,
        branch: Branch::Learned,
        method: Method::Learned,
    })
}

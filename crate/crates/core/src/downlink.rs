//! MR precoding, effective downlink gains and received data samples.

use std::str::FromStr;

use rand::Rng;

use crate::channel::ChannelSet;
use crate::linalg::{complex_normal, CVector};
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

/// `w = g_hat / sqrt(tr(Phi))`, normalized by the analytic mean energy of the
/// estimate so that `E{||w||^2} = 1`.
pub fn mr_precoder(g_hat: &CVector, trace_phi: f64) -> Result<CVector> {
    if !(trace_phi > 0.0) {
        return Err(Error::Numeric(
            "MR precoder needs tr(Phi) > 0 (user invisible to its BS)".into(),
        ));
    }
    Ok(g_hat * C64::new(1.0 / trace_phi.sqrt(), 0.0))
}

/// Effective gains `alpha_obs^src = sqrt(rho) (g^{cell(src)}_obs)^H w_src`
/// for every (observer, source) pair of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGains {
    users: usize,
    alpha: Vec<C64>,
}

impl EffectiveGains {
    pub fn from_parts(users: usize, alpha: Vec<C64>) -> Self {
        assert_eq!(alpha.len(), users * users);
        Self { users, alpha }
    }

    /// Gain seen by `observer` on the precoder of `source`.
    pub fn get(&self, observer: usize, source: usize) -> C64 {
        self.alpha[observer * self.users + source]
    }

    /// Own gain `alpha_lk^lk`.
    pub fn own(&self, user: usize) -> C64 {
        self.get(user, user)
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    /// Row of gains seen by `observer`.
    pub fn row(&self, observer: usize) -> &[C64] {
        &self.alpha[observer * self.users..(observer + 1) * self.users]
    }

    /// Asymptotic sample power: `sum_src eta_src |alpha_obs^src|^2 + sigma2`.
    pub fn asymptotic_power(&self, scenario: &Scenario, observer: usize) -> f64 {
        self.row(observer)
            .iter()
            .enumerate()
            .map(|(src, a)| scenario.eta(src) * a.norm_sqr())
            .sum::<f64>()
            + scenario.config.sigma2_dl
    }

    /// Interference power of the current block, `sum_{src != obs} eta_src |alpha_obs^src|^2`.
    pub fn interference_power(&self, scenario: &Scenario, observer: usize) -> f64 {
        self.row(observer)
            .iter()
            .enumerate()
            .filter(|&(src, _)| src != observer)
            .map(|(src, a)| scenario.eta(src) * a.norm_sqr())
            .sum()
    }
}

pub fn effective_gains(
    scenario: &Scenario,
    channels: &ChannelSet,
    precoders: &[CVector],
) -> EffectiveGains {
    let users = scenario.num_users();
    let amp = scenario.rho_dl().sqrt();
    let mut alpha = Vec::with_capacity(users * users);
    for obs in 0..users {
        for (src, w) in precoders.iter().enumerate() {
            let g = channels.get(scenario.cell_of(src), obs);
            alpha.push(g.dotc(w) * amp);
        }
    }
    EffectiveGains { users, alpha }
}

/// Transmitted vector `x_l[n] = sum_k sqrt(rho eta_lk) w_lk s_lk[n]` of BS `cell`.
pub fn transmitted_signal(scenario: &Scenario, precoders: &[CVector], cell: usize, symbols: &[C64]) -> CVector {
    let mut x = CVector::zeros(scenario.antennas());
    for k in 0..scenario.users_per_cell() {
        let u = scenario.user(cell, k);
        let a = (scenario.rho_dl() * scenario.eta(u)).sqrt();
        x.axpy(symbols[u] * a, &precoders[u], C64::new(1.0, 0.0));
    }
    x
}

/// Data symbol alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymbolModel {
    /// Circularly symmetric complex Gaussian, unit power.
    #[default]
    Gaussian,
    /// Unit-power QPSK.
    Qpsk,
}

impl SymbolModel {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> C64 {
        match self {
            SymbolModel::Gaussian => complex_normal(rng),
            SymbolModel::Qpsk => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                let bits: u8 = rng.random_range(0..4);
                C64::new(
                    if bits & 1 == 0 { h } else { -h },
                    if bits & 2 == 0 { h } else { -h },
                )
            }
        }
    }
}

impl FromStr for SymbolModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SymbolModel::Gaussian),
            "qpsk" => Ok(SymbolModel::Qpsk),
            other => Err(Error::Config(format!("unknown symbol model '{other}'"))),
        }
    }
}

/// Received data samples of one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    /// `y[user][n]`.
    pub y: Vec<Vec<C64>>,
    /// `s[source][n]`.
    pub symbols: Vec<Vec<C64>>,
    /// Sample mean power per user.
    pub xi: Vec<f64>,
}

impl ReceivedBlock {
    /// Builds a block from samples and computes the sample powers.
    pub fn from_samples(y: Vec<Vec<C64>>, symbols: Vec<Vec<C64>>) -> Result<Self> {
        if y.iter().any(|row| row.len() < 2) {
            return Err(Error::Config(
                "at least two data symbols per block are needed for leave-one-out power".into(),
            ));
        }
        let xi = y
            .iter()
            .map(|row| row.iter().map(|v| v.norm_sqr()).sum::<f64>() / row.len() as f64)
            .collect();
        Ok(Self { y, symbols, xi })
    }

    pub fn data_len(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    /// Leave-one-out sample power excluding symbol `n` (zero-based).
    pub fn xi_loo(&self, user: usize, n: usize) -> f64 {
        let len = self.data_len() as f64;
        ((len * self.xi[user] - self.y[user][n].norm_sqr()) / (len - 1.0)).max(0.0)
    }
}

/// Draws the data symbols and receiver noise of one block and forms
/// `y_lk[n] = sum_src sqrt(eta_src) alpha_lk^src s_src[n] + w_lk[n]`.
pub fn synthesize_block<R: Rng + ?Sized>(
    scenario: &Scenario,
    gains: &EffectiveGains,
    rng: &mut R,
    symbol_model: SymbolModel,
) -> Result<ReceivedBlock> {
    let len = scenario.data_len();
    if len < 2 {
        return Err(Error::Config(format!(
            "tau_c - tau_p = {len}: leave-one-out power needs at least 2 data symbols"
        )));
    }
    let users = scenario.num_users();
    let coef: Vec<C64> = (0..users)
        .flat_map(|obs| (0..users).map(move |src| (obs, src)))
        .map(|(obs, src)| gains.get(obs, src) * scenario.eta(src).sqrt())
        .collect();
    let noise_std = scenario.config.sigma2_dl.sqrt();
    let mut symbols = vec![Vec::with_capacity(len); users];
    let mut y = vec![Vec::with_capacity(len); users];
    let mut s = vec![C64::new(0.0, 0.0); users];
    for _ in 0..len {
        for (src, slot) in s.iter_mut().enumerate() {
            *slot = symbol_model.draw(rng);
            symbols[src].push(*slot);
        }
        for (obs, out) in y.iter_mut().enumerate() {
            let row = &coef[obs * users..(obs + 1) * users];
            let mut acc = complex_normal(rng) * noise_std;
            for (c, x) in row.iter().zip(&s) {
                acc += c * x;
            }
            out.push(acc);
        }
    }
    ReceivedBlock::from_samples(y, symbols)
}

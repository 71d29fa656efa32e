//! Uplink pilot reception and MMSE channel estimation under pilot
//! contamination.
//!
//! The despread pilot observation of user `k` at BS `l` is synthesized
//! directly as
//! `y = tau_p sum_{l' in P_l} sqrt(p_{l'k}) g^l_{l'k} + n`, `n ~ CN(0, tau_p sigma2_ul I)`,
//! so that `g_hat = sqrt(p_lk) R Psi^{-1} y ~ CN(0, tau_p p_lk R Psi^{-1} R)`.

use nalgebra::{Cholesky, Dyn};
use rand::Rng;

use crate::channel::{ChannelSet, CorrelationSet};
use crate::linalg::{complex_normal_vector, hermitize, trace_re, CMatrix, CVector};
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

/// Drop-static MMSE statistics of one user at its serving BS.
#[derive(Debug, Clone)]
pub struct EstimationStatistics {
    /// `sum_{l' in P_l} tau_p p_{l'k} R^l_{l'k} + sigma2_ul I`.
    pub psi: CMatrix,
    /// Covariance of the estimate, `tau_p p R Psi^{-1} R`.
    pub phi: CMatrix,
    /// Error covariance `R - Phi`.
    pub c: CMatrix,
    /// `sqrt(p) R Psi^{-1}`, applied to the pilot observation.
    pub filter: CMatrix,
    pub trace_phi: f64,
}

/// `Psi_lk` at BS `cell` for pilot slot `k`, summing over co-pilot cells only.
pub fn build_psi(scenario: &Scenario, corr: &CorrelationSet, cell: usize, k: usize) -> CMatrix {
    let m = scenario.antennas();
    let tau_p = scenario.tau_p() as f64;
    let mut psi = CMatrix::identity(m, m) * C64::new(scenario.config.sigma2_ul, 0.0);
    for &other in scenario.pilots.co_pilot_cells(cell) {
        let v = scenario.user(other, k);
        psi += corr.get(cell, v).matrix() * C64::new(tau_p * scenario.p_hat(v), 0.0);
    }
    psi
}

impl EstimationStatistics {
    pub fn new(scenario: &Scenario, corr: &CorrelationSet, cell: usize, k: usize) -> Result<Self> {
        let u = scenario.user(cell, k);
        let r = corr.get(cell, u).matrix();
        let psi = build_psi(scenario, corr, cell, k);
        let chol = Cholesky::<C64, Dyn>::new(psi.clone()).ok_or_else(|| {
            Error::Numeric(format!("Psi of user ({cell}, {k}) is not positive definite"))
        })?;
        // Psi^{-1} R, and R Psi^{-1} = (Psi^{-1} R)^H since both are Hermitian
        let psi_inv_r = chol.solve(r);
        let p = scenario.p_hat(u);
        let tau_p = scenario.tau_p() as f64;
        let phi = hermitize(&((r * &psi_inv_r) * C64::new(tau_p * p, 0.0)));
        let c = r - &phi;
        let filter = psi_inv_r.adjoint() * C64::new(p.sqrt(), 0.0);
        let trace_phi = trace_re(&phi);
        Ok(Self {
            psi,
            phi,
            c,
            filter,
            trace_phi,
        })
    }
}

/// Statistics for every user at its serving BS, indexed by flat user.
pub fn all_statistics(scenario: &Scenario, corr: &CorrelationSet) -> Result<Vec<EstimationStatistics>> {
    (0..scenario.num_users())
        .map(|u| EstimationStatistics::new(scenario, corr, scenario.cell_of(u), scenario.slot_of(u)))
        .collect()
}

/// Despread pilot observation of user `(cell, k)` at BS `cell`.
pub fn pilot_observation<R: Rng + ?Sized>(
    scenario: &Scenario,
    channels: &ChannelSet,
    cell: usize,
    k: usize,
    rng: &mut R,
) -> CVector {
    let tau_p = scenario.tau_p() as f64;
    let noise_std = (tau_p * scenario.config.sigma2_ul).sqrt();
    let mut y = complex_normal_vector(scenario.antennas(), rng) * C64::new(noise_std, 0.0);
    for &other in scenario.pilots.co_pilot_cells(cell) {
        let v = scenario.user(other, k);
        y.axpy(C64::new(tau_p * scenario.p_hat(v).sqrt(), 0.0), channels.get(cell, v), C64::new(1.0, 0.0));
    }
    y
}

/// MMSE estimates `g_hat^l_lk` of every user at its serving BS for one block.
pub fn estimate_channels<R: Rng + ?Sized>(
    scenario: &Scenario,
    stats: &[EstimationStatistics],
    channels: &ChannelSet,
    rng: &mut R,
) -> Vec<CVector> {
    (0..scenario.num_users())
        .map(|u| {
            let (cell, k) = (scenario.cell_of(u), scenario.slot_of(u));
            let y = pilot_observation(scenario, channels, cell, k, rng);
            &stats[u].filter * y
        })
        .collect()
}

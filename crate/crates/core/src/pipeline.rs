//! Drop-static context and per-block processing chain.
//!
//! A [`DropContext`] caches everything that only depends on user positions:
//! correlation matrices, MMSE statistics and estimator profiles. Each
//! [`CoherenceBlock`] then costs one correlated draw per channel, one filter
//! application per user and the data-phase synthesis.

use crate::channel::{ChannelSet, CorrelationSet};
use crate::downlink::{effective_gains, mr_precoder, synthesize_block, EffectiveGains, ReceivedBlock, SymbolModel};
use crate::estimators::{build_profiles, InterferenceProfile};
use crate::linalg::CVector;
use crate::rng::{RngStreams, Stage};
use crate::scenario::{drop_users, Scenario, UserDrop};
use crate::uplink::{all_statistics, estimate_channels, EstimationStatistics};
use crate::Result;

/// Default threshold multiplier, `Theta = T`.
pub const DEFAULT_THETA: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct DropContext {
    pub drop: UserDrop,
    pub corr: CorrelationSet,
    pub stats: Vec<EstimationStatistics>,
    pub profiles: Vec<InterferenceProfile>,
}

/// Channel-side state of one block, before any data symbol is sent.
#[derive(Debug, Clone)]
pub struct BlockChannels {
    pub channels: ChannelSet,
    pub estimates: Vec<CVector>,
    pub precoders: Vec<CVector>,
    pub gains: EffectiveGains,
}

#[derive(Debug, Clone)]
pub struct CoherenceBlock {
    pub channels: BlockChannels,
    pub received: ReceivedBlock,
}

impl DropContext {
    pub fn new(scenario: &Scenario, drop: UserDrop, theta_mult: f64) -> Result<Self> {
        let corr = CorrelationSet::build(scenario, &drop)?;
        let stats = all_statistics(scenario, &corr)?;
        let profiles = build_profiles(scenario, &drop, &corr, &stats, theta_mult)?;
        Ok(Self {
            drop,
            corr,
            stats,
            profiles,
        })
    }

    /// Draws drop number `index` from the drop stream and builds its context.
    pub fn generate(scenario: &Scenario, streams: &RngStreams, index: u64, theta_mult: f64) -> Result<Self> {
        let drop = drop_users(scenario, &mut streams.stream(Stage::Drop, index))?;
        Self::new(scenario, drop, theta_mult)
    }

    /// Channels, estimates, precoders and gains of block `block` of drop `drop`.
    pub fn block_channels(&self, scenario: &Scenario, streams: &RngStreams, drop: u64, block: u64) -> Result<BlockChannels> {
        let channels = ChannelSet::sample(&self.corr, &mut streams.block_stream(Stage::Channel, drop, block));
        let estimates = estimate_channels(
            scenario,
            &self.stats,
            &channels,
            &mut streams.block_stream(Stage::Pilot, drop, block),
        );
        let precoders = estimates
            .iter()
            .zip(&self.stats)
            .map(|(g, st)| mr_precoder(g, st.trace_phi))
            .collect::<Result<Vec<_>>>()?;
        let gains = effective_gains(scenario, &channels, &precoders);
        Ok(BlockChannels {
            channels,
            estimates,
            precoders,
            gains,
        })
    }

    /// Full block including the downlink data phase.
    pub fn block(
        &self,
        scenario: &Scenario,
        streams: &RngStreams,
        drop: u64,
        block: u64,
        symbols: SymbolModel,
    ) -> Result<CoherenceBlock> {
        let channels = self.block_channels(scenario, streams, drop, block)?;
        let received = synthesize_block(
            scenario,
            &channels.gains,
            &mut streams.block_stream(Stage::Downlink, drop, block),
            symbols,
        )?;
        Ok(CoherenceBlock { channels, received })
    }

    /// Learned-estimator input `[xi'(n), T, eta rho beta]` of `user`.
    pub fn features(&self, received: &ReceivedBlock, user: usize, n: usize) -> [f64; 3] {
        let p = &self.profiles[user];
        [received.xi_loo(user, n), p.t, p.eta_rho_beta]
    }
}

//! NMSE, ergodic spectral efficiency bounds and empirical CDFs.
//!
//! The blind SE uses the use-and-then-forget style bound in which the user
//! equalizes with its own per-block estimate `abar`:
//!
//! ```text
//! SINR = |E{a/abar}|^2 / ( var{a/abar}
//!                          + sum_{other} eta'/eta E{|a'/abar|^2}
//!                          + sigma^2/eta E{1/|abar|^2} )
//! ```
//!
//! and the perfect-CSI SE averages `log2(1 + SINR)` of the instantaneous
//! SINR over blocks. All expectations are per drop.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::downlink::{EffectiveGains, ReceivedBlock, SymbolModel};
use crate::estimators::{
    estimate_genie_asymptotic, estimate_hardening, estimate_learned, estimate_model_aided, Method,
};
use crate::learn::MlpModel;
use crate::linalg::trace_product;
use crate::pipeline::DropContext;
use crate::rng::RngStreams;
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

/// Tolerance below zero accepted for a variance before it is clamped.
pub const VARIANCE_EPS: f64 = 1e-9;
/// Fraction of rejected blocks above which a user's blind SE is flagged.
pub const REJECTION_FLAG: f64 = 0.01;
/// Smallest block count accepted by [`se_blind`].
pub const MIN_SE_BLOCKS: u64 = 1000;

/// `sum |est - alpha|^2 / sum |alpha|^2`.
pub fn nmse(estimates: &[f64], truths: &[C64]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::Config(format!(
            "nmse needs equally many estimates and truths (got {} and {})",
            estimates.len(),
            truths.len()
        )));
    }
    let mut acc = NmseAccumulator::default();
    for (e, a) in estimates.iter().zip(truths) {
        acc.add(*e, *a);
    }
    acc.value()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NmseAccumulator {
    pub error: f64,
    pub power: f64,
    pub count: u64,
}

impl NmseAccumulator {
    pub fn add(&mut self, estimate: f64, truth: C64) {
        self.error += (C64::new(estimate, 0.0) - truth).norm_sqr();
        self.power += truth.norm_sqr();
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.error += other.error;
        self.power += other.power;
        self.count += other.count;
    }

    pub fn value(&self) -> Result<f64> {
        if !(self.power > 0.0) {
            return Err(Error::Config("nmse undefined: all true gains are zero".into()));
        }
        Ok(self.error / self.power)
    }
}

/// Running sums of the blind SINR terms for one user.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    pub count: u64,
    /// `sum alpha / abar`.
    pub ratio: C64,
    /// `sum |alpha / abar|^2`.
    pub ratio_sq: f64,
    /// `sum (sum_other eta' |alpha'|^2) / |abar|^2`.
    pub cross: f64,
    /// `sum 1 / |abar|^2`.
    pub inv_sq: f64,
    /// Blocks skipped because `abar = 0`.
    pub rejected: u64,
}

/// Finalized blind SINR of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindSinr {
    pub sinr: f64,
    /// The variance estimate fell slightly below zero and was clamped.
    pub variance_clamped: bool,
}

impl MomentAccumulator {
    /// Adds one block: own gain, own estimate and the weighted interference
    /// power `sum_other eta' |alpha'|^2`.
    pub fn add(&mut self, alpha: C64, estimate: f64, interference: f64) {
        if estimate == 0.0 || !estimate.is_finite() {
            self.rejected += 1;
            return;
        }
        let inv = 1.0 / estimate;
        let r = alpha * inv;
        self.count += 1;
        self.ratio += r;
        self.ratio_sq += r.norm_sqr();
        self.cross += interference * inv * inv;
        self.inv_sq += inv * inv;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.ratio += other.ratio;
        self.ratio_sq += other.ratio_sq;
        self.cross += other.cross;
        self.inv_sq += other.inv_sq;
        self.rejected += other.rejected;
    }

    pub fn rejection_rate(&self) -> f64 {
        let total = self.count + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }

    /// A user whose estimate is zero in every block cannot equalize at all
    /// and gets SINR 0; its rejection rate of 1 flags it.
    pub fn finalize(&self, eta: f64, sigma2: f64) -> Result<BlindSinr> {
        if self.count == 0 {
            return Ok(BlindSinr {
                sinr: 0.0,
                variance_clamped: false,
            });
        }
        let n = self.count as f64;
        let mean = self.ratio / n;
        let mut var = self.ratio_sq / n - mean.norm_sqr();
        let scale = self.ratio_sq / n;
        if var < -VARIANCE_EPS * scale.max(1.0) {
            return Err(Error::Numeric(format!("negative variance {var} in SE moments")));
        }
        let variance_clamped = var < 0.0;
        var = var.max(0.0);
        let denom = var + self.cross / n / eta + sigma2 / eta * self.inv_sq / n;
        if !(denom > 0.0) {
            return Err(Error::Numeric(format!("non-positive SINR denominator {denom}")));
        }
        Ok(BlindSinr {
            sinr: mean.norm_sqr() / denom,
            variance_clamped,
        })
    }
}

pub fn se_from_sinr(prelog: f64, sinr: f64) -> f64 {
    prelog * (1.0 + sinr).log2()
}

/// Instantaneous SINR of `user` with perfect knowledge of its gains.
pub fn perfect_sinr(scenario: &Scenario, gains: &EffectiveGains, user: usize) -> f64 {
    let signal = scenario.eta(user) * gains.own(user).norm_sqr();
    signal / (gains.interference_power(scenario, user) + scenario.config.sigma2_dl)
}

/// Blind SINR with the hardening estimate in closed form:
/// `eta rho tr(Phi) / (eta rho tr(R Phi) / tr(Phi) + T)`.
pub fn hardening_sinr_closed_form(scenario: &Scenario, ctx: &DropContext, user: usize) -> f64 {
    let st = &ctx.stats[user];
    let cell = scenario.cell_of(user);
    let r = ctx.corr.get(cell, user).matrix();
    let rho_eta = scenario.rho_dl() * scenario.eta(user);
    let own_var = rho_eta * trace_product(r, &st.phi).re / st.trace_phi;
    rho_eta * st.trace_phi / (own_var + ctx.profiles[user].t)
}

/// Spectral efficiency series: one blind bound per estimator plus perfect CSI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeMethod {
    Blind(Method),
    Perfect,
}

impl SeMethod {
    pub fn name(self) -> &'static str {
        match self {
            SeMethod::Blind(m) => m.name(),
            SeMethod::Perfect => "perfect",
        }
    }
}

impl fmt::Display for SeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "perfect" {
            Ok(SeMethod::Perfect)
        } else {
            s.parse().map(SeMethod::Blind)
        }
    }
}

/// What to evaluate on each drop.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub blocks: u64,
    pub symbols: SymbolModel,
    pub methods: &'a [Method],
    pub model: Option<&'a MlpModel>,
    /// Compute the SE bounds in addition to NMSE.
    pub se: bool,
    /// Zero-based symbol index of the leave-one-out power.
    pub symbol_index: usize,
    /// Average the blind SE moments over every symbol index instead.
    pub se_all_symbols: bool,
}

impl<'a> EvalOptions<'a> {
    pub fn new(blocks: u64, methods: &'a [Method]) -> Self {
        Self {
            blocks,
            symbols: SymbolModel::Gaussian,
            methods,
            model: None,
            se: true,
            symbol_index: 0,
            se_all_symbols: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEval {
    pub cell: usize,
    pub slot: usize,
    pub nmse: BTreeMap<Method, f64>,
    /// Error and power sums behind `nmse`, for pooling across users.
    pub nmse_sums: BTreeMap<Method, NmseAccumulator>,
    pub se: BTreeMap<SeMethod, f64>,
    /// Blocks rejected from the blind SE moments per estimator.
    pub rejected: BTreeMap<Method, u64>,
    pub variance_clamped: BTreeMap<Method, bool>,
}

impl UserEval {
    /// Whether any estimator exceeded the tolerated rejection rate.
    pub fn flagged(&self, blocks: u64) -> bool {
        self.rejected.values().any(|&r| r as f64 > REJECTION_FLAG * blocks as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropEval {
    pub drop: u64,
    pub blocks: u64,
    pub users: Vec<UserEval>,
}

/// Per-user estimates of every requested method for one block.
fn block_estimates(
    scenario: &Scenario,
    ctx: &DropContext,
    gains: &EffectiveGains,
    xi: &dyn Fn(usize) -> f64,
    received: &ReceivedBlock,
    n: usize,
    method: Method,
    model: Option<&MlpModel>,
) -> Result<Vec<f64>> {
    let users = scenario.num_users();
    match method {
        Method::Hardening => Ok(ctx.profiles.iter().map(|p| estimate_hardening(p).value).collect()),
        Method::ModelAided => (0..users)
            .map(|u| estimate_model_aided(xi(u), &ctx.profiles[u], scenario.eta(u)).map(|e| e.value))
            .collect(),
        Method::Genie => (0..users)
            .map(|u| estimate_genie_asymptotic(scenario, gains, u, &ctx.profiles[u]).map(|e| e.value))
            .collect(),
        Method::Learned => {
            let model = model.ok_or_else(|| Error::Config("the learned estimator needs a model file".into()))?;
            if users == 1 {
                return Ok(vec![estimate_learned(&ctx.features(received, 0, n), model)?.value]);
            }
            let rows: Vec<[f64; 3]> = (0..users).map(|u| ctx.features(received, u, n)).collect();
            model.predict_many(&rows)
        }
    }
}

/// NMSE and SE of every user of one drop over `opts.blocks` common blocks.
///
/// NMSE estimates use the full-block power `xi`; the blind SE uses the
/// leave-one-out power `xi'[n]` so the estimate is independent of the
/// equalized symbol. The learned estimator always consumes `xi'[n]`.
pub fn evaluate_drop(
    scenario: &Scenario,
    ctx: &DropContext,
    streams: &RngStreams,
    drop: u64,
    opts: &EvalOptions,
) -> Result<DropEval> {
    let users = scenario.num_users();
    if opts.blocks == 0 {
        return Err(Error::Config("evaluation needs at least one block".into()));
    }
    if opts.symbol_index >= scenario.data_len() {
        return Err(Error::Config(format!(
            "symbol index {} outside the {} data symbols",
            opts.symbol_index,
            scenario.data_len()
        )));
    }
    let nm = opts.methods.len();
    let mut nmse_acc = vec![NmseAccumulator::default(); nm * users];
    let mut moments = vec![MomentAccumulator::default(); nm * users];
    let mut perfect = vec![0.0; users];
    let sigma2 = scenario.config.sigma2_dl;
    for b in 0..opts.blocks {
        let blk = ctx.block(scenario, streams, drop, b, opts.symbols)?;
        let gains = &blk.channels.gains;
        let rx = &blk.received;
        let full = |u: usize| rx.xi[u];
        for (mi, &m) in opts.methods.iter().enumerate() {
            let est = block_estimates(scenario, ctx, gains, &full, rx, opts.symbol_index, m, opts.model)?;
            for u in 0..users {
                nmse_acc[mi * users + u].add(est[u], gains.own(u));
            }
        }
        if !opts.se {
            continue;
        }
        let interference: Vec<f64> = (0..users).map(|u| gains.interference_power(scenario, u)).collect();
        for u in 0..users {
            perfect[u] += (1.0 + scenario.eta(u) * gains.own(u).norm_sqr() / (interference[u] + sigma2)).log2();
        }
        let indices: Vec<usize> = if opts.se_all_symbols {
            (0..rx.data_len()).collect()
        } else {
            vec![opts.symbol_index]
        };
        for &n in &indices {
            let loo = |u: usize| rx.xi_loo(u, n);
            for (mi, &m) in opts.methods.iter().enumerate() {
                let est = block_estimates(scenario, ctx, gains, &loo, rx, n, m, opts.model)?;
                for u in 0..users {
                    moments[mi * users + u].add(gains.own(u), est[u], interference[u]);
                }
            }
        }
    }
    let prelog = scenario.prelog();
    let mut out = Vec::with_capacity(users);
    for u in 0..users {
        let mut ue = UserEval {
            cell: scenario.cell_of(u),
            slot: scenario.slot_of(u),
            nmse: BTreeMap::new(),
            nmse_sums: BTreeMap::new(),
            se: BTreeMap::new(),
            rejected: BTreeMap::new(),
            variance_clamped: BTreeMap::new(),
        };
        for (mi, &m) in opts.methods.iter().enumerate() {
            ue.nmse.insert(m, nmse_acc[mi * users + u].value()?);
            ue.nmse_sums.insert(m, nmse_acc[mi * users + u]);
            if opts.se {
                let acc = &moments[mi * users + u];
                let sinr = acc.finalize(scenario.eta(u), sigma2)?;
                ue.se.insert(SeMethod::Blind(m), se_from_sinr(prelog, sinr.sinr));
                ue.rejected.insert(m, acc.rejected);
                ue.variance_clamped.insert(m, sinr.variance_clamped);
            }
        }
        if opts.se {
            ue.se.insert(SeMethod::Perfect, prelog * perfect[u] / opts.blocks as f64);
        }
        out.push(ue);
    }
    Ok(DropEval {
        drop,
        blocks: opts.blocks,
        users: out,
    })
}

fn check_se_blocks(blocks: u64) -> Result<()> {
    if blocks < MIN_SE_BLOCKS {
        return Err(Error::Config(format!(
            "SE moments need at least {MIN_SE_BLOCKS} blocks, got {blocks}"
        )));
    }
    Ok(())
}

/// Blind SE of every user of a drop with one estimator.
pub fn se_blind(
    scenario: &Scenario,
    ctx: &DropContext,
    streams: &RngStreams,
    drop: u64,
    method: Method,
    model: Option<&MlpModel>,
    blocks: u64,
) -> Result<Vec<f64>> {
    check_se_blocks(blocks)?;
    let methods = [method];
    let opts = EvalOptions {
        model,
        ..EvalOptions::new(blocks, &methods)
    };
    let ev = evaluate_drop(scenario, ctx, streams, drop, &opts)?;
    Ok(ev.users.iter().map(|u| u.se[&SeMethod::Blind(method)]).collect())
}

/// Perfect-CSI SE of every user of a drop.
pub fn se_perfect(scenario: &Scenario, ctx: &DropContext, streams: &RngStreams, drop: u64, blocks: u64) -> Result<Vec<f64>> {
    if blocks == 0 {
        return Err(Error::Config("evaluation needs at least one block".into()));
    }
    let users = scenario.num_users();
    let mut acc = vec![0.0; users];
    for b in 0..blocks {
        let blk = ctx.block_channels(scenario, streams, drop, b)?;
        for (u, a) in acc.iter_mut().enumerate() {
            *a += (1.0 + perfect_sinr(scenario, &blk.gains, u)).log2();
        }
    }
    Ok(acc.into_iter().map(|a| scenario.prelog() * a / blocks as f64).collect())
}

/// Empirical CDF: sorted values with probabilities `i / N`.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

pub fn write_cdf_csv<W: Write>(table: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "probability"])?;
    for (x, p) in table {
        w.write_record([format!("{x:e}"), format!("{p:e}")])?;
    }
    w.flush().map_err(|e| Error::io("<cdf>", e))?;
    Ok(())
}

/// Run metadata echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub drops: u64,
    pub blocks: u64,
    pub users_per_cell: usize,
    pub cells: usize,
    pub antennas: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub methods: Vec<Method>,
    pub drops: Vec<DropEval>,
}

impl EvalReport {
    pub fn nmse_values(&self, method: Method) -> Vec<f64> {
        self.drops
            .iter()
            .flat_map(|d| d.users.iter().filter_map(move |u| u.nmse.get(&method).copied()))
            .collect()
    }

    /// Arithmetic mean of the per-user NMSE values.
    pub fn mean_nmse(&self, method: Method) -> f64 {
        mean(&self.nmse_values(method))
    }

    /// NMSE pooled over every (drop, block, user) sample of the run.
    pub fn pooled_nmse(&self, method: Method) -> Result<f64> {
        let mut acc = NmseAccumulator::default();
        for u in self.drops.iter().flat_map(|d| &d.users) {
            if let Some(a) = u.nmse_sums.get(&method) {
                acc.merge(a);
            }
        }
        acc.value()
    }

    pub fn mean_se(&self, method: SeMethod) -> f64 {
        mean(&self.se_values(method))
    }

    pub fn se_values(&self, method: SeMethod) -> Vec<f64> {
        self.drops
            .iter()
            .flat_map(|d| d.users.iter().filter_map(move |u| u.se.get(&method).copied()))
            .collect()
    }

    pub fn se_methods(&self) -> Vec<SeMethod> {
        let mut out: Vec<SeMethod> = self.methods.iter().map(|&m| SeMethod::Blind(m)).collect();
        out.push(SeMethod::Perfect);
        out.retain(|m| !self.se_values(*m).is_empty());
        out
    }

    /// Users whose blind SE exceeded the tolerated rejection rate.
    pub fn flagged_users(&self) -> usize {
        self.drops
            .iter()
            .map(|d| d.users.iter().filter(|u| u.flagged(d.blocks)).count())
            .sum()
    }

    pub fn variance_clamps(&self) -> usize {
        self.drops
            .iter()
            .flat_map(|d| &d.users)
            .map(|u| u.variance_clamped.values().filter(|&&c| c).count())
            .sum()
    }

    pub fn write_nmse_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["drop", "cell", "user", "estimator", "nmse"])?;
        for d in &self.drops {
            for u in &d.users {
                for (m, v) in &u.nmse {
                    w.write_record([
                        d.drop.to_string(),
                        u.cell.to_string(),
                        u.slot.to_string(),
                        m.to_string(),
                        format!("{v:e}"),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("nmse.csv", e))?;
        Ok(())
    }

    pub fn write_se_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["drop", "cell", "user", "method", "se_bps_hz"])?;
        for d in &self.drops {
            for u in &d.users {
                for (m, v) in &u.se {
                    w.write_record([
                        d.drop.to_string(),
                        u.cell.to_string(),
                        u.slot.to_string(),
                        m.to_string(),
                        format!("{v:e}"),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("se.csv", e))?;
        Ok(())
    }

    /// Writes every CSV plus `plot.gp` into `dir`, returning the file paths.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let create = |name: &str| -> Result<(PathBuf, fs::File)> {
            let p = dir.join(name);
            let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            Ok((p, f))
        };
        let (p, f) = create("nmse.csv")?;
        self.write_nmse_csv(f)?;
        written.push(p);
        let se_methods = self.se_methods();
        if !se_methods.is_empty() {
            let (p, f) = create("se.csv")?;
            self.write_se_csv(f)?;
            written.push(p);
        }
        let mut curves = Vec::new();
        for &m in &self.methods {
            let name = format!("cdf_nmse_{m}.csv");
            let (p, f) = create(&name)?;
            write_cdf_csv(&cdf(&self.nmse_values(m)), f)?;
            written.push(p);
            curves.push(("nmse", name, m.to_string()));
        }
        for &m in &se_methods {
            let name = format!("cdf_se_{m}.csv");
            let (p, f) = create(&name)?;
            write_cdf_csv(&cdf(&self.se_values(m)), f)?;
            written.push(p);
            curves.push(("se", name, m.to_string()));
        }
        let p = dir.join("plot.gp");
        fs::write(&p, gnuplot_script(&curves)).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(written)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Plain gnuplot script drawing the NMSE and SE CDFs.
pub fn gnuplot_script(curves: &[(&str, String, String)]) -> String {
    let mut s = String::from(
        "# usage: gnuplot plot.gp\nset datafile separator ','\nset key bottom right\nset ylabel 'CDF'\nset grid\nset terminal pngcairo size 800,600\n",
    );
    for (metric, xlabel, logscale) in [("nmse", "NMSE", true), ("se", "SE [b/s/Hz]", false)] {
        let lines: Vec<String> = curves
            .iter()
            .filter(|(m, _, _)| *m == metric)
            .map(|(_, file, title)| format!("'{file}' using 1:2 every ::1 with steps title '{title}'"))
            .collect();
        if lines.is_empty() {
            continue;
        }
        s.push_str(&format!("set output 'cdf_{metric}.png'\nset xlabel '{xlabel}'\n"));
        s.push_str(if logscale { "set logscale x\n" } else { "unset logscale x\n" });
        s.push_str(&format!("plot {}\n", lines.join(", \\\n     ")));
    }
    s
}

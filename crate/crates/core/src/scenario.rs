//! Static network description: square cell grid on a torus, user drops,
//! large-scale fading, pilot plan and power configuration.
//!
//! Users are indexed by `(cell, k)` and flattened as `cell * K + k`.
//! Per-pair quantities such as `beta` are indexed by the observing BS first.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Retry cap for the minimum-distance rejection sampler.
pub const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Target median downlink SNR of a cell-edge user when `rho_dl` is not set.
pub const DEFAULT_EDGE_SNR_DB: f64 = 10.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    linear_to_db(mw)
}

/// A per-user power quantity: one value for everybody, or a `[cell][k]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Uniform(f64),
    Table(Vec<Vec<f64>>),
}

impl PerUser {
    fn expand(&self, cells: usize, k: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            PerUser::Uniform(v) => Ok(vec![*v; cells * k]),
            PerUser::Table(rows) => {
                if rows.len() != cells || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Config(format!("{name} must be an L x K table")));
                }
                Ok(rows.iter().flatten().copied().collect())
            }
        }
    }
}

/// Network configuration, read from JSON with the field names below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Number of cells; must be a perfect square.
    #[serde(rename = "L")]
    pub cells: usize,
    /// Users per cell.
    #[serde(rename = "K")]
    pub users_per_cell: usize,
    /// BS antennas.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Side of the square area, m.
    pub area_side: f64,
    /// Symbols per coherence block.
    pub tau_c: usize,
    /// Pilot reuse factor.
    pub f: usize,
    /// Maximum DL transmit power, mW. Calibrated for a 10 dB cell-edge SNR
    /// when absent.
    #[serde(default)]
    pub rho_dl: Option<f64>,
    /// UL pilot power, mW.
    pub p_hat: PerUser,
    /// UL noise power, mW.
    pub sigma2_ul: f64,
    /// DL noise power, mW.
    pub sigma2_dl: f64,
    /// Minimum user-to-serving-BS distance, m.
    pub min_dist: f64,
    /// Shadow fading standard deviation, dB.
    pub shadow_std_db: f64,
    /// Angular standard deviation of the local scattering model, degrees.
    pub asd_deg: f64,
    /// DL power allocation fractions; equal allocation `1/K` when absent.
    #[serde(default)]
    pub eta: Option<PerUser>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Four-cell, 64-antenna setup with three users per cell.
    fn default() -> Self {
        Self {
            cells: 4,
            users_per_cell: 3,
            antennas: 64,
            area_side: 500.0,
            tau_c: 500,
            f: 1,
            rho_dl: None,
            p_hat: PerUser::Uniform(100.0),
            sigma2_ul: dbm_to_mw(-94.0),
            sigma2_dl: dbm_to_mw(-94.0),
            min_dist: 35.0,
            shadow_std_db: 7.0,
            asd_deg: 7.0,
            eta: None,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid scenario JSON: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn tau_p(&self) -> usize {
        self.f * self.users_per_cell
    }

    pub fn grid_side(&self) -> Result<usize> {
        let n = (self.cells as f64).sqrt().round() as usize;
        if self.cells == 0 || n * n != self.cells {
            return Err(Error::Config(format!(
                "L = {} is not a perfect square",
                self.cells
            )));
        }
        Ok(n)
    }

    pub fn cell_side(&self) -> Result<f64> {
        Ok(self.area_side / self.grid_side()? as f64)
    }
}

/// Cell centers of a `sqrt(L) x sqrt(L)` grid, row by row from the origin.
pub fn build_grid(config: &ScenarioConfig) -> Result<Vec<(f64, f64)>> {
    let n = config.grid_side()?;
    if !(config.area_side > 0.0) {
        return Err(Error::Config("area_side must be positive".into()));
    }
    let side = config.area_side / n as f64;
    Ok((0..n * n)
        .map(|idx| {
            let (i, j) = (idx % n, idx / n);
            ((i as f64 + 0.5) * side, (j as f64 + 0.5) * side)
        })
        .collect())
}

/// Displacement from `a` to the nearest toroidal translate of `b`.
pub fn wrap_displacement(a: (f64, f64), b: (f64, f64), area_side: f64) -> (f64, f64) {
    let wrap = |d: f64| {
        [d - area_side, d, d + area_side]
            .into_iter()
            .min_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap()
    };
    (wrap(b.0 - a.0), wrap(b.1 - a.1))
}

/// Minimum Euclidean distance over the nine toroidal translates of `b`.
pub fn wrap_distance(a: (f64, f64), b: (f64, f64), area_side: f64) -> f64 {
    let (dx, dy) = wrap_displacement(a, b, area_side);
    dx.hypot(dy)
}

/// Large-scale fading coefficient in dB: `-35 - 36.7 log10(d / 1 m) + F`.
pub fn large_scale_fading_db(distance_m: f64, shadow_db: f64) -> Result<f64> {
    if !(distance_m >= 1.0) {
        return Err(Error::Domain(format!(
            "path loss model needs d >= 1 m, got {distance_m}"
        )));
    }
    Ok(-35.0 - 36.7 * distance_m.log10() + shadow_db)
}

/// [`large_scale_fading_db`] in linear scale.
pub fn large_scale_fading(distance_m: f64, shadow_db: f64) -> Result<f64> {
    large_scale_fading_db(distance_m, shadow_db).map(db_to_linear)
}

/// Pilot allocation across cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotPlan {
    group_of_cell: Vec<usize>,
    co_pilot: Vec<Vec<usize>>,
    users_per_cell: usize,
    reuse: usize,
}

impl PilotPlan {
    pub fn group_of_cell(&self, cell: usize) -> usize {
        self.group_of_cell[cell]
    }

    /// Cells sharing the pilot subset of `cell`, including `cell` itself.
    pub fn co_pilot_cells(&self, cell: usize) -> &[usize] {
        &self.co_pilot[cell]
    }

    pub fn pilot_index(&self, cell: usize, k: usize) -> usize {
        self.group_of_cell[cell] * self.users_per_cell + k
    }

    pub fn tau_p(&self) -> usize {
        self.reuse * self.users_per_cell
    }

    pub fn reuse(&self) -> usize {
        self.reuse
    }
}

/// Partition the cells into `f` pilot groups of `L / f` cells.
///
/// `f = 2` on an even grid is a checkerboard, so co-pilot cells are
/// diagonal neighbours. Other divisors of `L` group cells by index modulo `f`.
pub fn assign_pilots(config: &ScenarioConfig) -> Result<PilotPlan> {
    let n = config.grid_side()?;
    let (cells, f) = (config.cells, config.f);
    if f == 0 || cells % f != 0 {
        return Err(Error::Config(format!(
            "pilot reuse factor {f} does not divide L = {cells}"
        )));
    }
    let group_of_cell: Vec<usize> = (0..cells)
        .map(|c| {
            if f == 2 && n % 2 == 0 {
                (c % n + c / n) % 2
            } else {
                c % f
            }
        })
        .collect();
    let co_pilot = (0..cells)
        .map(|c| {
            (0..cells)
                .filter(|&o| group_of_cell[o] == group_of_cell[c])
                .collect()
        })
        .collect();
    Ok(PilotPlan {
        group_of_cell,
        co_pilot,
        users_per_cell: config.users_per_cell,
        reuse: f,
    })
}

/// DL power such that `rho_dl * beta_edge / sigma2_dl` hits the target SNR.
/// The edge user sits at a cell corner with median (zero) shadowing.
pub fn calibrate_rho_dl(config: &ScenarioConfig, target_edge_snr_db: f64) -> Result<f64> {
    let corner = config.cell_side()? / std::f64::consts::SQRT_2;
    let beta_edge_db = large_scale_fading_db(corner, 0.0)?;
    Ok(dbm_to_mw(
        target_edge_snr_db + mw_to_dbm(config.sigma2_dl) - beta_edge_db,
    ))
}

/// A validated configuration plus everything derived from it that does not
/// depend on the user drop.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub centers: Vec<(f64, f64)>,
    pub pilots: PilotPlan,
    rho_dl: f64,
    eta: Vec<f64>,
    p_hat: Vec<f64>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let centers = build_grid(&config)?;
        let pilots = assign_pilots(&config)?;
        let (l, k) = (config.cells, config.users_per_cell);
        if k == 0 || config.antennas == 0 {
            return Err(Error::Config("K and M must be at least 1".into()));
        }
        if config.tau_p() > config.tau_c {
            return Err(Error::Config(format!(
                "tau_p = f K = {} exceeds tau_c = {}",
                config.tau_p(),
                config.tau_c
            )));
        }
        for (name, v) in [
            ("sigma2_ul", config.sigma2_ul),
            ("sigma2_dl", config.sigma2_dl),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(config.min_dist >= 1.0) {
            return Err(Error::Config("min_dist must be at least 1 m".into()));
        }
        if !(config.shadow_std_db >= 0.0) || !(config.asd_deg >= 0.0) {
            return Err(Error::Config(
                "shadow_std_db and asd_deg must be non-negative".into(),
            ));
        }
        let p_hat = config.p_hat.expand(l, k, "p_hat")?;
        if p_hat.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Config("p_hat must be positive".into()));
        }
        let eta = match &config.eta {
            Some(e) => e.expand(l, k, "eta")?,
            None => vec![1.0 / k as f64; l * k],
        };
        if eta.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(Error::Config("eta entries must lie in [0, 1]".into()));
        }
        for (cell, row) in eta.chunks(k).enumerate() {
            if row.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "power fractions of cell {cell} sum above 1"
                )));
            }
        }
        let rho_dl = match config.rho_dl {
            Some(r) if r > 0.0 && r.is_finite() => r,
            Some(_) => return Err(Error::Config("rho_dl must be positive".into())),
            None => calibrate_rho_dl(&config, DEFAULT_EDGE_SNR_DB)?,
        };
        Ok(Self {
            config,
            centers,
            pilots,
            rho_dl,
            eta,
            p_hat,
        })
    }

    pub fn cells(&self) -> usize {
        self.config.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.config.users_per_cell
    }

    pub fn num_users(&self) -> usize {
        self.config.cells * self.config.users_per_cell
    }

    pub fn antennas(&self) -> usize {
        self.config.antennas
    }

    pub fn tau_p(&self) -> usize {
        self.pilots.tau_p()
    }

    /// Data symbols per block, `tau_c - tau_p`.
    pub fn data_len(&self) -> usize {
        self.config.tau_c - self.tau_p()
    }

    /// Pre-log factor `1 - tau_p / tau_c`.
    pub fn prelog(&self) -> f64 {
        1.0 - self.tau_p() as f64 / self.config.tau_c as f64
    }

    pub fn rho_dl(&self) -> f64 {
        self.rho_dl
    }

    pub fn user(&self, cell: usize, k: usize) -> usize {
        cell * self.config.users_per_cell + k
    }

    pub fn cell_of(&self, user: usize) -> usize {
        user / self.config.users_per_cell
    }

    pub fn slot_of(&self, user: usize) -> usize {
        user % self.config.users_per_cell
    }

    pub fn eta(&self, user: usize) -> f64 {
        self.eta[user]
    }

    pub fn p_hat(&self, user: usize) -> f64 {
        self.p_hat[user]
    }

    /// Copy of this scenario with a different number of users per cell.
    /// Per-user tables are reset to their uniform defaults.
    pub fn with_users_per_cell(&self, k: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.users_per_cell = k;
        if let PerUser::Table(_) = config.p_hat {
            config.p_hat = PerUser::Uniform(self.p_hat[0]);
        }
        config.eta = None;
        config.rho_dl = Some(self.rho_dl);
        Scenario::new(config)
    }
}

/// One realization of user positions and large-scale fading.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDrop {
    cells: usize,
    users: usize,
    /// User positions, indexed by flat user.
    pub positions: Vec<(f64, f64)>,
    shadow_db: Vec<f64>,
    distance: Vec<f64>,
    beta: Vec<f64>,
    aoa: Vec<f64>,
}

impl UserDrop {
    fn idx(&self, bs: usize, user: usize) -> usize {
        bs * self.users + user
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn shadow_db(&self, bs: usize, user: usize) -> f64 {
        self.shadow_db[self.idx(bs, user)]
    }

    /// Wrap-around distance from BS `bs` to `user`, m.
    pub fn distance(&self, bs: usize, user: usize) -> f64 {
        self.distance[self.idx(bs, user)]
    }

    /// Large-scale fading coefficient (linear) between BS `bs` and `user`.
    pub fn beta(&self, bs: usize, user: usize) -> f64 {
        self.beta[self.idx(bs, user)]
    }

    /// Nominal angle of arrival at BS `bs`, radians from array broadside.
    pub fn aoa(&self, bs: usize, user: usize) -> f64 {
        self.aoa[self.idx(bs, user)]
    }

    /// Writes one row per (observing BS, user) pair.
    pub fn write_csv<W: Write>(&self, scenario: &Scenario, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "bs", "cell", "user", "x", "y", "distance_m", "shadow_db", "beta_db", "aoa_deg",
        ])?;
        for bs in 0..self.cells {
            for u in 0..self.users {
                let (x, y) = self.positions[u];
                w.write_record([
                    bs.to_string(),
                    scenario.cell_of(u).to_string(),
                    scenario.slot_of(u).to_string(),
                    x.to_string(),
                    y.to_string(),
                    self.distance(bs, u).to_string(),
                    self.shadow_db(bs, u).to_string(),
                    linear_to_db(self.beta(bs, u)).to_string(),
                    self.aoa(bs, u).to_degrees().to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Angle of the displacement `(dx, dy)` measured from the broadside (+y) of
/// a linear array lying along the x-axis, positive towards +x.
pub fn broadside_angle(dx: f64, dy: f64) -> f64 {
    dx.atan2(dy)
}

/// Drops `K` users uniformly in every cell, at least `min_dist` from their
/// serving BS, and draws shadow fading for every (BS, user) pair.
pub fn drop_users<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<UserDrop> {
    let cfg = &scenario.config;
    let side = cfg.cell_side()?;
    let (cells, users) = (scenario.cells(), scenario.num_users());
    let mut positions = Vec::with_capacity(users);
    for u in 0..users {
        let center = scenario.centers[scenario.cell_of(u)];
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let p = (
                center.0 + (rng.random::<f64>() - 0.5) * side,
                center.1 + (rng.random::<f64>() - 0.5) * side,
            );
            if wrap_distance(center, p, cfg.area_side) >= cfg.min_dist {
                placed = Some(p);
                break;
            }
        }
        positions.push(placed.ok_or_else(|| {
            Error::Config(format!(
                "could not place a user {} m from its BS in a {side} m cell",
                cfg.min_dist
            ))
        })?);
    }

    let shadow = Normal::new(0.0, cfg.shadow_std_db)
        .map_err(|e| Error::Config(format!("shadow fading law: {e}")))?;
    let n = cells * users;
    let (mut shadow_db, mut distance, mut beta, mut aoa) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for bs in 0..cells {
        for &pos in &positions {
            let (dx, dy) = wrap_displacement(scenario.centers[bs], pos, cfg.area_side);
            let d = dx.hypot(dy);
            let f = shadow.sample(rng);
            shadow_db.push(f);
            distance.push(d);
            beta.push(large_scale_fading(d, f)?);
            aoa.push(broadside_angle(dx, dy));
        }
    }
    Ok(UserDrop {
        cells,
        users,
        positions,
        shadow_db,
        distance,
        beta,
        aoa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStreams, Stage};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(l: usize, f: usize) -> ScenarioConfig {
        ScenarioConfig {
            cells: l,
            f,
            ..Default::default()
        }
    }

    #[test]
    fn grid_centers() {
        let c = build_grid(&cfg(4, 1)).unwrap();
        assert_eq!(c, vec![(125.0, 125.0), (375.0, 125.0), (125.0, 375.0), (375.0, 375.0)]);
        assert_eq!(cfg(4, 1).cell_side().unwrap(), 250.0);
        assert_eq!(build_grid(&cfg(1, 1)).unwrap(), vec![(250.0, 250.0)]);
        assert!(matches!(build_grid(&cfg(3, 1)), Err(Error::Config(_))));
    }

    #[test]
    fn torus_distances() {
        assert_abs_diff_eq!(wrap_distance((0.0, 0.0), (490.0, 0.0), 500.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_distance((0.0, 0.0), (250.0, 0.0), 500.0), 250.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            wrap_distance((10.0, 10.0), (490.0, 490.0), 500.0),
            800f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn path_loss_values() {
        assert_abs_diff_eq!(large_scale_fading_db(1.0, 0.0).unwrap(), -35.0);
        assert_abs_diff_eq!(large_scale_fading_db(100.0, 0.0).unwrap(), -108.4, epsilon = 1e-12);
        assert_abs_diff_eq!(large_scale_fading_db(100.0, 7.0).unwrap(), -101.4, epsilon = 1e-12);
        assert_abs_diff_eq!(large_scale_fading(1.0, 0.0).unwrap(), 10f64.powf(-3.5), epsilon = 1e-18);
        assert!(matches!(large_scale_fading(0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn pilot_plans() {
        let p = assign_pilots(&cfg(4, 1)).unwrap();
        for l in 0..4 {
            assert_eq!(p.co_pilot_cells(l), &[0, 1, 2, 3]);
        }
        assert_eq!(p.tau_p(), 3);

        let p = assign_pilots(&cfg(4, 4)).unwrap();
        for l in 0..4 {
            assert_eq!(p.co_pilot_cells(l), &[l]);
        }
        assert_eq!(p.tau_p(), 12);

        // checkerboard: cells 0 and 3 (diagonal) share, as do 1 and 2
        let p = assign_pilots(&cfg(4, 2)).unwrap();
        assert_eq!(p.co_pilot_cells(0), &[0, 3]);
        assert_eq!(p.co_pilot_cells(3), &[0, 3]);
        assert_eq!(p.co_pilot_cells(1), &[1, 2]);
        assert_eq!(p.co_pilot_cells(2), &[1, 2]);
        assert_eq!(p.tau_p(), 6);

        assert!(matches!(assign_pilots(&cfg(4, 3)), Err(Error::Config(_))));
        assert!(matches!(assign_pilots(&cfg(4, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn pilot_plan_consistency() {
        for (l, f) in [(4, 1), (4, 2), (4, 4), (9, 3), (16, 2), (16, 4)] {
            let p = assign_pilots(&cfg(l, f)).unwrap();
            for c in 0..l {
                assert_eq!(p.co_pilot_cells(c).len(), l / f);
                for &o in p.co_pilot_cells(c) {
                    assert!(p.co_pilot_cells(o).contains(&c));
                    assert_eq!(p.pilot_index(c, 2), p.pilot_index(o, 2));
                }
                let idx: Vec<_> = (0..3).map(|k| p.pilot_index(c, k)).collect();
                assert!(idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2]);
            }
        }
    }

    #[test]
    fn rho_calibration() {
        let c = cfg(4, 1);
        let corner = c.cell_side().unwrap() / std::f64::consts::SQRT_2;
        assert_abs_diff_eq!(corner, 176.7767, epsilon = 1e-4);
        // independent scalar route
        let beta_edge = -35.0 - 36.7 * (125.0 * 2f64.sqrt()).log10();
        assert_abs_diff_eq!(beta_edge, -117.48, epsilon = 0.01);
        let rho = mw_to_dbm(calibrate_rho_dl(&c, 10.0).unwrap());
        assert_abs_diff_eq!(rho, 10.0 - 94.0 - beta_edge, epsilon = 1e-9);
        assert_abs_diff_eq!(rho, 33.48, epsilon = 0.01);
        let rho0 = mw_to_dbm(calibrate_rho_dl(&c, 0.0).unwrap());
        assert_abs_diff_eq!(rho0, 23.48, epsilon = 0.01);
        let rho20 = mw_to_dbm(calibrate_rho_dl(&c, 20.0).unwrap());
        assert_abs_diff_eq!(rho20 - rho, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn config_validation() {
        let bad = |c: ScenarioConfig| matches!(Scenario::new(c), Err(Error::Config(_)));
        assert!(bad(ScenarioConfig { tau_c: 2, ..Default::default() }));
        assert!(bad(ScenarioConfig { sigma2_dl: 0.0, ..Default::default() }));
        assert!(bad(ScenarioConfig {
            eta: Some(PerUser::Uniform(0.5)),
            ..Default::default()
        }));
        assert!(bad(ScenarioConfig {
            p_hat: PerUser::Table(vec![vec![1.0; 3]; 3]),
            ..Default::default()
        }));
        let s = Scenario::new(ScenarioConfig::default()).unwrap();
        assert_abs_diff_eq!(s.eta(5), 1.0 / 3.0);
        assert_abs_diff_eq!(s.prelog(), 497.0 / 500.0);
    }

    #[test]
    fn json_field_names() {
        let text = r#"{"L":4,"K":3,"M":64,"area_side":500,"tau_c":500,"f":1,
            "rho_dl":null,"p_hat":100,"sigma2_ul":3.98e-10,"sigma2_dl":3.98e-10,
            "min_dist":35,"shadow_std_db":7,"asd_deg":7,"eta":null,"seed":5}"#;
        let c = ScenarioConfig::from_json_str(text).unwrap();
        assert_eq!((c.cells, c.users_per_cell, c.antennas, c.seed), (4, 3, 64, 5));
        let back = serde_json::to_value(&c).unwrap();
        for key in ["L", "K", "M", "area_side", "tau_c", "f", "p_hat", "eta", "seed"] {
            assert!(back.get(key).is_some(), "{key}");
        }
        assert!(ScenarioConfig::from_json_str("{\"L\": 4}").is_err());
    }

    #[test]
    fn drop_respects_geometry() {
        let s = Scenario::new(ScenarioConfig::default()).unwrap();
        let streams = RngStreams::new(3);
        for d in 0..20 {
            let drop = drop_users(&s, &mut streams.stream(Stage::Drop, d)).unwrap();
            for u in 0..s.num_users() {
                let c = s.cell_of(u);
                let (x, y) = drop.positions[u];
                let (cx, cy) = s.centers[c];
                assert!((x - cx).abs() <= 125.0 && (y - cy).abs() <= 125.0);
                assert!(drop.distance(c, u) >= 35.0);
                for bs in 0..4 {
                    assert!(drop.beta(bs, u) > 0.0);
                    let expect =
                        large_scale_fading(drop.distance(bs, u), drop.shadow_db(bs, u)).unwrap();
                    assert_eq!(drop.beta(bs, u), expect);
                }
            }
        }
    }

    #[test]
    fn drop_is_deterministic() {
        let s = Scenario::new(ScenarioConfig::default()).unwrap();
        let streams = RngStreams::new(11);
        let a = drop_users(&s, &mut streams.stream(Stage::Drop, 4)).unwrap();
        let b = drop_users(&s, &mut streams.stream(Stage::Drop, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_geometry_errors() {
        let c = ScenarioConfig {
            min_dist: 400.0,
            ..Default::default()
        };
        let s = Scenario::new(c).unwrap();
        let r = drop_users(&s, &mut RngStreams::new(0).stream(Stage::Drop, 0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn shadow_fading_moments() {
        // 10^5 shadow draws: the marginal law is N(0, 7 dB).
        let s = Scenario::new(ScenarioConfig::default()).unwrap();
        let mut rng = RngStreams::new(99).stream(Stage::Drop, 0);
        let mut vals = Vec::new();
        while vals.len() < 100_000 {
            let d = drop_users(&s, &mut rng).unwrap();
            for bs in 0..4 {
                for u in 0..12 {
                    vals.push(d.shadow_db(bs, u));
                }
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((std - 7.0).abs() < 0.1, "std {std}");
    }

    #[test]
    fn csv_export() {
        let s = Scenario::new(ScenarioConfig::default()).unwrap();
        let d = drop_users(&s, &mut RngStreams::new(1).stream(Stage::Drop, 0)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bs,cell,user,x,y,distance_m,shadow_db,beta_db,aoa_deg\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 12);
    }

    #[test]
    fn broadside_convention() {
        assert_abs_diff_eq!(broadside_angle(0.0, 10.0), 0.0);
        assert_abs_diff_eq!(broadside_angle(10.0, 0.0), std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!(broadside_angle(-10.0, 0.0), -std::f64::consts::FRAC_PI_2);
    }

    proptest! {
        #[test]
        fn beta_decreases_with_distance(d1 in 1.0f64..2000.0, d2 in 1.0f64..2000.0) {
            prop_assume!(d1 < d2);
            prop_assert!(large_scale_fading(d1, 0.0).unwrap() > large_scale_fading(d2, 0.0).unwrap());
        }

        #[test]
        fn wrap_distance_is_symmetric_and_bounded(
            ax in 0.0f64..500.0, ay in 0.0f64..500.0, bx in 0.0f64..500.0, by in 0.0f64..500.0
        ) {
            let d = wrap_distance((ax, ay), (bx, by), 500.0);
            prop_assert!((d - wrap_distance((bx, by), (ax, ay), 500.0)).abs() < 1e-9);
            prop_assert!(d <= 250.0 * 2f64.sqrt() + 1e-9);
            prop_assert!(d <= ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() + 1e-9);
        }

        #[test]
        fn calibration_shifts_linearly(t in -20.0f64..30.0, dt in -10.0f64..10.0) {
            let c = ScenarioConfig::default();
            let a = mw_to_dbm(calibrate_rho_dl(&c, t).unwrap());
            let b = mw_to_dbm(calibrate_rho_dl(&c, t + dt).unwrap());
            prop_assert!((b - a - dt).abs() < 1e-9);
        }
    }
}

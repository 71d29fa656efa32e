//! Spatial correlation from the Gaussian local scattering model and
//! correlated Rayleigh fading realizations.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::{complex_normal_vector, CMatrix, CVector};
use crate::scenario::{Scenario, UserDrop};
use crate::{Error, Result, C64};

/// Eigenvalues below `-PSD_TOLERANCE * trace` reject the matrix; the
/// remaining negative ones are clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Eigen-directions with energy below this fraction of the trace are left
/// out of the sampling factor.
const FACTOR_FLOOR: f64 = 1e-13;

/// Hermitian PSD spatial correlation matrix with a cached square-root factor.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    r: CMatrix,
    beta: f64,
    eigenvalues: Vec<f64>,
    /// `M x rank` factor `A` with `A A^H = R` (after clipping).
    factor: CMatrix,
}

impl CorrelationMatrix {
    /// Factorizes a Hermitian matrix. The upper triangle is mirrored onto the
    /// lower one, so the stored matrix is exactly Hermitian.
    pub fn from_matrix(r: CMatrix) -> Result<Self> {
        let m = r.nrows();
        if m == 0 || r.ncols() != m {
            return Err(Error::Numeric("correlation matrix must be square".into()));
        }
        let mut r = r;
        for i in 0..m {
            r[(i, i)].im = 0.0;
            for j in 0..i {
                r[(i, j)] = r[(j, i)].conj();
            }
        }
        let trace: f64 = r.diagonal().iter().map(|z| z.re).sum();
        let eig = r.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOLERANCE * trace.abs().max(f64::MIN_POSITIVE) {
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            return Err(Error::Numeric(format!(
                "correlation matrix is indefinite: trace {trace:e}, eigenvalues {ev:?}"
            )));
        }
        let keep: Vec<usize> = (0..m)
            .filter(|&i| eig.eigenvalues[i] > FACTOR_FLOOR * trace)
            .collect();
        let mut factor = DMatrix::zeros(m, keep.len());
        for (col, &i) in keep.iter().enumerate() {
            let s = eig.eigenvalues[i].sqrt();
            factor.set_column(col, &(eig.eigenvectors.column(i) * C64::new(s, 0.0)));
        }
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            beta: trace / m as f64,
            r,
            eigenvalues,
            factor,
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.r
    }

    /// `tr(R) / M`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Eigenvalues, clipped at zero, in decreasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of eigen-directions retained in the sampling factor.
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn factor(&self) -> &CMatrix {
        &self.factor
    }

    /// `(sum lambda)^2 / sum lambda^2`.
    pub fn effective_rank(&self) -> f64 {
        let s: f64 = self.eigenvalues.iter().sum();
        let s2: f64 = self.eigenvalues.iter().map(|v| v * v).sum();
        if s2 == 0.0 {
            0.0
        } else {
            s * s / s2
        }
    }
}

/// Approximate Gaussian local scattering model for a half-wavelength ULA:
/// `[R]_{m,n} = beta e^{j pi (m-n) sin phi} e^{-(asd^2 / 2) (pi (m-n) cos phi)^2}`.
pub fn local_scattering(beta: f64, phi: f64, asd: f64, antennas: usize) -> Result<CorrelationMatrix> {
    if antennas == 0 || !(beta >= 0.0) || !(asd >= 0.0) {
        return Err(Error::Domain(format!(
            "local scattering needs M >= 1, beta >= 0, asd >= 0 (got {antennas}, {beta}, {asd})"
        )));
    }
    let (s, c) = phi.sin_cos();
    // the matrix is Toeplitz: one column of lags is enough
    let lag: Vec<C64> = (0..antennas)
        .map(|d| {
            let d = d as f64;
            let damp = (-(asd * asd / 2.0) * (PI * d * c).powi(2)).exp();
            C64::from_polar(beta * damp, PI * d * s)
        })
        .collect();
    let r = DMatrix::from_fn(antennas, antennas, |m, n| {
        if m >= n {
            lag[m - n]
        } else {
            lag[n - m].conj()
        }
    });
    CorrelationMatrix::from_matrix(r)
}

/// One realization `g = A z` with `z ~ CN(0, I)`, so `g ~ CN(0, R)`.
pub fn sample_channel<R: Rng + ?Sized>(corr: &CorrelationMatrix, rng: &mut R) -> CVector {
    if corr.rank() == 0 {
        return DVector::zeros(corr.dim());
    }
    let z = complex_normal_vector(corr.rank(), rng);
    &corr.factor * z
}

/// Correlation matrices for every (BS, user) pair of a drop.
#[derive(Debug, Clone)]
pub struct CorrelationSet {
    users: usize,
    mats: Vec<CorrelationMatrix>,
}

impl CorrelationSet {
    pub fn build(scenario: &Scenario, drop: &UserDrop) -> Result<Self> {
        let asd = scenario.config.asd_deg.to_radians();
        let users = scenario.num_users();
        let mut mats = Vec::with_capacity(scenario.cells() * users);
        for bs in 0..scenario.cells() {
            for u in 0..users {
                mats.push(local_scattering(
                    drop.beta(bs, u),
                    drop.aoa(bs, u),
                    asd,
                    scenario.antennas(),
                )?);
            }
        }
        Ok(Self { users, mats })
    }

    /// Assembles a set from matrices ordered by BS, then flat user.
    pub fn from_parts(users: usize, mats: Vec<CorrelationMatrix>) -> Self {
        assert!(users > 0 && mats.len() % users == 0);
        Self { users, mats }
    }

    /// Correlation between BS `bs` and flat user `user`.
    pub fn get(&self, bs: usize, user: usize) -> &CorrelationMatrix {
        &self.mats[bs * self.users + user]
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_cells(&self) -> usize {
        self.mats.len() / self.users
    }

    /// Dumps eigenvalue spectra, one row per (BS, user, eigenvalue index).
    pub fn write_spectra_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bs", "user", "index", "eigenvalue"])?;
        for bs in 0..self.num_cells() {
            for u in 0..self.users {
                for (i, v) in self.get(bs, u).eigenvalues().iter().enumerate() {
                    w.write_record([bs.to_string(), u.to_string(), i.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Channel vectors of one coherence block for every (BS, user) pair.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    users: usize,
    g: Vec<CVector>,
}

impl ChannelSet {
    pub fn sample<R: Rng + ?Sized>(corr: &CorrelationSet, rng: &mut R) -> Self {
        Self {
            users: corr.users,
            g: corr.mats.iter().map(|c| sample_channel(c, rng)).collect(),
        }
    }

    /// Channel between BS `bs` and flat user `user`.
    pub fn get(&self, bs: usize, user: usize) -> &CVector {
        &self.g[bs * self.users + user]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use crate::rng::{RngStreams, Stage};
    use approx::assert_abs_diff_eq;

    fn sample_cov(corr: &CorrelationMatrix, n: usize, seed: u64) -> CMatrix {
        let mut rng = RngStreams::new(seed).stream(Stage::Trial, 0);
        let m = corr.dim();
        let mut acc = CMatrix::zeros(m, m);
        for _ in 0..n {
            let g = sample_channel(corr, &mut rng);
            acc += &g * g.adjoint();
        }
        acc / C64::new(n as f64, 0.0)
    }

    #[test]
    fn diagonal_equals_beta() {
        let r = local_scattering(2.5e-11, 0.3, 7f64.to_radians(), 16).unwrap();
        for m in 0..16 {
            assert_abs_diff_eq!(r.matrix()[(m, m)].re, 2.5e-11, epsilon = 1e-24);
            assert_eq!(r.matrix()[(m, m)].im, 0.0);
        }
        assert_abs_diff_eq!(r.beta(), 2.5e-11, epsilon = 1e-24);
    }

    #[test]
    fn zero_spread_broadside_is_rank_one() {
        let r = local_scattering(3.0, 0.0, 0.0, 8).unwrap();
        for z in r.matrix().iter() {
            assert_abs_diff_eq!(z.re, 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
        }
        assert_eq!(r.rank(), 1);
        let mut rng = RngStreams::new(1).stream(Stage::Trial, 0);
        for _ in 0..20 {
            let g = sample_channel(&r, &mut rng);
            for m in 1..8 {
                assert_abs_diff_eq!((g[m] - g[0]).norm(), 0.0, epsilon = 1e-12 * g[0].norm().max(1.0));
            }
        }
    }

    #[test]
    fn hermitian_by_construction() {
        let r = local_scattering(1.0, -1.1, 0.2, 12).unwrap();
        let a = r.matrix();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(a[(j, i)], a[(i, j)].conj());
            }
        }
    }

    #[test]
    fn strongly_correlated_at_small_spread() {
        let beta = crate::scenario::large_scale_fading(120.0, 0.0).unwrap();
        let r = local_scattering(beta, 0.4, 7f64.to_radians(), 64).unwrap();
        let ev = r.eigenvalues();
        assert_abs_diff_eq!(ev.iter().sum::<f64>() / 64.0, beta, epsilon = beta * 1e-9);
        assert!(*ev.last().unwrap() >= -PSD_TOLERANCE * beta * 64.0);
        assert!(ev[0] / beta > 5.0, "largest eigenvalue {}", ev[0] / beta);
        assert!(r.effective_rank() < 32.0, "effective rank {}", r.effective_rank());
        // factor reproduces R
        let rec = r.factor() * r.factor().adjoint();
        assert!(rel_frobenius(&rec, r.matrix()) < 1e-10);
    }

    #[test]
    fn zero_matrix_gives_zero_channel() {
        let r = CorrelationMatrix::from_matrix(CMatrix::zeros(4, 4)).unwrap();
        let g = sample_channel(&r, &mut RngStreams::new(0).stream(Stage::Trial, 0));
        assert!(g.iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = CMatrix::identity(3, 3);
        a[(2, 2)] = C64::new(-1.0, 0.0);
        match CorrelationMatrix::from_matrix(a) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("eigenvalues")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn identity_sample_covariance() {
        let r = CorrelationMatrix::from_matrix(CMatrix::identity(8, 8)).unwrap();
        let cov = sample_cov(&r, 100_000, 5);
        assert!(rel_frobenius(&cov, r.matrix()) < 0.05);
    }

    #[test]
    fn mean_energy_is_trace() {
        let r = local_scattering(1.0, 0.8, 10f64.to_radians(), 16).unwrap();
        let mut rng = RngStreams::new(2).stream(Stage::Trial, 0);
        let n = 100_000;
        let e: f64 = (0..n).map(|_| sample_channel(&r, &mut rng).norm_squared()).sum::<f64>() / n as f64;
        assert!((e / 16.0 - 1.0).abs() < 0.02, "{e}");
    }

    #[test]
    fn blocks_are_independent() {
        let r = local_scattering(1.0, 0.2, 10f64.to_radians(), 4).unwrap();
        let mut rng = RngStreams::new(3).stream(Stage::Trial, 0);
        let n = 50_000;
        let mut cross = CMatrix::zeros(4, 4);
        for _ in 0..n {
            let a = sample_channel(&r, &mut rng);
            let b = sample_channel(&r, &mut rng);
            cross += &a * b.adjoint();
        }
        cross /= C64::new(n as f64, 0.0);
        for z in cross.iter() {
            assert!(z.norm() < 5.0 / (n as f64).sqrt(), "{z}");
        }
    }

    #[test]
    fn spectra_dump() {
        let s = Scenario::new(crate::scenario::ScenarioConfig {
            antennas: 4,
            ..Default::default()
        })
        .unwrap();
        let d = crate::scenario::drop_users(&s, &mut RngStreams::new(0).stream(Stage::Drop, 0)).unwrap();
        let set = CorrelationSet::build(&s, &d).unwrap();
        let mut buf = Vec::new();
        set.write_spectra_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 4 * 12 * 4);
    }
}

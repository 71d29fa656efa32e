//! Monte Carlo properties of the estimators and SE bounds.

use dlgain::downlink::SymbolModel;
use dlgain::estimators::Method;
use dlgain::harness::{run_simulation, SimulateOptions};
use dlgain::metrics::{
    evaluate_drop, hardening_sinr_closed_form, nmse, se_blind, se_from_sinr, EvalOptions, SeMethod,
};
use dlgain::pipeline::{DropContext, DEFAULT_THETA};
use dlgain::rng::RngStreams;
use dlgain::scenario::{Scenario, ScenarioConfig};
use dlgain::C64;

fn scenario(antennas: usize, seed: u64) -> Scenario {
    Scenario::new(ScenarioConfig {
        antennas,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn hardening_nmse_matches_two_pass_moments() {
    let s = scenario(16, 31);
    let streams = RngStreams::new(31);
    let ctx = DropContext::generate(&s, &streams, 0, DEFAULT_THETA).unwrap();
    let blocks = 20_000;
    let mut alphas = vec![Vec::with_capacity(blocks); s.num_users()];
    for b in 0..blocks as u64 {
        let g = ctx.block_channels(&s, &streams, 0, b).unwrap().gains;
        for (u, a) in alphas.iter_mut().enumerate() {
            a.push(g.own(u));
        }
    }
    for (u, a) in alphas.iter().enumerate() {
        let n = a.len() as f64;
        let mean = a.iter().sum::<C64>() / n;
        let power = a.iter().map(|x| x.norm_sqr()).sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / n;
        let est = vec![ctx.profiles[u].alpha_mean; a.len()];
        let got = nmse(&est, a).unwrap();
        let oracle = var / power;
        assert!((got - oracle).abs() <= 0.03 * oracle, "user {u}: {got} vs {oracle}");
    }
}

#[test]
fn hardening_se_matches_closed_form() {
    let s = scenario(16, 32);
    let streams = RngStreams::new(32);
    for d in 0..2 {
        let ctx = DropContext::generate(&s, &streams, d, DEFAULT_THETA).unwrap();
        let mc = se_blind(&s, &ctx, &streams, d, Method::Hardening, None, 40_000).unwrap();
        for (u, got) in mc.iter().enumerate() {
            let oracle = se_from_sinr(s.prelog(), hardening_sinr_closed_form(&s, &ctx, u));
            assert!((got - oracle).abs() <= 0.05 * oracle, "drop {d} user {u}: {got} vs {oracle}");
        }
    }
}

#[test]
fn perfect_csi_dominates_blind_bounds() {
    let s = scenario(16, 33);
    let streams = RngStreams::new(33);
    let methods = [Method::Hardening, Method::ModelAided, Method::Genie];
    for d in 0..3 {
        let ctx = DropContext::generate(&s, &streams, d, DEFAULT_THETA).unwrap();
        let ev = evaluate_drop(&s, &ctx, &streams, d, &EvalOptions::new(1000, &methods)).unwrap();
        for u in &ev.users {
            let perfect = u.se[&SeMethod::Perfect];
            for m in methods {
                assert!(perfect >= u.se[&SeMethod::Blind(m)], "{m}: {perfect} vs {}", u.se[&SeMethod::Blind(m)]);
            }
        }
    }
}

#[test]
fn blind_se_is_insensitive_to_symbol_model() {
    let s = scenario(16, 34);
    let streams = RngStreams::new(34);
    let methods = [Method::Hardening, Method::ModelAided];
    let ctx = DropContext::generate(&s, &streams, 0, DEFAULT_THETA).unwrap();
    let run = |symbols| {
        let opts = EvalOptions {
            symbols,
            ..EvalOptions::new(3000, &methods)
        };
        evaluate_drop(&s, &ctx, &streams, 0, &opts).unwrap()
    };
    let (g, q) = (run(SymbolModel::Gaussian), run(SymbolModel::Qpsk));
    for m in methods {
        let mean = |ev: &dlgain::metrics::DropEval| {
            ev.users.iter().map(|u| u.se[&SeMethod::Blind(m)]).sum::<f64>() / ev.users.len() as f64
        };
        let (a, b) = (mean(&g), mean(&q));
        assert!((a - b).abs() <= 0.05 * a, "{m}: gaussian {a} vs qpsk {b}");
    }
}

#[test]
fn wider_angular_spread_lowers_model_aided_nmse() {
    let run = |asd_deg| {
        let s = Scenario::new(ScenarioConfig {
            antennas: 32,
            asd_deg,
            seed: 35,
            ..Default::default()
        })
        .unwrap();
        let opts = SimulateOptions {
            drops: 20,
            blocks: 100,
            methods: vec![Method::ModelAided],
            se: false,
            ..Default::default()
        };
        run_simulation(&s, &opts).unwrap().pooled_nmse(Method::ModelAided).unwrap()
    };
    let (narrow, wide) = (run(7.0), run(30.0));
    assert!(wide < narrow, "30 deg {wide} vs 7 deg {narrow}");
}

#[test]
fn model_aided_approaches_genie_for_long_blocks() {
    let s = Scenario::new(ScenarioConfig {
        antennas: 16,
        tau_c: 10_000 + 3,
        seed: 36,
        ..Default::default()
    })
    .unwrap();
    let opts = SimulateOptions {
        drops: 4,
        blocks: 60,
        methods: vec![Method::ModelAided, Method::Genie],
        se: false,
        ..Default::default()
    };
    let r = run_simulation(&s, &opts).unwrap();
    let (m, g) = (r.pooled_nmse(Method::ModelAided).unwrap(), r.pooled_nmse(Method::Genie).unwrap());
    assert!((m - g).abs() < 0.1 * g, "model {m} vs genie {g}");
}

// The pooled ratio and the per-user mean are dominated by a handful of
// users and drift by 10% or more between seeds at this size; the median
// per-user NMSE is the statistic that settles.
#[test]
fn median_nmse_is_reproducible_across_seeds() {
    let run = |seed| {
        let opts = SimulateOptions {
            drops: 1000,
            blocks: 10,
            methods: vec![Method::Hardening, Method::ModelAided],
            se: false,
            ..Default::default()
        };
        run_simulation(&scenario(16, seed), &opts).unwrap()
    };
    let median = |r: &dlgain::metrics::EvalReport, m| {
        let mut v = r.nmse_values(m);
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (a, b) = (run(37), run(38));
    for m in [Method::Hardening, Method::ModelAided] {
        let (x, y) = (median(&a, m), median(&b, m));
        assert!((x - y).abs() <= 0.05 * x.max(y), "{m}: {x} vs {y}");
    }
}

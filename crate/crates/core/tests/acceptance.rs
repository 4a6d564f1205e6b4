//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines are always printed; exits nonzero when a gating criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::sync::Arc;
use std::time::Instant;

use censor_core::censor_multi::{HypIntensityForm, MultiCensor};
use censor_core::censor_single::{decay_intensity, nu_integral};
use censor_core::market::{HistoryFilter, Market};
use censor_core::mathkit::{hemi_mean, lpm_quadrature, solve_cutoff};
use censor_core::oracle::{
    indifference_check, lpm_order_check, martingale_study, nash_check, random_regression_specs,
    reduction_check, regression_check, rk4_gap, statics_sweep, StaticsGrid, WindowConfig,
};
use censor_core::{derive, simulate_path, IntensityTable, ModelSpec, TimeGrid, VarianceConvention};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Single-agent reference spec used across criteria.
fn default_spec() -> ModelSpec {
    ModelSpec::symmetric(1, 0.3, 0.3, 1.0, 1.0, 2.0)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn ok(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut spec = ModelSpec::symmetric(
            1,
            rng.random_range(0.1..0.5),
            rng.random_range(0.1..0.5),
            rng.random_range(0.5..1.5),
            1.0,
            1.0,
        );
        let (k1, k2) = (rng.random_range(0.05..0.5), rng.random_range(0.5..0.95));
        let values: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
        spec.lambda = vec![IntensityTable::new(vec![0.0, k1, k2, 1.0], values).unwrap()];
        let d = derive(&spec).unwrap();
        let gap = rk4_gap(
            &d,
            0,
            &spec.lambda[0],
            VarianceConvention::Proof,
            1e-4,
            1.0 - 1e-6,
        );
        worst = worst.max(gap);
    }
    let secs = start.elapsed().as_secs_f64();
    ok(
        worst < 1e-8 && secs < 10.0,
        format!("sup |exp(-int nu) - RK4| = {worst:.3e} (< 1e-8), {secs:.2} s (< 10 s)"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let spec = default_spec();
    let cfg = WindowConfig::new(&spec, 0.2, 0.201, 1_000_000, 202);
    let r = indifference_check(&spec, &cfg, 0, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    ok(
        r.verdict.passed() && secs < 120.0,
        format!(
            "engine {:.6}, silence {:.6} ± {:.1e} (z {:+.2}), at cutoff {:.6} ± {:.1e} (z {:+.2}), {secs:.1} s",
            r.estimate("engine_gamma_tilde_s"),
            r.estimate("mean_given_silence"),
            r.se("mean_given_silence"),
            r.diagnostic("z_silence"),
            r.estimate("mean_at_cutoff"),
            r.se("mean_at_cutoff"),
            r.diagnostic("z_at_cutoff"),
        ),
    )
}

fn criterion_3() -> Outcome {
    // High intensity lifts the O(h) residual above the MC noise floor at h = 1e-3.
    let spec = ModelSpec::symmetric(1, 0.3, 0.3, 1.0, 1.0, 20.0);
    let cfg = WindowConfig {
        y_t: vec![1.0],
        ..WindowConfig::new(&spec, 0.2, 0.21, 1_000_000, 303)
    };
    let r = lpm_order_check(&spec, &cfg, 1e-2, 1e-3, 5.0).unwrap();
    ok(
        r.verdict.passed(),
        format!(
            "residual(1e-2) = {:+.4e} ± {:.1e}, residual(1e-3) = {:+.4e} ± {:.1e}, ratio {:.2} (>= 5)",
            r.estimate("residual_long"),
            r.se("residual_long"),
            r.estimate("residual_short"),
            r.se("residual_short"),
            r.estimate("shrink_ratio"),
        ),
    )
}

fn criterion_4() -> Outcome {
    let spec = default_spec();
    let pairs = [(0.1, 0.2), (0.2, 0.4), (0.3, 0.5), (0.5, 0.7), (0.6, 0.9)];
    let reports = martingale_study(
        &spec,
        200,
        &pairs,
        HistoryFilter::SilenceSinceStart,
        1_000_000,
        404,
        VarianceConvention::Proof,
        HypIntensityForm::Thinned,
    )
    .unwrap();
    let pass = reports.iter().all(|r| r.pass);
    let detail = reports
        .iter()
        .map(|r| {
            format!(
                "({}, {}): {:+.3e} ± {:.1e} (z {:+.1})",
                r.t, r.s, r.mean_diff, r.standard_error, r.z
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    ok(pass, detail)
}

fn criterion_5() -> Outcome {
    let spec = default_spec();
    let thinned = reduction_check(
        &spec,
        1000,
        VarianceConvention::Proof,
        HypIntensityForm::Thinned,
    )
    .unwrap();
    let literal = reduction_check(
        &spec,
        1000,
        VarianceConvention::Proof,
        HypIntensityForm::Literal,
    )
    .unwrap();
    ok(
        thinned.verdict.passed() && !literal.verdict.passed(),
        format!(
            "thinned form: valuation gap {:.2e}, cutoff gap {:.2e}; literal form: valuation gap {:.2e} (expected > 1e-10)",
            thinned.estimate("sup_valuation_gap"),
            thinned.estimate("sup_cutoff_gap"),
            literal.estimate("sup_valuation_gap"),
        ),
    )
}

fn criterion_6() -> Outcome {
    let spec = ModelSpec::symmetric(2, 0.3, 0.3, 1.0, 1.0, 2.0);
    let cfg = WindowConfig::new(&spec, 0.2, 0.201, 10_000_000, 606);
    let r = nash_check(&spec, &cfg, None).unwrap();
    let mut cut = censor_core::oracle::engine_window(&spec, &cfg)
        .unwrap()
        .cutoffs;
    cut[0] *= 1.1;
    let perturbed = nash_check(
        &spec,
        &WindowConfig {
            seed: 607,
            ..cfg.clone()
        },
        Some(&cut),
    )
    .unwrap();
    let z_pert = perturbed.diagnostic("agent0.z");
    ok(
        r.verdict.passed() && z_pert.abs() > 5.0,
        format!(
            "engine cutoffs: z = ({:+.2}, {:+.2}); agent 0 cutoff x1.1: z = {:+.1} (> 5)",
            r.diagnostic("agent0.z"),
            r.diagnostic("agent1.z"),
            z_pert,
        ),
    )
}

fn criterion_7() -> Outcome {
    let specs = random_regression_specs(&[1, 2, 3, 1, 2], 707);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    let mut widened = 0;
    for (k, (spec, t)) in specs.iter().enumerate() {
        let r = regression_check(
            spec,
            *t,
            1_000_000,
            7070 + k as u64,
            VarianceConvention::Proof,
        )
        .unwrap();
        pass &= r.verdict.passed();
        widened += r.warnings.len();
        for (key, z) in r.diagnostics.iter().filter(|(k, _)| k.ends_with(".z")) {
            checks += 1;
            if z.abs() > worst.abs() {
                worst = *z;
            }
            if z.abs() >= 3.0 {
                println!("    regression spec {k} {key}: z = {z:+.2}");
            }
        }
    }
    ok(
        pass,
        format!(
            "{checks} binned checks over 5 specs, max |z| = {:.2}, {widened} bins widened",
            worst.abs()
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let r = statics_sweep(&StaticsGrid::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let parts: Vec<String> = [
        "bandwagon",
        "monotone_in_precision",
        "bounds",
        "deflator_iff",
        "equal_loading_order",
    ]
    .iter()
    .map(|k| {
        format!(
            "{k} {}/{}",
            r.estimate(&format!("{k}.violations")),
            r.diagnostic(&format!("{k}.checked"))
        )
    })
    .collect();
    ok(
        r.verdict.passed() && secs < 30.0,
        format!("violations/checked: {}; {secs:.2} s", parts.join(", ")),
    )
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    let mut events = 0usize;
    for spec in [
        default_spec(),
        ModelSpec::symmetric(2, 0.3, 0.3, 1.0, 1.0, 2.0),
    ] {
        let grid = Arc::new(TimeGrid::uniform(500).unwrap());
        let market = Market::new(
            MultiCensor::new(
                &spec,
                Arc::clone(&grid),
                VarianceConvention::Proof,
                HypIntensityForm::Thinned,
            )
            .unwrap(),
        );
        let d = derive(&spec).unwrap();
        for j in 0..10_000u64 {
            let tr = market
                .run_path(&simulate_path(&spec, &grid, 909, j))
                .unwrap();
            let event_at: Vec<bool> = {
                let mut v = vec![false; grid.len()];
                tr.voluntary().for_each(|e| v[e.index] = true);
                v
            };
            events += tr.voluntary().count();
            for i in 0..spec.m {
                for k in 1..grid.last_index() {
                    let (pre, post) = (tr.gamma_tilde[i][k], tr.s_price[i][k]);
                    if event_at[k] {
                        if post < pre * (1.0 - 1e-12) {
                            failures.push(format!(
                                "m={} path {j} agent {i}: downward jump at {k}",
                                spec.m
                            ));
                        }
                    } else if post != pre || pre > tr.s_price[i][k - 1] {
                        failures.push(format!(
                            "m={} path {j} agent {i}: move off events at {k}",
                            spec.m
                        ));
                    }
                }
            }
            if spec.m == 1 {
                // ν/λ on every silent stretch, evaluated at the grid points of the stretch.
                let mut start = 0;
                for k in 1..=grid.last_index() {
                    if event_at[k] || k == grid.last_index() {
                        let ratios: Vec<f64> = (start..k)
                            .map(|q| {
                                decay_intensity(
                                    &d,
                                    0,
                                    grid.points()[q],
                                    1.0,
                                    VarianceConvention::Proof,
                                )
                            })
                            .collect();
                        if ratios.windows(2).any(|w| !(w[1] < w[0])) {
                            failures.push(format!(
                                "path {j}: nu/lambda not decreasing on [{start}, {k})"
                            ));
                        }
                        start = k;
                    }
                }
            }
        }
    }
    let spec = default_spec();
    let d = derive(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(919);
    let mut bond_gap: f64 = 0.0;
    for _ in 0..1000 {
        let mut ts = [
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        ];
        ts.sort_by(|a, b| a.total_cmp(b));
        let b = |a: f64, c: f64| {
            (-nu_integral(&d, 0, &spec.lambda[0], a, c, VarianceConvention::Proof)).exp()
        };
        bond_gap = bond_gap.max((b(ts[0], ts[1]) * b(ts[1], ts[2]) - b(ts[0], ts[2])).abs());
    }
    for f in failures.iter().take(5) {
        println!("    {f}");
    }
    ok(
        failures.is_empty() && bond_gap < 1e-10,
        format!(
            "2 x 10^4 tracks, {events} voluntary events, {} structural violations, bond semigroup gap {bond_gap:.2e}",
            failures.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_lpm: f64 = 0.0;
    for a in 0..20 {
        let lambda = 10f64.powf(-2.0 + 4.0 * a as f64 / 19.0);
        for b in 0..20 {
            let sigma = 10f64.powf(-1.3 + 1.8 * b as f64 / 19.0);
            let sol = solve_cutoff(lambda, sigma);
            worst_res = worst_res.max(sol.residual);
            let gap =
                (hemi_mean(sol.y, 1.0, sigma) - lpm_quadrature(sol.y, 1.0, sigma, 100_000)).abs();
            worst_lpm = worst_lpm.max(gap);
        }
    }
    ok(
        worst_res < 1e-10 && worst_lpm < 1e-6,
        format!("lambda in [1e-2, 1e2], sigma in [0.05, 3.2]: max residual {worst_res:.2e}, max |H - quadrature| {worst_lpm:.2e}"),
    )
}

/// Criteria whose verdict is reported but does not gate the exit code.
const NON_GATING: [usize; 1] = [4];

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        (1, "closed-form decay vs RK4", criterion_1),
        (2, "indifference at the engine cutoff", criterion_2),
        (3, "LPM residual order", criterion_3),
        (4, "price martingale", criterion_4),
        (5, "m = 1 reduction of the multi-agent censor", criterion_5),
        (6, "Nash conditions and power", criterion_6),
        (7, "regression laws vs binned MC", criterion_7),
        (8, "comparative statics sweep", criterion_8),
        (9, "track structure and bond semigroup", criterion_9),
        (10, "solver and hemi-mean quality", criterion_10),
    ];
    let mut gating_failures = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        let note = if !out.pass && NON_GATING.contains(&id) {
            " [non-gating]"
        } else {
            ""
        };
        println!(
            "criterion {id:>2} {tag}{note} {name} ({:.1} s): {}",
            start.elapsed().as_secs_f64(),
            out.detail
        );
        if !out.pass && !NON_GATING.contains(&id) {
            gating_failures += 1;
        }
    }
    if gating_failures > 0 {
        println!("{gating_failures} gating criteria failed");
        std::process::exit(1);
    }
}

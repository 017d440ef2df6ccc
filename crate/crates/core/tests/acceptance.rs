//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its verdict line: `cargo test -p biasdyn --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use biasdyn::bounds::{check_envelope, envelope_sweep, EnvelopeParams, SweepConfig};
use biasdyn::dynamics::{
    drift_sign, simulate, step_static, BiasVector, Drift, OpinionState, SimulateOptions,
};
use biasdyn::equilibria::{
    enumerate_vertices, numeric_search, residual, vertex_state, EquilibriumFamily, FamilyKind, SearchConfig,
};
use biasdyn::graph::{make_graph, random_connected, GraphKind, RandomGraphParams, WeightedGraph};
use biasdyn::schedule::{validate_schedule, SwitchingSchedule};
use biasdyn::seeding::stream_rng;
use biasdyn::stability::{randomized_stability_test, vertex_scan, Stability, StabilityProtocol};
use rand::Rng;

const MASTER_SEED: u64 = 20240601;

/// Direct transcription of the update rule, independent of the library's
/// split-state kernel.
fn oracle_step(g: &WeightedGraph, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let xi = x[i];
            if xi == 0.0 || xi == 1.0 || g.neighbors(i).is_empty() {
                return xi;
            }
            let s: f64 = g.neighbors(i).iter().map(|&(j, w)| w * x[j]).sum();
            let d: f64 = g.neighbors(i).iter().map(|&(_, w)| w).sum();
            let w = g.self_weight(i);
            let up = xi.powf(b[i]) * s;
            (w * xi + up) / (w + up + (1.0 - xi).powf(b[i]) * (d - s))
        })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn criterion_1() -> Outcome {
    let params = RandomGraphParams::default();
    let (mut mirror_worst, mut oracle_worst, mut trichotomy_checks) = (0.0_f64, 0.0_f64, 0usize);
    for case in 0..10_000u64 {
        let mut rng = stream_rng(MASTER_SEED, &[1, case]);
        let n = rng.gen_range(2..=12);
        let g = random_connected(n, &params, &mut rng).map_err(|e| e.to_string())?;
        let b: Vec<f64> = (0..n).map(|_| 4.0 - rng.gen_range(0.0..4.0)).collect();
        let x: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..=1.0),
            })
            .collect();
        let bias = BiasVector::new(b.clone()).unwrap();
        let state = OpinionState::new(x.clone()).unwrap();
        let next = step_static(&g, &bias, &state).map_err(|e| format!("case {case}: {e}"))?;
        let expected = oracle_step(&g, &b, &x);

        // range
        ensure!(
            next.values().iter().all(|v| (0.0..=1.0).contains(v)),
            "case {case}: step left [0, 1]: {:?}",
            next.values()
        );
        // agreement with the direct formula
        oracle_worst = oracle_worst.max(max_diff(next.values(), &expected));
        ensure!(oracle_worst <= 1e-12, "case {case}: library step differs from formula by {oracle_worst:e}");
        // mirror symmetry
        let mirrored = step_static(&g, &bias, &state.mirrored()).unwrap();
        let d = max_diff(mirrored.values(), next.mirrored().values());
        mirror_worst = mirror_worst.max(d);
        ensure!(d <= 1e-12, "case {case}: mirror symmetry off by {d:e}");
        // boundary absorption
        for i in 0..n {
            if x[i] == 0.0 || x[i] == 1.0 {
                ensure!(next.get(i) == x[i], "case {case}: boundary node {} moved to {}", i + 1, next.get(i));
            }
        }
        // drift trichotomy on interior nodes
        for i in (0..n).filter(|&i| x[i] > 0.0 && x[i] < 1.0) {
            let moved = expected[i] - x[i];
            let ok = match drift_sign(&g, &bias, &state, i).unwrap() {
                Drift::Increase => moved > 0.0,
                Drift::Decrease => moved < 0.0,
                Drift::Fixed => moved.abs() <= 1e-9,
            };
            ensure!(ok, "case {case}: drift sign disagrees with step at node {}", i + 1);
            trichotomy_checks += 1;
        }
    }
    Ok(format!(
        "10000 cases; mirror error {mirror_worst:.1e}, formula error {oracle_worst:.1e}, {trichotomy_checks} drift checks"
    ))
}

fn sweep_config() -> SweepConfig {
    SweepConfig {
        seed: MASTER_SEED,
        ..SweepConfig::default()
    }
}

fn criterion_2(json: &mut Option<String>) -> Outcome {
    let report = envelope_sweep(&sweep_config()).map_err(|e| e.to_string())?;
    *json = Some(serde_json::to_string(&report).unwrap());
    ensure!(report.summary.cases == 200, "ran {} cases", report.summary.cases);
    ensure!(report.details.iter().all(|c| c.monotone), "max opinion increased in some case");
    ensure!(
        report.summary.failures == 0,
        "{} failing cases, first: {:?}",
        report.summary.failures,
        report.details.iter().find(|c| !c.ok())
    );
    ensure!(report.details.iter().all(|c| c.first_failure.is_none()), "envelope violated");
    Ok(format!("200 cases x 300 steps; smallest slack {:.3e}", report.summary.worst_slack))
}

fn criterion_3() -> Outcome {
    let mut worst = f64::INFINITY;
    for case in 0..20u64 {
        let mut rng = stream_rng(MASTER_SEED, &[3, case]);
        let period = [2, 3, 5][case as usize % 3];
        let n = rng.gen_range(2..=10);
        let c = rng.gen_range(0.2..2.0);
        let cap = rng.gen_range(0.0..2.0);
        let sched = SwitchingSchedule::random_round_robin(n, period, c, cap, &mut rng).map_err(|e| e.to_string())?;
        let report = validate_schedule(&sched, sched.full_check_horizon()).map_err(|e| e.to_string())?;
        ensure!(report.passed(), "case {case}: schedule fails {:?}", report.first_failure());
        let b: Vec<f64> = (0..n).map(|_| 4.0 - rng.gen_range(0.0..4.0)).collect();
        let mut x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=0.45)).collect();
        if case % 2 == 1 {
            x0.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        let bias = BiasVector::new(b).unwrap();
        let x0 = OpinionState::new(x0).unwrap();
        let traj = simulate(&sched, &bias, &x0, &SimulateOptions::new(500)).map_err(|e| e.to_string())?;
        let params = EnvelopeParams::for_schedule(&sched, &bias, &x0).map_err(|e| e.to_string())?;
        let env = check_envelope(&traj, &params).map_err(|e| e.to_string())?;
        ensure!(env.passed, "case {case}: envelope fails at t = {:?}", env.first_failure);
        worst = worst.min(env.worst_slack);
    }
    Ok(format!("20 schedules x 500 steps; smallest slack {worst:.3e}"))
}

fn fixed_point_error(g: &WeightedGraph, b: f64, x: &OpinionState) -> (f64, f64) {
    let r = residual(g, b, x).unwrap().max_abs;
    let moved = max_diff(&oracle_step(g, &vec![b; x.len()], x.values()), x.values());
    (r, moved)
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0_f64;
    let mut checked = 0usize;
    let mut record = |what: &str, (r, moved): (f64, f64)| -> Outcome {
        ensure!(r <= 1e-12 && moved <= 1e-12, "{what}: residual {r:e}, displacement {moved:e}");
        worst = worst.max(r);
        checked += 1;
        Ok(String::new())
    };

    for case in 0..50u64 {
        let mut rng = stream_rng(MASTER_SEED, &[4, case]);
        let n = rng.gen_range(2..=20);
        let g = random_connected(n, &RandomGraphParams::default(), &mut rng).unwrap();
        let b = 4.0 - rng.gen_range(0.0..4.0);
        record(&format!("centroid, case {case}"), fixed_point_error(&g, b, &OpinionState::centroid(n)))?;
    }
    for n in 2..=10 {
        let mut rng = stream_rng(MASTER_SEED, &[4, 100 + n as u64]);
        let g = random_connected(n, &RandomGraphParams::default(), &mut rng).unwrap();
        let b = 4.0 - rng.gen_range(0.0..4.0);
        for mask in enumerate_vertices(n, None).unwrap() {
            record(&format!("vertex {mask:b}, n = {n}"), fixed_point_error(&g, b, &vertex_state(n, mask)))?;
        }
    }
    let families = [
        (GraphKind::Star, 5, 1.0, FamilyKind::StarHyperplane),
        (GraphKind::Star, 7, 1.0, FamilyKind::StarHyperplane),
        (GraphKind::Star, 5, 2.0, FamilyKind::StarLine),
        (GraphKind::Star, 8, 2.0, FamilyKind::StarLine),
        (GraphKind::Cycle, 4, 1.0, FamilyKind::CycleMod4),
        (GraphKind::Cycle, 8, 1.0, FamilyKind::CycleMod4),
        (GraphKind::Cycle, 6, 2.0, FamilyKind::CycleAlternating),
        (GraphKind::Cycle, 10, 2.0, FamilyKind::CycleAlternating),
    ];
    for (idx, (kind, n, b, fam)) in families.into_iter().enumerate() {
        let mut rng = stream_rng(MASTER_SEED, &[4, 200 + idx as u64]);
        for w in [0.5, 1.0, 2.0] {
            let g = make_graph(kind, n, w).unwrap();
            let family = EquilibriumFamily::new(fam, n, b).unwrap();
            for draw in 0..50 {
                let x = family.sample(&mut rng);
                record(&format!("{fam} on {kind} n = {n}, draw {draw}"), fixed_point_error(&g, b, &x))?;
            }
        }
    }
    Ok(format!("{checked} points; largest residual {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let cfg = SearchConfig::default();
    let mut lines = Vec::new();
    let cases = [
        (GraphKind::Complete, 3, 0.5, FamilyKind::Centroid),
        (GraphKind::Complete, 3, 1.0, FamilyKind::Centroid),
        (GraphKind::Complete, 3, 2.0, FamilyKind::Centroid),
        (GraphKind::Complete, 4, 0.5, FamilyKind::Centroid),
        (GraphKind::Complete, 4, 1.0, FamilyKind::Centroid),
        (GraphKind::Complete, 4, 2.0, FamilyKind::Centroid),
        (GraphKind::Star, 4, 2.0, FamilyKind::StarLine),
        (GraphKind::Cycle, 4, 1.0, FamilyKind::CycleMod4),
    ];
    for (kind, n, b, fam) in cases {
        let g = make_graph(kind, n, 1.0).unwrap();
        let clusters = numeric_search(&g, b, &cfg).map_err(|e| e.to_string())?;
        ensure!(!clusters.is_empty(), "{kind} n = {n} b = {b}: no interior equilibrium found");
        let family = EquilibriumFamily::new(fam, n, b).unwrap();
        let worst = clusters.iter().map(|c| family.distance(&c.point)).fold(0.0, f64::max);
        ensure!(worst <= 1e-8, "{kind} n = {n} b = {b}: a cluster lies {worst:e} from {fam}");
        if kind == GraphKind::Cycle {
            for c in &clusters {
                let x = &c.point;
                ensure!(
                    (x[0] + x[2] - 1.0).abs() <= 1e-8 && (x[1] + x[3] - 1.0).abs() <= 1e-8,
                    "cycle cluster {x:?} breaks x1 + x3 = x2 + x4 = 1"
                );
            }
        }
        lines.push(format!("{kind}/{n}/b={b}: {} clusters", clusters.len()));
    }
    Ok(lines.join(", "))
}

fn criterion_6() -> Outcome {
    let protocol = StabilityProtocol {
        seed: MASTER_SEED,
        ..StabilityProtocol::default()
    };
    let mut tested = 0;
    for kind in [GraphKind::Complete, GraphKind::Star, GraphKind::Cycle] {
        for b in [1.0, 2.0, 3.0] {
            let n = 5;
            let g = make_graph(kind, n, 1.0).unwrap();
            let bias = BiasVector::uniform(n, b).unwrap();
            let v = randomized_stability_test(&g, &bias, &OpinionState::centroid(n), &protocol)
                .map_err(|e| e.to_string())?;
            ensure!(v.verdict == Stability::Unstable, "centroid of {kind} n = {n} b = {b} judged stable");
            tested += 1;
        }
    }
    let families = [
        (GraphKind::Star, 5, 1.0, FamilyKind::StarHyperplane),
        (GraphKind::Star, 5, 2.0, FamilyKind::StarLine),
        (GraphKind::Cycle, 8, 1.0, FamilyKind::CycleMod4),
        (GraphKind::Cycle, 6, 2.0, FamilyKind::CycleAlternating),
    ];
    for (idx, (kind, n, b, fam)) in families.into_iter().enumerate() {
        let g = make_graph(kind, n, 1.0).unwrap();
        let bias = BiasVector::uniform(n, b).unwrap();
        let family = EquilibriumFamily::new(fam, n, b).unwrap();
        let mut rng = stream_rng(MASTER_SEED, &[6, idx as u64]);
        for draw in 0..20 {
            let x = family.sample(&mut rng);
            let v = randomized_stability_test(&g, &bias, &x, &protocol).map_err(|e| e.to_string())?;
            ensure!(
                v.verdict == Stability::Unstable,
                "{fam} member {:?} (draw {draw}) judged stable, max ratio {}",
                x.values(),
                v.max_distance_ratio
            );
            tested += 1;
        }
    }
    Ok(format!("{tested} equilibria, all unstable"))
}

fn scan_protocol() -> StabilityProtocol {
    StabilityProtocol {
        seed: MASTER_SEED,
        ..StabilityProtocol::default()
    }
}

fn criterion_7(json: &mut Option<String>) -> Outcome {
    let g = make_graph(GraphKind::Cycle, 10, 1.0).unwrap();
    let report = vertex_scan(&g, 3.0, &scan_protocol()).map_err(|e| e.to_string())?;
    *json = Some(serde_json::to_string(&report).unwrap());
    let p: Vec<f64> = report.levels.iter().map(|l| l.p_k).collect();
    let shown = p.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
    for k in 0..=10 {
        ensure!(p[k] == p[10 - k], "p({k}) = {} but p({}) = {} [{shown}]", p[k], 10 - k, p[10 - k]);
    }
    ensure!(p[0] == 1.0 && p[10] == 1.0, "p(0) = {}, p(10) = {}", p[0], p[10]);
    let mixed: Vec<usize> = report
        .levels
        .iter()
        .filter(|l| (1..=9).contains(&l.k) && l.stable > 0 && l.stable < l.total)
        .map(|l| l.k)
        .collect();
    ensure!(!mixed.is_empty(), "no level 1..9 has both verdicts [{shown}]");
    Ok(format!("p(0..10) = [{shown}], mixed levels {mixed:?}"))
}

fn criterion_8(sweep_json: &Option<String>, scan_json: &Option<String>) -> Outcome {
    let (Some(sweep_json), Some(scan_json)) = (sweep_json, scan_json) else {
        return Err("criteria 2 and 7 produced no reports".into());
    };
    let g = make_graph(GraphKind::Cycle, 10, 1.0).unwrap();
    // repeat once on the default pool and once on a two-thread pool
    for threads in [None, Some(2)] {
        let run = || {
            let sweep = serde_json::to_string(&envelope_sweep(&sweep_config()).unwrap()).unwrap();
            let scan = serde_json::to_string(&vertex_scan(&g, 3.0, &scan_protocol()).unwrap()).unwrap();
            (sweep, scan)
        };
        let (sweep, scan) = match threads {
            None => run(),
            Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(run),
        };
        ensure!(&sweep == sweep_json, "sweep report changed on repeat ({threads:?} threads)");
        ensure!(&scan == scan_json, "scan report changed on repeat ({threads:?} threads)");
    }
    Ok(format!(
        "sweep ({} bytes) and scan ({} bytes) reports identical across 3 runs",
        sweep_json.len(),
        scan_json.len()
    ))
}

fn run(id: usize, title: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let (ok, detail) = match outcome {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; exceeded time limit of {limit:?}")),
        Err(e) => (false, e),
    };
    println!(
        "criterion {id} [{}] {title} ({:.1}s): {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn main() {
    let mut sweep_json = None;
    let mut scan_json = None;
    let min = |m: u64| Duration::from_secs(60 * m);
    let results = [
        run(1, "step invariants", Duration::from_secs(10), criterion_1),
        run(2, "static envelope sweep", Duration::from_secs(30), || criterion_2(&mut sweep_json)),
        run(3, "switching envelope", Duration::from_secs(10), criterion_3),
        run(4, "equilibrium residuals", Duration::from_secs(10), criterion_4),
        run(5, "numeric search vs closed forms", min(5), criterion_5),
        run(6, "instability of interior equilibria", min(2), criterion_6),
        run(7, "vertex scan, cycle n=10 b=3", min(10), || criterion_7(&mut scan_json)),
        run(8, "determinism", min(25), || criterion_8(&sweep_json, &scan_json)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

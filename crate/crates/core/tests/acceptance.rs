//! Acceptance suite: ten criteria, one PASS/FAIL line each.
//!
//! Set `BAREBONES_ONLY=3,5` to run a subset while iterating; the full run is
//! what `cargo test` executes.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use barebones::combinat::{build_selector, build_ssf, verify_selector, verify_ssf};
use barebones::engine::EngineError;
use barebones::harness::{
    self, generate, oracle_is_mis, run_on, run_one, scaling_fit, within_resource_bounds,
    Detail, Generator, HarnessError, MetricsRow, Protocol, RunRecord, Scenario, StartSet,
};
use barebones::phys::{sinr_from_distances, Network, Placement, PhysicalConfig, Point};
use barebones::protocols::{Params, ProtocolError};

const LIMIT: u64 = 1 << 32;
const MEAN_DEGREE: f64 = 8.0;

struct Suite {
    only: Option<Vec<u32>>,
    verdicts: BTreeMap<u32, (bool, String)>,
    rows: Vec<MetricsRow>,
    violations: usize,
    runs: usize,
    errors: Vec<String>,
}

impl Suite {
    fn wants(&self, k: u32) -> bool {
        self.only.as_ref().map_or(true, |o| o.contains(&k))
    }

    fn verdict(&mut self, k: u32, ok: bool, detail: String) {
        println!("criterion {k:>2}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
        self.verdicts.insert(k, (ok, detail));
    }

    /// Run every seed of a scenario, keeping rows for the resource and
    /// uniqueness checks.
    fn run(&mut self, sc: &Scenario) -> Vec<RunRecord> {
        let out: Vec<Result<RunRecord, HarnessError>> = sc.seeds.par_iter().map(|&s| run_one(sc, s, None)).collect();
        self.absorb(out)
    }

    fn absorb(&mut self, out: Vec<Result<RunRecord, HarnessError>>) -> Vec<RunRecord> {
        let mut recs = Vec::new();
        for r in out {
            self.runs += 1;
            match r {
                Ok(rec) => {
                    self.rows.push(rec.row.clone());
                    recs.push(rec);
                }
                Err(HarnessError::Protocol(ProtocolError::Engine(EngineError::Uniqueness { .. }))) => {
                    self.violations += 1;
                }
                Err(e) => self.errors.push(e.to_string()),
            }
        }
        recs
    }
}

fn scenario(generator: Generator, name_space: u32, seeds: std::ops::Range<u64>, protocol: Protocol) -> Scenario {
    Scenario {
        schema: harness::SCHEMA,
        generator,
        physical: PhysicalConfig::default(),
        name_space,
        seeds: seeds.collect(),
        round_limit: LIMIT,
        protocol,
        params: Params::default(),
    }
}

fn uniform(n: usize, mean_degree: f64) -> Generator {
    Generator::UniformSquare { n, side: Generator::square_side_for_degree(n, mean_degree) }
}

fn frac(ok: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        ok as f64 / total as f64
    }
}

fn families(s: &mut Suite) {
    let t = Instant::now();
    let mut bad = Vec::new();
    let mut checked = 0;
    for n in 1..=16u32 {
        for x in 1..=n.min(4) {
            for seed in 0..20 {
                checked += 1;
                let ok = build_ssf(n, x, seed).and_then(|f| verify_ssf(&f, x)).unwrap_or(false);
                if !ok {
                    bad.push(format!("ssf({n},{x})#{seed}"));
                }
            }
        }
    }
    for n in 1..=12u32 {
        for x in 1..=n.min(4) {
            for y in 1..=x {
                for seed in 0..20 {
                    checked += 1;
                    let ok = build_selector(n, x, y, seed).and_then(|f| verify_selector(&f, x, y)).unwrap_or(false);
                    if !ok {
                        bad.push(format!("selector({n},{x},{y})#{seed}"));
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = bad.is_empty() && secs < 120.0;
    s.verdict(1, ok, format!("{checked} families verified exhaustively, {} invalid {:?}, {secs:.1}s", bad.len(), bad));
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn pair_net(config: PhysicalConfig, points: &[(f64, f64)]) -> Network {
    let pl: Vec<Placement> =
        points.iter().enumerate().map(|(i, &(x, y))| Placement { name: i as u32 + 1, pos: Point::new(x, y) }).collect();
    Network::build(&pl, 8, config).expect("valid placement")
}

/// Closed-form SINR truths; the uniqueness half is settled after all runs.
fn sinr_truths() -> Vec<String> {
    let mut bad = Vec::new();
    // Quadratic loss at distance 0.5 with unit power and noise.
    if rel(sinr_from_distances(1.0, 1.0, 2.0, 0.5, &[]), 4.0) > 1e-12 {
        bad.push("single transmitter at 0.5".into());
    }
    let c = PhysicalConfig { alpha: 3.0, noise: 1.0, beta: 2.0, power: 5.0, eps_s: 0.1, eps_c: 0.1, ..Default::default() };
    let r = c.max_range();
    let at_r = pair_net(c, &[(0.0, 0.0), (r, 0.0)]);
    if rel(at_r.sinr(1, 2, &[1]).unwrap(), c.beta) > 1e-12 || at_r.receives(1, 2, &[1]).unwrap() {
        bad.push("transmitter at max range".into());
    }
    let d = 0.4;
    let sym = pair_net(PhysicalConfig::default(), &[(-d, 0.0), (d, 0.0), (0.0, 0.0)]);
    let expected = d.powf(-3.0) / (1.0 + d.powf(-3.0));
    let got = sym.sinr(1, 3, &[1, 2]).unwrap();
    if rel(got, expected) > 1e-12 || got >= 1.0 || sym.receives(1, 3, &[1, 2]).unwrap() {
        bad.push("two equidistant transmitters".into());
    }
    let cd = PhysicalConfig::default();
    let edge = pair_net(cd, &[(0.0, 0.0), (cd.sensitivity_radius(), 0.0)]);
    if !edge.receives(1, 2, &[1]).unwrap() {
        bad.push("sensitivity boundary".into());
    }
    if edge.receives(1, 2, &[1, 2]).is_ok() {
        bad.push("half duplex".into());
    }
    bad
}

fn esun_bracket(s: &mut Suite) {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for delta in [1usize, 4, 16, 64] {
        let n = delta + 1;
        let sc = scenario(
            Generator::Star { n, radius: 0.9 },
            (4 * n as u32).max(16),
            0..1000,
            Protocol::Esun { initiator: Some(1) },
        );
        let recs = s.run(&sc);
        let hits = recs
            .iter()
            .filter(|r| matches!(r.detail, Detail::Esun { estimate, degree, .. } if degree == delta && (delta as u32..=16 * delta as u32).contains(&estimate)))
            .count();
        let f = frac(hits, 1000);
        ok &= f >= 0.95;
        parts.push(format!("Δ={delta}: {:.1}%", 100.0 * f));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    s.verdict(3, ok, format!("{}, {secs:.0}s", parts.join(", ")));
}

fn broadcast(s: &mut Suite) {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut per_size = Vec::new();
    for n in [25usize, 50, 100, 200] {
        let big_n = 4 * n as u32;
        let sc = scenario(uniform(n, MEAN_DEGREE), big_n, 0..100, Protocol::Dfs { source: None });
        let recs = s.run(&sc);
        let woke = recs.iter().filter(|r| matches!(&r.detail, Detail::Dfs(d) if d.all_awake)).count();
        let f = frac(woke, 100);
        ok &= f >= 0.99;
        let model = n as f64 * (big_n as f64).log2().powi(2);
        let done: Vec<&RunRecord> = recs.iter().filter(|r| r.row.success).collect();
        let c = done.iter().map(|r| r.row.rounds as f64).sum::<f64>() / (model * done.len().max(1) as f64);
        per_size.push((model, c * model));
        parts.push(format!("n={n}: {:.0}% woke, C={c:.1}", 100.0 * f));
    }
    let cs: Vec<f64> = per_size.iter().map(|&(m, y)| y / m).collect();
    let spread = cs.iter().cloned().fold(f64::MIN, f64::max) / cs.iter().cloned().fold(f64::MAX, f64::min);
    let fit = scaling_fit(&per_size);
    let fit_ok = fit.as_ref().is_ok_and(|f| !f.flagged);
    ok &= spread <= 2.0 && fit_ok;
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 1800.0;
    s.verdict(4, ok, format!("{}; C spread {spread:.2}, fit residual {:.2}, {secs:.0}s", parts.join(", "), fit.map_or(f64::NAN, |f| f.max_residual_ratio)));
}

fn mis_validity(s: &mut Suite) {
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [25usize, 100] {
        let sc = scenario(uniform(n, MEAN_DEGREE), 4 * n as u32, 0..100, Protocol::Mis);
        let seeds = sc.seeds.clone();
        let recs = s.run(&sc);
        let mut valid = 0;
        let mut invariant_breaks = 0;
        for (rec, &seed) in recs.iter().zip(&seeds) {
            let Detail::Mis(out) = &rec.detail else { continue };
            let net = generate(&sc.generator, sc.name_space, sc.physical, seed).expect("regenerates");
            if out.complete && oracle_is_mis(&net, &out.leaders) {
                valid += 1;
                if !out.invariants.all() {
                    invariant_breaks += 1;
                }
            }
        }
        ok &= frac(valid, 100) >= 0.99 && invariant_breaks == 0;
        parts.push(format!("n={n}: {valid}/100 valid, {invariant_breaks} invariant breaks"));
    }
    s.verdict(5, ok, parts.join(", "));
}

fn backbone_and_schedules(s: &mut Suite) {
    let sc = scenario(uniform(100, MEAN_DEGREE), 400, 0..100, Protocol::Backbone);
    let recs = s.run(&sc);
    let mut valid = 0;
    let mut diam_ok = true;
    let mut schedules = 0;
    let mut max_deg = 0;
    for rec in &recs {
        if let Detail::Backbone { report, inter, intra, .. } = &rec.detail {
            max_deg = max_deg.max(report.max_degree);
            if inter.complete() && intra.complete() {
                schedules += 1;
            }
            if report.valid() {
                valid += 1;
                diam_ok &= report.diameter_ratio.is_some_and(|r| r <= 4.0);
            }
        }
    }

    // Small instances, where the minimum CDS is computed exhaustively.
    let mut small_ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut small_runs = 0;
    for n in [4usize, 6, 8, 10, 12] {
        let sc = scenario(uniform(n, 5.0), 4 * n as u32, 0..20, Protocol::Backbone);
        for rec in s.run(&sc) {
            small_runs += 1;
            if let Detail::Backbone { report, .. } = &rec.detail {
                let ratio = report.size_ratio.unwrap_or(f64::INFINITY);
                worst_ratio = worst_ratio.max(ratio);
                small_ok &= ratio <= 5.0;
                if report.valid() {
                    diam_ok &= report.diameter_ratio.is_some_and(|r| r <= 4.0);
                }
            }
        }
    }
    small_ok &= small_runs == 100;

    // Same n and N at growing density: rounds against Δ.
    let mut points = Vec::new();
    for mean in [6.0, 12.0, 24.0] {
        let sc = scenario(uniform(100, mean), 400, 0..3, Protocol::Backbone);
        for rec in s.run(&sc) {
            points.push((rec.row.delta as f64, rec.row.rounds as f64));
        }
    }
    let mut pair_ok = true;
    for a in &points {
        for b in &points {
            if b.0 > a.0 {
                pair_ok &= b.1 / a.1 <= 2.0 * b.0 / a.0;
            }
        }
    }
    let fit = scaling_fit(&points);
    let linear_ok = pair_ok && fit.as_ref().is_ok_and(|f| !f.flagged);

    let ok = frac(valid, 100) >= 0.95 && small_ok && diam_ok && linear_ok;
    s.verdict(
        6,
        ok,
        format!(
            "{valid}/100 valid at n=100 (max backbone degree {max_deg}), worst |H|/minCDS {worst_ratio:.2} over {small_runs} small runs, \
             diameter bound {}, Δ-pairs {}, fit residual {:.2}",
            if diam_ok { "held" } else { "broken" },
            if pair_ok { "linear" } else { "superlinear" },
            fit.map_or(f64::NAN, |f| f.max_residual_ratio)
        ),
    );
    s.verdict(7, frac(schedules, 100) >= 0.95, format!("{schedules}/100 runs with full Inter_H exchange and Intra_H delivery"));
}

fn partly_coordinated(s: &mut Suite) {
    let t = Instant::now();
    let n = 50;
    let mut parts = Vec::new();
    let mut ok = true;
    let mut worst_box = 0;
    for (label, start) in [
        ("1", StartSet::Count(1)),
        ("2", StartSet::Count(2)),
        ("n/2", StartSet::Count(n / 2)),
        ("n", StartSet::All),
    ] {
        let sc = scenario(uniform(n, MEAN_DEGREE), 4 * n as u32, 0..100, Protocol::Emulated { start });
        let recs = s.run(&sc);
        let mut valid = 0;
        for rec in &recs {
            if let Detail::Emulated { outcome, report } = &rec.detail {
                worst_box = worst_box.max(outcome.invariants.max_active_per_box);
                ok &= outcome.invariants.max_active_per_box <= 25;
                if report.valid() {
                    valid += 1;
                }
            }
        }
        ok &= frac(valid, 100) >= 0.95;
        parts.push(format!("|S|={label}: {valid}/100"));
    }
    s.verdict(8, ok, format!("{}; most active sources in a box {worst_box}, {:.0}s", parts.join(", "), t.elapsed().as_secs_f64()));
}

fn determinism(s: &mut Suite) {
    let cases = [
        scenario(Generator::Path { n: 6, spacing: 0.9 }, 16, 0..3, Protocol::Dfs { source: Some(1) }),
        scenario(uniform(20, 5.0), 80, 0..3, Protocol::Esun { initiator: None }),
        scenario(uniform(20, 5.0), 80, 0..3, Protocol::Lun { x: 8, initiator: None }),
        scenario(uniform(20, 5.0), 80, 0..3, Protocol::Mis),
        scenario(uniform(12, 4.0), 48, 0..3, Protocol::Backbone),
        scenario(Generator::Path { n: 5, spacing: 0.9 }, 8, 0..2, Protocol::Emulated { start: StartSet::Count(2) }),
    ];
    let mut identical = 0;
    let mut total = 0;
    let trace = |sc: &Scenario, seed: u64| -> Result<Vec<u8>, HarnessError> {
        let mut buf = Vec::new();
        let net = generate(&sc.generator, sc.name_space, sc.physical, seed)?;
        run_on(&net, sc, seed, Some(Box::new(&mut buf)))?;
        Ok(buf)
    };
    for sc in &cases {
        for &seed in &sc.seeds {
            total += 1;
            match (trace(sc, seed), trace(sc, seed)) {
                (Ok(a), Ok(b)) if !a.is_empty() && a == b => identical += 1,
                _ => {}
            }
        }
    }
    let sweep = scenario(uniform(30, 6.0), 120, 0..16, Protocol::Dfs { source: None });
    let csv = |rows: Vec<MetricsRow>| {
        let mut rows = rows;
        rows.sort_by_key(|r| r.seed);
        let mut buf = Vec::new();
        harness::write_csv(&mut buf, &rows).expect("in-memory csv");
        buf
    };
    let seq: Vec<MetricsRow> = sweep.seeds.iter().filter_map(|&k| run_one(&sweep, k, None).ok()).map(|r| r.row).collect();
    let par: Vec<MetricsRow> = sweep.seeds.par_iter().rev().filter_map(|&k| run_one(&sweep, k, None).ok()).map(|r| r.row).collect();
    let fan_out = seq.len() == sweep.seeds.len() && csv(seq) == csv(par);
    s.verdict(
        10,
        identical == total && fan_out,
        format!("{identical}/{total} reruns byte-identical, parallel sweep {}", if fan_out { "identical" } else { "differs" }),
    );
}

fn main() {
    let only = std::env::var("BAREBONES_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|k| k.trim().parse().ok()).collect::<Vec<u32>>());
    let mut s = Suite { only, verdicts: BTreeMap::new(), rows: Vec::new(), violations: 0, runs: 0, errors: Vec::new() };
    let t = Instant::now();
    if s.wants(1) {
        families(&mut s);
    }
    if s.wants(3) {
        esun_bracket(&mut s);
    }
    if s.wants(4) {
        broadcast(&mut s);
    }
    if s.wants(5) {
        mis_validity(&mut s);
    }
    if s.wants(6) || s.wants(7) {
        backbone_and_schedules(&mut s);
    }
    if s.wants(8) {
        partly_coordinated(&mut s);
    }
    if s.wants(10) {
        determinism(&mut s);
    }
    if s.wants(2) {
        let bad = sinr_truths();
        let ok = bad.is_empty() && s.violations == 0;
        s.verdict(
            2,
            ok,
            format!("closed forms {:?}, {} uniqueness violations over {} runs", bad, s.violations, s.runs),
        );
    }
    if s.wants(9) {
        let over: Vec<String> = s
            .rows
            .iter()
            .filter(|r| !within_resource_bounds(r))
            .map(|r| format!("{}#{} N={}: {} bits, {} control", r.protocol, r.seed, r.name_space, r.max_random_bits, r.max_control_bits))
            .collect();
        let worst = |f: &dyn Fn(&MetricsRow) -> f64| s.rows.iter().map(f).fold(0.0, f64::max);
        let bits = worst(&|r| r.max_random_bits as f64 / (r.name_space.max(2) as f64).log2().powi(3));
        let ctrl = worst(&|r| r.max_control_bits as f64 / (r.name_space.max(2) as f64).log2());
        s.verdict(
            9,
            over.is_empty() && !s.rows.is_empty(),
            format!(
                "{} rows; worst random bits / log³N = {bits:.2} (bound {}), control bits / log N = {ctrl:.2} (bound {}); over: {:?}",
                s.rows.len(),
                harness::C_BITS,
                harness::B_MSG,
                over.iter().take(5).collect::<Vec<_>>()
            ),
        );
    }
    if !s.errors.is_empty() {
        println!("run errors: {:?}", &s.errors[..s.errors.len().min(10)]);
    }
    println!("\nacceptance summary ({:.0}s):", t.elapsed().as_secs_f64());
    for (k, (ok, _)) in &s.verdicts {
        println!("{} criterion {k}", if *ok { "PASS" } else { "FAIL" });
    }
    let failed = s.verdicts.values().filter(|v| !v.0).count();
    if failed > 0 || !s.errors.is_empty() {
        std::process::exit(1);
    }
}

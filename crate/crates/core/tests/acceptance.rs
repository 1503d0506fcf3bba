//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported but do not fail the
//! target; everything else must pass.

mod common;

use std::time::{Duration, Instant};

use common::*;
use lmc_core::connectivity::{
    barrier_curve, cross_block_matrix, layerwise_predicted, max_barrier, predicted_barrier, AngleBase,
    HessianWeighting, MetricKind,
};
use lmc_core::harness::{run_experiment, ExperimentConfig, RunOptions, RunOutput};
use lmc_core::toyscape::{ToyLandscape, ToyObjective, DEFAULT_TOY_GRID};
use lmc_core::{Activation, DiagonalQuadratic, LayerMask, NetObjective, Network, NetworkSpec, Objective, ParamVector};

const KNOWN_FAILURES: &[u32] = &[7];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

fn timed(id: u32, name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    Outcome {
        id,
        name,
        pass: pass && in_time,
        detail: if in_time {
            detail
        } else {
            format!("{detail}; over the time limit")
        },
        elapsed,
        limit,
    }
}

fn gradient_and_hvp_oracles() -> (bool, String) {
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    let seeds: Vec<u64> = (0..8).collect();
    for &seed in &seeds {
        let c = tiny_case(seed, 50);
        let g = c.net.gradient(&c.theta, &c.data).unwrap();
        worst_g = worst_g.max(rel_err(g.values(), &fd_gradient(&|x| c.loss_at(x), c.theta.values())));
        let v = c.random_direction(seed + 100);
        let hv = c.net.hvp(&c.theta, &v, &c.data).unwrap();
        let h = fd_hessian(&|x| c.grad_at(x), c.theta.values());
        worst_h = worst_h.max(rel_err(hv.values(), &mat_vec(&h, v.values())));
    }
    (
        worst_g <= 1e-6 && worst_h <= 1e-5,
        format!(
            "{} nets: worst gradient rel err {worst_g:.2e}, worst hvp rel err {worst_h:.2e}",
            seeds.len()
        ),
    )
}

fn barrier_algebra() -> (bool, String) {
    let mut fails = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            fails.push(what.to_string());
        }
    };
    for seed in 0..4 {
        let c = tiny_case(seed, 50);
        let obj = NetObjective::new(&c.net, &c.data);
        let other = c.theta.axpy(1.0, &c.random_direction(seed + 9));
        let fwd = barrier_curve(&obj, &c.theta, &other, 25, MetricKind::Loss).unwrap();
        let rev = barrier_curve(&obj, &other, &c.theta, 25, MetricKind::Loss).unwrap();
        check(fwd.barrier[0] == 0.0 && fwd.barrier[24] == 0.0, "endpoint zeroing");
        check(
            (0..25).all(|i| (fwd.barrier[i] - rev.barrier[24 - i]).abs() <= 1e-12),
            "swap symmetry",
        );
        let same = barrier_curve(&obj, &c.theta, &c.theta, 25, MetricKind::Loss).unwrap();
        check(same.barrier.iter().all(|&b| b == 0.0), "identical endpoints");
    }
    let quad = DiagonalQuadratic::new(vec![1.0]);
    let l = quad.layout().clone();
    let (a, b) = (
        ParamVector::new(vec![-1.0], l.clone()).unwrap(),
        ParamVector::new(vec![1.0], l).unwrap(),
    );
    let convex = barrier_curve(&quad, &a, &b, 25, MetricKind::Loss).unwrap();
    check(convex.barrier[12] == -0.5, "convex quadratic −1/2");

    let toy = ToyObjective::new(ToyLandscape::new(vec![-1.0, 1.0]).unwrap());
    let (p, q) = (toy.point(-1.0), toy.point(1.0));
    let curve = barrier_curve(&toy, &p, &q, 25, MetricKind::Loss).unwrap();
    let actual = max_barrier(&curve).1;
    let pred = predicted_barrier(&toy, &p, &q, &curve.alphas).unwrap().at_half();
    check(actual == 1.0 && pred == 4.0, "toy quartic 1 vs 4");
    let detail = format!(
        "convex B(1/2) = {}, quartic actual {actual} vs predicted {pred}{}",
        convex.barrier[12],
        if fails.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", fails.join(", "))
        }
    );
    (fails.is_empty(), detail)
}

fn block_identity() -> (bool, String) {
    let (mut worst_sum, mut worst_block) = (0.0f64, 0.0f64);
    for seed in 0..4 {
        let base = tiny_case(seed, 50);
        let spec = NetworkSpec::mlp(
            base.data.input_dim(),
            &[3, 3],
            base.net.output_dim(),
            Activation::Tanh,
            base.net.loss_kind(),
        );
        let net = Network::new(spec).unwrap();
        let c = Case {
            theta: net.init_params(seed),
            net,
            data: base.data,
        };
        let obj = NetObjective::new(&c.net, &c.data);
        let other = c.theta.axpy(0.8, &c.random_direction(seed + 3));
        let r = cross_block_matrix(&obj, &c.theta, &other, HessianWeighting::EndpointAverage).unwrap();
        worst_sum = worst_sum.max(scalar_rel_err(r.block_sum(), r.full_predicted_half));

        let (h1, h2) = (hvp_hessian(&obj, &c.theta), hvp_hessian(&obj, &other));
        let delta: Vec<f64> = other
            .values()
            .iter()
            .zip(c.theta.values())
            .map(|(x, y)| x - y)
            .collect();
        let segs = c.net.layout().segments().to_vec();
        let dense = |i: usize, j: usize| {
            let mut s = 0.0;
            for p in segs[i].range() {
                for q in segs[j].range() {
                    s += delta[p] * 0.5 * (h1[p][q] + h2[p][q]) * delta[q];
                }
            }
            s / 8.0
        };
        for i in 0..3 {
            for j in i..3 {
                let mask = LayerMask::new(c.net.layout().clone(), [&r.layers[i], &r.layers[j]]).unwrap();
                let set = layerwise_predicted(&obj, &c.theta, &other, &mask, 0.5).unwrap();
                let composed = if i == j {
                    dense(i, i)
                } else {
                    dense(i, i) + dense(j, j) + dense(i, j) + dense(j, i)
                };
                worst_block = worst_block.max(scalar_rel_err(set, composed));
                worst_block = worst_block.max(scalar_rel_err(r.block[i][j], dense(i, j)));
            }
        }
    }
    (
        worst_sum <= 1e-8 && worst_block <= 1e-8,
        format!("worst block-sum rel err {worst_sum:.2e}, worst composition rel err {worst_block:.2e}"),
    )
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn desk_trend(out: &RunOutput) -> (bool, String) {
    let rows = &out.comparison;
    let epochs: Vec<usize> = rows.iter().map(|r| r.fork_epoch).collect();
    let actual: Vec<f64> = rows.iter().map(|r| r.actual_max).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted_half).collect();
    let decreasing = actual.windows(2).all(|w| w[1] < w[0]);
    let rho = spearman(&actual, &predicted);
    let within5 = actual
        .iter()
        .zip(&predicted)
        .all(|(&a, &p)| a > 0.0 && p > 0.0 && (p / a).max(a / p) <= 5.0);
    (
        epochs == [0, 2, 5, 10] && decreasing && rho == 1.0 && within5,
        format!(
            "forks {epochs:?}: actual {:?}, predicted {:?}, spearman {rho}, strictly decreasing {decreasing}, within 5x {within5}",
            round(&actual),
            round(&predicted)
        ),
    )
}

fn desk_geometry(out: &RunOutput) -> (bool, String) {
    let report = |e: usize| {
        out.forks
            .iter()
            .find(|f| f.fork_epoch() == e)
            .and_then(|f| f.geometry_for(AngleBase::Origin))
    };
    let (Some(g0), Some(g10)) = (report(0), report(10)) else {
        return (false, "missing geometry for fork 0 or 10".into());
    };
    let (a0, a10) = (g0.angle.unwrap_or(f64::NAN), g10.angle.unwrap_or(f64::NAN));
    let (t0, t10) = (g0.epochs_to_cosine(0.9), g10.epochs_to_cosine(0.9));
    let faster = match (t0, t10) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    };
    (
        a0 > a10 && faster,
        format!("angle fork 0 {a0:.2} deg vs fork 10 {a10:.2} deg; cosine 0.9 after {t0:?} vs {t10:?} child epochs"),
    )
}

fn desk_maximizer(out: &RunOutput) -> (bool, String) {
    let mut checked = Vec::new();
    let mut ok = true;
    for r in &out.comparison {
        let close = (r.q1 - r.q2).abs() <= 0.2 * r.q1.abs().max(r.q2.abs());
        if close {
            let inside = (0.35..=0.65).contains(&r.actual_argmax);
            ok &= inside;
            checked.push(format!("fork {}: argmax {}", r.fork_epoch, r.actual_argmax));
        }
    }
    (
        ok,
        format!(
            "{} of {} forks have q1, q2 within 20% ({})",
            checked.len(),
            out.comparison.len(),
            checked.join(", ")
        ),
    )
}

fn toy_hierarchy() -> (bool, String) {
    let land = ToyLandscape::new(vec![-1.5, -1.0, 1.0, 1.5]).unwrap();
    let zeros = [-1.5, -1.0, 1.0, 1.5].iter().all(|&m| land.loss(m) == 0.0);
    let outer = land.barrier(0, 3, DEFAULT_TOY_GRID).unwrap().1;
    let inner = land.barrier(1, 2, DEFAULT_TOY_GRID).unwrap().1;
    (
        outer > inner && inner > 0.0 && zeros,
        format!("barrier(−1.5↔1.5) = {outer}, barrier(−1↔1) = {inner}, exact zeros at minima {zeros}"),
    )
}

fn determinism(first: &RunOutput, cfg: &ExperimentConfig) -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = cfg.clone();
    cfg.output_dir = tmp.path().join("again");
    let second = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let (a, b) = (&first.manifest, &second.manifest);
    let same = a.checkpoints == b.checkpoints && a.results == b.results && a.run_hash == b.run_hash;
    (
        same && !a.checkpoints.is_empty(),
        format!(
            "{} checkpoints and {} result files compared, run hash {}",
            a.checkpoints.len(),
            a.results.len(),
            &a.run_hash[..16]
        ),
    )
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let mut outcomes = vec![
        timed(1, "gradient/hvp oracles", secs(10), gradient_and_hvp_oracles),
        timed(2, "barrier algebra", secs(5), barrier_algebra),
        timed(3, "block-sum identity", secs(30), block_identity),
    ];

    let tmp = tempfile::tempdir().unwrap();
    let mut desk = ExperimentConfig::desk();
    desk.output_dir = tmp.path().join("desk");
    let start = Instant::now();
    let run = run_experiment(&desk, &RunOptions::default());
    let desk_time = start.elapsed();
    match &run {
        Ok(out) => {
            let mut o = timed(4, "desk barrier trend", None, || desk_trend(out));
            o.elapsed = desk_time;
            o.limit = secs(15 * 60);
            if desk_time > Duration::from_secs(15 * 60) {
                o.pass = false;
            }
            outcomes.push(o);
            outcomes.push(timed(5, "desk sibling geometry", None, || desk_geometry(out)));
            outcomes.push(timed(6, "alpha = 1/2 maximizer", None, || desk_maximizer(out)));
        }
        Err(e) => {
            for (id, name) in [
                (4, "desk barrier trend"),
                (5, "desk sibling geometry"),
                (6, "alpha = 1/2 maximizer"),
            ] {
                outcomes.push(Outcome {
                    id,
                    name,
                    pass: false,
                    detail: format!("desk run failed: {e}"),
                    elapsed: desk_time,
                    limit: None,
                });
            }
        }
    }
    outcomes.push(timed(7, "toy hierarchy", secs(1), toy_hierarchy));
    match &run {
        Ok(out) => outcomes.push(timed(8, "determinism", None, || determinism(out, &desk))),
        Err(e) => outcomes.push(Outcome {
            id: 8,
            name: "determinism",
            pass: false,
            detail: format!("desk run failed: {e}"),
            elapsed: Duration::ZERO,
            limit: None,
        }),
    }

    let mut unexpected = 0;
    for o in &outcomes {
        let known = KNOWN_FAILURES.contains(&o.id);
        let status = match (o.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as known failure)",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        let limit = o
            .limit
            .map(|l| format!(" / limit {}s", l.as_secs()))
            .unwrap_or_default();
        println!(
            "criterion {}: {status} {} [{:.2}s{limit}] {}",
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed unexpectedly");
        std::process::exit(1);
    }
}

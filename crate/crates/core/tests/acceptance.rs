//! Exit-gate checks, one line per check. Pass check numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 2 9`.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use hindsight::curiosity::contrastive_inner;
use hindsight::harness::{final_tracker_score, median, run_config, AgentKind, RunConfig};
use hindsight::oracle::{
    contrastive_gap_trend, dice_codes, dice_ground_truth, dice_joint, exact_invariance_bonus, kl, perturb_generator,
    random_critic, random_joint, random_simplex, verify_ba_bound, verify_cmi_identity,
    verify_contrastive_lower_bound, verify_lemma_normalization, verify_theorem1, DiscreteJoint, HindsightTables,
    JointSizes,
};
use hindsight::worlds::{
    apply_pixel_noise, persistive_step_size, persistive_update, sticky_filter, Action, CellKind, NoiseSetting,
    NoiseVariant, Observation, PersistiveLayer, NUM_ACTIONS, PERSISTIVE_MOD, WINDOW_CELLS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;
const INSTANCES: u64 = 20;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rng(stream: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream * 1_000 + i)
}

fn random_instance(r: &mut ChaCha8Rng) -> DiscreteJoint {
    let sizes = JointSizes {
        x: r.random_range(2..=4),
        a: r.random_range(2..=4),
        y: r.random_range(2..=6),
        z: r.random_range(2..=8),
    };
    random_joint(r, sizes).unwrap()
}

fn pairs(j: &DiscreteJoint) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..j.num_x()).flat_map(move |x| (0..j.num_a()).map(move |a| (x, a)))
}

fn normalization() -> Outcome {
    let mut worst = 0.0f64;
    let mut ks = Vec::new();
    for i in 0..INSTANCES {
        let mut r = rng(1, i);
        let j = random_instance(&mut r);
        let critic = random_critic(&mut r, j.num_x(), j.num_a(), j.num_z(), 3.0);
        let k = r.random_range(1..=4);
        ks.push(k);
        for (x, a) in pairs(&j) {
            let rep = verify_lemma_normalization(&j, &critic, x, a, k).unwrap();
            worst = worst.max((rep.lhs - 1.0).abs());
        }
    }
    outcome(worst <= TOL, format!("max |sum_z q - 1| = {worst:.2e} over {INSTANCES} instances, K in {ks:?}"))
}

fn barber_agakov() -> Outcome {
    let (mut worst_identity, mut worst_tight) = (0.0f64, 0.0f64);
    let mut bound_ok = true;
    for i in 0..INSTANCES {
        let mut r = rng(2, i);
        let j = random_instance(&mut r);
        for (x, a) in pairs(&j) {
            let q = random_simplex(&mut r, j.num_z());
            let rep = verify_ba_bound(&j, &q, x, a).unwrap();
            bound_ok &= rep.lhs <= rep.rhs + TOL;
            worst_identity = worst_identity.max((rep.gap - kl(j.z_given_xa(x, a), &q).unwrap()).abs());
            let tight = verify_ba_bound(&j, j.z_given_xa(x, a), x, a).unwrap();
            worst_tight = worst_tight.max(tight.gap.abs());
        }
    }
    outcome(
        bound_ok && worst_identity <= TOL && worst_tight <= TOL,
        format!("bound holds: {bound_ok}; max |gap - KL| = {worst_identity:.2e}; max gap at posterior = {worst_tight:.2e}"),
    )
}

fn contrastive_bound() -> Outcome {
    let mut min_slack = f64::INFINITY;
    for i in 0..INSTANCES {
        let mut r = rng(3, i);
        let j = random_instance(&mut r);
        let critic = random_critic(&mut r, j.num_x(), j.num_a(), j.num_z(), 3.0);
        for k in [2, 3, 4] {
            let rep = verify_contrastive_lower_bound(&j, &critic, k).unwrap();
            min_slack = min_slack.min(rep.rhs + TOL - rep.lhs);
        }
    }
    let j = random_joint(&mut rng(3, 100), JointSizes { x: 2, a: 2, y: 4, z: 8 }).unwrap();
    let (x, a) = pairs(&j)
        .max_by(|p, q| exact_invariance_bonus(&j, p.0, p.1).total_cmp(&exact_invariance_bonus(&j, q.0, q.1)))
        .unwrap();
    let trend = contrastive_gap_trend(&j, x, a, &[2, 8], 1_000_000, 77).unwrap();
    let (g2, g8) = (trend[0], trend[1]);
    let sep = (g2.gap - g8.gap) / (g2.stderr.powi(2) + g8.stderr.powi(2)).sqrt();
    outcome(
        min_slack >= 0.0 && sep > 3.0,
        format!(
            "min slack {min_slack:.2e} over {INSTANCES} x K=2,3,4; PMI-critic gap K=2 {:.4} vs K=8 {:.4} ({sep:.1} SE)",
            g2.gap, g8.gap
        ),
    )
}

fn dice_bound() -> Outcome {
    let dice = dice_joint();
    let codes = dice_codes();
    let truth = dice_ground_truth();
    let lambda = 1.0 / PI;
    let at_truth = verify_theorem1(&dice, &truth, &codes, lambda).unwrap();
    let max_reward = at_truth.iter().map(|c| c.reward.abs()).fold(0.0, f64::max);
    let max_kl = at_truth.iter().map(|c| c.model_kl).fold(0.0, f64::max);
    let mut applicable = true;
    let mut min_margin = f64::INFINITY;
    for i in 0..10 {
        let model = HindsightTables {
            generator: perturb_generator(&mut rng(4, i), &truth.generator, 0.1),
            reconstructor: truth.reconstructor.clone(),
        };
        for c in verify_theorem1(&dice, &model, &codes, lambda).unwrap() {
            applicable &= c.report.applicable;
            min_margin = min_margin.min(c.reward - c.model_kl);
        }
    }
    outcome(
        max_reward <= TOL && max_kl <= TOL && applicable && min_margin >= -TOL,
        format!(
            "at truth: max reward {max_reward:.2e}, max KL {max_kl:.2e}; perturbed: constraint met {applicable}, min (reward - KL) {min_margin:.3}"
        ),
    )
}

fn cmi_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let j = random_instance(&mut rng(5, i));
        for (x, a) in pairs(&j) {
            let rep = verify_cmi_identity(&j, x, a).unwrap();
            worst = worst.max((rep.lhs - rep.rhs).abs());
        }
    }
    outcome(worst <= TOL, format!("max |definition - entropy difference| = {worst:.2e}"))
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    for i in 0..50 {
        let rep = common::random_net_check(i, &mut rng(6, i as u64));
        if rep.max_rel > worst {
            worst = rep.max_rel;
            where_ = format!("net {i} ({}) {}", common::NET_KINDS[i % 5], rep.worst);
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 50 networks; worst at {where_}"))
}

fn contrastive_algebra() -> Outcome {
    let mut r = rng(7, 0);
    let (mut bound_ok, mut worst_scale) = (true, 0.0f64);
    for _ in 0..10_000 {
        let k = r.random_range(1..=16);
        let g = r.random_range(-20.0..20.0);
        let negs: Vec<f64> = (1..k).map(|_| r.random_range(-20.0..20.0)).collect();
        let t = r.random_range(0.05..5.0);
        let v = contrastive_inner(g, &negs, t);
        bound_ok &= v <= (k as f64).ln();
        let c = r.random_range(0.1..10.0);
        let scaled: Vec<f64> = negs.iter().map(|n| n * c).collect();
        worst_scale = worst_scale.max((contrastive_inner(g * c, &scaled, t * c) - v).abs());
    }
    let single = (0..100).all(|_| contrastive_inner(r.random_range(-50.0..50.0), &[], r.random_range(0.1..5.0)) == 0.0);
    let equal = (0..100).all(|_| {
        let g = r.random_range(-50.0..50.0);
        contrastive_inner(g, &vec![g; r.random_range(1..16)], r.random_range(0.1..5.0)) == 0.0
    });
    outcome(
        bound_ok && single && equal && worst_scale <= 1e-12,
        format!("<= ln K on 1e4 draws: {bound_ok}; K=1 zero: {single}; equal energies zero: {equal}; max rescale diff {worst_scale:.1e}"),
    )
}

fn noise_protocol() -> Outcome {
    let mut r = rng(8, 0);
    let n = 100_000;
    let mut repeats = 0;
    for _ in 0..n {
        let prev = Action::from_index(r.random_range(0..NUM_ACTIONS)).unwrap();
        let others: Vec<Action> = Action::ALL.iter().copied().filter(|&a| a != prev).collect();
        let intended = others[r.random_range(0..others.len())];
        if sticky_filter(intended, prev, 0.1, &mut r) == prev {
            repeats += 1;
        }
    }
    let sticky = repeats as f64 / n as f64;

    let setting = NoiseSetting::new(NoiseVariant::RandomPixel);
    let mut obs = Observation { cells: [CellKind::Floor; WINDOW_CELLS], noise: [0.0; WINDOW_CELLS] };
    let mut active = 0;
    for _ in 0..n {
        apply_pixel_noise(&mut obs, &setting, Some(Action::Up), None, &mut r);
        if obs.noise.iter().any(|&v| v != 0.0) {
            active += 1;
        }
    }
    let pixel = active as f64 / n as f64;

    let mut layer = PersistiveLayer::random(&mut r);
    let mut in_range = true;
    let mut steps_ok = true;
    for _ in 0..1_000_000 {
        let a = Action::from_index(r.random_range(0..NUM_ACTIONS)).unwrap();
        let want = if a.key() % 2 == 1 { 1 } else { 11 };
        let next = persistive_update(&layer, a, &mut r);
        steps_ok &= persistive_step_size(a) == want;
        for (u, v) in layer.offsets().iter().zip(next.offsets()) {
            in_range &= (0..PERSISTIVE_MOD).contains(v);
            let d = (v - u).rem_euclid(PERSISTIVE_MOD);
            steps_ok &= d == want || d == PERSISTIVE_MOD - want;
        }
        layer = next;
    }
    outcome(
        (sticky - 0.1).abs() <= 0.005 && (pixel - 0.25).abs() <= 0.01 && in_range && steps_ok,
        format!("sticky repeat rate {sticky:.4}; pixel activation rate {pixel:.4}; offsets in [0,50): {in_range}; step sizes 1/11: {steps_ok}"),
    )
}

fn grid_config(variant: NoiseVariant, kind: AgentKind, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.seed = seed;
    cfg.run.total_steps = 100_000;
    cfg.env.variant = variant;
    cfg.agent.kind = kind;
    cfg
}

fn behaviour() -> Outcome {
    const SEEDS: [u64; 3] = [0, 1, 2];
    let budget = Duration::from_secs(45 * 60);
    let dir = tempfile::tempdir().unwrap();
    let mut medians = Vec::new();
    let mut lines = Vec::new();
    let mut slowest = Duration::ZERO;
    for variant in [NoiseVariant::Baseline, NoiseVariant::OnDemandPixel, NoiseVariant::BrownianOscillators] {
        for kind in [AgentKind::ByolExplore, AgentKind::ByolHindsight] {
            let mut scores = Vec::new();
            for seed in SEEDS {
                let cfg = grid_config(variant, kind, seed);
                let out = dir.path().join(format!("{variant:?}-{}", kind.name()));
                let t = Instant::now();
                let s = run_config(&cfg, &out).unwrap();
                slowest = slowest.max(t.elapsed());
                scores.push(final_tracker_score(&s.episodes, cfg.run.total_steps).unwrap_or(0));
            }
            let m = median(scores.clone()).unwrap();
            lines.push(format!("{variant:?}/{}: {scores:?} -> {m}", kind.name()));
            medians.push((variant, kind, m));
        }
    }
    let med = |v, k| medians.iter().find(|e| e.0 == v && e.1 == k).unwrap().2;
    let a = med(NoiseVariant::Baseline, AgentKind::ByolExplore) == 4 && med(NoiseVariant::Baseline, AgentKind::ByolHindsight) == 4;
    let b = med(NoiseVariant::OnDemandPixel, AgentKind::ByolExplore) <= 2
        && med(NoiseVariant::OnDemandPixel, AgentKind::ByolHindsight) >= 3;
    let c = med(NoiseVariant::BrownianOscillators, AgentKind::ByolHindsight)
        >= med(NoiseVariant::BrownianOscillators, AgentKind::ByolExplore) + 1;
    let time_ok = slowest < budget;
    outcome(
        a && b && c && time_ok,
        format!(
            "baseline all four: {a}; on-demand ordering: {b}; brownian ordering: {c}; slowest run {:.0} s\n      {}",
            slowest.as_secs_f64(),
            lines.join("\n      ")
        ),
    )
}

fn training_dynamics() -> Outcome {
    let r = common::hindsight_dynamics(100, 11);
    outcome(
        r.objective_after < r.objective_before && r.worst_critic_change >= -1e-12,
        format!(
            "objective {:.5} -> {:.5} after 100 updates; smallest critic-step change {:.2e}",
            r.objective_before, r.objective_after, r.worst_critic_change
        ),
    )
}

fn determinism() -> Outcome {
    let mut identical = true;
    let mut names = Vec::new();
    for (variant, kind) in
        [(NoiseVariant::OnDemandPixel, AgentKind::ByolHindsight), (NoiseVariant::BrownianOscillators, AgentKind::ByolExplore)]
    {
        let cfg = grid_config(variant, kind, 0);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_config(&cfg, a.path()).unwrap();
        let rb = run_config(&cfg, b.path()).unwrap();
        let same = std::fs::read(&ra.paths.metrics).unwrap() == std::fs::read(&rb.paths.metrics).unwrap()
            && std::fs::read(&ra.paths.episodes).unwrap() == std::fs::read(&rb.paths.episodes).unwrap();
        identical &= same;
        names.push(format!("{variant:?}/{}: {}", kind.name(), if same { "identical" } else { "DIFFER" }));
    }
    outcome(identical, format!("100k-step runs repeated: {}", names.join(", ")))
}

type Check = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let checks: [Check; 11] = [
        (1, "contrastive density normalizes", Duration::from_secs(10), normalization),
        (2, "variational bound gap equals KL", Duration::from_secs(10), barber_agakov),
        (3, "contrastive bonus below invariance bonus", Duration::from_secs(120), contrastive_bound),
        (4, "dice rewards bound model divergence", Duration::from_secs(30), dice_bound),
        (5, "conditional mutual information identity", Duration::from_secs(10), cmi_identity),
        (6, "reverse mode matches finite differences", Duration::from_secs(60), gradients),
        (7, "contrastive algebra", Duration::from_secs(5), contrastive_algebra),
        (8, "noise protocol rates", Duration::from_secs(30), noise_protocol),
        (9, "maze tracker ordering", Duration::MAX, behaviour),
        (10, "fixed-batch training dynamics", Duration::from_secs(60), training_dynamics),
        (11, "byte-identical reruns", Duration::MAX, determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, budget, check) in checks {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        let elapsed = t.elapsed();
        let in_time = elapsed < budget;
        let passed = o.passed && in_time;
        let limit = if budget == Duration::MAX { String::new() } else { format!(" (limit {} s)", budget.as_secs()) };
        println!(
            "acceptance {id:>2} {} {name}: {} [{:.2} s{limit}]",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        if !passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all checks passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use iici_core::canonical::{coverage_indicator, iici_covers_zero, lemma2_probability, lemma3_check, rotation_indicator};
use iici_core::ci;
use iici_core::estimators::{iv_gmm_with_endogeneity, Dataset, GmmSpec};
use iici_core::lr::{lrci, sclr_critical_value, lr_interval, MIN_REPS};
use iici_core::mc::{simulate_grid, substream, McConfig, McOutput};
use iici_core::verify::{random_canonical, random_instance, reduction_disagreements, VerifyConfig};
use iici_core::{validate, CiKind, EstimateSummary, Level, LinearConstraint, Problem};

const SEED: u64 = 42;
const REPS: usize = 100_000;

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn level() -> Level {
    Level::new(0.05).unwrap()
}

fn fig1(theta: [f64; 2]) -> Problem {
    let est = EstimateSummary::from_slices(&theta, &[&[1.0, 0.7], &[0.7, 1.0]], 1, 0).unwrap();
    validate(&est, &LinearConstraint::from_slice(&[0.0, 1.0], 0.0).unwrap()).unwrap()
}

fn mc_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

fn c1() -> (bool, String) {
    let c = ci::threshold_c(&fig1([0.0, 0.0]), level());
    ((c - 0.8004).abs() <= 0.001, format!("c = {c:.6} (expected 0.8004 ± 0.001)"))
}

fn c2() -> (bool, String) {
    let p = fig1([0.0, 0.0]);
    let u = ci::uci(p.estimate(), level()).length();
    let e = ci::eici(&p, level()).length();
    let ok = (u - 3.9199).abs() <= 0.001 && (e - 2.7994).abs() <= 0.001;
    (ok, format!("UCI length {u:.6} (3.9199 ± 0.001), EICI length {e:.6} (2.7994 ± 0.001)"))
}

fn grid_run() -> McOutput {
    let cfg = McConfig {
        reps: REPS,
        seed: SEED,
        methods: vec![CiKind::Uci, CiKind::Eici, CiKind::Iici, CiKind::Iitci],
        ..McConfig::default()
    };
    simulate_grid(&cfg).expect("simulation runs")
}

fn c3(out: &McOutput) -> (bool, String) {
    let cp = out.at(CiKind::Iici, 0.0).unwrap().cp;
    ((0.9479..=0.9521).contains(&cp), format!("IICI coverage at θ₂ = 0: {cp:.5} (window [0.9479, 0.9521], {REPS} draws)"))
}

fn c4(out: &McOutput) -> (bool, String) {
    let curve = out.curve(CiKind::Iici);
    let worst = curve.iter().min_by(|a, b| a.cp.total_cmp(&b.cp)).unwrap();
    (
        curve.len() == 51 && worst.cp >= 0.9479 && out.failures == 0,
        format!("min IICI coverage over {} grid points: {:.5} at θ₂ = {:.1} (≥ 0.9479)", curve.len(), worst.cp, worst.theta2),
    )
}

fn c5(out: &McOutput) -> (bool, String) {
    let al = out.at(CiKind::Iici, 0.0).unwrap().al;
    ((al - 3.3597).abs() <= 0.01, format!("IICI average length at θ₂ = 0: {al:.5} (3.3597 ± 0.01)"))
}

fn c6(out: &McOutput) -> (bool, String) {
    let cp = out.at(CiKind::Eici, -1.0).unwrap().cp;
    ((cp - 0.8348).abs() <= 0.004, format!("EICI coverage at θ₂ = −1: {cp:.5} (0.8348 ± 0.004)"))
}

fn c7() -> (bool, String) {
    let lvl = level();
    let axis: Vec<f64> = (0..201).map(|i| -6.0 + 12.0 * i as f64 / 200.0).collect();
    let mut rng = substream(SEED, 7, 0);
    let (mut engine_bad, mut rotation_bad, mut rotation_cases) = (0usize, 0usize, 0usize);
    for i in 0..20 {
        let canon = random_canonical(&mut rng, i % 2 == 0);
        for &t1 in &axis {
            for &t2 in &axis {
                let th = [t1, t2];
                let region = coverage_indicator(&canon, lvl, th);
                if region != iici_covers_zero(&canon, lvl, th) {
                    engine_bad += 1;
                }
                if canon.b() == 0.0 {
                    rotation_cases += 1;
                    if region != rotation_indicator(&canon, lvl, th).unwrap() {
                        rotation_bad += 1;
                    }
                }
            }
        }
    }
    (
        engine_bad == 0 && rotation_bad == 0,
        format!(
            "20 instances × 201²: {engine_bad} region/interval disagreements, {rotation_bad} region/rotation disagreements over {rotation_cases} b = 0 points"
        ),
    )
}

fn c8() -> (bool, String) {
    let cfg = VerifyConfig { seed: SEED, reduction_instances: 100, reduction_draws: 10_000, ..VerifyConfig::default() };
    let interval = |p: &Problem, l: Level| ci::iici(p, l);
    let (counts, n) = reduction_disagreements(&cfg, &interval, &[2, 3, 4]).unwrap();
    (
        counts.iter().all(|&c| c == 0),
        format!("{n} draws over 100 instances (k ∈ {{2,3,4}}); disagreements per step {counts:?}"),
    )
}

fn c9() -> (bool, String) {
    let mut rng = substream(SEED, 9, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let angle = rng.gen_range(0.01..FRAC_PI_2 - 0.01);
        let alpha = rng.gen_range(0.001..0.999);
        let p = lemma2_probability(angle.cos(), angle.sin(), alpha).unwrap();
        worst = worst.max((p - (1.0 - alpha)).abs());
    }
    (worst <= 1e-6, format!("max |P − (1 − α)| over 100 cases: {worst:.3e} (≤ 1e-6)"))
}

fn c10() -> (bool, String) {
    let lvl = level();
    let mut rng = substream(SEED, 10, 0);
    let mus: Vec<f64> = (0..50).map(|i| 5.0 * i as f64 / 49.0).collect();
    let (mut shortfall, mut at_zero): (f64, f64) = (f64::NEG_INFINITY, 0.0);
    for _ in 0..10 {
        let canon = random_canonical(&mut rng, true);
        let pts = lemma3_check(&canon, lvl, &mus).unwrap();
        at_zero = at_zero.max((pts[0].value - 0.95).abs());
        for p in &pts {
            shortfall = shortfall.max(0.95 - p.value);
        }
    }
    (
        shortfall <= 1e-9 && at_zero <= 1e-7,
        format!("10 parameterizations × 50 shifts: max (1 − α) − E f(W+μ) = {shortfall:.3e}; |E f(W) − (1 − α)| = {at_zero:.3e}"),
    )
}

fn c11(out: &McOutput) -> (bool, String) {
    (
        out.paired.iici_longer_than_uci == 0 && out.paired.iici_outside_iitci == 0,
        format!(
            "over {} paired draws: {} IICI longer than UCI, {} IICI outside IITCI",
            REPS * 51,
            out.paired.iici_longer_than_uci,
            out.paired.iici_outside_iitci
        ),
    )
}

/// Random problem whose constraint is scaled so that `√(a'V̂a/n) = ŝ`, with
/// `θ̂` moved so that `g(θ̂) = g_target`.
fn scaled_instance(rng: &mut rand_chacha::ChaCha8Rng, k: usize, g_in_se: impl Fn(f64, &mut rand_chacha::ChaCha8Rng) -> f64) -> Problem {
    let (est, con, _) = random_instance(rng, k);
    let n = est.n() as f64;
    let va = est.v_hat() * con.a();
    let scale = est.s_hat() / (con.a().dot(&va) / n).sqrt();
    let a: DVector<f64> = con.a() * scale;
    let rho = (est.v_hat() * &a)[est.target()] / (est.v_hat()[(est.target(), est.target())] * a.dot(&(est.v_hat() * &a))).sqrt();
    let g = g_in_se(rho, rng) * est.s_hat();
    let b = g - a.dot(est.theta_hat());
    validate(&est, &LinearConstraint::new(a, b).unwrap()).unwrap()
}

fn c12() -> (bool, String) {
    let lvl = level();
    let mut rng = substream(SEED, 12, 0);
    let (mut slack_err, mut viol_err): (f64, f64) = (0.0, 0.0);
    for i in 0..200 {
        let k = 2 + i % 3;
        let p = scaled_instance(&mut rng, k, |_, r| -5.0 - r.gen_range(0.0..5.0));
        let lr = lrci(&p, lvl).unwrap();
        let u = ci::uci(p.estimate(), lvl);
        slack_err = slack_err.max((lr.lower - u.lower).abs()).max((lr.upper - u.upper).abs());

        let p = scaled_instance(&mut rng, k, |rho, r| {
            5.0 * (rho.abs() / (1.0 - rho * rho).sqrt()).max(1.0) + r.gen_range(0.0..5.0)
        });
        let lr = lrci(&p, lvl).unwrap();
        let e = ci::eici(&p, lvl);
        viol_err = viol_err.max((lr.lower - e.lower).abs()).max((lr.upper - e.upper).abs());
    }

    let mut not_nested = 0;
    for i in 0..1000 {
        let (est, con, truth) = random_instance(&mut rng, 2 + i % 3);
        let shift = DVector::from_fn(est.k(), |_, _| rng.gen_range(-3.0..3.0) * est.s_hat());
        let p = validate(&est.with_theta_hat(truth + shift).unwrap(), &con).unwrap();
        let crit = sclr_critical_value(&p, lvl, MIN_REPS, SEED + i as u64).unwrap();
        let s = lr_interval(&p, lvl, CiKind::Sclrci, crit.value).unwrap();
        let l = lrci(&p, lvl).unwrap();
        if !s.contains_interval(&l) {
            not_nested += 1;
        }
    }

    let cfg = McConfig { theta2_grid: vec![0.0], reps: 10_000, seed: SEED, methods: vec![CiKind::Lrci, CiKind::Sclrci], ..McConfig::default() };
    let out = simulate_grid(&cfg).unwrap();
    let sclr_cp = out.at(CiKind::Sclrci, 0.0).unwrap().cp;
    let lr_cp = out.at(CiKind::Lrci, 0.0).unwrap().cp;
    let crit = out.sclr_critical.unwrap();

    let ok = slack_err <= 1e-6 && viol_err <= 1e-6 && not_nested == 0 && sclr_cp >= 0.9479;
    (
        ok,
        format!(
            "slack |LRCI − UCI| {slack_err:.2e}; violated |LRCI − EICI| {viol_err:.2e}; SCLRCI ⊉ LRCI in {not_nested}/1000; \
             boundary coverage SCLRCI {sclr_cp:.4} (LRCI {lr_cp:.4}, critical value {:.4}, χ² {:.4})",
            crit.value, crit.chi2
        ),
    )
}

fn c13() -> (bool, String) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = substream(SEED, 13, 0);
    let n = 10_000;
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let d: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (z1, z2, w, u, e) = (d[0], d[1], d[2], d[3], d[4]);
        let x = 0.6 * z1 + 0.4 * z2 + 0.3 * w + u;
        let eps = e - 0.5 * u;
        cols[0].push(1.0 + 0.5 * x - 0.2 * w + eps);
        cols[1].push(x);
        cols[2].push(w);
        cols[3].push(z1);
        cols[4].push(z2);
    }
    let names = ["y", "x", "w", "z1", "z2"];
    let data = Dataset::from_columns(names.iter().map(|s| s.to_string()).zip(cols).collect()).unwrap();
    let clusters: Vec<String> = (0..n).map(|i| format!("c{}", i % 200)).collect();
    let data = data.with_labels("firm", clusters).unwrap();

    let mut worst: f64 = 0.0;
    for spec in [
        GmmSpec::new("y", &["x"], &["w"], &["z1"]),
        GmmSpec::new("y", &["x"], &["w"], &["z1", "z2"]),
        GmmSpec::new("y", &["x"], &["w"], &["z1", "z2"]).with_variance(iici_core::estimators::VarianceSpec::clustered("firm")),
    ] {
        let with = iv_gmm_with_endogeneity(&data, &spec).unwrap();
        let without = iv_gmm_with_endogeneity(&data, &spec.clone().with_targets(&[])).unwrap();
        let p = without.coefficients.len();
        let coef = (with.coefficients.rows(0, p) - &without.coefficients).amax();
        let block: DMatrix<f64> = with.v_hat.view((0, 0), (p, p)).into_owned();
        worst = worst.max(coef).max((block - &without.v_hat).amax());
    }
    (worst <= 1e-10, format!("n = {n}, just/over-identified and clustered: max |Δ| in (β̂, δ̂) and covariance block {worst:.3e} (≤ 1e-10)"))
}

fn timed(id: u32, title: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    Outcome { id, title, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn main() {
    let mut outcomes = vec![
        timed(1, "threshold reproduction", c1),
        timed(2, "length reproduction", c2),
    ];
    let start = Instant::now();
    let out = grid_run();
    let grid_secs = start.elapsed().as_secs_f64();
    outcomes.push(timed(3, "boundary coverage", || c3(&out)));
    outcomes.push(timed(4, "uniform validity", || c4(&out)));
    outcomes.push(timed(5, "halfway length", || c5(&out)));
    outcomes.push(timed(6, "EICI miscoverage away from boundary", || c6(&out)));
    outcomes.push(timed(7, "acceptance-region oracle equivalence", c7));
    outcomes.push(timed(8, "reduction equivariance", c8));
    outcomes.push(timed(9, "rotation probability quadrature", c9));
    outcomes.push(timed(10, "translation lower bound", c10));
    outcomes.push(timed(11, "containment", || c11(&out)));
    outcomes.push(timed(12, "likelihood-ratio comparators", c12));
    outcomes.push(timed(13, "GMM invariance to endogeneity moments", c13));
    for o in &mut outcomes {
        if matches!(o.id, 3..=6 | 11) {
            o.seconds += grid_secs;
        }
    }

    let mc_se0 = mc_se(0.95, REPS);
    println!("acceptance suite (seed {SEED}; binomial s.e. at 0.95 with {REPS} draws = {mc_se0:.5})");
    for o in &outcomes {
        println!(
            "criterion {:>2} [{}] {} ({:.1}s): {}",
            o.id,
            if o.passed { "PASS" } else { "FAIL" },
            o.title,
            o.seconds,
            o.detail
        );
    }
    println!("criterion 14 [SKIP] empirical tables, weighted-average-power figures and external comparator curves are out of scope");
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

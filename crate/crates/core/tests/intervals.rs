use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use iici_core::ci::{self, Branch, Geometry};
use iici_core::verify::{check_acceptance, check_reduction, VerifyConfig};
use iici_core::{
    normal_quantile, validate, CiKind, CiResult, EstimateSummary, Error, Level, LinearConstraint, Problem, SmoothConstraint,
};

fn level() -> Level {
    Level::new(0.05).unwrap()
}

fn fig1(theta: [f64; 2], rho: f64) -> Problem {
    let est = EstimateSummary::from_slices(&theta, &[&[1.0, rho], &[rho, 1.0]], 1, 0).unwrap();
    validate(&est, &LinearConstraint::from_slice(&[0.0, 1.0], 0.0).unwrap()).unwrap()
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol
}

/// Φ by composite Simpson on the density, then bisection.
fn oracle_quantile(p: f64) -> f64 {
    let cdf = |x: f64| {
        let n = 20_000;
        let (lo, hi) = (-12.0_f64, x);
        let h = (hi - lo) / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(lo) + pdf(hi);
        for i in 1..n {
            s += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer of (θ̂−θ)'V⁻¹(θ̂−θ) on a'θ+b = 0 from the KKT system.
fn oracle_projection(theta_hat: &DVector<f64>, v: &DMatrix<f64>, a: &DVector<f64>, b: f64) -> DVector<f64> {
    let k = theta_hat.len();
    let vinv = v.clone().try_inverse().unwrap();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    m.view_mut((0, 0), (k, k)).copy_from(&vinv);
    for i in 0..k {
        m[(i, k)] = a[i];
        m[(k, i)] = a[i];
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs.rows_mut(0, k).copy_from(&(&vinv * theta_hat));
    rhs[k] = -b;
    m.lu().solve(&rhs).unwrap().rows(0, k).into_owned()
}

/// Endpoints assembled from explicit scalar moments.
fn oracle_iici(p: &Problem, lvl: Level) -> (f64, f64) {
    let est = p.estimate();
    let (t, n, z) = (est.target(), est.n() as f64, lvl.z());
    let v = est.v_hat();
    let a = p.constraint().a();
    let va = v * a;
    let (vtt, ta, aa) = (v[(t, t)], va[t], a.dot(&va));
    let g = p.constraint().value(est.theta_hat());
    let th = est.theta_hat()[t];
    let s = (vtt / n).sqrt();
    let sd = ((vtt - ta * ta / aa) / n).sqrt();
    let eie = th - ta / aa * g;
    let c = if ta == 0.0 { 0.0 } else { (s - sd) * aa * z / ta };
    let lower = if g <= c { th - s * z } else { eie - sd * z };
    let upper = if g <= -c { th + s * z } else { eie + sd * z };
    (lower, upper)
}

#[test]
fn quantiles_match_bisection_oracle() {
    assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
    for (p, expected) in [(0.975, 1.959964), (0.95, 1.644854)] {
        let q = normal_quantile(p).unwrap();
        assert!(close(q, oracle_quantile(p), 1e-9), "{p}");
        assert!(close(q, expected, 5e-7));
    }
    for p in [1e-6, 0.01, 0.3, 0.77, 0.999999] {
        assert!(close(normal_quantile(p).unwrap(), oracle_quantile(p), 1e-8), "{p}");
    }
    assert!(matches!(normal_quantile(1.0), Err(Error::Domain(_))));
}

#[test]
fn validation_examples() {
    let id = EstimateSummary::from_slices(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], 1, 0).unwrap();
    assert!(validate(&id, &LinearConstraint::from_slice(&[0.0, 1.0], 0.0).unwrap()).is_ok());
    let id1 = id.clone().with_target(1).unwrap();
    let err = validate(&id1, &LinearConstraint::from_slice(&[0.0, 1.0], 0.0).unwrap()).unwrap_err();
    assert!(err.to_string().contains("constraint-on-target-only"));
    let p = fig1([0.0, 0.0], 0.7);
    let again = validate(p.estimate(), p.constraint()).unwrap();
    assert_eq!(again.estimate(), p.estimate());
}

#[test]
fn uci_examples() {
    let lvl = level();
    for (n, half) in [(1, 1.959964), (4, 0.979982)] {
        let est = EstimateSummary::from_slices(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], n, 0).unwrap();
        let u = ci::uci(&est, lvl);
        assert!(close(u.lower, -half, 1e-6) && close(u.upper, half, 1e-6));
    }
    assert!(close(ci::uci(fig1([0.0, 0.0], 0.7).estimate(), lvl).length(), 3.919928, 1e-6));
}

#[test]
fn eie_matches_kkt_oracle() {
    let lvl = level();
    let p = fig1([0.0, 2.0], 0.7);
    let (theta, comp) = ci::eie(&p, lvl);
    let oracle = oracle_projection(p.estimate().theta_hat(), p.estimate().v_hat(), p.constraint().a(), 0.0);
    assert!((&theta - &oracle).amax() < 1e-12);
    assert!(close(theta[0], -1.4, 1e-12) && close(theta[1], 0.0, 1e-12));
    assert!(close(comp.s_ddot, 0.51_f64.sqrt(), 1e-12));

    let p = fig1([0.3, 5.0], 0.0);
    let (theta, comp) = ci::eie(&p, lvl);
    assert!(close(theta[0], 0.3, 1e-15) && close(theta[1], 0.0, 1e-15));
    assert_eq!(comp.s_ddot, comp.s_hat);
}

#[test]
fn eici_examples() {
    let lvl = level();
    let e = ci::eici(&fig1([0.0, 2.0], 0.7), lvl);
    assert!(close(e.lower, -2.799694, 1e-6) && close(e.upper, -0.000306, 1e-6));
    for th2 in [-3.0, 0.0, 4.0] {
        assert!(close(ci::eici(&fig1([0.5, th2], 0.7), lvl).length(), 2.799389, 1e-6));
    }
    let p = fig1([0.0, 1.0], 0.0);
    assert!(close(ci::eici(&p, lvl).length(), ci::uci(p.estimate(), lvl).length(), 1e-14));
}

#[test]
fn threshold_examples() {
    let lvl = level();
    assert!(close(ci::threshold_c(&fig1([0.0, 0.0], 0.7), lvl), 0.800385, 1e-6));
    assert!(close(ci::threshold_c(&fig1([0.0, 0.0], -0.7), lvl), -0.800385, 1e-6));
    assert_eq!(ci::threshold_c(&fig1([0.0, 0.0], 0.0), lvl), 0.0);
    let small: Vec<f64> = [1e-3, 1e-6, 1e-9].iter().map(|&r| ci::threshold_c(&fig1([0.0, 0.0], r), lvl) / r).collect();
    assert!(small.iter().all(|q| close(*q, small[0], 1e-3 * small[0].abs())));
}

#[test]
fn iici_examples() {
    let lvl = level();
    let cases = [
        ([0.0, -2.0], (-1.959964, 1.959964), Branch::Slack),
        ([0.0, 0.0], (-1.959964, 1.399695), Branch::MixedLower),
        ([0.0, 2.0], (-2.799694, -0.000306), Branch::Violated),
    ];
    for (theta, (lo, hi), branch) in cases {
        let p = fig1(theta, 0.7);
        let r = ci::iici(&p, lvl);
        assert!(close(r.lower, lo, 1e-6) && close(r.upper, hi, 1e-6), "{theta:?}: {r:?}");
        assert_eq!(r.branch, Some(branch));
        let (ol, ou) = oracle_iici(&p, lvl);
        assert!(close(r.lower, ol, 1e-12) && close(r.upper, ou, 1e-12));
    }
    let r = ci::iici(&fig1([0.0, 6.0], 0.7), lvl);
    assert!(close(r.upper, -4.2 + 1.399695, 1e-6));
}

#[test]
fn iie_and_iitci_examples() {
    let lvl = level();
    assert_eq!(ci::iie(&fig1([0.0, -2.0], 0.7)).as_slice(), &[0.0, -2.0]);
    let v = ci::iie(&fig1([0.0, 2.0], 0.7));
    assert!(close(v[0], -1.4, 1e-12) && close(v[1], 0.0, 1e-12));
    assert_eq!(ci::iie(&fig1([0.2, 0.0], 0.7)).as_slice(), &[0.2, 0.0]);
    let t = ci::iitci(&fig1([0.0, 2.0], 0.7), lvl);
    assert!(close(t.lower, -3.359964, 1e-6) && close(t.upper, 0.559964, 1e-6));
    let t = ci::iitci(&fig1([0.0, -2.0], 0.7), lvl);
    assert!(close(t.lower, -1.959964, 1e-6) && close(t.upper, 1.959964, 1e-6));
}

#[test]
fn linearization_examples() {
    let est = EstimateSummary::from_slices(&[0.0, 2.0], &[&[1.0, 0.7], &[0.7, 1.0]], 1, 0).unwrap();
    let g = SmoothConstraint::new(|t| t[1] * t[1] - 1.0).with_gradient(|t| DVector::from_vec(vec![0.0, 2.0 * t[1]]));
    let lin = ci::linearize(&est, &g).unwrap();
    assert_eq!(lin.a().as_slice(), &[0.0, 4.0]);
    assert_eq!(lin.b(), -5.0);
    assert_eq!(lin.value(est.theta_hat()), 3.0);
    let fd = ci::linearize(&est, &SmoothConstraint::new(|t| t[1])).unwrap();
    assert!(close(fd.a()[0], 0.0, 1e-7) && close(fd.a()[1], 1.0, 1e-7) && close(fd.b(), 0.0, 1e-7));
    let parallel = ci::linearize(&est, &SmoothConstraint::new(|t| t[0]));
    assert!(matches!(parallel, Err(Error::ConstraintOnTargetOnly)));
}

#[test]
fn uncorrelated_constraint_gives_uci() {
    let lvl = level();
    let p = fig1([0.4, 3.0], 0.0);
    let u = ci::uci(p.estimate(), lvl);
    for kind in [CiKind::Iici, CiKind::Eici, CiKind::Iitci] {
        let r = ci::compute(p.estimate(), p.constraint(), kind, lvl).unwrap();
        assert!(close(r.lower, u.lower, 1e-14) && close(r.upper, u.upper, 1e-14), "{kind}");
    }
}

fn flipped_lower(p: &Problem, lvl: Level) -> CiResult {
    let mut r = ci::iici(p, lvl);
    let geo = Geometry::new(p, lvl);
    let g = p.constraint().value(p.estimate().theta_hat());
    let th = p.estimate().target_hat();
    let c = geo.c_ddot();
    let (ul, _) = geo.uci_bounds(th);
    let (el, _) = geo.eici_bounds(th, g);
    r.lower = if g >= c { ul } else { el };
    r
}

#[test]
fn acceptance_check_detects_flipped_branch() {
    let cfg = VerifyConfig { canonical_instances: 4, grid_points: 61, ..VerifyConfig::default() };
    let honest = check_acceptance(&cfg, &|p, l| ci::iici(p, l)).unwrap();
    assert!(honest.passed, "{}", honest.detail);
    let broken = check_acceptance(&cfg, &flipped_lower).unwrap();
    assert!(!broken.passed);
    assert!(broken.worst > 0.0);

    let cfg = VerifyConfig { reduction_instances: 10, reduction_draws: 2000, ..VerifyConfig::default() };
    assert!(check_reduction(&cfg, &|p, l| ci::iici(p, l)).unwrap().passed);
    assert!(!check_reduction(&cfg, &flipped_lower).unwrap().passed);
}

fn spd(k: usize, entries: &[f64]) -> DMatrix<f64> {
    let l = DMatrix::from_fn(k, k, |i, j| if j > i { 0.0 } else { entries[i * k + j] });
    &l * l.transpose() + DMatrix::identity(k, k) * 0.2
}

prop_compose! {
    fn problems()(k in 2usize..5)(
        k in Just(k),
        theta in prop::collection::vec(-4.0..4.0f64, k),
        l in prop::collection::vec(-1.5..1.5f64, k * k),
        a in prop::collection::vec(-2.0..2.0f64, k),
        b in -3.0..3.0f64,
        n in 1usize..50,
        target in 0..k,
    ) -> Option<Problem> {
        let est = EstimateSummary::new(DVector::from_vec(theta), spd(k, &l), n, target).ok()?;
        let con = LinearConstraint::new(DVector::from_vec(a), b).ok()?;
        validate(&est, &con).ok()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn endpoints_match_oracle(p in problems()) {
        let Some(p) = p else { return Ok(()) };
        let lvl = level();
        let r = ci::iici(&p, lvl);
        let (ol, ou) = oracle_iici(&p, lvl);
        let scale = 1.0 + p.estimate().target_hat().abs() + p.estimate().s_hat();
        prop_assert!(close(r.lower, ol, 1e-9 * scale) && close(r.upper, ou, 1e-9 * scale));
    }

    #[test]
    fn adaptivity_subset_and_length(p in problems()) {
        let Some(p) = p else { return Ok(()) };
        let lvl = level();
        let geo = Geometry::new(&p, lvl);
        let g = p.constraint().value(p.estimate().theta_hat());
        let c = geo.c_ddot().abs();
        let r = ci::iici(&p, lvl);
        let u = ci::uci(p.estimate(), lvl);
        let e = ci::eici(&p, lvl);
        let tol = 1e-12 * (1.0 + p.estimate().target_hat().abs() + geo.s_hat() * lvl.z() + g.abs());
        let same = |x: &CiResult, y: &CiResult| close(x.lower, y.lower, tol) && close(x.upper, y.upper, tol);
        if g <= -c {
            prop_assert!(same(&r, &u));
        } else if g > c {
            prop_assert!(same(&r, &e));
        } else {
            prop_assert!(r.lower >= u.lower - tol && r.upper <= u.upper + tol);
            let shares_u = close(r.lower, u.lower, tol) || close(r.upper, u.upper, tol);
            let shares_e = close(r.lower, e.lower, tol) || close(r.upper, e.upper, tol);
            prop_assert!(shares_u && shares_e);
        }
        prop_assert!(r.length() >= 2.0 * geo.s_ddot() * lvl.z() - tol);
        prop_assert!(r.length() <= 2.0 * geo.s_hat() * lvl.z() + tol);
        prop_assert!(geo.s_hat() >= geo.s_ddot());
        let t = ci::iitci(&p, lvl);
        prop_assert!(t.lower <= r.lower + tol && t.upper >= r.upper - tol);
    }

    #[test]
    fn translation_equivariance(p in problems(), delta in prop::collection::vec(-3.0..3.0f64, 4)) {
        let Some(p) = p else { return Ok(()) };
        let lvl = level();
        let k = p.estimate().k();
        let d = DVector::from_fn(k, |i, _| delta[i]);
        let est = p.estimate().with_theta_hat(p.estimate().theta_hat() + &d).unwrap();
        let con = LinearConstraint::new(p.constraint().a().clone(), p.constraint().b() - p.constraint().a().dot(&d)).unwrap();
        let moved = ci::iici(&validate(&est, &con).unwrap(), lvl);
        let base = ci::iici(&p, lvl);
        let shift = d[p.estimate().target()];
        let tol = 1e-9 * (1.0 + base.lower.abs() + base.upper.abs() + shift.abs());
        prop_assert!(close(moved.lower, base.lower + shift, tol) && close(moved.upper, base.upper + shift, tol));
    }

    #[test]
    fn scale_equivariance(p in problems(), c in prop::collection::vec(0.1..10.0f64, 4)) {
        let Some(p) = p else { return Ok(()) };
        let lvl = level();
        let k = p.estimate().k();
        let cd = DMatrix::from_diagonal(&DVector::from_fn(k, |i, _| c[i]));
        let inv = cd.clone().try_inverse().unwrap();
        let est = EstimateSummary::new(&cd * p.estimate().theta_hat(), &cd * p.estimate().v_hat() * &cd, p.estimate().n(), p.estimate().target()).unwrap();
        let con = LinearConstraint::new(&inv * p.constraint().a(), p.constraint().b()).unwrap();
        let scaled = ci::iici(&validate(&est, &con).unwrap(), lvl);
        let base = ci::iici(&p, lvl);
        let ct = c[p.estimate().target()];
        let tol = 1e-9 * ct * (1.0 + base.lower.abs() + base.upper.abs());
        prop_assert!(close(scaled.lower, ct * base.lower, tol) && close(scaled.upper, ct * base.upper, tol));
    }

    #[test]
    fn sign_equivariance(p in problems()) {
        let Some(p) = p else { return Ok(()) };
        let lvl = level();
        let t = p.estimate().target();
        let k = p.estimate().k();
        let flip = DMatrix::from_diagonal(&DVector::from_fn(k, |i, _| if i == t { -1.0 } else { 1.0 }));
        let est = EstimateSummary::new(&flip * p.estimate().theta_hat(), &flip * p.estimate().v_hat() * &flip, p.estimate().n(), t).unwrap();
        let con = LinearConstraint::new(&flip * p.constraint().a(), p.constraint().b()).unwrap();
        let mirrored = ci::iici(&validate(&est, &con).unwrap(), lvl);
        let base = ci::iici(&p, lvl);
        let tol = 1e-12 * (1.0 + base.lower.abs() + base.upper.abs());
        prop_assert!(close(mirrored.lower, -base.upper, tol) && close(mirrored.upper, -base.lower, tol));
    }

    #[test]
    fn quantile_round_trip(x in -6.0..6.0f64) {
        let p = iici_core::norm_cdf(x);
        prop_assert!(close(normal_quantile(p).unwrap(), x, 1e-8));
    }

    #[test]
    fn validate_is_idempotent(p in problems()) {
        let Some(p) = p else { return Ok(()) };
        let again = validate(p.estimate(), p.constraint()).unwrap();
        prop_assert_eq!(again.estimate(), p.estimate());
        prop_assert_eq!(again.constraint(), p.constraint());
    }
}

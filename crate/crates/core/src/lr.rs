//! Likelihood-ratio interval for the target under the maintained inequality,
//! with either the χ²₁ critical value or one simulated at the boundary.
//!
//! With `Σ = V̂/n`, the statistic for `H₀: θₜ = r` is
//! `min{q(θ) : θₜ = r, g(θ) ≤ 0} − min{q(θ) : g(θ) ≤ 0}` where
//! `q(θ) = (θ̂ − θ)'Σ⁻¹(θ̂ − θ)`. Both minima have closed forms that involve
//! only `θ̂ₜ`, `g(θ̂)` and the 2×2 block of `Σ` on the target and constraint
//! directions.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci::{CiKind, CiResult, Geometry};
use crate::error::{Error, Result};
use crate::mc::substream;
use crate::model::Problem;
use crate::normal::Level;

pub const SCAN_POINTS: usize = 2001;
pub const SCAN_HALF_WIDTH: f64 = 10.0;
pub const MIN_REPS: usize = 10_000;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStat {
    pub value: f64,
    pub r: f64,
}

/// Second moments of `(θ̂ₜ, g(θ̂))` under `Σ = V̂/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrGeometry {
    tt: f64,
    ta: f64,
    aa: f64,
    det: f64,
}

impl LrGeometry {
    pub fn new(problem: &Problem) -> Self {
        let est = problem.estimate();
        let n = est.n() as f64;
        let t = est.target();
        let a = problem.constraint().a();
        let va = est.v_hat() * a;
        let tt = est.v_hat()[(t, t)] / n;
        let ta = va[t] / n;
        let aa = a.dot(&va) / n;
        Self { tt, ta, aa, det: tt * aa - ta * ta }
    }

    pub fn correlation(&self) -> f64 {
        self.ta / (self.tt * self.aa).sqrt()
    }

    /// Minimum of `q` over `{g ≤ 0}`.
    fn unrestricted(&self, g: f64) -> f64 {
        if g <= 0.0 {
            0.0
        } else {
            g * g / self.aa
        }
    }

    /// Minimum of `q` over `{θₜ = r, g ≤ 0}` with `u = θ̂ₜ − r`.
    fn restricted(&self, u: f64, g: f64) -> f64 {
        let g_at_projection = g - self.ta / self.tt * u;
        if g_at_projection <= 0.0 {
            u * u / self.tt
        } else {
            (self.aa * u * u - 2.0 * self.ta * u * g + self.tt * g * g) / self.det
        }
    }

    pub fn stat(&self, target_hat: f64, g: f64, r: f64) -> f64 {
        (self.restricted(target_hat - r, g) - self.unrestricted(g)).max(0.0)
    }

    /// Target value where the statistic vanishes: `θ̂ₜ` if the estimate is
    /// feasible, otherwise the target coordinate of the equality-imposed estimate.
    pub fn centre(&self, target_hat: f64, g: f64) -> f64 {
        if g <= 0.0 {
            target_hat
        } else {
            target_hat - self.ta / self.aa * g
        }
    }

    fn step(&self) -> f64 {
        self.tt.sqrt()
    }

    /// Acceptance interval by bracketing from the centre and bisecting each
    /// side. Relies on convexity of the statistic in `r`.
    pub fn interval(&self, target_hat: f64, g: f64, crit: f64) -> (f64, f64) {
        let c = self.centre(target_hat, g);
        let f = |r: f64| self.stat(target_hat, g, r) - crit;
        let side = |dir: f64| {
            let mut inner = c;
            let mut width = self.step() * (crit.sqrt() + 1.0);
            let mut outer = c + dir * width;
            while f(outer) <= 0.0 {
                inner = outer;
                width *= 2.0;
                outer = c + dir * width;
            }
            bisect(&f, inner, outer)
        };
        (side(-1.0), side(1.0))
    }

    /// Acceptance interval by a fixed scan of ±10 standard errors around the
    /// centre (widened if needed) followed by bisection of each crossing.
    /// Errors if the accepted set is not a single interval.
    pub fn interval_scan(&self, target_hat: f64, g: f64, crit: f64) -> Result<(f64, f64)> {
        let c = self.centre(target_hat, g);
        let f = |r: f64| self.stat(target_hat, g, r) - crit;
        let mut half = SCAN_HALF_WIDTH * self.step();
        while f(c - half) <= 0.0 || f(c + half) <= 0.0 {
            half *= 2.0;
        }
        let grid: Vec<f64> =
            (0..SCAN_POINTS).map(|i| c - half + 2.0 * half * i as f64 / (SCAN_POINTS - 1) as f64).collect();
        let accepted: Vec<bool> = grid.iter().map(|&r| f(r) <= 0.0).collect();
        let changes: Vec<usize> = (1..SCAN_POINTS).filter(|&i| accepted[i] != accepted[i - 1]).collect();
        match changes.as_slice() {
            [enter, leave] => Ok((bisect(&f, grid[*enter], grid[*enter - 1]), bisect(&f, grid[*leave - 1], grid[*leave]))),
            // acceptance region narrower than one grid step
            [] => Ok(self.interval(target_hat, g, crit)),
            other => Err(Error::DisconnectedAcceptance(other.len())),
        }
    }
}

/// Boundary between `inside` (f ≤ 0) and `outside` (f > 0).
fn bisect(f: &impl Fn(f64) -> f64, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if f(mid) <= 0.0 {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (inside + outside)
}

pub fn lr_stat(problem: &Problem, r: f64) -> LrStat {
    let geo = LrGeometry::new(problem);
    let est = problem.estimate();
    let g = problem.constraint().value(est.theta_hat());
    LrStat { value: geo.stat(est.target_hat(), g, r), r }
}

fn result(problem: &Problem, level: Level, kind: CiKind, lower: f64, upper: f64) -> CiResult {
    let geo = Geometry::new(problem, level);
    let est = problem.estimate();
    let g = geo.g(est.theta_hat());
    let (ul, uu) = geo.uci_bounds(est.target_hat());
    CiResult {
        kind,
        lower,
        upper,
        components: Some(geo.components(est.target_hat(), g)),
        branch: None,
        disjoint_from_uci: upper < ul || lower > uu,
    }
}

/// Inverts the statistic at an arbitrary critical value.
pub fn lr_interval(problem: &Problem, level: Level, kind: CiKind, crit: f64) -> Result<CiResult> {
    let geo = LrGeometry::new(problem);
    let est = problem.estimate();
    let g = problem.constraint().value(est.theta_hat());
    let (lower, upper) = geo.interval_scan(est.target_hat(), g, crit)?;
    Ok(result(problem, level, kind, lower, upper))
}

pub fn lrci(problem: &Problem, level: Level) -> Result<CiResult> {
    lr_interval(problem, level, CiKind::Lrci, level.chi2_1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SclrCritical {
    /// Empirical `1 − α` quantile of the boundary statistic.
    pub simulated: f64,
    /// χ²₁ quantile used as a floor.
    pub chi2: f64,
    /// `max(simulated, chi2)`.
    pub value: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Draws of the statistic at the true target when the inequality binds.
/// Depends on the problem only through the correlation of `θ̂ₜ` and `g(θ̂)`.
pub fn boundary_draws(geo: &LrGeometry, reps: usize, seed: u64) -> Vec<f64> {
    let sd_t = geo.tt.sqrt();
    let slope = geo.ta / sd_t;
    let sd_rest = (geo.aa - slope * slope).max(0.0).sqrt();
    let chunks = reps.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, 0, c as u64);
            let len = CHUNK.min(reps - c * CHUNK);
            (0..len)
                .map(|_| {
                    let e1: f64 = StandardNormal.sample(&mut rng);
                    let e2: f64 = StandardNormal.sample(&mut rng);
                    let u = sd_t * e1;
                    let g = slope * e1 + sd_rest * e2;
                    geo.stat(u, g, 0.0)
                })
                .collect()
        })
        .collect();
    parts.concat()
}

/// Order statistic `⌈(1 − α)·m⌉` of the sample.
pub fn empirical_quantile(mut sample: Vec<f64>, p: f64) -> f64 {
    sample.sort_by(|a, b| a.total_cmp(b));
    let m = sample.len();
    let idx = ((p * m as f64).ceil() as usize).clamp(1, m) - 1;
    sample[idx]
}

pub fn sclr_critical_value(problem: &Problem, level: Level, reps: usize, seed: u64) -> Result<SclrCritical> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!("size correction needs at least {MIN_REPS} draws, got {reps}")));
    }
    let geo = LrGeometry::new(problem);
    let simulated = empirical_quantile(boundary_draws(&geo, reps, seed), level.coverage());
    let chi2 = level.chi2_1();
    Ok(SclrCritical { simulated, chi2, value: simulated.max(chi2), reps, seed })
}

pub fn sclrci(problem: &Problem, level: Level, reps: usize, seed: u64) -> Result<CiResult> {
    let crit = sclr_critical_value(problem, level, reps, seed)?;
    lr_interval(problem, level, CiKind::Sclrci, crit.value)
}

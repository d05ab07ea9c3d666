//! Monte Carlo certificates for the finite-sample bounds.
//!
//! A [`BoundCertificate`] records `lhs <= rhs` up to a slack of three Monte
//! Carlo standard errors. Trials draw from per-trial substreams and are
//! reduced in trial order, so results are reproducible to the last bit
//! whatever the thread count.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingTable;
use crate::losses::{
    asymptotic_debiased_exact, asymptotic_unbiased_exact, binomial_oracle, class_contrast_gap,
    unbiased_loss_exact,
};
use crate::rng::substream;
use crate::summation::mean_and_stderr;
use crate::worldmodel::{marginal, positive_dist, DiscreteClassMixture, DiscreteSampler};

/// Standard errors of slack granted to Monte Carlo comparisons.
pub const SIGMA_SLACK: f64 = 3.0;
/// Fewest trials accepted by the Monte Carlo certificates.
pub const MIN_TRIALS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    #[serde(rename = "stderr")]
    pub mc_stderr: f64,
    pub trials: u64,
    pub passed: bool,
    pub meta: BTreeMap<String, Value>,
}

impl BoundCertificate {
    /// `passed` is `lhs <= rhs + 3 stderr + abs_slack`, where `abs_slack` is
    /// read from the metadata (absent means zero).
    pub fn new(
        check: impl Into<String>,
        lhs: f64,
        rhs: f64,
        mc_stderr: f64,
        trials: u64,
        meta: BTreeMap<String, Value>,
    ) -> Self {
        let mut c = Self {
            check: check.into(),
            lhs,
            rhs,
            mc_stderr,
            trials,
            passed: false,
            meta,
        };
        c.passed = c.evaluate();
        c
    }

    pub fn slack(&self) -> f64 {
        let abs = self.meta.get("abs_slack").and_then(Value::as_f64).unwrap_or(0.0);
        SIGMA_SLACK * self.mc_stderr + abs
    }

    fn evaluate(&self) -> bool {
        self.lhs <= self.rhs + self.slack()
    }

    /// Copy with `rhs` multiplied by `factor`, for exercising failure paths.
    pub fn with_rhs_scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.rhs *= factor;
        c.passed = c.evaluate();
        c
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("certificate serialises")
    }
}

/// `e^{3/2} sqrt(pi / 2N)`.
pub fn lemma1_margin(n: usize) -> f64 {
    1.5f64.exp() * (PI / (2.0 * n as f64)).sqrt()
}

/// The two terms `(e^{3/2}/tau-) sqrt(pi/2N)` and
/// `(e^{3/2} tau+/tau-) sqrt(pi/2M)`.
pub fn theorem3_rhs(n: usize, m: usize, tau_plus: f64) -> (f64, f64) {
    let tau_minus = 1.0 - tau_plus;
    let c = 1.5f64.exp() / tau_minus;
    (
        c * (PI / (2.0 * n as f64)).sqrt(),
        c * tau_plus * (PI / (2.0 * m as f64)).sqrt(),
    )
}

/// `lambda = sqrt((1/tau-^2)(M/N + 1) + tau+^2 (N/M + 1))` and
/// `B = ln N (1/tau- + tau+)`.
pub fn theorem5_constants(n: usize, m: usize, tau_plus: f64) -> Result<(f64, f64)> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("N and M must be at least 1".into()));
    }
    check_tau(tau_plus)?;
    let (n, m) = (n as f64, m as f64);
    let tau_minus = 1.0 - tau_plus;
    let lambda = ((m / n + 1.0) / (tau_minus * tau_minus) + tau_plus * tau_plus * (n / m + 1.0)).sqrt();
    let b = n.ln() * (1.0 / tau_minus + tau_plus);
    Ok((lambda, b))
}

fn check_tau(tau_plus: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau_plus) {
        return Err(Error::InvalidArgument(format!(
            "tau_plus must lie in [0, 1), got {tau_plus}"
        )));
    }
    Ok(())
}

fn check_mc(table: &EmbeddingTable, mix: &DiscreteClassMixture, trials: u64) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::BoundPreconditionViolated(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    if table.temperature() != 1.0 {
        return Err(Error::BoundPreconditionViolated(format!(
            "the bound constants assume t = 1, got t = {}",
            table.temperature()
        )));
    }
    if table.len() != mix.num_points() {
        return Err(Error::DimensionMismatch {
            expected: mix.num_points(),
            got: table.len(),
        });
    }
    if mix.num_classes() < 2 {
        return Err(Error::DegenerateClass(0));
    }
    Ok(())
}

fn exp_table(table: &EmbeddingTable) -> Vec<Vec<f64>> {
    (0..table.len())
        .map(|x| (0..table.len()).map(|y| table.similarity(x, y).value().exp()).collect())
        .collect()
}

fn base_meta(check: &str, mix: &DiscreteClassMixture, table: &EmbeddingTable, seed: u64) -> BTreeMap<String, Value> {
    let mut meta = BTreeMap::new();
    meta.insert("mixture".into(), json!(mix.name()));
    meta.insert("t".into(), json!(table.temperature()));
    meta.insert("seed".into(), json!(seed));
    meta.insert("check".into(), json!(check));
    meta
}

/// Runs `trial(i, rng)` on substream `i` of `seed` and returns the values in
/// trial order.
fn run_trials<F>(seed: u64, trials: u64, trial: F) -> Result<Vec<f64>>
where
    F: Fn(&mut crate::rng::StreamRng) -> Result<f64> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| trial(&mut substream(seed, i)))
        .collect()
}

/// Biased against true-negative losses with `Q = N`.
///
/// Each trial shares `x`, `x+` and one uniform per negative between the two
/// estimators (inverse-CDF coupling), and the certificate compares
///
/// `unbiased + E_x[0 ^ ln(E_{p+} e^s / E_{p-} e^s)] - e^{3/2} sqrt(pi/2N)`
///
/// (as `lhs`) against the biased loss (as `rhs`), using the standard error of
/// the paired difference.
pub fn lemma1_certificate(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    trials: u64,
    seed: u64,
) -> Result<BoundCertificate> {
    check_mc(table, mix, trials)?;
    if n == 0 {
        return Err(Error::EmptyNegatives);
    }
    let sampler = DiscreteSampler::new(mix);
    // reject anchors of a class without negatives up front
    let p = marginal(mix);
    for x in 0..mix.num_points() {
        if p[x] > 0.0 {
            sampler.negative_cdf(x)?;
        }
    }
    let exp = exp_table(table);
    let pairs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let x = sampler.draw_marginal(&mut rng);
            let xp = sampler.draw_positive(x, &mut rng);
            let neg = sampler.negative_cdf(x)?;
            let row = &exp[x];
            let (mut biased, mut unbiased) = (0.0, 0.0);
            for _ in 0..n {
                let u: f64 = rng.random();
                biased += row[sampler.marginal_cdf().pick(u)];
                unbiased += row[neg.pick(u)];
            }
            let ep = row[xp];
            Ok(((biased / ep).ln_1p(), (unbiased / ep).ln_1p()))
        })
        .collect::<Result<_>>()?;
    let biased: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let unbiased: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
    let (mean_b, se_b) = mean_and_stderr(&biased);
    let (mean_u, se_u) = mean_and_stderr(&unbiased);
    let (_, se_diff) = mean_and_stderr(&diff);
    let gap = class_contrast_gap(table, mix)?;
    let margin = lemma1_margin(n);

    let mut meta = base_meta("lemma1", mix, table, seed);
    meta.insert("N".into(), json!(n));
    meta.insert("biased_mc".into(), json!(mean_b));
    meta.insert("biased_stderr".into(), json!(se_b));
    meta.insert("unbiased_mc".into(), json!(mean_u));
    meta.insert("unbiased_stderr".into(), json!(se_u));
    meta.insert("contrast_gap".into(), json!(gap));
    meta.insert("margin".into(), json!(margin));
    meta.insert(
        "unbiased_asymptotic".into(),
        json!(asymptotic_unbiased_exact(table, mix, n as f64)?.value),
    );
    Ok(BoundCertificate::new("lemma1", mean_u + gap - margin, mean_b, se_diff, trials, meta))
}

/// Per-pair exact large-`N` debiased loss and sampling tables.
struct Theorem3Setup {
    sampler: DiscreteSampler,
    exp: Vec<Vec<f64>>,
    /// `limit[x][x+] = ln(1 + (N/tau-)(E_p e^s - tau+ E_{p+} e^s) / e^{s+})`
    limit: Vec<Vec<f64>>,
}

fn theorem3_setup(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    tau_plus: f64,
) -> Result<Theorem3Setup> {
    check_tau(tau_plus)?;
    let exp = exp_table(table);
    let p = marginal(mix);
    let tau_minus = 1.0 - tau_plus;
    let s = mix.num_points();
    let mut limit = vec![vec![0.0; s]; s];
    for x in 0..s {
        if p[x] == 0.0 {
            continue;
        }
        let pos = positive_dist(mix, x)?;
        let e_p: f64 = (0..s).map(|y| p[y] * exp[x][y]).sum();
        let e_pos: f64 = (0..s).map(|y| pos[y] * exp[x][y]).sum();
        let inner = e_p - tau_plus * e_pos;
        if !(inner > 0.0) {
            return Err(Error::NegativeDenominator { anchor: x, value: inner });
        }
        for y in 0..s {
            limit[x][y] = (n as f64 * inner / tau_minus / exp[x][y]).ln_1p();
        }
    }
    Ok(Theorem3Setup {
        sampler: DiscreteSampler::new(mix),
        exp,
        limit,
    })
}

/// `l(N, M sample) - l(limit)` for one trial. `u` are drawn before `v`, so at
/// `tau+ = 0` the trial value does not depend on `M`.
fn theorem3_trial(setup: &Theorem3Setup, n: usize, m: usize, tau_plus: f64, rng: &mut crate::rng::StreamRng) -> f64 {
    let s = &setup.sampler;
    let x = s.draw_marginal(rng);
    let xp = s.draw_positive(x, rng);
    let row = &setup.exp[x];
    let mut sum_u = 0.0;
    for _ in 0..n {
        sum_u += row[s.draw_marginal(rng)];
    }
    let mut sum_v = 0.0;
    if tau_plus > 0.0 {
        for _ in 0..m {
            sum_v += row[s.draw_positive(x, rng)];
        }
    }
    let floor = (-1.0f64).exp();
    let raw = (sum_u / n as f64 - tau_plus * sum_v / m as f64) / (1.0 - tau_plus);
    let g = if raw <= floor { floor } else { raw };
    (n as f64 * g / row[xp]).ln_1p() - setup.limit[x][xp]
}

/// Finite `N`, `M` debiased loss against its large-`N` limit with `Q = N`.
///
/// `lhs` is `|mean(l_MC - l_limit(x, x+))|`, where the limit term is exact
/// for each sampled pair, and `rhs` the sum of the two bound terms.
pub fn theorem3_certificate(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    m: usize,
    tau_plus: f64,
    trials: u64,
    seed: u64,
) -> Result<BoundCertificate> {
    check_mc(table, mix, trials)?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("N and M must be at least 1".into()));
    }
    let setup = theorem3_setup(table, mix, n, tau_plus)?;
    let diffs = run_trials(seed, trials, |rng| Ok(theorem3_trial(&setup, n, m, tau_plus, rng)))?;
    let (mean, se) = mean_and_stderr(&diffs);
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (mean_abs, se_abs) = mean_and_stderr(&abs);
    let (r_n, r_m) = theorem3_rhs(n, m, tau_plus);

    let mut meta = base_meta("thm3", mix, table, seed);
    meta.insert("N".into(), json!(n));
    meta.insert("M".into(), json!(m));
    meta.insert("tau_plus".into(), json!(tau_plus));
    meta.insert("rhs_n_term".into(), json!(r_n));
    meta.insert("rhs_m_term".into(), json!(r_m));
    meta.insert("mean_abs_gap".into(), json!(mean_abs));
    meta.insert("mean_abs_gap_stderr".into(), json!(se_abs));
    meta.insert(
        "debiased_limit_exact".into(),
        json!(asymptotic_debiased_exact(table, mix, n as f64, Some(tau_plus))?.value),
    );
    Ok(BoundCertificate::new("thm3", mean.abs(), r_n + r_m, se, trials, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    N,
    M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<usize>,
    /// Value of the sample size that is not swept.
    pub fixed: usize,
    pub tau_plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub size: usize,
    pub mean_gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    /// Every gap is numerically zero.
    Degenerate,
    /// Gaps do not vary with the swept size.
    NotIdentifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub variable: SweepVariable,
    pub grid: Vec<GridPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub status: FitStatus,
}

/// `E|l_MC - l_limit(x, x+)|` at one `(N, M)`, the per-sample deviation the
/// bound controls. `size` is reported as `N`.
pub fn theorem3_mean_gap(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    m: usize,
    tau_plus: f64,
    trials: u64,
    seed: u64,
) -> Result<GridPoint> {
    check_mc(table, mix, trials)?;
    let setup = theorem3_setup(table, mix, n, tau_plus)?;
    let gaps = run_trials(seed, trials, |rng| Ok(theorem3_trial(&setup, n, m, tau_plus, rng).abs()))?;
    let (mean_gap, stderr) = mean_and_stderr(&gaps);
    Ok(GridPoint {
        size: n,
        mean_gap,
        stderr,
    })
}

const DEGENERATE_GAP: f64 = 1e-12;
const MIN_R2: f64 = 0.5;

/// Least-squares fit of `ln(mean gap)` against `ln(size)` over a sweep of `N`
/// (or `M`) with the other size held fixed.
pub fn rate_fit(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    sweep: &SweepSpec,
    trials: u64,
    seed: u64,
) -> Result<RateFit> {
    let g = &sweep.grid;
    if g.len() < 4 {
        return Err(Error::InsufficientGrid(format!("need at least 4 points, got {}", g.len())));
    }
    if g[0] == 0 || g.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InsufficientGrid("grid must be positive and strictly increasing".into()));
    }
    let (lo, hi) = (g[0], g[g.len() - 1]);
    if hi < 100 * lo {
        return Err(Error::InsufficientGrid(format!("grid {lo}..{hi} spans less than 2 decades")));
    }
    if sweep.fixed < 10 * hi {
        return Err(Error::InsufficientGrid(format!(
            "fixed size {} is below 10x the largest swept size {hi}",
            sweep.fixed
        )));
    }
    let grid = g
        .iter()
        .map(|&size| {
            let (n, m) = match sweep.variable {
                SweepVariable::N => (size, sweep.fixed),
                SweepVariable::M => (sweep.fixed, size),
            };
            theorem3_mean_gap(table, mix, n, m, sweep.tau_plus, trials, seed)
                .map(|p| GridPoint { size, ..p })
        })
        .collect::<Result<Vec<_>>>()?;

    let base = |status| RateFit {
        variable: sweep.variable,
        grid: grid.clone(),
        slope: 0.0,
        intercept: 0.0,
        r2: 0.0,
        status,
    };
    if grid.iter().any(|p| p.mean_gap <= DEGENERATE_GAP) {
        return Ok(base(FitStatus::Degenerate));
    }
    let xs: Vec<f64> = grid.iter().map(|p| (p.size as f64).ln()).collect();
    let ys: Vec<f64> = grid.iter().map(|p| p.mean_gap.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    let status = if syy <= 1e-24 || r2 < MIN_R2 {
        FitStatus::NotIdentifiable
    } else {
        FitStatus::Fitted
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        status,
        ..base(status)
    })
}

/// Inclusion-exclusion oracle against direct enumeration of the true-negative
/// loss with `Q = N`; `lhs` is the relative error and `rhs` the tolerance.
pub fn oracle_certificate(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    tolerance: f64,
    budget: u128,
) -> Result<BoundCertificate> {
    let oracle = binomial_oracle(table, mix, n, budget)?;
    let direct = unbiased_loss_exact(table, mix, n, n as f64, budget)?.value;
    let rel = (oracle.value.value - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
    let mut meta = BTreeMap::new();
    meta.insert("mixture".into(), json!(mix.name()));
    meta.insert("t".into(), json!(table.temperature()));
    meta.insert("N".into(), json!(n));
    meta.insert("oracle".into(), json!(oracle.value.value));
    meta.insert("direct".into(), json!(direct));
    meta.insert("condition_number".into(), json!(oracle.condition_number));
    Ok(BoundCertificate::new("oracle", rel, tolerance, 0.0, 0, meta))
}

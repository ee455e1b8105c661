//! Extreme-value estimation of Lipschitz constants from sampled slopes.
//!
//! Each batch draws nearby pairs, keeps the largest slope, and the batch
//! maxima are fitted with a Reverse Weibull law whose upper support end
//! (the location parameter) is the estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{SymbolicModel, SINK};
use crate::blackbox::{uniform_in, SubsystemOracle};
use crate::certificate::AsbfSolution;
use crate::error::{Error, Result};
use crate::gridding::AxisBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzConfig {
    /// Largest distance between the two points of a pair.
    pub pair_distance_cap: f64,
    pub pairs_per_batch: usize,
    pub batches: usize,
    /// Abstract tuples examined per input.
    pub abstract_tuple_subsample: usize,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            pair_distance_cap: 1e-3,
            pairs_per_batch: 200,
            batches: 50,
            abstract_tuple_subsample: 16,
            seed: 0,
        }
    }
}

impl LipschitzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_distance_cap > 0.0 && self.pair_distance_cap.is_finite()) {
            return Err(Error::Config("pair_distance_cap must be positive".into()));
        }
        if self.pairs_per_batch == 0 || self.batches == 0 || self.abstract_tuple_subsample == 0 {
            return Err(Error::Config("Lipschitz counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    /// False when the likelihood search hit its upper bracket and the
    /// `1.05 · max` fallback was used.
    pub converged: bool,
    /// All maxima were equal; the common value is returned.
    pub degenerate: bool,
}

const FALLBACK_MARGIN: f64 = 0.05;
const MIN_SHAPE: f64 = 1.0;
const MAX_SHAPE: f64 = 1e3;
/// Largest accepted `location − max`, in units of the sample spread.
const MAX_EXTRAPOLATION: f64 = 1.0;

/// `k ↦ 1/k + mean(ln y) − Σ y^k ln y / Σ y^k`, decreasing in `k`.
fn shape_score(y: &[f64], ln_y: &[f64], mean_ln: f64, k: f64) -> f64 {
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    let (mut s, mut sl) = (0.0, 0.0);
    for (&v, &l) in y.iter().zip(ln_y) {
        let p = (v / ymax).powf(k);
        s += p;
        sl += p * l;
    }
    1.0 / k + mean_ln - sl / s
}

/// Weibull MLE for positive data with the shape clamped to `[1, 1000]`;
/// returns `(shape, scale, log-likelihood)`.
fn weibull_mle(y: &[f64]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mean_ln = ln_y.iter().sum::<f64>() / n;
    let g = |k| shape_score(y, &ln_y, mean_ln, k);
    let k = if g(MIN_SHAPE) <= 0.0 {
        MIN_SHAPE
    } else if g(MAX_SHAPE) >= 0.0 {
        MAX_SHAPE
    } else {
        let (mut lo, mut hi) = (MIN_SHAPE, MAX_SHAPE);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-12 {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    let mean_pow = y.iter().map(|v| (v / ymax).powf(k)).sum::<f64>() / n;
    let scale = ymax * mean_pow.powf(1.0 / k);
    let ll = n * k.ln() - n * k * scale.ln() + (k - 1.0) * ln_y.iter().sum::<f64>() - n;
    (k, scale, ll)
}

/// Maximum-likelihood Reverse Weibull fit, location constrained above the
/// sample maximum. Golden-section search on `ln(location − max)`.
pub fn fit_reverse_weibull(maxima: &[f64]) -> Result<WeibullFit> {
    if maxima.len() < 5 {
        return Err(Error::Config(format!("need at least 5 maxima, got {}", maxima.len())));
    }
    if maxima.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite batch maximum".into()));
    }
    let hi = maxima.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = maxima.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = hi - lo;
    if spread <= 1e-9 * hi.abs().max(1e-300) || spread == 0.0 {
        return Ok(WeibullFit {
            location: hi,
            scale: 0.0,
            shape: f64::INFINITY,
            converged: true,
            degenerate: true,
        });
    }
    let profile = |t: f64| {
        let loc = hi + t.exp();
        let y: Vec<f64> = maxima.iter().map(|m| loc - m).collect();
        let (k, s, ll) = weibull_mle(&y);
        (ll, k, s, loc)
    };
    let (mut a, mut b) = ((spread * 1e-9).ln(), (spread * 1e3).ln());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (profile(c).0, profile(d).0);
    for _ in 0..200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = profile(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = profile(d).0;
        }
        if b - a < 1e-10 {
            break;
        }
    }
    let upper_end = (spread * 1e3).ln();
    let (_, k, s, loc) = profile(0.5 * (a + b));
    // Runaway location or saturated shape: the maxima look Gumbel-like and the
    // endpoint is not identifiable from this sample.
    if upper_end - b < 1e-6 || k >= 0.999 * MAX_SHAPE || loc - hi > MAX_EXTRAPOLATION * spread {
        return Ok(WeibullFit {
            location: hi + FALLBACK_MARGIN * hi.abs(),
            scale: s,
            shape: k,
            converged: false,
            degenerate: false,
        });
    }
    Ok(WeibullFit {
        location: loc,
        scale: s,
        shape: k,
        converged: true,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub estimate: f64,
    pub weibull: WeibullFit,
    pub batch_maxima: Vec<f64>,
    /// Largest slope seen in any batch.
    pub empirical_max: f64,
}

pub(crate) fn mix(seed: u64, a: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn partner<R: Rng>(rng: &mut R, base: &[f64], radius: f64, domain: &AxisBox) -> Vec<f64> {
    let dim = base.len();
    loop {
        // uniform in the ball by rejection from its bounding cube
        let offset: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect();
        let r2: f64 = offset.iter().map(|v| v * v).sum();
        if r2 > radius * radius || r2 == 0.0 {
            continue;
        }
        let p: Vec<f64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
        if domain.contains(&p) && p != base {
            return p;
        }
    }
}

/// Reverse Weibull estimate of the Lipschitz constant of `g` on `domain`.
pub fn estimate_lipschitz<G>(g: G, domain: &AxisBox, cfg: &LipschitzConfig, seed: u64) -> Result<TargetEstimate>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let maxima: Vec<f64> = (0..cfg.batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b as u64));
            let mut best: f64 = 0.0;
            for _ in 0..cfg.pairs_per_batch {
                let a = uniform_in(&mut rng, domain);
                let p = partner(&mut rng, &a, cfg.pair_distance_cap, domain);
                let dist = a.iter().zip(&p).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                let slope = (g(&a) - g(&p)).abs() / dist;
                if slope.is_finite() {
                    best = best.max(slope);
                }
            }
            best
        })
        .collect();
    let weibull = if maxima.len() >= 5 {
        fit_reverse_weibull(&maxima)?
    } else {
        let hi = maxima.iter().cloned().fold(0.0, f64::max);
        WeibullFit {
            location: hi * (1.0 + FALLBACK_MARGIN),
            scale: 0.0,
            shape: f64::NAN,
            converged: false,
            degenerate: false,
        }
    };
    let empirical_max = maxima.iter().cloned().fold(0.0, f64::max);
    Ok(TargetEstimate {
        estimate: weibull.location.max(empirical_max),
        weibull,
        batch_maxima: maxima,
        empirical_max,
    })
}

/// Maximum over examined abstract tuples, with the spread of the per-tuple estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchEstimate {
    pub estimate: f64,
    pub min_over_tuples: f64,
    pub tuples: usize,
    pub fallbacks: usize,
    pub degenerate: usize,
    pub worst: TargetEstimate,
}

fn reduce_branch(per_tuple: Vec<TargetEstimate>) -> Result<BranchEstimate> {
    if per_tuple.is_empty() {
        return Err(Error::Config("no abstract tuple available for Lipschitz estimation".into()));
    }
    let fallbacks = per_tuple.iter().filter(|t| !t.weibull.converged).count();
    let degenerate = per_tuple.iter().filter(|t| t.weibull.degenerate).count();
    let min_over_tuples = per_tuple.iter().map(|t| t.estimate).fold(f64::INFINITY, f64::min);
    let tuples = per_tuple.len();
    let worst = per_tuple
        .into_iter()
        .reduce(|a, b| if b.estimate > a.estimate { b } else { a })
        .unwrap();
    Ok(BranchEstimate {
        estimate: worst.estimate,
        min_over_tuples,
        tuples,
        fallbacks,
        degenerate,
        worst,
    })
}

fn pick(rng: &mut ChaCha8Rng, items: Vec<usize>, k: usize) -> Vec<usize> {
    if items.len() <= k {
        return items;
    }
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, items.len(), k).into_iter().map(|i| items[i]).collect();
    chosen.sort_unstable();
    chosen
}

/// `𝓛²`: slopes of `V(f(x,u,w), f̂(x̂,u,ŵ)) − γ V(x, x̂)` over `X × W`.
pub fn estimate_l2(oracle: &SubsystemOracle, sol: &AsbfSolution, sm: &SymbolicModel, cfg: &LipschitzConfig) -> Result<BranchEstimate> {
    cfg.validate()?;
    let n = oracle.state_dim();
    if sm.state_grid().dim() != n || sm.dist_grid().dim() != oracle.dist_dim() || sol.basis.dim() != n {
        return Err(Error::InputShape("oracle, model and certificate dimensions differ".into()));
    }
    let domain = sm.state_grid().domain().product(sm.dist_grid().domain());
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2));
    let mut tuples = Vec::new();
    for u in 0..sm.n_inputs() {
        let live: Vec<usize> = (0..sm.n_states() * sm.n_dists())
            .filter(|&t| sm.successors(t / sm.n_dists(), u)[t % sm.n_dists()] != SINK)
            .collect();
        for t in pick(&mut rng, live, cfg.abstract_tuple_subsample) {
            tuples.push((u, t / sm.n_dists(), t % sm.n_dists()));
        }
    }
    let per_tuple = tuples
        .par_iter()
        .enumerate()
        .map(|(i, &(u, s, j))| {
            let x_hat = sm.state_grid().representative(s);
            let next_hat = sm.state_grid().representative(sm.successors(s, u)[j] as usize);
            let g = |xw: &[f64]| {
                let mut next = vec![0.0; n];
                oracle.step_into(&xw[..n], u, &xw[n..], &mut next);
                sol.basis.value(&sol.q, &next, &next_hat) - sol.gamma * sol.basis.value(&sol.q, &xw[..n], &x_hat)
            };
            estimate_lipschitz(g, &domain, cfg, mix(cfg.seed, 1000 + i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    reduce_branch(per_tuple)
}

/// `𝓛¹`: slopes of `α‖x − x̂‖² − V(x, x̂)` over `X`; needs no oracle calls.
pub fn estimate_l1(sol: &AsbfSolution, sm: &SymbolicModel, cfg: &LipschitzConfig) -> Result<BranchEstimate> {
    cfg.validate()?;
    if sol.basis.dim() != sm.state_grid().dim() {
        return Err(Error::InputShape("certificate and model dimensions differ".into()));
    }
    let domain = sm.state_grid().domain().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1));
    let states = pick(&mut rng, (0..sm.n_states()).collect(), cfg.abstract_tuple_subsample);
    let per_tuple = states
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let x_hat = sm.state_grid().representative(s);
            let g = |x: &[f64]| {
                let d2: f64 = x.iter().zip(&x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
                sol.alpha * d2 - sol.basis.value(&sol.q, x, &x_hat)
            };
            estimate_lipschitz(g, &domain, cfg, mix(cfg.seed, 500_000 + i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    reduce_branch(per_tuple)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullPair {
    pub l1: WeibullFit,
    pub l2: WeibullFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub weibull: WeibullPair,
    pub config: LipschitzConfig,
    pub batch_maxima: BatchMaxima,
    pub spread: BranchSpread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMaxima {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSpread {
    pub l1_min: f64,
    pub l2_min: f64,
    pub l1_tuples: usize,
    pub l2_tuples: usize,
    pub fallbacks: usize,
    pub degenerate: usize,
}

/// Both branches and `𝓛 = max(𝓛¹, 𝓛²)`.
pub fn estimate(oracle: &SubsystemOracle, sol: &AsbfSolution, sm: &SymbolicModel, cfg: &LipschitzConfig) -> Result<LipschitzEstimate> {
    let b1 = estimate_l1(sol, sm, cfg)?;
    let b2 = estimate_l2(oracle, sol, sm, cfg)?;
    Ok(LipschitzEstimate {
        l1: b1.estimate,
        l2: b2.estimate,
        l: b1.estimate.max(b2.estimate),
        weibull: WeibullPair {
            l1: b1.worst.weibull.clone(),
            l2: b2.worst.weibull.clone(),
        },
        config: cfg.clone(),
        spread: BranchSpread {
            l1_min: b1.min_over_tuples,
            l2_min: b2.min_over_tuples,
            l1_tuples: b1.tuples,
            l2_tuples: b2.tuples,
            fallbacks: b1.fallbacks + b2.fallbacks,
            degenerate: b1.degenerate + b2.degenerate,
        },
        batch_maxima: BatchMaxima {
            l1: b1.worst.batch_maxima,
            l2: b2.worst.batch_maxima,
        },
    })
}

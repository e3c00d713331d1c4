//! Hybrid Jacobi coordinate descent and the full-batch gradient-descent
//! baseline. Both only train the first layer `W`.
//!
//! One hybrid epoch freezes the current state, computes a target value for
//! every coordinate `w[r, j]` independently of all others, and then moves all
//! coordinates at once: `w ← w + α (target − w)`. The target comes from a
//! unit gradient step when `|∂L/∂w[r, j]| ≥ dw`, and from a derivative-free
//! line search in steps of `dw` otherwise.

use ndarray::Array2;
use rayon::prelude::*;

use crate::coord_eval::{CoordinateSlice, PreactivationCache};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, NetworkParams};

/// Default cap on loss evaluations per line search.
pub const DEFAULT_MAX_PROBES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig {
    /// Gradient threshold and line-search step.
    pub dw: f64,
    /// Jacobi blend coefficient.
    pub alpha: f64,
    pub max_probes: usize,
    pub parallel: bool,
}

impl HybridConfig {
    /// Blend `alpha = 1/(m·p)`, one over the number of coordinates updated
    /// together. The blended step is then a convex combination of the
    /// single-coordinate moves.
    pub fn jacobi(m: usize, p: usize, dw: f64) -> Self {
        Self {
            dw,
            alpha: default_alpha(m, p),
            max_probes: DEFAULT_MAX_PROBES,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dw > 0.0 && self.dw.is_finite()) {
            return Err(Error::invalid(format!("dw must be > 0, got {}", self.dw)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.max_probes < 2 {
            return Err(Error::invalid(format!(
                "max_probes must be >= 2, got {}",
                self.max_probes
            )));
        }
        Ok(())
    }
}

/// `1/(m·p)`.
pub fn default_alpha(m: usize, p: usize) -> f64 {
    1.0 / (m as f64 * p as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub lr: f64,
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateRule {
    Gradient,
    LineSearch,
    NoChange,
}

/// Where one coordinate wants to go this epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateTarget {
    pub value: f64,
    /// `value − w[r, j]` as probed (exact for line-search targets).
    pub step: f64,
    pub rule: UpdateRule,
    pub probes_used: usize,
    /// Line search stopped because it ran out of probes.
    pub capped: bool,
}

impl CoordinateTarget {
    fn unchanged(current: f64, probes_used: usize) -> Self {
        Self {
            value: current,
            step: 0.0,
            rule: UpdateRule::NoChange,
            probes_used,
            capped: false,
        }
    }
}

/// Derivative-free search along coordinate `(r, j)` in steps of `dw`.
///
/// Probes `±dw`; if the two losses are equal, or neither beats the current
/// loss, the coordinate stays put. Otherwise it walks outward in the better
/// direction while each probe strictly improves on the previous one, and
/// returns the best point seen. Never evaluates more than `max_probes`
/// losses.
pub fn line_search(
    cache: &PreactivationCache,
    params: &NetworkParams,
    data: &Dataset,
    r: usize,
    j: usize,
    dw: f64,
    max_probes: usize,
) -> Result<CoordinateTarget> {
    if !(dw > 0.0 && dw.is_finite()) {
        return Err(Error::invalid(format!("dw must be > 0, got {dw}")));
    }
    if max_probes < 2 {
        return Err(Error::invalid("max_probes must be >= 2"));
    }
    // validates the indices
    cache.perturbed_loss(params, data, r, j, 0.0)?;
    let slice = cache.slice(params, data, r, j);
    Ok(walk(
        &slice,
        cache.base_loss(),
        params.weights()[[r, j]],
        dw,
        max_probes,
    ))
}

fn walk(
    slice: &CoordinateSlice,
    base_loss: f64,
    current: f64,
    dw: f64,
    max_probes: usize,
) -> CoordinateTarget {
    let plus = slice.loss_at(dw);
    let minus = slice.loss_at(-dw);
    let mut probes = 2;

    if plus == minus || plus.min(minus) >= base_loss {
        return CoordinateTarget::unchanged(current, probes);
    }

    let direction = if plus < minus { dw } else { -dw };
    let mut best_step = direction;
    let mut best_loss = plus.min(minus);
    let mut k = 1.0;
    let mut capped = false;
    loop {
        if probes >= max_probes {
            capped = true;
            break;
        }
        k += 1.0;
        let step = k * direction;
        let l = slice.loss_at(step);
        probes += 1;
        if l < best_loss {
            best_loss = l;
            best_step = step;
        } else {
            break;
        }
    }

    CoordinateTarget {
        value: current + best_step,
        step: best_step,
        rule: UpdateRule::LineSearch,
        probes_used: probes,
        capped,
    }
}

/// Gradient target when `|grad_entry| ≥ dw`, line-search target otherwise.
pub fn coordinate_target(
    cache: &PreactivationCache,
    params: &NetworkParams,
    data: &Dataset,
    grad_entry: f64,
    r: usize,
    j: usize,
    config: &HybridConfig,
) -> Result<CoordinateTarget> {
    if r >= params.m() || j >= params.p() {
        return Err(Error::invalid(format!(
            "coordinate ({r}, {j}) out of range for m={}, p={}",
            params.m(),
            params.p()
        )));
    }
    Ok(target_unchecked(
        cache, params, data, grad_entry, r, j, config,
    ))
}

fn target_unchecked(
    cache: &PreactivationCache,
    params: &NetworkParams,
    data: &Dataset,
    grad_entry: f64,
    r: usize,
    j: usize,
    config: &HybridConfig,
) -> CoordinateTarget {
    if grad_entry.abs() >= config.dw {
        let current = params.weights()[[r, j]];
        return CoordinateTarget {
            value: current - grad_entry,
            step: -grad_entry,
            rule: UpdateRule::Gradient,
            probes_used: 0,
            capped: false,
        };
    }
    let slice = cache.slice(params, data, r, j);
    walk(
        &slice,
        cache.base_loss(),
        params.weights()[[r, j]],
        config.dw,
        config.max_probes,
    )
}

/// Per-epoch bookkeeping shared by both optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    /// Loss after the update.
    pub loss: f64,
    pub grad_updates: usize,
    pub ls_updates: usize,
    pub nochange_updates: usize,
    pub ls_probes: usize,
    /// Line searches that hit `max_probes`.
    pub capped_searches: usize,
    /// Analytic size of the per-epoch evaluation state in bytes.
    pub cache_bytes: usize,
}

/// Everything a hybrid epoch decided, for inspection.
#[derive(Debug, Clone)]
pub struct EpochTrace {
    /// Cache built from the epoch-start parameters.
    pub cache: PreactivationCache,
    pub gradient: Array2<f64>,
    /// `m × p`, one target per coordinate.
    pub targets: Array2<CoordinateTarget>,
}

/// Order in which coordinate targets are evaluated. The result never
/// depends on it; it exists to check exactly that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetOrder {
    Forward,
    Reverse,
}

pub fn hybrid_epoch(
    params: &NetworkParams,
    data: &Dataset,
    config: &HybridConfig,
) -> Result<(NetworkParams, EpochStats)> {
    hybrid_epoch_traced(params, data, config, TargetOrder::Forward).map(|(p, s, _)| (p, s))
}

/// [`hybrid_epoch`] that also returns the frozen state and every target.
pub fn hybrid_epoch_traced(
    params: &NetworkParams,
    data: &Dataset,
    config: &HybridConfig,
    order: TargetOrder,
) -> Result<(NetworkParams, EpochStats, EpochTrace)> {
    config.validate()?;
    let cache = PreactivationCache::build(params, data)?;
    let gradient = cache.gradient(params, data);
    let targets = compute_targets(&cache, params, data, &gradient, config, order);

    let mut stats = EpochStats {
        cache_bytes: cache.bytes(),
        ..EpochStats::default()
    };
    for t in &targets {
        match t.rule {
            UpdateRule::Gradient => stats.grad_updates += 1,
            UpdateRule::LineSearch => stats.ls_updates += 1,
            UpdateRule::NoChange => stats.nochange_updates += 1,
        }
        stats.ls_probes += t.probes_used;
        stats.capped_searches += usize::from(t.capped);
    }

    let alpha = config.alpha;
    let mut weights = params.weights().clone();
    weights.zip_mut_with(&targets, |w, t| *w += alpha * (t.value - *w));
    let next = params.with_weights(weights)?;
    stats.loss = checked_loss(&next, data)?;

    Ok((
        next,
        stats,
        EpochTrace {
            cache,
            gradient,
            targets,
        },
    ))
}

fn compute_targets(
    cache: &PreactivationCache,
    params: &NetworkParams,
    data: &Dataset,
    gradient: &Array2<f64>,
    config: &HybridConfig,
    order: TargetOrder,
) -> Array2<CoordinateTarget> {
    let (m, p) = gradient.dim();
    let target =
        |r: usize, j: usize| target_unchecked(cache, params, data, gradient[[r, j]], r, j, config);
    let row = |r: usize| -> Vec<CoordinateTarget> {
        match order {
            TargetOrder::Forward => (0..p).map(|j| target(r, j)).collect(),
            TargetOrder::Reverse => {
                let mut v: Vec<_> = (0..p).rev().map(|j| target(r, j)).collect();
                v.reverse();
                v
            }
        }
    };

    let rows: Vec<Vec<CoordinateTarget>> = match (config.parallel, order) {
        (true, _) => (0..m).into_par_iter().map(row).collect(),
        (false, TargetOrder::Forward) => (0..m).map(row).collect(),
        (false, TargetOrder::Reverse) => {
            let mut v: Vec<_> = (0..m).rev().map(row).collect();
            v.reverse();
            v
        }
    };
    let flat: Vec<CoordinateTarget> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((m, p), flat).expect("m × p targets")
}

fn checked_loss(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let l = model::loss(params, data)?;
    if !l.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            what: "loss",
        });
    }
    Ok(l)
}

/// One full-batch step `W ← W − lr ∇_W L`.
pub fn gd_epoch(
    params: &NetworkParams,
    data: &Dataset,
    config: &GdConfig,
) -> Result<(NetworkParams, EpochStats)> {
    config.validate()?;
    let grad = model::gradient(params, data)?;
    let weights = params.weights() - &(grad * config.lr);
    let next = params.with_weights(weights)?;
    let loss = checked_loss(&next, data)?;
    Ok((
        next,
        EpochStats {
            loss,
            // predictions and residuals
            cache_bytes: std::mem::size_of::<f64>() * (2 * data.n() + 1),
            ..EpochStats::default()
        },
    ))
}

//! Training objectives and their gradients with respect to the estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{check_lengths, energies, snr_db, EPS};
use crate::prompt::PromptCategory;
use crate::real::{energy, Real};

const DB: f64 = 10.0 / core::f64::consts::LN_10;

/// Mean power below which a reference counts as silent.
pub const SILENCE_POWER: f64 = 1e-10;

pub fn neg_snr_loss<T: Real>(reference: &[T], estimate: &[T]) -> Result<f64> {
    Ok(-snr_db(reference, estimate)?)
}

/// Loss and its gradient with respect to `estimate`.
pub fn neg_snr_loss_grad<T: Real>(reference: &[T], estimate: &[T]) -> Result<(f64, Vec<T>)> {
    let loss = neg_snr_loss(reference, estimate)?;
    let (_, e) = energies(reference, estimate);
    let k = DB * 2.0 / (e + EPS);
    let grad = reference.iter().zip(estimate).map(|(s, x)| T::lit(k * (x.as_f64() - s.as_f64()))).collect();
    Ok((loss, grad))
}

/// Soft-threshold ratios of the zero-aware loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroAwareConfig {
    pub tau_active: f64,
    pub tau_inactive: f64,
}

impl Default for ZeroAwareConfig {
    fn default() -> Self {
        Self { tau_active: 1e-3, tau_inactive: 1e-2 }
    }
}

pub fn is_silent<T: Real>(x: &[T]) -> bool {
    x.is_empty() || energy(x) / (x.len() as f64) < SILENCE_POWER
}

/// SNR loss that also accepts silent references: the estimate's energy is
/// then measured against the mixture's.
pub fn zero_aware_snr_loss<T: Real>(reference: &[T], estimate: &[T], mixture: &[T], cfg: ZeroAwareConfig) -> Result<f64> {
    Ok(zero_aware_snr_loss_grad(reference, estimate, mixture, cfg)?.0)
}

pub fn zero_aware_snr_loss_grad<T: Real>(
    reference: &[T],
    estimate: &[T],
    mixture: &[T],
    cfg: ZeroAwareConfig,
) -> Result<(f64, Vec<T>)> {
    check_lengths(reference, estimate)?;
    check_lengths(reference, mixture)?;
    if !is_silent(reference) {
        let (s, e) = energies(reference, estimate);
        let denom = e + cfg.tau_active * s;
        let loss = DB * libm::log(denom) - DB * libm::log(s);
        let k = DB * 2.0 / denom;
        let grad = reference.iter().zip(estimate).map(|(s, x)| T::lit(k * (x.as_f64() - s.as_f64()))).collect();
        Ok((loss, grad))
    } else {
        let xx = energy(mixture);
        if xx == 0.0 {
            return Err(Error::SilentMixture);
        }
        let ee = energy(estimate);
        let denom = ee + cfg.tau_inactive * xx;
        let loss = DB * libm::log(denom) - DB * libm::log(xx);
        let k = DB * 2.0 / denom;
        let grad = estimate.iter().map(|x| T::lit(k * x.as_f64())).collect();
        Ok((loss, grad))
    }
}

/// Targets and estimates holding one category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGroup {
    pub category: PromptCategory,
    pub targets: Vec<usize>,
    pub estimates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGrouping {
    groups: Vec<CategoryGroup>,
    len: usize,
}

impl CategoryGrouping {
    /// Validates that groups are balanced and cover `0..len` exactly once
    /// on both sides.
    pub fn new(groups: Vec<CategoryGroup>, len: usize) -> Result<Self> {
        let mut seen_t = vec![false; len];
        let mut seen_e = vec![false; len];
        let mut cats = Vec::new();
        for g in &groups {
            if g.targets.len() != g.estimates.len() || g.targets.is_empty() {
                return Err(Error::Grouping(format!("{} has unequal or empty sides", g.category)));
            }
            if cats.contains(&g.category) {
                return Err(Error::Grouping(format!("{} listed twice", g.category)));
            }
            cats.push(g.category);
            for (idx, seen) in [(&g.targets, &mut seen_t), (&g.estimates, &mut seen_e)] {
                for &i in idx {
                    if i >= len || seen[i] {
                        return Err(Error::Grouping(format!("index {i} is out of range or repeated")));
                    }
                    seen[i] = true;
                }
            }
        }
        if seen_t.iter().chain(&seen_e).any(|s| !s) {
            return Err(Error::Grouping("some positions belong to no group".into()));
        }
        Ok(Self { groups, len })
    }

    /// Position `i` holds target and estimate of `categories[i]`; groups are
    /// ordered by first appearance.
    pub fn from_categories(categories: &[PromptCategory]) -> Self {
        let mut groups: Vec<CategoryGroup> = Vec::new();
        for (i, c) in categories.iter().enumerate() {
            match groups.iter_mut().find(|g| g.category == *c) {
                Some(g) => {
                    g.targets.push(i);
                    g.estimates.push(i);
                }
                None => groups.push(CategoryGroup { category: *c, targets: vec![i], estimates: vec![i] }),
            }
        }
        Self { groups, len: categories.len() }
    }

    pub fn groups(&self) -> &[CategoryGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// How per-category losses are combined into the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoryWeighting {
    /// Every category counts once.
    #[default]
    Equal,
    /// Categories count in proportion to their number of sources.
    BySourceCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLoss {
    pub category: PromptCategory,
    pub loss: f64,
    /// `permutation[j]` is the group-local target matched to estimate `j`.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_category: Vec<CategoryLoss>,
    pub total: f64,
}

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..m).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..m).rev().find(|&i| p[i - 1] < p[i]) else { return out };
        let j = (i..m).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

/// Minimum over permutations of the mean of `cost[j][perm[j]]`; the first
/// minimizer in lexicographic order wins ties.
pub fn best_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let m = cost.len();
    let mut best = (f64::INFINITY, Vec::new());
    for p in permutations(m) {
        let mean = p.iter().enumerate().map(|(j, &t)| cost[j][t]).sum::<f64>() / m as f64;
        if mean < best.0 || best.1.is_empty() {
            best = (mean, p);
        }
    }
    best
}

fn combine(per_category: &[CategoryLoss], sizes: &[usize], weighting: CategoryWeighting) -> f64 {
    match weighting {
        CategoryWeighting::Equal => per_category.iter().map(|c| c.loss).sum::<f64>() / per_category.len() as f64,
        CategoryWeighting::BySourceCount => {
            let n: usize = sizes.iter().sum();
            per_category.iter().zip(sizes).map(|(c, &m)| c.loss * m as f64).sum::<f64>() / n as f64
        }
    }
}

fn check_all<T>(targets: &[Vec<T>], estimates: &[Vec<T>], grouping: &CategoryGrouping) -> Result<()> {
    if targets.len() != grouping.len() || estimates.len() != grouping.len() {
        return Err(Error::Grouping(format!(
            "grouping covers {} positions but got {} targets and {} estimates",
            grouping.len(),
            targets.len(),
            estimates.len()
        )));
    }
    if grouping.is_empty() {
        return Err(Error::Grouping("no sources".into()));
    }
    Ok(())
}

/// Permutation-invariant negative SNR, searched within each category.
pub fn category_pit_loss<T: Real>(
    targets: &[Vec<T>],
    estimates: &[Vec<T>],
    grouping: &CategoryGrouping,
    weighting: CategoryWeighting,
) -> Result<LossReport> {
    check_all(targets, estimates, grouping)?;
    let mut per_category = Vec::with_capacity(grouping.groups().len());
    let mut sizes = Vec::new();
    for g in grouping.groups() {
        let cost = g
            .estimates
            .iter()
            .map(|&e| g.targets.iter().map(|&t| neg_snr_loss(&targets[t], &estimates[e])).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let (loss, permutation) = best_assignment(&cost);
        per_category.push(CategoryLoss { category: g.category, loss, permutation });
        sizes.push(g.targets.len());
    }
    let total = combine(&per_category, &sizes, weighting);
    Ok(LossReport { per_category, total })
}

/// [`category_pit_loss`] plus the gradient of `total` with respect to each
/// estimate, holding the chosen assignments fixed.
pub fn category_pit_loss_grad<T: Real>(
    targets: &[Vec<T>],
    estimates: &[Vec<T>],
    grouping: &CategoryGrouping,
    weighting: CategoryWeighting,
) -> Result<(LossReport, Vec<Vec<T>>)> {
    let report = category_pit_loss(targets, estimates, grouping, weighting)?;
    let mut grads: Vec<Vec<T>> = estimates.iter().map(|e| vec![T::zero(); e.len()]).collect();
    let n_cat = grouping.groups().len() as f64;
    for (g, c) in grouping.groups().iter().zip(&report.per_category) {
        let m = g.targets.len() as f64;
        let w = match weighting {
            CategoryWeighting::Equal => 1.0 / (n_cat * m),
            CategoryWeighting::BySourceCount => 1.0 / grouping.len() as f64,
        };
        for (j, &e) in g.estimates.iter().enumerate() {
            let t = g.targets[c.permutation[j]];
            let (_, d) = neg_snr_loss_grad(&targets[t], &estimates[e])?;
            for (o, v) in grads[e].iter_mut().zip(d) {
                *o += v * T::lit(w);
            }
        }
    }
    Ok((report, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineLoss {
    pub total: f64,
    /// `permutation[j]` is the reference (active ones first, then silent
    /// padding) matched to output `j`.
    pub permutation: Vec<usize>,
    pub per_output: Vec<f64>,
}

/// PIT over all outputs with the zero-aware loss; missing references are
/// silent. Returns the loss and the gradient per output.
pub fn baseline_pit_loss_grad<T: Real>(
    targets: &[Vec<T>],
    estimates: &[Vec<T>],
    mixture: &[T],
    cfg: ZeroAwareConfig,
) -> Result<(BaselineLoss, Vec<Vec<T>>)> {
    let m = estimates.len();
    if targets.len() > m {
        return Err(Error::Grouping(format!("{} references for {m} outputs", targets.len())));
    }
    let zeros = vec![T::zero(); mixture.len()];
    let refs: Vec<&[T]> = targets.iter().map(|t| t.as_slice()).chain(core::iter::repeat_n(zeros.as_slice(), m - targets.len())).collect();
    let mut cost = vec![vec![0.0; m]; m];
    for (j, est) in estimates.iter().enumerate() {
        for (t, r) in refs.iter().enumerate() {
            cost[j][t] = zero_aware_snr_loss(r, est, mixture, cfg)?;
        }
    }
    let (total, permutation) = best_assignment(&cost);
    let mut grads = Vec::with_capacity(m);
    let mut per_output = Vec::with_capacity(m);
    for (j, est) in estimates.iter().enumerate() {
        let (l, mut g) = zero_aware_snr_loss_grad(refs[permutation[j]], est, mixture, cfg)?;
        let w = T::lit(1.0 / m as f64);
        g.iter_mut().for_each(|v| *v *= w);
        grads.push(g);
        per_output.push(l);
    }
    Ok((BaselineLoss { total, permutation, per_output }, grads))
}

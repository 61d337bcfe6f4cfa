//! Submodular batch selection.
//!
//! Each candidate carries three scores:
//! * uncertainty: mean pairwise KL among its original and perturbed outputs,
//! * diversity: min KL divergence from the already-selected set,
//! * representativeness: facility-location coverage gain over the pool.
//!
//! The marginal gain of adding candidate `i` to the selected set `S` is the
//! convex combination `alpha*U(i) + beta*d(S,i) + (1-alpha-beta)*R(S,i)` of
//! the normalized scores. Greedy maximization with incremental min/max caches
//! picks a budget-sized batch in `O(B * n)` gain evaluations; a brute-force
//! enumerator provides the approximation-guarantee oracle for small
//! instances.

use itertools::Itertools;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::perturb::PerturbationBundle;
use crate::prob::{kl_divergence, kl_raw, similarity_raw, ProbDist};

/// Convex-combination weights; `alpha + beta <= 1` with both non-negative.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MixWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        MixWeights {
            alpha: 0.5,
            beta: 0.3,
        }
    }
}

impl MixWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = MixWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || self.alpha + self.beta > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mix weights need alpha >= 0, beta >= 0, alpha + beta <= 1, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    fn rep_weight(&self) -> f64 {
        (1.0 - self.alpha - self.beta).max(0.0)
    }
}

/// Mean pairwise KL divergence over a bundle's N+1 distributions:
/// `(1/N^2) [ sum_i KL(orig || pert_i) + sum_{i != j} KL(pert_i || pert_j) ]`.
pub fn vap_score(bundle: &PerturbationBundle) -> Result<f64> {
    let n = bundle.perturbed.len();
    if n == 0 {
        return Err(Error::InvalidInput(
            "bundle has no perturbed outputs".into(),
        ));
    }
    let mut total = 0.0;
    for p in &bundle.perturbed {
        total += kl_divergence(&bundle.original, p)?;
    }
    for (i, pi) in bundle.perturbed.iter().enumerate() {
        for (j, pj) in bundle.perturbed.iter().enumerate() {
            if i != j {
                total += kl_divergence(pi, pj)?;
            }
        }
    }
    Ok(total / (n * n) as f64)
}

/// Immutable per-cycle candidate data: uncertainty scores plus pairwise KL
/// and similarity tables over the pool's original output distributions.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    ids: Vec<usize>,
    vap: Vec<f64>,
    /// `kl[j * n + i] = KL(p_j || p_i)`, the divergence from selected j to
    /// candidate i.
    kl: Vec<f64>,
    /// Symmetric similarity table.
    sim: Vec<f64>,
    /// Candidate positions sorted by ascending id; argmax scans follow this
    /// order so ties break toward the lowest id.
    scan_order: Vec<usize>,
    n: usize,
}

impl CandidatePool {
    pub fn from_bundles(ids: Vec<usize>, bundles: &[PerturbationBundle]) -> Result<Self> {
        if ids.len() != bundles.len() {
            return Err(Error::Dimension {
                context: "candidate ids vs bundles",
                expected: bundles.len(),
                actual: ids.len(),
            });
        }
        let vap = bundles.iter().map(vap_score).collect::<Result<Vec<_>>>()?;
        let originals: Vec<&ProbDist> = bundles.iter().map(|b| &b.original).collect();
        Self::build(ids, vap, &originals)
    }

    /// Builds the tables from original distributions and precomputed
    /// uncertainty scores.
    pub fn from_distributions(
        ids: Vec<usize>,
        originals: &[ProbDist],
        vap: Vec<f64>,
    ) -> Result<Self> {
        let refs: Vec<&ProbDist> = originals.iter().collect();
        Self::build(ids, vap, &refs)
    }

    fn build(ids: Vec<usize>, vap: Vec<f64>, originals: &[&ProbDist]) -> Result<Self> {
        let n = originals.len();
        if n == 0 {
            return Err(Error::InvalidInput("candidate pool is empty".into()));
        }
        if ids.len() != n || vap.len() != n {
            return Err(Error::Dimension {
                context: "candidate pool columns",
                expected: n,
                actual: ids.len().min(vap.len()),
            });
        }
        let k = originals[0].len();
        for p in originals {
            if p.len() != k {
                return Err(Error::Dimension {
                    context: "candidate pool distributions",
                    expected: k,
                    actual: p.len(),
                });
            }
        }
        let mut kl = vec![0.0; n * n];
        let mut sim = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    kl[j * n + i] = kl_raw(originals[j].values(), originals[i].values());
                }
                sim[j * n + i] = if i <= j {
                    similarity_raw(originals[j].values(), originals[i].values())
                } else {
                    0.0
                };
            }
        }
        // Mirror the lower triangle so the table is exactly symmetric.
        for j in 0..n {
            for i in (j + 1)..n {
                sim[j * n + i] = sim[i * n + j];
            }
        }
        Self::from_tables(ids, vap, kl, sim)
    }

    /// Assembles a pool from raw tables, validating the invariants.
    pub fn from_tables(
        ids: Vec<usize>,
        vap: Vec<f64>,
        kl: Vec<f64>,
        sim: Vec<f64>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::InvalidInput("candidate pool is empty".into()));
        }
        if kl.len() != n * n || sim.len() != n * n || vap.len() != n {
            return Err(Error::Dimension {
                context: "candidate pool tables",
                expected: n * n,
                actual: kl.len().min(sim.len()),
            });
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::InvalidInput("candidate ids must be unique".into()));
        }
        for (i, &v) in vap.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "uncertainty score of candidate {i} is {v}"
                )));
            }
        }
        for j in 0..n {
            if kl[j * n + j] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "kl diagonal at {j} is non-zero"
                )));
            }
            for i in 0..n {
                let d = kl[j * n + i];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidInput(format!("kl[{j},{i}] = {d}")));
                }
                let s = sim[j * n + i];
                if !s.is_finite() || s < 0.0 {
                    return Err(Error::InvalidInput(format!("sim[{j},{i}] = {s}")));
                }
                if sim[j * n + i] != sim[i * n + j] {
                    return Err(Error::InvalidInput(format!(
                        "similarity table is not symmetric at [{j},{i}]"
                    )));
                }
            }
        }
        let mut scan_order: Vec<usize> = (0..n).collect();
        scan_order.sort_by_key(|&pos| ids[pos]);
        Ok(CandidatePool {
            ids,
            vap,
            kl,
            sim,
            scan_order,
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vap_scores(&self) -> &[f64] {
        &self.vap
    }

    #[inline]
    pub fn kl_at(&self, from: usize, to: usize) -> f64 {
        self.kl[from * self.n + to]
    }

    #[inline]
    pub fn sim_at(&self, a: usize, b: usize) -> f64 {
        self.sim[a * self.n + b]
    }
}

/// Normalization constants computed once per selection cycle and held fixed
/// for the whole greedy run; per-step renormalization would break the
/// diminishing-returns property of the gains.
#[derive(Debug, Clone, Copy)]
pub struct ScoreNormalization {
    pub vap_min: f64,
    pub vap_range: f64,
    /// Max pairwise KL in the pool; also the empty-set diversity value, so
    /// every candidate ties at normalized diversity 1 on the first pick.
    pub max_pairwise_kl: f64,
    /// Max over candidates of their total similarity mass (the first-pick
    /// representativeness bound).
    pub max_similarity_mass: f64,
}

impl ScoreNormalization {
    pub fn for_pool(pool: &CandidatePool) -> Self {
        let mut vap_min = f64::INFINITY;
        let mut vap_max = f64::NEG_INFINITY;
        for &v in &pool.vap {
            vap_min = vap_min.min(v);
            vap_max = vap_max.max(v);
        }
        let mut max_kl = 0.0f64;
        for &d in &pool.kl {
            max_kl = max_kl.max(d);
        }
        let mut max_mass = 0.0f64;
        for i in 0..pool.n {
            let mass: f64 = (0..pool.n).map(|k| pool.sim_at(k, i)).sum();
            max_mass = max_mass.max(mass);
        }
        ScoreNormalization {
            vap_min,
            vap_range: vap_max - vap_min,
            max_pairwise_kl: max_kl,
            max_similarity_mass: max_mass,
        }
    }

    /// Min-max normalization; a degenerate all-equal score vector maps to 0.
    pub fn vap(&self, raw: f64) -> f64 {
        if self.vap_range > 0.0 {
            (raw - self.vap_min) / self.vap_range
        } else {
            0.0
        }
    }

    pub fn diversity(&self, raw: f64) -> f64 {
        if self.max_pairwise_kl > 0.0 {
            raw / self.max_pairwise_kl
        } else {
            0.0
        }
    }

    pub fn representativeness(&self, raw: f64) -> f64 {
        if self.max_similarity_mass > 0.0 {
            raw / self.max_similarity_mass
        } else {
            0.0
        }
    }
}

/// Raw and normalized components of one marginal gain.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GainComponents {
    pub vap_raw: f64,
    pub vap_norm: f64,
    pub diversity_raw: f64,
    pub diversity_norm: f64,
    pub representativeness_raw: f64,
    pub representativeness_norm: f64,
    pub gain: f64,
}

/// Selected set plus the incremental caches:
/// `min_div[i] = min over selected j of KL(p_j || p_i)` and
/// `max_sim[k] = max over selected j of sim(k, j)`.
#[derive(Debug, Clone)]
pub struct SelectionState<'a> {
    pool: &'a CandidatePool,
    norm: ScoreNormalization,
    selected: Vec<usize>,
    is_selected: Vec<bool>,
    min_div: Vec<f64>,
    max_sim: Vec<f64>,
    accumulated_gain: f64,
}

impl<'a> SelectionState<'a> {
    pub fn new(pool: &'a CandidatePool) -> Self {
        let norm = ScoreNormalization::for_pool(pool);
        SelectionState {
            pool,
            norm,
            selected: Vec::new(),
            is_selected: vec![false; pool.n],
            min_div: vec![f64::INFINITY; pool.n],
            max_sim: vec![0.0; pool.n],
            accumulated_gain: 0.0,
        }
    }

    /// Builds a state with `positions` already selected (in order), updating
    /// the caches pick by pick.
    pub fn with_selected(pool: &'a CandidatePool, positions: &[usize]) -> Result<Self> {
        let mut state = Self::new(pool);
        for &pos in positions {
            state.push(pos, None)?;
        }
        Ok(state)
    }

    pub fn pool(&self) -> &CandidatePool {
        self.pool
    }

    pub fn normalization(&self) -> &ScoreNormalization {
        &self.norm
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn accumulated_gain(&self) -> f64 {
        self.accumulated_gain
    }

    pub fn min_div_cache(&self) -> &[f64] {
        &self.min_div
    }

    pub fn max_sim_cache(&self) -> &[f64] {
        &self.max_sim
    }

    fn check_candidate(&self, i: usize) -> Result<()> {
        if i >= self.pool.n {
            return Err(Error::InvalidInput(format!(
                "candidate position {i} out of range ({} candidates)",
                self.pool.n
            )));
        }
        if self.is_selected[i] {
            return Err(Error::AlreadySelected(self.pool.ids[i]));
        }
        Ok(())
    }

    /// Raw diversity `min over selected of KL(p_j || p_i)`; with nothing
    /// selected every candidate gets the pool's max pairwise KL, so the first
    /// pick is decided by the other two scores.
    pub fn diversity_score(&self, i: usize) -> Result<f64> {
        self.check_candidate(i)?;
        if self.selected.is_empty() {
            Ok(self.norm.max_pairwise_kl)
        } else {
            Ok(self.min_div[i])
        }
    }

    /// Raw facility-location gain `sum_k max(0, sim(k,i) - max_sim[k])`,
    /// summed over the whole pool (selected members stay coverage targets).
    pub fn representativeness_score(&self, i: usize) -> Result<f64> {
        self.check_candidate(i)?;
        let mut total = 0.0;
        for k in 0..self.pool.n {
            let delta = self.pool.sim_at(k, i) - self.max_sim[k];
            if delta > 0.0 {
                total += delta;
            }
        }
        Ok(total)
    }

    /// Convex combination of the three normalized scores.
    pub fn marginal_gain(&self, i: usize, weights: &MixWeights) -> Result<GainComponents> {
        weights.validate()?;
        let vap_raw = self.pool.vap[i];
        let diversity_raw = self.diversity_score(i)?;
        let representativeness_raw = self.representativeness_score(i)?;
        let vap_norm = self.norm.vap(vap_raw);
        let diversity_norm = self.norm.diversity(diversity_raw);
        let representativeness_norm = self.norm.representativeness(representativeness_raw);
        let gain = weights.alpha * vap_norm
            + weights.beta * diversity_norm
            + weights.rep_weight() * representativeness_norm;
        Ok(GainComponents {
            vap_raw,
            vap_norm,
            diversity_raw,
            diversity_norm,
            representativeness_raw,
            representativeness_norm,
            gain,
        })
    }

    /// Adds candidate `i` to the set, updating both caches in O(n).
    pub fn push(&mut self, i: usize, gain: Option<f64>) -> Result<()> {
        self.check_candidate(i)?;
        self.is_selected[i] = true;
        self.selected.push(i);
        for t in 0..self.pool.n {
            self.min_div[t] = self.min_div[t].min(self.pool.kl_at(i, t));
            self.max_sim[t] = self.max_sim[t].max(self.pool.sim_at(t, i));
        }
        if let Some(g) = gain {
            self.accumulated_gain += g;
        }
        Ok(())
    }
}

/// One greedy pick with its score breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionStep {
    pub id: usize,
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<GainComponents>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accumulated_gain: Option<f64>,
}

/// Output schema shared by the submodular selector and the baseline samplers.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub sampler: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub budget_requested: usize,
    pub truncated: bool,
    pub ids: Vec<usize>,
    pub steps: Vec<SelectionStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accumulated_gain: Option<f64>,
}

/// Greedy maximization: `budget` picks of the highest marginal gain, ties
/// broken by the lowest candidate id. A budget beyond the pool size selects
/// the whole pool (with a warning).
pub fn greedy_select(
    pool: &CandidatePool,
    budget: usize,
    weights: &MixWeights,
) -> Result<SelectionReport> {
    weights.validate()?;
    if budget == 0 {
        return Err(Error::InvalidConfig("selection budget must be >= 1".into()));
    }
    let truncated = budget > pool.len();
    if truncated {
        log::warn!(
            "selection budget {budget} exceeds pool size {}; selecting the whole pool",
            pool.len()
        );
    }
    let take = budget.min(pool.len());
    let mut state = SelectionState::new(pool);
    let mut steps = Vec::with_capacity(take);
    for _ in 0..take {
        let mut best: Option<(usize, GainComponents)> = None;
        for &pos in &pool.scan_order {
            if state.is_selected[pos] {
                continue;
            }
            let gain = state.marginal_gain(pos, weights)?;
            let better = match &best {
                None => true,
                Some((_, b)) => gain.gain > b.gain,
            };
            if better {
                best = Some((pos, gain));
            }
        }
        let (pos, gain) = best.expect("pool cannot be exhausted before the budget");
        state.push(pos, Some(gain.gain))?;
        steps.push(SelectionStep {
            id: pool.ids[pos],
            score: Some(gain.gain),
            components: Some(gain),
            accumulated_gain: Some(state.accumulated_gain()),
        });
    }
    Ok(SelectionReport {
        sampler: "submodular".into(),
        alpha: Some(weights.alpha),
        beta: Some(weights.beta),
        budget_requested: budget,
        truncated,
        ids: steps.iter().map(|s| s.id).collect(),
        steps,
        accumulated_gain: Some(state.accumulated_gain()),
    })
}

/// Accumulated gain of inserting `order` one by one, evaluated naively
/// (direct loops, no incremental caches). This is the second, independent
/// route the greedy path is checked against.
fn naive_order_gain(
    pool: &CandidatePool,
    norm: &ScoreNormalization,
    order: &[usize],
    weights: &MixWeights,
) -> f64 {
    let mut total = 0.0;
    for (step, &i) in order.iter().enumerate() {
        let selected = &order[..step];
        let div_raw = if selected.is_empty() {
            norm.max_pairwise_kl
        } else {
            selected
                .iter()
                .map(|&j| pool.kl_at(j, i))
                .fold(f64::INFINITY, f64::min)
        };
        let mut rep_raw = 0.0;
        for k in 0..pool.len() {
            let covered = selected
                .iter()
                .map(|&j| pool.sim_at(k, j))
                .fold(0.0f64, f64::max);
            let delta = pool.sim_at(k, i) - covered;
            if delta > 0.0 {
                rep_raw += delta;
            }
        }
        total += weights.alpha * norm.vap(pool.vap[i])
            + weights.beta * norm.diversity(div_raw)
            + weights.rep_weight() * norm.representativeness(rep_raw);
    }
    total
}

/// Set-function value of an id set: the maximum accumulated gain over all
/// insertion orders, evaluated naively. The KL diversity term is
/// order-dependent because the divergence is asymmetric, so order
/// maximization is what makes subsets comparable; both the exhaustive oracle
/// and the greedy guarantee checks score sets this way.
pub fn subset_value(pool: &CandidatePool, ids: &[usize], weights: &MixWeights) -> Result<f64> {
    weights.validate()?;
    if ids.is_empty() {
        return Ok(0.0);
    }
    if ids.len() > 6 {
        return Err(Error::InstanceTooLarge(format!(
            "order maximization over {}! insertion orders",
            ids.len()
        )));
    }
    let positions: Vec<usize> = ids
        .iter()
        .map(|id| {
            pool.ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::InvalidInput(format!("id {id} not in the pool")))
        })
        .collect::<Result<_>>()?;
    let norm = ScoreNormalization::for_pool(pool);
    let mut best = f64::NEG_INFINITY;
    let k = positions.len();
    for perm in positions.into_iter().permutations(k) {
        best = best.max(naive_order_gain(pool, &norm, &perm, weights));
    }
    Ok(best)
}

/// Exhaustive oracle: scores every size-`budget` subset by the maximum
/// accumulated gain over all insertion orders and returns the best. Guarded
/// to small instances (`C(n, B) <= 1e6`, `B <= 5`).
pub fn brute_force_best_subset(
    pool: &CandidatePool,
    budget: usize,
    weights: &MixWeights,
) -> Result<(Vec<usize>, f64)> {
    weights.validate()?;
    if budget == 0 || budget > pool.len() {
        return Err(Error::InvalidConfig(format!(
            "brute-force budget {budget} out of range for pool of {}",
            pool.len()
        )));
    }
    if budget > 5 {
        return Err(Error::InstanceTooLarge(format!("budget {budget} > 5")));
    }
    let n = pool.len() as u64;
    let mut combos = 1u64;
    for i in 0..budget as u64 {
        combos = combos.saturating_mul(n - i) / (i + 1);
        if combos > 1_000_000 {
            return Err(Error::InstanceTooLarge(format!(
                "C({n}, {budget}) exceeds 1e6 subsets"
            )));
        }
    }
    let norm = ScoreNormalization::for_pool(pool);
    let mut best_value = f64::NEG_INFINITY;
    let mut best_subset: Vec<usize> = Vec::new();
    for combo in (0..pool.len()).combinations(budget) {
        let mut value = f64::NEG_INFINITY;
        for perm in combo.iter().copied().permutations(budget) {
            value = value.max(naive_order_gain(pool, &norm, &perm, weights));
        }
        if value > best_value {
            best_value = value;
            best_subset = combo;
        }
    }
    Ok((
        best_subset.iter().map(|&pos| pool.ids[pos]).collect(),
        best_value,
    ))
}

//! Competing batch samplers run under identical training for head-to-head
//! comparisons: uniform random, prediction entropy, best-vs-second-best
//! margin, farthest-point coverage on embeddings, discriminator-weighted
//! entropy, and k-means++ seeding on gradient embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::prob::{entropy, ProbDist};
use crate::submodular::{SelectionReport, SelectionStep};

fn check_budget(budget: usize, n: usize, sampler: &str) -> Result<usize> {
    if budget == 0 {
        return Err(Error::InvalidConfig(format!(
            "{sampler}: selection budget must be >= 1"
        )));
    }
    if budget > n {
        log::warn!("{sampler}: budget {budget} exceeds pool size {n}; selecting the whole pool");
    }
    Ok(budget.min(n))
}

fn report(
    sampler: &str,
    budget_requested: usize,
    n: usize,
    picks: Vec<(usize, Option<f64>)>,
) -> SelectionReport {
    SelectionReport {
        sampler: sampler.to_string(),
        alpha: None,
        beta: None,
        budget_requested,
        truncated: budget_requested > n,
        ids: picks.iter().map(|&(id, _)| id).collect(),
        steps: picks
            .into_iter()
            .map(|(id, score)| SelectionStep {
                id,
                score,
                components: None,
                accumulated_gain: None,
            })
            .collect(),
        accumulated_gain: None,
    }
}

/// Selects ids in descending score order, ties broken by the lowest id.
fn top_by_score(ids: &[usize], scores: &[f64], take: usize) -> Vec<(usize, Option<f64>)> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ids[a].cmp(&ids[b]))
    });
    order
        .into_iter()
        .take(take)
        .map(|i| (ids[i], Some(scores[i])))
        .collect()
}

/// Uniform sample without replacement.
pub fn random_select(ids: &[usize], budget: usize, rng: &mut impl Rng) -> Result<SelectionReport> {
    let take = check_budget(budget, ids.len(), "random")?;
    let mut remaining: Vec<usize> = ids.to_vec();
    let mut picks = Vec::with_capacity(take);
    for _ in 0..take {
        let at = rng.random_range(0..remaining.len());
        picks.push((remaining.swap_remove(at), None));
    }
    Ok(report("random", budget, ids.len(), picks))
}

/// Top-budget by prediction entropy.
pub fn entropy_select(ids: &[usize], probs: &[ProbDist], budget: usize) -> Result<SelectionReport> {
    check_lengths(ids, probs.len(), "entropy")?;
    let take = check_budget(budget, ids.len(), "entropy")?;
    let scores: Vec<f64> = probs.iter().map(entropy).collect();
    Ok(report(
        "entropy",
        budget,
        ids.len(),
        top_by_score(ids, &scores, take),
    ))
}

/// Smallest top1-minus-top2 margins first (low margin = high uncertainty).
pub fn margin_select(ids: &[usize], probs: &[ProbDist], budget: usize) -> Result<SelectionReport> {
    check_lengths(ids, probs.len(), "margin")?;
    let take = check_budget(budget, ids.len(), "margin")?;
    let scores: Vec<f64> = probs
        .iter()
        .map(|p| {
            let mut top1 = f64::NEG_INFINITY;
            let mut top2 = f64::NEG_INFINITY;
            for &v in p.values() {
                if v > top1 {
                    top2 = top1;
                    top1 = v;
                } else if v > top2 {
                    top2 = v;
                }
            }
            // Negated margin so the shared descending sort picks the
            // smallest margins first.
            -(top1 - top2)
        })
        .collect();
    let picks = top_by_score(ids, &scores, take)
        .into_iter()
        .map(|(id, s)| (id, s.map(|v| -v)))
        .collect();
    Ok(report("margin", budget, ids.len(), picks))
}

fn check_lengths(ids: &[usize], got: usize, sampler: &'static str) -> Result<()> {
    if ids.len() != got {
        return Err(Error::Dimension {
            context: "sampler inputs",
            expected: ids.len(),
            actual: got,
        });
    }
    let _ = sampler;
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Farthest-point selection on the embedding space. The already-labeled
/// pool's embeddings seed the covered set; with no seeds every candidate
/// starts at infinite distance and the first pick is the lowest id.
pub fn kcenter_select(
    ids: &[usize],
    embeddings: &[Vec<f64>],
    labeled_embeddings: &[Vec<f64>],
    budget: usize,
) -> Result<SelectionReport> {
    check_lengths(ids, embeddings.len(), "kcenter")?;
    let take = check_budget(budget, ids.len(), "kcenter")?;
    let n = ids.len();
    let mut dist: Vec<f64> = vec![f64::INFINITY; n];
    for (d, e) in dist.iter_mut().zip(embeddings) {
        for seed in labeled_embeddings {
            *d = d.min(sq_dist(e, seed));
        }
    }
    let mut selected = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ids[i]);
    let mut picks = Vec::with_capacity(take);
    for _ in 0..take {
        let mut best: Option<usize> = None;
        for &i in &order {
            if selected[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => dist[i] > dist[b],
            };
            if better {
                best = Some(i);
            }
        }
        let pick = best.expect("pool exhausted before budget");
        selected[pick] = true;
        let score = if dist[pick].is_finite() {
            Some(dist[pick].sqrt())
        } else {
            None
        };
        picks.push((ids[pick], score));
        for i in 0..n {
            dist[i] = dist[i].min(sq_dist(&embeddings[i], &embeddings[pick]));
        }
    }
    Ok(report("kcenter", budget, n, picks))
}

/// Entropy weighted by the density ratio implied by the discriminator:
/// `H(p) * (1 - D) / D` with `D` clamped away from 0 and 1.
pub fn aada_select(
    ids: &[usize],
    probs: &[ProbDist],
    discriminator: &[f64],
    budget: usize,
) -> Result<SelectionReport> {
    check_lengths(ids, probs.len(), "aada")?;
    check_lengths(ids, discriminator.len(), "aada")?;
    let take = check_budget(budget, ids.len(), "aada")?;
    let scores: Vec<f64> = probs
        .iter()
        .zip(discriminator)
        .map(|(p, &d)| {
            let d = d.clamp(1e-6, 1.0 - 1e-6);
            entropy(p) * (1.0 - d) / d
        })
        .collect();
    Ok(report(
        "aada",
        budget,
        ids.len(),
        top_by_score(ids, &scores, take),
    ))
}

/// Per-candidate gradient embedding: the outer product of
/// `(p - onehot(argmax p))` with the feature embedding, flattened.
fn gradient_embeddings(probs: &[ProbDist], embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    probs
        .iter()
        .zip(embeddings)
        .map(|(p, e)| {
            let top = p.argmax();
            let mut g = Vec::with_capacity(p.len() * e.len());
            for (c, &pc) in p.values().iter().enumerate() {
                let scale = if c == top { pc - 1.0 } else { pc };
                g.extend(e.iter().map(|&v| scale * v));
            }
            g
        })
        .collect()
}

fn badge_weights(grads: &[Vec<f64>], chosen: &[usize]) -> Vec<f64> {
    if chosen.is_empty() {
        grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum())
            .collect()
    } else {
        grads
            .iter()
            .map(|g| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(g, &grads[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

fn badge_core(
    ids: &[usize],
    probs: &[ProbDist],
    embeddings: &[Vec<f64>],
    budget: usize,
    mut draw: impl FnMut(&[f64], &[bool], &[usize]) -> usize,
) -> Result<SelectionReport> {
    check_lengths(ids, probs.len(), "badge")?;
    check_lengths(ids, embeddings.len(), "badge")?;
    let take = check_budget(budget, ids.len(), "badge")?;
    let grads = gradient_embeddings(probs, embeddings);
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ids[i]);
    let mut chosen: Vec<usize> = Vec::with_capacity(take);
    let mut selected = vec![false; n];
    let mut picks = Vec::with_capacity(take);
    for _ in 0..take {
        let mut weights = badge_weights(&grads, &chosen);
        for (w, s) in weights.iter_mut().zip(&selected) {
            if *s {
                *w = 0.0;
            }
        }
        let pick = draw(&weights, &selected, &order);
        selected[pick] = true;
        chosen.push(pick);
        picks.push((ids[pick], Some(weights[pick])));
    }
    Ok(report("badge", budget, n, picks))
}

/// k-means++ seeding on the gradient embeddings: the first center is drawn
/// with probability proportional to the squared norm, later centers
/// proportional to the squared distance to the nearest chosen center.
/// Zero-weight candidates are never drawn while a positive-weight candidate
/// remains.
pub fn badge_select(
    ids: &[usize],
    probs: &[ProbDist],
    embeddings: &[Vec<f64>],
    budget: usize,
    rng: &mut impl Rng,
) -> Result<SelectionReport> {
    badge_core(
        ids,
        probs,
        embeddings,
        budget,
        |weights, selected, order| {
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                for (i, &w) in weights.iter().enumerate() {
                    if selected[i] || w <= 0.0 {
                        continue;
                    }
                    u -= w;
                    if u <= 0.0 {
                        return i;
                    }
                }
                // Rounding residue: fall through to the last positive weight.
                for i in (0..weights.len()).rev() {
                    if !selected[i] && weights[i] > 0.0 {
                        return i;
                    }
                }
            }
            // All remaining weights are zero: deterministic lowest-id fallback.
            *order
                .iter()
                .find(|&&i| !selected[i])
                .expect("pool exhausted")
        },
    )
}

/// Deterministic variant: each draw takes the argmax weight, ties broken by
/// the lowest id. Useful for reproducible tests.
pub fn badge_select_deterministic(
    ids: &[usize],
    probs: &[ProbDist],
    embeddings: &[Vec<f64>],
    budget: usize,
) -> Result<SelectionReport> {
    badge_core(
        ids,
        probs,
        embeddings,
        budget,
        |weights, selected, order| {
            let mut best: Option<usize> = None;
            for &i in order {
                if selected[i] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => weights[i] > weights[b],
                };
                if better {
                    best = Some(i);
                }
            }
            best.expect("pool exhausted")
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(values: &[f64]) -> ProbDist {
        ProbDist::new(values.to_vec()).unwrap()
    }

    fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> ProbDist {
        loop {
            let raw: Vec<f64> = (0..k)
                .map(|_| -rng.random::<f64>().max(1e-12).ln())
                .collect();
            let sum: f64 = raw.iter().sum();
            if sum > 0.0 {
                return ProbDist::new(raw.iter().map(|v| v / sum).collect()).unwrap();
            }
        }
    }

    #[test]
    fn random_select_whole_pool_is_permutation() {
        let ids: Vec<usize> = (10..20).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_select(&ids, 10, &mut rng).unwrap();
        let mut got = r.ids.clone();
        got.sort_unstable();
        assert_eq!(got, ids);
    }

    #[test]
    fn random_select_is_seeded() {
        let ids: Vec<usize> = (0..30).collect();
        let a = random_select(&ids, 5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_select(&ids, 5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.ids, b.ids);
    }

    #[test]
    fn random_select_is_uniform() {
        let ids: Vec<usize> = (0..10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            let r = random_select(&ids, 1, &mut rng).unwrap();
            counts[r.ids[0]] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() <= 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn entropy_select_prefers_uncertain() {
        let ids = vec![0, 1, 2];
        let probs = vec![
            dist(&[1.0, 0.0, 0.0]),
            dist(&[0.34, 0.33, 0.33]),
            dist(&[0.0, 1.0, 0.0]),
        ];
        let r = entropy_select(&ids, &probs, 1).unwrap();
        assert_eq!(r.ids, vec![1]);
        let all = entropy_select(&ids, &probs, 3).unwrap();
        assert_eq!(all.ids[0], 1);
        // Remaining one-hot candidates tie at zero entropy; lowest id first.
        assert_eq!(all.ids[1..], [0, 2]);
    }

    #[test]
    fn entropy_select_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ids: Vec<usize> = (0..12).collect();
        let probs: Vec<ProbDist> = (0..12).map(|_| random_dist(&mut rng, 4)).collect();
        let r = entropy_select(&ids, &probs, 12).unwrap();
        let mut expect: Vec<usize> = (0..12).collect();
        expect.sort_by(|&a, &b| entropy(&probs[b]).partial_cmp(&entropy(&probs[a])).unwrap());
        assert_eq!(r.ids, expect);
    }

    #[test]
    fn margin_select_cases() {
        let ids = vec![0, 1];
        let probs = vec![dist(&[0.5, 0.5, 0.0]), dist(&[1.0, 0.0, 0.0])];
        let r = margin_select(&ids, &probs, 2).unwrap();
        // Zero margin first, one-hot (margin 1) last.
        assert_eq!(r.ids, vec![0, 1]);
        assert_eq!(r.steps[0].score, Some(0.0));
        assert_eq!(r.steps[1].score, Some(1.0));
    }

    #[test]
    fn margin_select_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ids: Vec<usize> = (0..15).collect();
        let probs: Vec<ProbDist> = (0..15).map(|_| random_dist(&mut rng, 5)).collect();
        let r = margin_select(&ids, &probs, 15).unwrap();
        let margin = |p: &ProbDist| {
            let mut v = p.values().to_vec();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v[0] - v[1]
        };
        let mut expect: Vec<usize> = (0..15).collect();
        expect.sort_by(|&a, &b| margin(&probs[a]).partial_cmp(&margin(&probs[b])).unwrap());
        assert_eq!(r.ids, expect);
    }

    #[test]
    fn entropy_and_margin_agree_on_binary_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let ids: Vec<usize> = (0..10).collect();
            let probs: Vec<ProbDist> = (0..10).map(|_| random_dist(&mut rng, 2)).collect();
            let a = entropy_select(&ids, &probs, 10).unwrap();
            let b = margin_select(&ids, &probs, 10).unwrap();
            assert_eq!(a.ids, b.ids);
        }
    }

    #[test]
    fn kcenter_picks_uncovered_cluster() {
        let ids = vec![0, 1, 2, 3];
        // Two tight clusters; the labeled seed covers the first.
        let embeddings = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
        ];
        let seeds = vec![vec![0.05, 0.0]];
        let r = kcenter_select(&ids, &embeddings, &seeds, 1).unwrap();
        assert!(r.ids[0] == 2 || r.ids[0] == 3);
    }

    #[test]
    fn kcenter_without_seeds_starts_at_lowest_id() {
        let ids = vec![4, 7, 9];
        let embeddings = vec![vec![0.0], vec![1.0], vec![2.0]];
        let r = kcenter_select(&ids, &embeddings, &[], 1).unwrap();
        assert_eq!(r.ids, vec![4]);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn kcenter_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ids: Vec<usize> = (0..12).collect();
        let embeddings: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let seeds: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let r = kcenter_select(&ids, &embeddings, &seeds, 3).unwrap();

        // Independent farthest-point loop.
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        };
        let mut centers: Vec<Vec<f64>> = seeds.clone();
        let mut picked: Vec<usize> = Vec::new();
        for _ in 0..3 {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for i in 0..12 {
                if picked.contains(&i) {
                    continue;
                }
                let d = centers
                    .iter()
                    .map(|c| dist(&embeddings[i], c))
                    .fold(f64::INFINITY, f64::min);
                if d > best.1 {
                    best = (i, d);
                }
            }
            picked.push(best.0);
            centers.push(embeddings[best.0].clone());
        }
        assert_eq!(r.ids, picked);
    }

    #[test]
    fn aada_reduces_to_entropy_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ids: Vec<usize> = (0..8).collect();
        let probs: Vec<ProbDist> = (0..8).map(|_| random_dist(&mut rng, 3)).collect();
        let disc = vec![0.5; 8];
        let a = aada_select(&ids, &probs, &disc, 8).unwrap();
        let b = entropy_select(&ids, &probs, 8).unwrap();
        assert_eq!(a.ids, b.ids);
    }

    #[test]
    fn aada_zero_entropy_scores_zero() {
        let ids = vec![0, 1];
        let probs = vec![dist(&[1.0, 0.0]), dist(&[0.6, 0.4])];
        let disc = vec![0.01, 0.99];
        let r = aada_select(&ids, &probs, &disc, 2).unwrap();
        assert_eq!(r.ids[0], 1);
        assert_eq!(r.steps[1].score, Some(0.0));
    }

    #[test]
    fn aada_matches_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ids: Vec<usize> = (0..10).collect();
        let probs: Vec<ProbDist> = (0..10).map(|_| random_dist(&mut rng, 4)).collect();
        let disc: Vec<f64> = (0..10).map(|_| rng.random_range(0.05..0.95)).collect();
        let r = aada_select(&ids, &probs, &disc, 10).unwrap();
        let score = |i: usize| {
            let d = disc[i].clamp(1e-6, 1.0 - 1e-6);
            entropy(&probs[i]) * (1.0 - d) / d
        };
        let mut expect: Vec<usize> = (0..10).collect();
        expect.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap());
        assert_eq!(r.ids, expect);
    }

    #[test]
    fn badge_deterministic_takes_largest_gradient_norm() {
        let ids = vec![0, 1, 2];
        // Candidate 0 is one-hot confident: zero gradient embedding.
        let probs = vec![dist(&[1.0, 0.0]), dist(&[0.6, 0.4]), dist(&[0.9, 0.1])];
        let embeddings = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        let r = badge_select_deterministic(&ids, &probs, &embeddings, 1).unwrap();
        // Norms: 0 for one-hot, 2*(0.4)^2 for the 0.6/0.4 candidate,
        // 2*(0.1)^2 for 0.9/0.1.
        assert_eq!(r.ids, vec![1]);
    }

    #[test]
    fn badge_never_draws_zero_weight_candidates() {
        let ids = vec![0, 1];
        let probs = vec![dist(&[1.0, 0.0]), dist(&[0.7, 0.3])];
        let embeddings = vec![vec![2.0], vec![2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = badge_select(&ids, &probs, &embeddings, 1, &mut rng).unwrap();
            assert_eq!(r.ids, vec![1]);
        }
    }

    #[test]
    fn badge_seeding_matches_hand_probabilities() {
        // Four candidates with distinct gradient-embedding norms; compare the
        // empirical first-draw frequencies with the exact weights.
        let ids = vec![0, 1, 2, 3];
        let probs = vec![
            dist(&[0.9, 0.1]),
            dist(&[0.8, 0.2]),
            dist(&[0.6, 0.4]),
            dist(&[0.55, 0.45]),
        ];
        let embeddings = vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]];
        // Gradient embedding for (p, 1-p) with argmax first: [p-1, 1-p],
        // squared norm 2(1-p)^2.
        let weights: Vec<f64> = [0.9f64, 0.8, 0.6, 0.55]
            .iter()
            .map(|p| 2.0 * (1.0 - p) * (1.0 - p))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0usize; 4];
        let trials = 20_000;
        for _ in 0..trials {
            let r = badge_select(&ids, &probs, &embeddings, 1, &mut rng).unwrap();
            counts[r.ids[0]] += 1;
        }
        for (c, w) in counts.iter().zip(&weights) {
            let freq = *c as f64 / trials as f64;
            assert!(
                (freq - w / total).abs() <= 0.02,
                "freq {freq} vs {}",
                w / total
            );
        }
    }

    #[test]
    fn all_samplers_return_distinct_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ids: Vec<usize> = (0..9).collect();
        let probs: Vec<ProbDist> = (0..9).map(|_| random_dist(&mut rng, 3)).collect();
        let embeddings: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let disc: Vec<f64> = (0..9).map(|_| rng.random_range(0.1..0.9)).collect();
        let reports = vec![
            random_select(&ids, 4, &mut rng).unwrap(),
            entropy_select(&ids, &probs, 4).unwrap(),
            margin_select(&ids, &probs, 4).unwrap(),
            kcenter_select(&ids, &embeddings, &[], 4).unwrap(),
            aada_select(&ids, &probs, &disc, 4).unwrap(),
            badge_select(&ids, &probs, &embeddings, 4, &mut rng).unwrap(),
            badge_select_deterministic(&ids, &probs, &embeddings, 4).unwrap(),
        ];
        for r in reports {
            assert_eq!(r.ids.len(), 4, "{}", r.sampler);
            let mut sorted = r.ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4, "{} returned duplicates", r.sampler);
        }
    }
}

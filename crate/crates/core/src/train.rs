//! Loss assembly and the per-cycle training loop.
//!
//! The optimized objective combines four terms:
//! supervised NLL on labeled data, an adversarial domain term routed through
//! gradient reversal, and smoothness + conditional-entropy terms enforcing
//! the cluster assumption on unlabeled data. Training uses uniform-rate SGD
//! with momentum and clips the global gradient norm to 1 before every step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    backward_classifier, backward_discriminator, backward_features, clip_gradients,
    forward_classifier_cached, forward_discriminator_cached, forward_features, sgd_step,
    GradientSet, NetParams, OptimState,
};
use crate::perturb::{prepare_vat, vat_term, FrozenVat, VatConfig};
use crate::prob::entropy_raw;

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Domain-adversarial term.
    pub lambda_d: f64,
    /// Smoothness term on the labeled pool.
    pub lambda_s: f64,
    /// Smoothness + conditional-entropy terms on the unlabeled pool.
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 0.01,
            lambda_s: 1.0,
            lambda_t: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_d < 0.0 || self.lambda_s < 0.0 || self.lambda_t < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Pure supervised fine-tuning (every auxiliary term switched off).
    pub fn supervised_only() -> Self {
        LossWeights {
            lambda_d: 0.0,
            lambda_s: 0.0,
            lambda_t: 0.0,
        }
    }
}

/// Optimization settings for one training phase.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Individual loss terms
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood over a labeled batch.
pub fn supervised_loss(
    params: &NetParams,
    xs: &[Vec<f64>],
    ys: &[usize],
) -> Result<(f64, GradientSet)> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("supervised batch is empty".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "supervised_loss labels",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let mut grads = GradientSet::zeros(&params.dims);
    let scale = 1.0 / xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        if y >= params.dims.classes {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {} classes",
                params.dims.classes
            )));
        }
        let feat = forward_features(params, x)?;
        let clf = forward_classifier_cached(params, &feat);
        loss -= clf.probs[y].max(1e-300).ln();
        let mut dlogits: Vec<f64> = clf.probs.iter().map(|p| scale * p).collect();
        dlogits[y] -= scale;
        let d_embed = backward_classifier(params, &feat, &dlogits, &mut grads);
        backward_features(params, &feat, &d_embed, &mut grads, false);
    }
    Ok((loss * scale, grads))
}

/// Mean prediction entropy over an unlabeled batch.
pub fn conditional_entropy_loss(params: &NetParams, xs: &[Vec<f64>]) -> Result<(f64, GradientSet)> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("entropy batch is empty".into()));
    }
    let mut grads = GradientSet::zeros(&params.dims);
    let scale = 1.0 / xs.len() as f64;
    let mut loss = 0.0;
    for x in xs {
        let feat = forward_features(params, x)?;
        let clf = forward_classifier_cached(params, &feat);
        let h = entropy_raw(&clf.probs);
        loss += h;
        // dH/dlogit_j = -p_j (ln p_j + H)
        let dlogits: Vec<f64> = clf
            .probs
            .iter()
            .map(|&p| {
                if p > 0.0 {
                    -scale * p * (p.ln() + h)
                } else {
                    0.0
                }
            })
            .collect();
        let d_embed = backward_classifier(params, &feat, &dlogits, &mut grads);
        backward_features(params, &feat, &d_embed, &mut grads, false);
    }
    Ok((loss * scale, grads))
}

/// Domain term with its gradient split by destination, so callers can route
/// the feature-extractor part adversarially.
#[derive(Debug)]
pub struct DomainTerm {
    pub value: f64,
    /// True gradient restricted to the discriminator blocks.
    pub discriminator_grads: GradientSet,
    /// True gradient restricted to the feature blocks (before any reversal).
    pub feature_grads: GradientSet,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy of the discriminator labeling the labeled pool 1 and
/// the unlabeled pool 0, averaged as the mean of the two per-side means.
pub fn domain_loss(
    params: &NetParams,
    labeled_xs: &[Vec<f64>],
    unlabeled_xs: &[Vec<f64>],
) -> Result<DomainTerm> {
    if labeled_xs.is_empty() || unlabeled_xs.is_empty() {
        return Err(Error::InvalidInput(
            "domain batches must both be non-empty".into(),
        ));
    }
    let mut disc_grads = GradientSet::zeros(&params.dims);
    let mut feat_grads = GradientSet::zeros(&params.dims);
    let mut value = 0.0;
    for (xs, is_labeled) in [(labeled_xs, true), (unlabeled_xs, false)] {
        let side_scale = 0.5 / xs.len() as f64;
        for x in xs {
            let feat = forward_features(params, x)?;
            let disc = forward_discriminator_cached(params, &feat);
            // -ln(sigma) = softplus(-t); -ln(1 - sigma) = softplus(t).
            let (nll, dlogit) = if is_labeled {
                (softplus(-disc.logit), disc.output - 1.0)
            } else {
                (softplus(disc.logit), disc.output)
            };
            value += side_scale * nll;
            // Discriminator-path gradients.
            let d_embed =
                backward_discriminator(params, &feat, &disc, side_scale * dlogit, &mut disc_grads);
            // The same chain continued into the feature extractor lands in a
            // separate gradient set so the caller can reverse it.
            backward_features(params, &feat, &d_embed, &mut feat_grads, false);
        }
    }
    Ok(DomainTerm {
        value,
        discriminator_grads: disc_grads,
        feature_grads: feat_grads,
    })
}

/// How the domain term's feature-path gradient enters the combined update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainGradMode {
    /// Adversarial training: discriminator blocks get the plain minimizing
    /// gradient, feature blocks get the reversed gradient scaled by lambda_d.
    Reversal,
    /// True gradient of the combined scalar (used by finite-difference
    /// verification): every block gets lambda_d times the plain gradient.
    Plain,
}

/// Batches plus frozen perturbations for one evaluation of the combined loss.
#[derive(Debug)]
pub struct TotalLossInputs<'a> {
    pub labeled_xs: &'a [Vec<f64>],
    pub labeled_ys: &'a [usize],
    pub unlabeled_xs: &'a [Vec<f64>],
    pub domain_labeled_xs: &'a [Vec<f64>],
    pub domain_unlabeled_xs: &'a [Vec<f64>],
    pub vat_labeled: &'a FrozenVat,
    pub vat_unlabeled: &'a FrozenVat,
}

/// Per-term values of one combined-loss evaluation.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    pub domain: f64,
    pub vat_labeled: f64,
    pub vat_unlabeled: f64,
    pub cond_entropy: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("supervised", self.supervised),
            ("domain", self.domain),
            ("vat-labeled", self.vat_labeled),
            ("vat-unlabeled", self.vat_unlabeled),
            ("conditional-entropy", self.cond_entropy),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Weighted sum of the four terms and the combined gradient.
///
/// Terms whose pools are empty contribute nothing: before any target samples
/// are labeled the smoothness term covers the source batch only, and the
/// domain term is skipped when either side is missing.
pub fn total_loss(
    params: &NetParams,
    inputs: &TotalLossInputs<'_>,
    weights: &LossWeights,
    mode: DomainGradMode,
) -> Result<(LossBreakdown, GradientSet)> {
    weights.validate()?;
    let mut grads = GradientSet::zeros(&params.dims);
    let mut breakdown = LossBreakdown::default();

    let (l_sup, g_sup) = supervised_loss(params, inputs.labeled_xs, inputs.labeled_ys)?;
    breakdown.supervised = l_sup;
    grads.add_scaled(&g_sup, 1.0);

    if !inputs.domain_labeled_xs.is_empty() && !inputs.domain_unlabeled_xs.is_empty() {
        let dom = domain_loss(params, inputs.domain_labeled_xs, inputs.domain_unlabeled_xs)?;
        breakdown.domain = dom.value;
        match mode {
            DomainGradMode::Reversal => {
                grads.add_scaled(&dom.discriminator_grads, 1.0);
                grads.add_scaled(&dom.feature_grads, -weights.lambda_d);
            }
            DomainGradMode::Plain => {
                grads.add_scaled(&dom.discriminator_grads, weights.lambda_d);
                grads.add_scaled(&dom.feature_grads, weights.lambda_d);
            }
        }
    }

    let (l_vl, g_vl) = vat_term(params, inputs.vat_labeled)?;
    breakdown.vat_labeled = l_vl;
    grads.add_scaled(&g_vl, weights.lambda_s);

    let (l_vu, g_vu) = vat_term(params, inputs.vat_unlabeled)?;
    breakdown.vat_unlabeled = l_vu;
    grads.add_scaled(&g_vu, weights.lambda_t);

    if !inputs.unlabeled_xs.is_empty() {
        let (l_ce, g_ce) = conditional_entropy_loss(params, inputs.unlabeled_xs)?;
        breakdown.cond_entropy = l_ce;
        grads.add_scaled(&g_ce, weights.lambda_t);
    }

    breakdown.total = breakdown.supervised
        + weights.lambda_d * breakdown.domain
        + weights.lambda_s * breakdown.vat_labeled
        + weights.lambda_t * (breakdown.vat_unlabeled + breakdown.cond_entropy);
    Ok((breakdown, grads))
}

/// Argmax-prediction accuracy; argmax ties resolve to the lowest class index.
pub fn accuracy(params: &NetParams, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("accuracy over an empty set".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let probs = crate::nn::forward_classifier(params, x)?;
        if probs.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / xs.len() as f64)
}

/// Fraction of domain labels the discriminator gets right on probe sets
/// (labeled pool scored as 1, unlabeled as 0, threshold 0.5).
pub fn domain_accuracy(
    params: &NetParams,
    labeled_xs: &[Vec<f64>],
    unlabeled_xs: &[Vec<f64>],
) -> Result<f64> {
    let total = labeled_xs.len() + unlabeled_xs.len();
    if total == 0 {
        return Err(Error::InvalidInput(
            "domain accuracy over empty sets".into(),
        ));
    }
    let mut correct = 0usize;
    for x in labeled_xs {
        if crate::nn::forward_discriminator(params, x)? >= 0.5 {
            correct += 1;
        }
    }
    for x in unlabeled_xs {
        if crate::nn::forward_discriminator(params, x)? < 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Shuffled index stream that reshuffles each wraparound.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl IndexStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        IndexStream { order, pos: 0, rng }
    }

    fn next_batch(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather(xs: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| xs[i].clone()).collect()
}

/// Per-epoch training means and the validation accuracy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub supervised: f64,
    pub domain: f64,
    pub vat_labeled: f64,
    pub vat_unlabeled: f64,
    pub cond_entropy: f64,
    pub total: f64,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct FitResult {
    /// Snapshot with the best validation accuracy.
    pub params: NetParams,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochStats>,
}

pub struct FitData<'a> {
    pub labeled_xs: &'a [Vec<f64>],
    pub labeled_ys: &'a [usize],
    pub unlabeled_xs: &'a [Vec<f64>],
    pub val_xs: &'a [Vec<f64>],
    pub val_ys: &'a [usize],
}

pub fn fit(
    initial: NetParams,
    data: &FitData<'_>,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
    vat_cfg: &VatConfig,
) -> Result<FitResult> {
    fit_observed(initial, data, train_cfg, weights, vat_cfg, |_, _, _| {})
}

/// Training loop with a per-epoch observer (epoch index, current parameters,
/// epoch stats). Deterministic per seed; an epoch is one pass over the
/// labeled stream.
pub fn fit_observed(
    initial: NetParams,
    data: &FitData<'_>,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
    vat_cfg: &VatConfig,
    mut observer: impl FnMut(usize, &NetParams, &EpochStats),
) -> Result<FitResult> {
    train_cfg.validate()?;
    weights.validate()?;
    vat_cfg.validate()?;
    if data.labeled_xs.is_empty() {
        return Err(Error::InvalidInput(
            "training needs a non-empty labeled pool".into(),
        ));
    }
    if data.labeled_xs.len() != data.labeled_ys.len() {
        return Err(Error::Dimension {
            context: "fit labeled pool",
            expected: data.labeled_xs.len(),
            actual: data.labeled_ys.len(),
        });
    }
    if data.val_xs.is_empty() {
        return Err(Error::InvalidInput(
            "training needs a validation split".into(),
        ));
    }

    let mut params = initial;
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;

    let n_lab = data.labeled_xs.len();
    let n_unlab = data.unlabeled_xs.len();
    let lab_batch = train_cfg.batch_size.min(n_lab);
    let unlab_batch = train_cfg.batch_size.min(n_unlab);
    let steps_per_epoch = n_lab.div_ceil(lab_batch);

    // Three independent shuffled streams: one feeding the supervised +
    // labeled-smoothness batch, one feeding the unlabeled terms and one pair
    // feeding the discriminator.
    let mut lab_stream = IndexStream::new(n_lab, train_cfg.seed.wrapping_add(0x5EED_0001));
    let mut unlab_stream =
        IndexStream::new(n_unlab.max(1), train_cfg.seed.wrapping_add(0x5EED_0002));
    let mut disc_lab_stream = IndexStream::new(n_lab, train_cfg.seed.wrapping_add(0x5EED_0003));
    let mut disc_unlab_stream =
        IndexStream::new(n_unlab.max(1), train_cfg.seed.wrapping_add(0x5EED_0004));
    let mut vat_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(0x5EED_0005));

    let mut opt = OptimState::new(
        &params.dims,
        train_cfg.learning_rate,
        train_cfg.momentum,
        train_cfg.weight_decay,
    );

    for epoch in 1..=train_cfg.epochs {
        let mut sums = LossBreakdown::default();
        for step in 0..steps_per_epoch {
            let lab_idx = lab_stream.next_batch(lab_batch);
            let lab_xs = gather(data.labeled_xs, &lab_idx);
            let lab_ys: Vec<usize> = lab_idx.iter().map(|&i| data.labeled_ys[i]).collect();

            let (unlab_xs, disc_unlab_xs) = if n_unlab > 0 {
                (
                    gather(data.unlabeled_xs, &unlab_stream.next_batch(unlab_batch)),
                    gather(
                        data.unlabeled_xs,
                        &disc_unlab_stream.next_batch(unlab_batch),
                    ),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            let disc_lab_xs = gather(data.labeled_xs, &disc_lab_stream.next_batch(lab_batch));

            // Smoothness perturbations are only worth computing when their
            // term carries weight.
            let vat_labeled = if weights.lambda_s > 0.0 {
                prepare_vat(&params, &lab_xs, vat_cfg, &mut vat_rng)?
            } else {
                FrozenVat::empty()
            };
            let vat_unlabeled = if weights.lambda_t > 0.0 && !unlab_xs.is_empty() {
                prepare_vat(&params, &unlab_xs, vat_cfg, &mut vat_rng)?
            } else {
                FrozenVat::empty()
            };

            let inputs = TotalLossInputs {
                labeled_xs: &lab_xs,
                labeled_ys: &lab_ys,
                unlabeled_xs: if weights.lambda_t > 0.0 {
                    &unlab_xs
                } else {
                    &[]
                },
                domain_labeled_xs: if weights.lambda_d > 0.0 {
                    &disc_lab_xs
                } else {
                    &[]
                },
                domain_unlabeled_xs: if weights.lambda_d > 0.0 {
                    &disc_unlab_xs
                } else {
                    &[]
                },
                vat_labeled: &vat_labeled,
                vat_unlabeled: &vat_unlabeled,
            };
            let (breakdown, mut grads) =
                total_loss(&params, &inputs, weights, DomainGradMode::Reversal)?;
            if let Some(term) = breakdown.non_finite_term() {
                return Err(Error::NonFinite { term, epoch, step });
            }
            if !grads.all_finite() {
                return Err(Error::NonFinite {
                    term: "gradient",
                    epoch,
                    step,
                });
            }
            let pre_clip = clip_gradients(&mut grads, train_cfg.clip_norm);
            debug_assert!(pre_clip / grads.global_norm().max(1e-300) >= 1.0 - 1e-12);
            debug_assert!(grads.global_norm() <= train_cfg.clip_norm + 1e-9);
            sgd_step(&mut params, &grads, &mut opt);

            sums.total += breakdown.total;
            sums.supervised += breakdown.supervised;
            sums.domain += breakdown.domain;
            sums.vat_labeled += breakdown.vat_labeled;
            sums.vat_unlabeled += breakdown.vat_unlabeled;
            sums.cond_entropy += breakdown.cond_entropy;
        }
        let inv = 1.0 / steps_per_epoch as f64;
        let val_accuracy = accuracy(&params, data.val_xs, data.val_ys)?;
        let stats = EpochStats {
            epoch,
            supervised: sums.supervised * inv,
            domain: sums.domain * inv,
            vat_labeled: sums.vat_labeled * inv,
            vat_unlabeled: sums.vat_unlabeled * inv,
            cond_entropy: sums.cond_entropy * inv,
            total: sums.total * inv,
            val_accuracy,
        };
        observer(epoch, &params, &stats);
        history.push(stats);
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_epoch = epoch;
            best = params.clone();
        }
    }

    if train_cfg.epochs == 0 {
        best_acc = accuracy(&best, data.val_xs, data.val_ys)?;
    }
    Ok(FitResult {
        params: best,
        best_epoch,
        best_val_accuracy: best_acc,
        history,
    })
}

/// Writes the per-epoch loss terms and validation accuracy as CSV.
pub fn write_history_csv(history: &[EpochStats], mut w: impl std::io::Write) -> Result<()> {
    let header =
        "epoch,supervised,domain,vat_labeled,vat_unlabeled,cond_entropy,total,val_accuracy\n";
    w.write_all(header.as_bytes())
        .map_err(|e| Error::io("writing history csv", e))?;
    for s in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.epoch,
            s.supervised,
            s.domain,
            s.vat_labeled,
            s.vat_unlabeled,
            s.cond_entropy,
            s.total,
            s.val_accuracy
        )
        .map_err(|e| Error::io("writing history csv", e))?;
    }
    Ok(())
}

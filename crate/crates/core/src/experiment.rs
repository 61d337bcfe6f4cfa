//! The active-adaptation cycle loop: train, select a batch, query the
//! oracle, move samples from the unlabeled to the labeled target pool and
//! retrain, for a configured number of cycles, recording per-cycle metrics.
//!
//! Cycle 0 is the initial training with an empty labeled-target pool; each
//! later cycle selects, labels and retrains. Hidden oracle labels live behind
//! [`Pools`] and are reachable only through [`Pools::oracle_label`], so
//! selection cannot observe them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines;
use crate::data::{
    gen_blobs_shift, gen_two_moons_shift, read_dataset_csv, split_train_val, Dataset, Standardizer,
};
use crate::error::{Error, Result};
use crate::nn::{embedding, forward_classifier, forward_discriminator, NetDims, NetParams};
use crate::perturb::{make_bundle, VatConfig};
use crate::submodular::{greedy_select, CandidatePool, MixWeights, SelectionReport};
use crate::train::{fit, EpochStats, FitData, LossWeights, TrainConfig};

/// splitmix64-style seed derivation for independent deterministic streams.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Submodular,
    Random,
    Entropy,
    Margin,
    KCenter,
    Aada,
    Badge,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "submodular" => Ok(SamplerKind::Submodular),
            "random" => Ok(SamplerKind::Random),
            "entropy" => Ok(SamplerKind::Entropy),
            "margin" => Ok(SamplerKind::Margin),
            "kcenter" => Ok(SamplerKind::KCenter),
            "aada" => Ok(SamplerKind::Aada),
            "badge" => Ok(SamplerKind::Badge),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampler {other:?} (expected submodular|random|entropy|margin|kcenter|aada|badge)"
            ))),
        }
    }
}

/// Widths of the model; input dim and class count come from the data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub hidden: usize,
    pub embed: usize,
    pub disc_hidden: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            hidden: 32,
            embed: 16,
            disc_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_n_per_domain")]
        n_per_domain: usize,
        #[serde(default = "default_rotation")]
        rotation_deg: f64,
        #[serde(default = "default_noise")]
        noise_sd: f64,
        /// Held-out target test draw; defaults to `n_per_domain`.
        #[serde(default)]
        n_test: Option<usize>,
    },
    Blobs {
        #[serde(default = "default_n_per_domain")]
        n_per_domain: usize,
        #[serde(default = "default_blob_classes")]
        classes: usize,
        #[serde(default = "default_blob_dim")]
        dim: usize,
        #[serde(default = "default_blob_shift")]
        mean_shift: f64,
        #[serde(default)]
        n_test: Option<usize>,
    },
    Files {
        source: PathBuf,
        target: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
}

fn default_n_per_domain() -> usize {
    500
}
fn default_rotation() -> f64 {
    30.0
}
fn default_noise() -> f64 {
    0.1
}
fn default_blob_classes() -> usize {
    3
}
fn default_blob_dim() -> usize {
    4
}
fn default_blob_shift() -> f64 {
    2.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n_per_domain: default_n_per_domain(),
            rotation_deg: default_rotation(),
            noise_sd: default_noise(),
            n_test: None,
        }
    }
}

/// A full experiment description; every field defaults to the stock
/// configuration so a minimal JSON file runs the standard two-moons loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub sampler: SamplerKind,
    /// Per-cycle budget as a fraction of the target training pool, resolved
    /// once at the start of the run.
    pub budget_fraction: f64,
    /// Total cycle count including the initial cycle-0 training.
    pub cycles: usize,
    pub mix: MixWeights,
    pub loss_weights: LossWeights,
    pub train: TrainConfig,
    pub vat: VatConfig,
    pub net: NetShape,
    /// Fraction of the target pool kept for training (the rest validates).
    pub val_split: f64,
    /// Re-initialize the model each cycle instead of warm-starting from the
    /// previous cycle's best checkpoint.
    pub cold_start: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            sampler: SamplerKind::Submodular,
            budget_fraction: 0.02,
            cycles: 5,
            mix: MixWeights::default(),
            loss_weights: LossWeights::default(),
            train: TrainConfig::default(),
            vat: VatConfig::default(),
            net: NetShape::default(),
            val_split: 0.8,
            cold_start: false,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0) {
            return Err(Error::InvalidConfig("budget_fraction must be > 0".into()));
        }
        if self.cycles < 1 {
            return Err(Error::InvalidConfig("cycles must be >= 1".into()));
        }
        if !(0.0 < self.val_split && self.val_split < 1.0) {
            return Err(Error::InvalidConfig("val_split must be in (0, 1)".into()));
        }
        self.mix.validate()?;
        self.loss_weights.validate()?;
        self.train.validate()?;
        self.vat.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pools
// ---------------------------------------------------------------------------

/// Sample pools of one run. Ground-truth labels for the unlabeled pool are
/// private: the only way to read them is [`Pools::oracle_label`], which
/// audits every query.
#[derive(Debug, Clone)]
pub struct Pools {
    pub source_xs: Vec<Vec<f64>>,
    pub source_ys: Vec<usize>,
    pub target_labeled_ids: Vec<usize>,
    pub target_labeled_xs: Vec<Vec<f64>>,
    pub target_labeled_ys: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
    pub unlabeled_xs: Vec<Vec<f64>>,
    pub val_xs: Vec<Vec<f64>>,
    pub val_ys: Vec<usize>,
    pub test_xs: Vec<Vec<f64>>,
    pub test_ys: Vec<usize>,
    pub classes: usize,
    hidden_labels: Vec<usize>,
    target_train_size: usize,
    labels_issued: usize,
}

impl Pools {
    pub fn new(
        source: &Dataset,
        target_train: &Dataset,
        target_val: &Dataset,
        target_test: &Dataset,
    ) -> Result<Self> {
        for ds in [source, target_train, target_val, target_test] {
            ds.validate()?;
        }
        Ok(Pools {
            source_xs: source.features.clone(),
            source_ys: source.labels.clone(),
            target_labeled_ids: Vec::new(),
            target_labeled_xs: Vec::new(),
            target_labeled_ys: Vec::new(),
            unlabeled_ids: (0..target_train.len()).collect(),
            unlabeled_xs: target_train.features.clone(),
            val_xs: target_val.features.clone(),
            val_ys: target_val.labels.clone(),
            test_xs: target_test.features.clone(),
            test_ys: target_test.labels.clone(),
            classes: source.classes,
            hidden_labels: target_train.labels.clone(),
            target_train_size: target_train.len(),
            labels_issued: 0,
        })
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_ids.len()
    }

    pub fn n_labeled_target(&self) -> usize {
        self.target_labeled_ids.len()
    }

    pub fn target_train_size(&self) -> usize {
        self.target_train_size
    }

    /// Total labels handed out by the oracle so far.
    pub fn labels_issued(&self) -> usize {
        self.labels_issued
    }

    /// Ground-truth labels for ids currently in the unlabeled pool; querying
    /// anything else is a hard error (a selection leak).
    pub fn oracle_label(&mut self, ids: &[usize]) -> Result<Vec<usize>> {
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            if !self.unlabeled_ids.contains(&id) {
                return Err(Error::OracleOutOfPool(id));
            }
            labels.push(self.hidden_labels[id]);
        }
        self.labels_issued += ids.len();
        Ok(labels)
    }

    /// Moves freshly labeled samples from the unlabeled to the labeled pool.
    pub fn promote(&mut self, ids: &[usize], labels: &[usize]) -> Result<()> {
        if ids.len() != labels.len() {
            return Err(Error::Dimension {
                context: "promote labels",
                expected: ids.len(),
                actual: labels.len(),
            });
        }
        for (&id, &label) in ids.iter().zip(labels) {
            let pos = self
                .unlabeled_ids
                .iter()
                .position(|&u| u == id)
                .ok_or(Error::OracleOutOfPool(id))?;
            self.unlabeled_ids.remove(pos);
            let x = self.unlabeled_xs.remove(pos);
            self.target_labeled_ids.push(id);
            self.target_labeled_xs.push(x);
            self.target_labeled_ys.push(label);
        }
        Ok(())
    }

    /// Labeled features and labels across both domains.
    pub fn combined_labeled(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = self.source_xs.clone();
        xs.extend(self.target_labeled_xs.iter().cloned());
        let mut ys = self.source_ys.clone();
        ys.extend(self.target_labeled_ys.iter().copied());
        (xs, ys)
    }

    /// Audit hook: shuffles the hidden oracle labels in place. Selection
    /// outputs must not change when this runs before a selection step.
    pub fn permute_hidden_labels(&mut self, rng: &mut impl Rng) {
        use rand::seq::SliceRandom;
        self.hidden_labels.shuffle(rng);
    }

    /// Checks the pool partition: labeled and unlabeled target ids are
    /// disjoint and together cover the initial target training set.
    pub fn check_partition(&self) -> Result<()> {
        let mut all: Vec<usize> = self
            .target_labeled_ids
            .iter()
            .chain(self.unlabeled_ids.iter())
            .copied()
            .collect();
        all.sort_unstable();
        let expected: Vec<usize> = (0..self.target_train_size).collect();
        if all != expected {
            return Err(Error::InvalidInput(
                "labeled/unlabeled pools no longer partition the target training set".into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of argmax-correct predictions on a labeled set.
pub fn evaluate(params: &NetParams, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64> {
    crate::train::accuracy(params, xs, ys)
}

// ---------------------------------------------------------------------------
// Selection dispatch
// ---------------------------------------------------------------------------

/// Runs the configured sampler against the current model and unlabeled pool.
/// This is a pure function of (model, pool features, seed): hidden labels
/// are not an input.
pub fn select_batch(
    pools: &Pools,
    params: &NetParams,
    sampler: SamplerKind,
    mix: &MixWeights,
    vat_cfg: &VatConfig,
    budget: usize,
    seed: u64,
) -> Result<SelectionReport> {
    let ids = &pools.unlabeled_ids;
    let xs = &pools.unlabeled_xs;
    if ids.is_empty() {
        return Err(Error::InvalidInput("unlabeled pool is empty".into()));
    }
    match sampler {
        SamplerKind::Submodular => {
            let mut bundles = Vec::with_capacity(xs.len());
            for (&id, x) in ids.iter().zip(xs) {
                // Independent per-sample streams keep bundles reproducible
                // regardless of pool order.
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id as u64));
                bundles.push(make_bundle(params, x, vat_cfg, &mut rng)?);
            }
            let pool = CandidatePool::from_bundles(ids.clone(), &bundles)?;
            greedy_select(&pool, budget, mix)
        }
        SamplerKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7A4D));
            baselines::random_select(ids, budget, &mut rng)
        }
        SamplerKind::Entropy => {
            let probs = classifier_outputs(params, xs)?;
            baselines::entropy_select(ids, &probs, budget)
        }
        SamplerKind::Margin => {
            let probs = classifier_outputs(params, xs)?;
            baselines::margin_select(ids, &probs, budget)
        }
        SamplerKind::KCenter => {
            let embeddings = embeddings_of(params, xs)?;
            let (labeled_xs, _) = pools.combined_labeled();
            let seeds = embeddings_of(params, &labeled_xs)?;
            baselines::kcenter_select(ids, &embeddings, &seeds, budget)
        }
        SamplerKind::Aada => {
            let probs = classifier_outputs(params, xs)?;
            let disc = xs
                .iter()
                .map(|x| forward_discriminator(params, x))
                .collect::<Result<Vec<f64>>>()?;
            baselines::aada_select(ids, &probs, &disc, budget)
        }
        SamplerKind::Badge => {
            let probs = classifier_outputs(params, xs)?;
            let embeddings = embeddings_of(params, xs)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xBAD6E));
            baselines::badge_select(ids, &probs, &embeddings, budget, &mut rng)
        }
    }
}

fn classifier_outputs(params: &NetParams, xs: &[Vec<f64>]) -> Result<Vec<crate::prob::ProbDist>> {
    xs.iter().map(|x| forward_classifier(params, x)).collect()
}

fn embeddings_of(params: &NetParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|x| embedding(params, x)).collect()
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

pub struct ExperimentData {
    pub source_train: Dataset,
    pub target_train: Dataset,
    pub target_val: Dataset,
    pub target_test: Dataset,
    pub input_hash: String,
}

fn hash_datasets(datasets: &[&Dataset]) -> String {
    let mut hasher = Sha256::new();
    for ds in datasets {
        hasher.update((ds.len() as u64).to_le_bytes());
        hasher.update((ds.dim() as u64).to_le_bytes());
        hasher.update((ds.classes as u64).to_le_bytes());
        for (row, &label) in ds.features.iter().zip(&ds.labels) {
            for v in row {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update((label as u64).to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates or loads the datasets, splits the target side into a training
/// pool, a validation split and a test set, and standardizes every pool with
/// source-train statistics.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let (source, target_pool, target_test) = match &cfg.dataset {
        DatasetSpec::TwoMoons {
            n_per_domain,
            rotation_deg,
            noise_sd,
            n_test,
        } => {
            // Draw pool + test together for the target, then carve off the
            // held-out test set with a stratified split.
            let n_test = n_test.unwrap_or(*n_per_domain);
            let total = n_per_domain + n_test;
            let (source, target_full) =
                gen_two_moons_shift(total, *rotation_deg, *noise_sd, cfg.seed)?;
            let source = truncate(source, *n_per_domain);
            let frac = *n_per_domain as f64 / total as f64;
            let (pool, test) = split_train_val(&target_full, frac, mix_seed(cfg.seed, 0x7E57))?;
            (source, pool, test)
        }
        DatasetSpec::Blobs {
            n_per_domain,
            classes,
            dim,
            mean_shift,
            n_test,
        } => {
            let n_test = n_test.unwrap_or(*n_per_domain);
            let total = n_per_domain + n_test;
            let (source, target_full) =
                gen_blobs_shift(total, *classes, *dim, *mean_shift, cfg.seed)?;
            let source = truncate(source, *n_per_domain);
            let frac = *n_per_domain as f64 / total as f64;
            let (pool, test) = split_train_val(&target_full, frac, mix_seed(cfg.seed, 0x7E57))?;
            (source, pool, test)
        }
        DatasetSpec::Files {
            source,
            target,
            test,
        } => {
            let src = read_dataset_csv(source)?;
            let tgt = read_dataset_csv(target)?;
            if src.classes != tgt.classes || src.dim() != tgt.dim() {
                return Err(Error::InvalidInput(
                    "source and target datasets disagree on classes or feature dim".into(),
                ));
            }
            let test_ds = match test {
                Some(path) => Some(read_dataset_csv(path)?),
                None => None,
            };
            match test_ds {
                Some(t) => (src, tgt, t),
                None => {
                    log::warn!("no test dataset supplied; the validation split doubles as test");
                    let placeholder = Dataset {
                        features: Vec::new(),
                        labels: Vec::new(),
                        ..tgt.clone()
                    };
                    (src, tgt, placeholder)
                }
            }
        }
    };

    let (mut target_train, mut target_val) =
        split_train_val(&target_pool, cfg.val_split, mix_seed(cfg.seed, 0x5137))?;
    let mut target_test = if target_test.is_empty() {
        target_val.clone()
    } else {
        target_test
    };

    let mut source_train = source;
    let input_hash = hash_datasets(&[&source_train, &target_train, &target_val, &target_test]);

    let standardizer = Standardizer::fit(&source_train)?;
    for ds in [
        &mut source_train,
        &mut target_train,
        &mut target_val,
        &mut target_test,
    ] {
        standardizer.apply(ds);
    }

    Ok(ExperimentData {
        source_train,
        target_train,
        target_val,
        target_test,
        input_hash,
    })
}

fn truncate(mut ds: Dataset, n: usize) -> Dataset {
    // Generators emit class-contiguous rows for blobs, so subsample evenly by
    // stride to keep classes balanced.
    if ds.len() <= n {
        return ds;
    }
    let stride = ds.len() as f64 / n as f64;
    let idx: Vec<usize> = (0..n).map(|i| (i as f64 * stride) as usize).collect();
    ds.features = idx.iter().map(|&i| ds.features[i].clone()).collect();
    ds.labels = idx.iter().map(|&i| ds.labels[i]).collect();
    ds
}

// ---------------------------------------------------------------------------
// The cycle loop
// ---------------------------------------------------------------------------

/// Everything recorded about one cycle.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub cycle: usize,
    pub n_labeled: usize,
    pub test_accuracy: f64,
    /// Wall-clock selection time; zero for the initial cycle. Not covered by
    /// the determinism contract.
    pub selection_ms: f64,
    pub selected_ids: Vec<usize>,
    pub selection: Option<SelectionReport>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

#[derive(Debug)]
pub struct RunResult {
    pub cycles: Vec<CycleRecord>,
    pub budget_per_cycle: usize,
    pub input_hash: String,
    pub final_params: NetParams,
    /// Oracle audit: total ground-truth labels handed out over the run.
    pub labels_issued: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    let data = prepare_data(cfg)?;
    run_experiment_on(cfg, &data)
}

/// Runs the cycle loop on pre-built datasets (exposed so paired experiments
/// can share one data preparation).
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<RunResult> {
    cfg.validate()?;
    let mut pools = Pools::new(
        &data.source_train,
        &data.target_train,
        &data.target_val,
        &data.target_test,
    )?;
    let budget = (cfg.budget_fraction * pools.target_train_size() as f64).round() as usize;
    let dims = NetDims::new(
        data.source_train.dim(),
        cfg.net.hidden,
        cfg.net.embed,
        cfg.net.disc_hidden,
        pools.classes,
    );
    dims.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x1217));
    let initial = NetParams::init(dims, &mut init_rng)?;

    let mut records = Vec::with_capacity(cfg.cycles);
    let mut current = initial.clone();

    for cycle in 0..cfg.cycles {
        let (selection, selection_ms) = if cycle == 0 {
            (None, 0.0)
        } else {
            if budget == 0 {
                // Degenerate budget: the loop reduces to the initial
                // unsupervised adaptation.
                log::warn!("budget rounds to 0; skipping selection cycles");
                break;
            }
            if pools.n_unlabeled() == 0 {
                log::warn!("unlabeled pool exhausted at cycle {cycle}; stopping early");
                break;
            }
            let start = Instant::now();
            let report = select_batch(
                &pools,
                &current,
                cfg.sampler,
                &cfg.mix,
                &cfg.vat,
                budget.min(pools.n_unlabeled()),
                mix_seed(cfg.seed, 0x5E1E_C700 + cycle as u64),
            )?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let labels = pools.oracle_label(&report.ids)?;
            pools.promote(&report.ids, &labels)?;
            (Some(report), elapsed)
        };

        let start_params = if cfg.cold_start && cycle > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xC01D + cycle as u64));
            NetParams::init(dims, &mut rng)?
        } else {
            current.clone()
        };
        let (labeled_xs, labeled_ys) = pools.combined_labeled();
        let train_cfg = TrainConfig {
            seed: mix_seed(cfg.seed, 0x7124_1100 + cycle as u64),
            ..cfg.train
        };
        let fit_out = fit(
            start_params,
            &FitData {
                labeled_xs: &labeled_xs,
                labeled_ys: &labeled_ys,
                unlabeled_xs: &pools.unlabeled_xs,
                val_xs: &pools.val_xs,
                val_ys: &pools.val_ys,
            },
            &train_cfg,
            &cfg.loss_weights,
            &cfg.vat,
        )?;
        current = fit_out.params;
        let test_accuracy = evaluate(&current, &pools.test_xs, &pools.test_ys)?;
        records.push(CycleRecord {
            cycle,
            n_labeled: pools.n_labeled_target(),
            test_accuracy,
            selection_ms,
            selected_ids: selection
                .as_ref()
                .map(|s| s.ids.clone())
                .unwrap_or_default(),
            selection,
            history: fit_out.history,
            best_epoch: fit_out.best_epoch,
            best_val_accuracy: fit_out.best_val_accuracy,
        });
        pools.check_partition()?;
    }

    Ok(RunResult {
        cycles: records,
        budget_per_cycle: budget,
        input_hash: data.input_hash.clone(),
        final_params: current,
        labels_issued: pools.labels_issued(),
    })
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Renders the per-cycle metrics CSV
/// (`cycle,n_labeled,test_accuracy,selection_ms`).
pub fn metrics_csv(records: &[CycleRecord]) -> String {
    let mut out = String::from("cycle,n_labeled,test_accuracy,selection_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.cycle, r.n_labeled, r.test_accuracy, r.selection_ms
        ));
    }
    out
}

#[derive(Serialize)]
struct ManifestCycle {
    cycle: usize,
    n_labeled: usize,
    test_accuracy: f64,
    selection_ms: f64,
    best_epoch: usize,
    best_val_accuracy: f64,
    selected_ids: Vec<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    budget_per_cycle: usize,
    input_hash: &'a str,
    config: &'a ExperimentConfig,
    cycles: Vec<ManifestCycle>,
}

/// Writes metrics.csv, manifest.json and the per-cycle history/selection
/// files into `dir`.
pub fn write_run_artifacts(dir: &Path, cfg: &ExperimentConfig, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&result.cycles))
        .map_err(|e| Error::io("writing metrics.csv", e))?;

    let manifest = Manifest {
        tool: "adasel",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        budget_per_cycle: result.budget_per_cycle,
        input_hash: &result.input_hash,
        config: cfg,
        cycles: result
            .cycles
            .iter()
            .map(|r| ManifestCycle {
                cycle: r.cycle,
                n_labeled: r.n_labeled,
                test_accuracy: r.test_accuracy,
                selection_ms: r.selection_ms,
                best_epoch: r.best_epoch,
                best_val_accuracy: r.best_val_accuracy,
                selected_ids: r.selected_ids.clone(),
            })
            .collect(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )
    .map_err(|e| Error::io("writing manifest.json", e))?;

    for r in &result.cycles {
        let mut buf = Vec::new();
        crate::train::write_history_csv(&r.history, &mut buf)?;
        std::fs::write(dir.join(format!("history_cycle{}.csv", r.cycle)), buf)
            .map_err(|e| Error::io("writing history csv", e))?;
        if let Some(selection) = &r.selection {
            std::fs::write(
                dir.join(format!("selection_cycle{}.json", r.cycle)),
                serde_json::to_string_pretty(selection)?,
            )
            .map_err(|e| Error::io("writing selection json", e))?;
        }
    }
    result
        .final_params
        .save_checkpoint(&dir.join("checkpoint.json"))?;
    Ok(())
}

//! Synthetic two-domain dataset generation, feature standardization and the
//! on-disk formats: dataset CSV, external score CSV (both with JSON sidecar
//! metadata) and score-file ingestion for model-free selection.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbDist;

/// Which side of the shift a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

/// Feature matrix with integer labels in `[0, classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain: Domain,
    pub classes: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidInput(
                "dataset needs at least 2 classes".into(),
            ));
        }
        if self.features.len() != self.labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: self.features.len(),
                actual: self.labels.len(),
            });
        }
        let d = self.dim();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Dimension {
                    context: "dataset feature row",
                    expected: d,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "row {i} holds non-finite features"
                )));
            }
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.classes)
        {
            return Err(Error::InvalidInput(format!(
                "label {l} at row {i} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Two interleaved half circles in 2D (class 0 centered at the origin, class
/// 1 at (1, 0.5)), plus Gaussian noise. The target domain is a fresh draw
/// from the same distribution rotated by `rotation_deg` about the origin.
pub fn gen_two_moons_shift(
    n_per_domain: usize,
    rotation_deg: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_per_domain < 4 {
        return Err(Error::InvalidConfig("two-moons needs n >= 4".into()));
    }
    if noise_sd < 0.0 {
        return Err(Error::InvalidConfig("noise_sd must be >= 0".into()));
    }
    let meta = |domain: Domain| DatasetMeta {
        generator: "two_moons_shift".into(),
        params: serde_json::json!({
            "n_per_domain": n_per_domain,
            "rotation_deg": rotation_deg,
            "noise_sd": noise_sd,
            "domain": domain.to_string(),
        }),
        seed,
    };

    let moons = |rng: &mut ChaCha8Rng| -> (Vec<Vec<f64>>, Vec<usize>) {
        let n0 = n_per_domain / 2;
        let mut features = Vec::with_capacity(n_per_domain);
        let mut labels = Vec::with_capacity(n_per_domain);
        for i in 0..n_per_domain {
            let t = rng.random::<f64>() * std::f64::consts::PI;
            let (x, y, label) = if i < n0 {
                (t.cos(), t.sin(), 0)
            } else {
                (1.0 - t.cos(), 0.5 - t.sin(), 1)
            };
            features.push(vec![x + noise_sd * normal(rng), y + noise_sd * normal(rng)]);
            labels.push(label);
        }
        (features, labels)
    };

    let mut src_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0A17));
    let (src_feats, src_labels) = moons(&mut src_rng);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0B29));
    let (tgt_feats, tgt_labels) = moons(&mut tgt_rng);

    let theta = rotation_deg.to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let rotated: Vec<Vec<f64>> = tgt_feats
        .iter()
        .map(|p| vec![cos_t * p[0] - sin_t * p[1], sin_t * p[0] + cos_t * p[1]])
        .collect();

    let source = Dataset {
        domain: Domain::Source,
        classes: 2,
        features: src_feats,
        labels: src_labels,
        meta: meta(Domain::Source),
    };
    let target = Dataset {
        domain: Domain::Target,
        classes: 2,
        features: rotated,
        labels: tgt_labels,
        meta: meta(Domain::Target),
    };
    Ok((source, target))
}

/// `classes` unit-variance Gaussian clusters in `dim` dimensions with means
/// drawn from N(0, 16 I); the target's cluster means are translated by
/// `mean_shift` along one random direction shared by all clusters. Class
/// counts are exactly balanced up to the division remainder.
pub fn gen_blobs_shift(
    n_per_domain: usize,
    classes: usize,
    dim: usize,
    mean_shift: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::InvalidConfig("blobs need classes >= 2".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidConfig("blobs need dim >= 2".into()));
    }
    if n_per_domain < classes {
        return Err(Error::InvalidConfig("blobs need n >= classes".into()));
    }
    let mut layout_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0C31));
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| 4.0 * normal(&mut layout_rng)).collect())
        .collect();
    let shift_dir = {
        let raw: Vec<f64> = (0..dim).map(|_| normal(&mut layout_rng)).collect();
        let n: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        raw.iter().map(|v| v / n).collect::<Vec<f64>>()
    };

    let meta = |domain: Domain| DatasetMeta {
        generator: "blobs_shift".into(),
        params: serde_json::json!({
            "n_per_domain": n_per_domain,
            "classes": classes,
            "dim": dim,
            "mean_shift": mean_shift,
            "domain": domain.to_string(),
        }),
        seed,
    };

    let sample = |rng: &mut ChaCha8Rng, shifted: bool| -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut features = Vec::with_capacity(n_per_domain);
        let mut labels = Vec::with_capacity(n_per_domain);
        let base = n_per_domain / classes;
        let remainder = n_per_domain % classes;
        for (class, mean) in means.iter().enumerate() {
            let count = base + usize::from(class < remainder);
            for _ in 0..count {
                let row: Vec<f64> = (0..dim)
                    .map(|j| {
                        let mut v = mean[j] + normal(rng);
                        if shifted {
                            v += mean_shift * shift_dir[j];
                        }
                        v
                    })
                    .collect();
                features.push(row);
                labels.push(class);
            }
        }
        (features, labels)
    };

    let mut src_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0D43));
    let (sf, sl) = sample(&mut src_rng, false);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0E57));
    let (tf, tl) = sample(&mut tgt_rng, true);

    Ok((
        Dataset {
            domain: Domain::Source,
            classes,
            features: sf,
            labels: sl,
            meta: meta(Domain::Source),
        },
        Dataset {
            domain: Domain::Target,
            classes,
            features: tf,
            labels: tl,
            meta: meta(Domain::Target),
        },
    ))
}

/// Stratified train/validation split. Per-class counts follow the largest
/// remainders so the overall split is exact; classes with fewer than two
/// members fall back to an unstratified split with a warning.
pub fn split_train_val(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.len() < 5 {
        return Err(Error::InvalidInput("split needs at least 5 samples".into()));
    }
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(
            "train fraction must be in (0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0F61));
    let n_train_total = (train_fraction * ds.len() as f64).round() as usize;

    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        per_class[l].push(i);
    }

    let stratifiable = per_class.iter().all(|c| c.is_empty() || c.len() >= 2);
    let mut train_idx: Vec<usize> = Vec::with_capacity(n_train_total);
    let mut val_idx: Vec<usize> = Vec::new();

    if stratifiable {
        // Largest-remainder apportionment of the train quota across classes.
        let quotas: Vec<f64> = per_class
            .iter()
            .map(|c| train_fraction * c.len() as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut leftover = n_train_total.saturating_sub(counts.iter().sum());
        let mut by_remainder: Vec<usize> = (0..ds.classes).collect();
        by_remainder.sort_by(|&a, &b| {
            (quotas[b] - quotas[b].floor())
                .partial_cmp(&(quotas[a] - quotas[a].floor()))
                .unwrap()
                .then(a.cmp(&b))
        });
        for &c in by_remainder.iter().cycle().take(ds.classes * 2) {
            if leftover == 0 {
                break;
            }
            if counts[c] < per_class[c].len() {
                counts[c] += 1;
                leftover -= 1;
            }
        }
        for (c, members) in per_class.iter().enumerate() {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            train_idx.extend(&shuffled[..counts[c].min(shuffled.len())]);
            val_idx.extend(&shuffled[counts[c].min(shuffled.len())..]);
        }
    } else {
        log::warn!("a class has fewer than 2 members; falling back to an unstratified split");
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        train_idx = all[..n_train_total].to_vec();
        val_idx = all[n_train_total..].to_vec();
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let subset = |idx: &[usize]| Dataset {
        domain: ds.domain,
        classes: ds.classes,
        features: idx.iter().map(|&i| ds.features[i].clone()).collect(),
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
        meta: ds.meta.clone(),
    };
    Ok((subset(&train_idx), subset(&val_idx)))
}

/// Per-dimension affine map to zero mean and unit variance, fitted on the
/// source training set only and then applied everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::InvalidInput(
                "cannot standardize an empty dataset".into(),
            ));
        }
        let d = ds.dim();
        let n = ds.len() as f64;
        let mut mean = vec![0.0; d];
        for row in &ds.features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &ds.features {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, sd })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, ds: &mut Dataset) {
        for row in &mut ds.features {
            *row = self.transform_row(row);
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetSidecar {
    classes: usize,
    dim: usize,
    rows: usize,
    domain: Domain,
    meta: DatasetMeta,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `id,domain,label,f0..f{d-1}` plus the `.meta.json` sidecar.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut out = String::new();
    out.push_str("id,domain,label");
    for j in 0..ds.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (i, (row, &label)) in ds.features.iter().zip(&ds.labels).enumerate() {
        out.push_str(&format!("{i},{},{label}", ds.domain));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let sidecar = DatasetSidecar {
        classes: ds.classes,
        dim: ds.dim(),
        rows: ds.len(),
        domain: ds.domain,
        meta: ds.meta.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)
        .map_err(|e| Error::io(format!("writing {}", sidecar_path(path).display()), e))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let sc_path = sidecar_path(path);
    let sidecar: DatasetSidecar = serde_json::from_str(
        &std::fs::read_to_string(&sc_path)
            .map_err(|e| Error::io(format!("reading {}", sc_path.display()), e))?,
    )?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let display = path.display().to_string();
    let mut features = Vec::with_capacity(sidecar.rows);
    let mut labels = Vec::with_capacity(sidecar.rows);
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 3 + sidecar.dim {
            return Err(Error::MalformedRow {
                path: display,
                row: row_idx,
                message: format!("expected {} columns, got {}", 3 + sidecar.dim, record.len()),
            });
        }
        let parse_field = |field: &str, what: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| Error::MalformedRow {
                path: path.display().to_string(),
                row: row_idx,
                message: format!("cannot parse {what} from {field:?}"),
            })
        };
        let label: usize = record[2].parse().map_err(|_| Error::MalformedRow {
            path: display.clone(),
            row: row_idx,
            message: format!("cannot parse label from {:?}", &record[2]),
        })?;
        if label >= sidecar.classes {
            return Err(Error::MalformedRow {
                path: display,
                row: row_idx,
                message: format!("label {label} out of range for {} classes", sidecar.classes),
            });
        }
        let mut row = Vec::with_capacity(sidecar.dim);
        for j in 0..sidecar.dim {
            row.push(parse_field(&record[3 + j], &format!("feature f{j}"))?);
        }
        features.push(row);
        labels.push(label);
    }
    let ds = Dataset {
        domain: sidecar.domain,
        classes: sidecar.classes,
        features,
        labels,
        meta: sidecar.meta,
    };
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// External score files
// ---------------------------------------------------------------------------

/// Tolerance for probability-block sums in external score files; blocks off
/// by more than the strict internal invariant but within this bound are
/// renormalized on load.
pub const SCORE_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreFileMeta {
    pub classes: usize,
    pub n_restarts: usize,
    /// Zero when no embedding columns are present.
    pub embedding_dim: usize,
    pub has_discriminator: bool,
}

#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub id: usize,
    pub original: ProbDist,
    pub perturbed: Vec<ProbDist>,
    pub embedding: Option<Vec<f64>>,
    pub discriminator: Option<f64>,
}

/// Model-free selection input: per-sample original and perturbed output
/// distributions, optionally embeddings and discriminator outputs.
#[derive(Debug, Clone)]
pub struct ExternalScores {
    pub meta: ScoreFileMeta,
    pub rows: Vec<ScoreRow>,
}

impl ExternalScores {
    pub fn ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.id).collect()
    }

    pub fn originals(&self) -> Vec<ProbDist> {
        self.rows.iter().map(|r| r.original.clone()).collect()
    }

    pub fn embeddings(&self) -> Option<Vec<Vec<f64>>> {
        if self.meta.embedding_dim == 0 {
            return None;
        }
        Some(
            self.rows
                .iter()
                .map(|r| r.embedding.clone().expect("validated embedding"))
                .collect(),
        )
    }

    pub fn discriminator_outputs(&self) -> Option<Vec<f64>> {
        if !self.meta.has_discriminator {
            return None;
        }
        Some(
            self.rows
                .iter()
                .map(|r| r.discriminator.expect("validated discriminator"))
                .collect(),
        )
    }
}

fn score_header(meta: &ScoreFileMeta) -> String {
    let mut cols = vec!["id".to_string()];
    for k in 0..meta.classes {
        cols.push(format!("p{k}"));
    }
    for q in 1..=meta.n_restarts {
        for k in 0..meta.classes {
            cols.push(format!("q{q}_{k}"));
        }
    }
    for e in 0..meta.embedding_dim {
        cols.push(format!("e{e}"));
    }
    if meta.has_discriminator {
        cols.push("disc".into());
    }
    cols.join(",")
}

/// Writes the score CSV `id,p0..,q1_0..,[e0..][,disc]` plus its sidecar.
pub fn write_external_scores(scores: &ExternalScores, path: &Path) -> Result<()> {
    let meta = &scores.meta;
    let mut out = String::new();
    out.push_str(&score_header(meta));
    out.push('\n');
    for row in &scores.rows {
        let mut fields: Vec<String> = vec![row.id.to_string()];
        fields.extend(row.original.values().iter().map(|v| v.to_string()));
        for q in &row.perturbed {
            fields.extend(q.values().iter().map(|v| v.to_string()));
        }
        if let Some(e) = &row.embedding {
            fields.extend(e.iter().map(|v| v.to_string()));
        }
        if let Some(d) = row.discriminator {
            fields.push(d.to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)
        .map_err(|e| Error::io(format!("writing {}", sidecar_path(path).display()), e))
}

/// Loads and validates an external score file; every violation names the row
/// and the broken invariant.
pub fn load_external_scores(path: &Path) -> Result<ExternalScores> {
    let sc_path = sidecar_path(path);
    let meta: ScoreFileMeta = serde_json::from_str(
        &std::fs::read_to_string(&sc_path)
            .map_err(|e| Error::io(format!("reading {}", sc_path.display()), e))?,
    )?;
    if meta.classes < 2 {
        return Err(Error::Schema {
            path: sc_path.display().to_string(),
            message: format!("classes must be >= 2, got {}", meta.classes),
        });
    }
    if meta.n_restarts == 0 {
        return Err(Error::Schema {
            path: sc_path.display().to_string(),
            message: "n_restarts must be >= 1".into(),
        });
    }
    let expected_cols = 1
        + meta.classes * (1 + meta.n_restarts)
        + meta.embedding_dim
        + usize::from(meta.has_discriminator);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let display = path.display().to_string();
    {
        let headers = reader.headers()?;
        if headers.len() != expected_cols {
            return Err(Error::Schema {
                path: display,
                message: format!(
                    "header declares {} columns but the sidecar implies {expected_cols} \
                     (classes={}, n_restarts={}, embedding_dim={}, disc={})",
                    headers.len(),
                    meta.classes,
                    meta.n_restarts,
                    meta.embedding_dim,
                    meta.has_discriminator
                ),
            });
        }
    }

    let malformed = |row: usize, message: String| Error::MalformedRow {
        path: path.display().to_string(),
        row,
        message,
    };
    let mut rows = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected_cols {
            return Err(malformed(
                row_idx,
                format!("expected {expected_cols} columns, got {}", record.len()),
            ));
        }
        let id = record[0]
            .parse::<usize>()
            .map_err(|_| malformed(row_idx, format!("cannot parse id from {:?}", &record[0])))?;
        if !seen_ids.insert(id) {
            return Err(malformed(row_idx, format!("duplicate id {id}")));
        }

        let mut cursor = 1usize;
        let mut next = |what: &str| -> Result<f64> {
            let field = &record[cursor];
            cursor += 1;
            field
                .parse::<f64>()
                .map_err(|_| malformed(row_idx, format!("cannot parse {what} from {field:?}")))
        };
        let block = |name: String, next: &mut dyn FnMut(&str) -> Result<f64>| -> Result<ProbDist> {
            let values: Vec<f64> = (0..meta.classes)
                .map(|k| next(&format!("{name} entry {k}")))
                .collect::<Result<_>>()?;
            ProbDist::renormalized(values, SCORE_SUM_TOL)
                .map_err(|e| malformed(row_idx, format!("{name}: {e}")))
        };
        let original = block("original probabilities".into(), &mut next)?;
        let mut perturbed = Vec::with_capacity(meta.n_restarts);
        for q in 1..=meta.n_restarts {
            perturbed.push(block(format!("perturbation block {q}"), &mut next)?);
        }
        let embedding = if meta.embedding_dim > 0 {
            Some(
                (0..meta.embedding_dim)
                    .map(|e| next(&format!("embedding entry {e}")))
                    .collect::<Result<Vec<f64>>>()?,
            )
        } else {
            None
        };
        let discriminator = if meta.has_discriminator {
            let d = next("discriminator output")?;
            if !(0.0..=1.0).contains(&d) {
                return Err(malformed(
                    row_idx,
                    format!("discriminator output {d} outside [0, 1]"),
                ));
            }
            Some(d)
        } else {
            None
        };
        rows.push(ScoreRow {
            id,
            original,
            perturbed,
            embedding,
            discriminator,
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema {
            path: display,
            message: "score file has no rows".into(),
        });
    }
    Ok(ExternalScores { meta, rows })
}

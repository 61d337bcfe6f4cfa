//! Central finite-difference verification of every loss term's analytic
//! gradient, on a tiny network. Bases whose rectifier pre-activations sit
//! closer than 1e-4 to a kink are rejected and redrawn so the difference
//! quotients stay valid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::{min_abs_preactivation, GradientSet, NetDims, NetParams};
use crate::perturb::{prepare_vat, vat_term, FrozenVat, VatConfig};
use crate::train::{
    conditional_entropy_loss, domain_loss, supervised_loss, total_loss, DomainGradMode,
    LossWeights, TotalLossInputs,
};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub dims: NetDims,
    pub seed: u64,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Fault-injection hook: perturb the named term's analytic gradient so
    /// the check must fail. Testing only.
    pub corrupt_term: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            dims: NetDims::new(2, 4, 3, 4, 3),
            seed: 0,
            batch: 4,
            step: 1e-5,
            tolerance: 1e-4,
            corrupt_term: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub term: String,
    pub max_rel_err: f64,
    pub params_checked: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub tolerance: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

fn check_term(
    name: &str,
    params: &NetParams,
    analytic: &GradientSet,
    scalar: &dyn Fn(&NetParams) -> Result<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckRow> {
    let corrupt = cfg.corrupt_term.as_deref() == Some(name);
    let mut max_rel: f64 = 0.0;
    let count = params.param_count();
    for i in 0..count {
        let base = params.get_flat(i);
        let mut plus = params.clone();
        plus.set_flat(i, base + cfg.step);
        let mut minus = params.clone();
        minus.set_flat(i, base - cfg.step);
        let fd = (scalar(&plus)? - scalar(&minus)?) / (2.0 * cfg.step);
        let mut an = analytic.get_flat(i);
        if corrupt && i == 0 {
            an += 0.01;
        }
        max_rel = max_rel.max(rel_err(an, fd));
    }
    Ok(GradCheckRow {
        term: name.to_string(),
        max_rel_err: max_rel,
        params_checked: count,
        pass: max_rel <= cfg.tolerance,
    })
}

struct Fixture {
    params: NetParams,
    labeled_xs: Vec<Vec<f64>>,
    labeled_ys: Vec<usize>,
    unlabeled_xs: Vec<Vec<f64>>,
    vat_labeled: FrozenVat,
    vat_unlabeled: FrozenVat,
}

/// Draws params and batches, rejecting bases with rectifier pre-activations
/// under 1e-4 at any evaluation point (original or perturbed inputs).
fn draw_fixture(cfg: &GradCheckConfig, vat_cfg: &VatConfig) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6AD_C11EC));
    loop {
        let params = NetParams::init(cfg.dims, &mut rng)?;
        let draw_batch = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..cfg.batch)
                .map(|_| {
                    (0..cfg.dims.input)
                        .map(|_| rng.random_range(-1.5..1.5))
                        .collect()
                })
                .collect()
        };
        let labeled_xs = draw_batch(&mut rng);
        let unlabeled_xs = draw_batch(&mut rng);
        let labeled_ys: Vec<usize> = (0..cfg.batch)
            .map(|_| rng.random_range(0..cfg.dims.classes))
            .collect();
        let vat_labeled = prepare_vat(&params, &labeled_xs, vat_cfg, &mut rng)?;
        let vat_unlabeled = prepare_vat(&params, &unlabeled_xs, vat_cfg, &mut rng)?;

        let mut eval_points = labeled_xs.clone();
        eval_points.extend(unlabeled_xs.iter().cloned());
        eval_points.extend(vat_labeled.perturbed_inputs.iter().cloned());
        eval_points.extend(vat_unlabeled.perturbed_inputs.iter().cloned());
        if min_abs_preactivation(&params, &eval_points)? >= 1e-4 {
            return Ok(Fixture {
                params,
                labeled_xs,
                labeled_ys,
                unlabeled_xs,
                vat_labeled,
                vat_unlabeled,
            });
        }
    }
}

/// Checks each term of the combined objective and the combined scalar itself
/// against central finite differences.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.dims.validate()?;
    let vat_cfg = VatConfig {
        epsilon: 0.5,
        ..VatConfig::default()
    };
    let weights = LossWeights::default();
    let fix = draw_fixture(cfg, &vat_cfg)?;
    let p = &fix.params;
    let mut rows = Vec::new();

    let (_, g_sup) = supervised_loss(p, &fix.labeled_xs, &fix.labeled_ys)?;
    rows.push(check_term(
        "supervised",
        p,
        &g_sup,
        &|q| Ok(supervised_loss(q, &fix.labeled_xs, &fix.labeled_ys)?.0),
        cfg,
    )?);

    let (_, g_ent) = conditional_entropy_loss(p, &fix.unlabeled_xs)?;
    rows.push(check_term(
        "conditional-entropy",
        p,
        &g_ent,
        &|q| Ok(conditional_entropy_loss(q, &fix.unlabeled_xs)?.0),
        cfg,
    )?);

    // The domain term is checked as a plain scalar: its full true gradient
    // (discriminator plus feature paths) against difference quotients. The
    // adversarial reversal is a routing decision on top of this gradient.
    let dom = domain_loss(p, &fix.labeled_xs, &fix.unlabeled_xs)?;
    let mut g_dom = dom.discriminator_grads;
    g_dom.add_scaled(&dom.feature_grads, 1.0);
    rows.push(check_term(
        "domain",
        p,
        &g_dom,
        &|q| Ok(domain_loss(q, &fix.labeled_xs, &fix.unlabeled_xs)?.value),
        cfg,
    )?);

    let (_, g_vl) = vat_term(p, &fix.vat_labeled)?;
    rows.push(check_term(
        "vat-labeled",
        p,
        &g_vl,
        &|q| Ok(vat_term(q, &fix.vat_labeled)?.0),
        cfg,
    )?);

    let (_, g_vu) = vat_term(p, &fix.vat_unlabeled)?;
    rows.push(check_term(
        "vat-unlabeled",
        p,
        &g_vu,
        &|q| Ok(vat_term(q, &fix.vat_unlabeled)?.0),
        cfg,
    )?);

    let combined_inputs = |_: &NetParams| TotalLossInputs {
        labeled_xs: &fix.labeled_xs,
        labeled_ys: &fix.labeled_ys,
        unlabeled_xs: &fix.unlabeled_xs,
        domain_labeled_xs: &fix.labeled_xs,
        domain_unlabeled_xs: &fix.unlabeled_xs,
        vat_labeled: &fix.vat_labeled,
        vat_unlabeled: &fix.vat_unlabeled,
    };
    let (_, g_total) = total_loss(p, &combined_inputs(p), &weights, DomainGradMode::Plain)?;
    rows.push(check_term(
        "combined",
        p,
        &g_total,
        &|q| {
            Ok(
                total_loss(q, &combined_inputs(q), &weights, DomainGradMode::Plain)?
                    .0
                    .total,
            )
        },
        cfg,
    )?);

    let pass = rows.iter().all(|r| r.pass);
    Ok(GradCheckReport {
        rows,
        tolerance: cfg.tolerance,
        pass,
    })
}

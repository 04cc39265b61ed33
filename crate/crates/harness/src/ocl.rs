//! Object-aware contrastive demo: gated class-query attention over a source
//! pyramid and its style-shifted twin, shared parameters, contrastive loss
//! and a finite-difference check of its gradient.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use styleadapt_core::attention::{run_encoder_side, AttentionParams, ClassQuerySet, TokenSequence};
use styleadapt_core::contrastive::{
    contrastive_loss, finite_difference_gradients, max_relative_error, ContrastiveBatch,
    ContrastiveOptions, LossReport,
};
use styleadapt_core::gating::{align_to_tokens, build_masks, Annotation, BoundingBox, GatingMaskSet};
use styleadapt_core::params::ParamStore;
use styleadapt_core::tensor::{DenseArray, FeatureMap};

use crate::annotations::AnnotationRecord;
use crate::config::RunConfig;
use crate::error::{write_file, HarnessError, Result};
use crate::report::Report;

pub const FD_FLOOR: f64 = 1e-4;
const CONTENT_NOISE: f64 = 0.1;

/// One annotated image seen in two domains.
#[derive(Debug, Clone, PartialEq)]
pub struct OclInput {
    pub annotation: Annotation,
    pub image_size: (usize, usize),
    pub source: Vec<FeatureMap>,
    pub augmented: Vec<FeatureMap>,
}

#[derive(Debug, Clone)]
pub struct OclOutcome {
    pub masks: GatingMaskSet,
    pub q_source: ClassQuerySet,
    pub q_augmented: ClassQuerySet,
    pub loss: LossReport,
    pub fd_max_relative_error: f64,
    pub params: Vec<AttentionParams>,
    pub report: Report,
}

/// A random annotation in which every category but the last has one or two
/// boxes, so the demo always shows an absent category when `C > 1`.
pub fn random_annotation(config: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Annotation> {
    let [h, w] = config.image_size;
    let (h, w) = (h as f64, w as f64);
    let present = if config.categories > 1 { config.categories - 1 } else { 1 };
    let mut ann = Annotation::default();
    for c in 0..present {
        for _ in 0..rng.random_range(1..=2) {
            let x0 = rng.random_range(0.0..w * 0.75);
            let y0 = rng.random_range(0.0..h * 0.75);
            let x1 = x0 + rng.random_range(1.0..w * 0.25 + 1.0);
            let y1 = y0 + rng.random_range(1.0..h * 0.25 + 1.0);
            ann.push(BoundingBox::new(x0, y0, x1, y1)?, c);
        }
    }
    Ok(ann)
}

/// Per-channel affine style `(gain, bias)`.
fn random_style(rng: &mut ChaCha8Rng, d: usize) -> Vec<(f64, f64)> {
    (0..d)
        .map(|_| (rng.random_range(0.6..1.4), rng.random_range(-0.3..0.3)))
        .collect()
}

/// Builds a source pyramid and a style-shifted copy with identical content.
/// Content is small seeded noise plus a per-category direction added on the
/// tokens covered by that category's boxes.
pub fn synthetic_ocl_input(config: &RunConfig, record: Option<&AnnotationRecord>) -> Result<OclInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0c1_de30);
    let (annotation, image_size) = match record {
        Some(r) => (r.annotation.clone(), (r.height, r.width)),
        None => (random_annotation(config, &mut rng)?, (config.image_size[0], config.image_size[1])),
    };
    let d = config.d;
    let levels: Vec<(usize, usize)> = config.ocl_levels.iter().map(|&[h, w]| (h, w)).collect();
    let masks = align_to_tokens(&build_masks(&annotation, image_size, config.categories)?, &levels)?;
    let scale = (d as f64).sqrt().recip();
    let directions: Vec<Vec<f64>> = (0..config.categories)
        .map(|_| (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let style_s = random_style(&mut rng, d);
    let style_a = random_style(&mut rng, d);

    let mut source = Vec::with_capacity(levels.len());
    let mut augmented = Vec::with_capacity(levels.len());
    let mut offset = 0;
    for &(h, w) in &levels {
        let mut content = vec![0.0; d * h * w];
        for v in content.iter_mut() {
            *v = CONTENT_NOISE * rng.sample::<f64, _>(StandardNormal);
        }
        for (cat, dir) in directions.iter().enumerate() {
            let tokens = &masks.attendable(cat)[offset..offset + h * w];
            for (pix, _) in tokens.iter().enumerate().filter(|(_, &t)| t) {
                for (c, &v) in dir.iter().enumerate() {
                    content[c * h * w + pix] += v;
                }
            }
        }
        offset += h * w;
        let styled = |style: &[(f64, f64)]| -> Result<FeatureMap> {
            let data = content
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let (g, b) = style[i / (h * w)];
                    g * v + b
                })
                .collect();
            Ok(FeatureMap::from_vec(1, d, h, w, data)?)
        };
        source.push(styled(&style_s)?);
        augmented.push(styled(&style_a)?);
    }
    Ok(OclInput { annotation, image_size, source, augmented })
}

fn check_input(config: &RunConfig, input: &OclInput) -> Result<Vec<(usize, usize)>> {
    let bad = |m: String| Err(HarnessError::InvalidArgument(m));
    if input.source.is_empty() || input.source.len() != input.augmented.len() {
        return bad(format!(
            "source has {} levels, augmented has {}",
            input.source.len(),
            input.augmented.len()
        ));
    }
    let (ih, iw) = input.image_size;
    let mut shapes = Vec::new();
    for (l, (s, a)) in input.source.iter().zip(&input.augmented).enumerate() {
        let dims = |f: &FeatureMap| (f.batch(), f.channels(), f.height(), f.width());
        if dims(s) != dims(a) {
            return bad(format!("level {l}: source {:?} and augmented {:?} differ", dims(s), dims(a)));
        }
        if s.channels() != config.d {
            return bad(format!("level {l}: {} channels but d = {}", s.channels(), config.d));
        }
        if s.height() > ih || s.width() > iw {
            return bad(format!(
                "level {l} ({}x{}) is larger than the annotated image ({ih}x{iw})",
                s.height(),
                s.width()
            ));
        }
        shapes.push((s.height(), s.width()));
    }
    Ok(shapes)
}

pub fn ocl_params(config: &RunConfig) -> Result<Vec<AttentionParams>> {
    (0..config.blocks)
        .map(|b| Ok(AttentionParams::seeded(config.d, config.heads, config.seed.wrapping_add(1 + b as u64))?))
        .collect()
}

fn row_norms(a: &DenseArray) -> Vec<f64> {
    (0..a.rows()).map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Runs the demo in memory.
pub fn ocl_demo(config: &RunConfig, input: &OclInput) -> Result<OclOutcome> {
    config.validate()?;
    let shapes = check_input(config, input)?;
    let masks = align_to_tokens(
        &build_masks(&input.annotation, input.image_size, config.categories)?,
        &shapes,
    )?;
    let params = ocl_params(config)?;
    let q0 = ClassQuerySet::seeded(config.categories, config.d, (config.d as f64).sqrt().recip(), config.seed);
    let seq_s = TokenSequence::from_pyramid(&input.source, 0)?;
    let seq_a = TokenSequence::from_pyramid(&input.augmented, 0)?;
    let q_source = run_encoder_side(&q0, &vec![seq_s; config.blocks], &masks, &params)?;
    let q_augmented = run_encoder_side(&q0, &vec![seq_a; config.blocks], &masks, &params)?;

    let present = masks.present().to_vec();
    let batch = ContrastiveBatch::new(q_source.as_array().clone(), q_augmented.as_array().clone(), present.clone())?;
    let options = ContrastiveOptions { normalize: config.normalize_queries };
    let loss = contrastive_loss(&batch, &options)?.with_detection_loss(config.l_det, config.lambda_c)?;
    let (fd_s, fd_a) = finite_difference_gradients(&batch, &options, config.fd_step)?;
    let fd_err = max_relative_error(&loss.grad_q_source, &fd_s, FD_FLOOR)?
        .max(max_relative_error(&loss.grad_q_augmented, &fd_a, FD_FLOOR)?);

    let n_present = present.iter().filter(|&&p| p).count();
    let mut report = Report::new("ocl-demo");
    report.push_count("categories", config.categories);
    report.push_count("present_categories", n_present);
    report.push_count("tokens", masks.token_len());
    report.push_count("blocks", config.blocks);
    report.push("l_contra", loss.l_contra, "nats");
    report.push("l_det", config.l_det, "1");
    report.push("lambda_c", config.lambda_c, "1");
    report.push("l_total", loss.l_total, "1");
    report.push("ln_c_present", (n_present as f64).ln(), "nats");
    report.push(
        "query_max_abs_diff",
        q_source.as_array().max_abs_diff(q_augmented.as_array())?,
        "1",
    );
    report.push("fd_step", config.fd_step, "1");
    report.push("fd_max_relative_error", fd_err, "ratio");
    let gs = row_norms(&loss.grad_q_source);
    let ga = row_norms(&loss.grad_q_augmented);
    for c in 0..config.categories {
        let p = format!("category{c}");
        report.push_flag(format!("{p}.present"), present[c]);
        report.push(format!("{p}.coverage"), masks.coverage(c), "fraction");
        report.push(format!("{p}.grad_norm_source"), gs[c], "1");
        report.push(format!("{p}.grad_norm_augmented"), ga[c], "1");
        report.push_flag(format!("{p}.zero_gradient"), gs[c] == 0.0 && ga[c] == 0.0);
    }
    Ok(OclOutcome {
        masks,
        q_source,
        q_augmented,
        loss,
        fd_max_relative_error: fd_err,
        params,
        report,
    })
}

/// Runs the demo and writes the report plus the attention parameters.
pub fn run_ocl_demo(config: &RunConfig, input: &OclInput, out_dir: &Path) -> Result<OclOutcome> {
    let outcome = ocl_demo(config, input)?;
    let mut store = ParamStore::new();
    for (b, p) in outcome.params.iter().enumerate() {
        p.write_to(&mut store, &format!("block{b}"));
    }
    write_file(&out_dir.join("ocl_params.satens"), &store.to_bytes())?;
    outcome.report.write(out_dir, "ocl_report", config)?;
    Ok(outcome)
}

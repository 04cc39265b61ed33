//! Class queries aggregated by masked multi-head cross-attention.
//!
//! One query row per category attends over the flattened multi-scale feature
//! tokens. Keys are `T + P` (tokens plus sine positions), values are `T`, and
//! each row only sees the tokens its gating mask marks attendable. A category
//! with no attendable token passes through unchanged.
//!
//! Weights act on row vectors: a projection is `x · W` with `W` shaped
//! `d_in × d_out`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gating::GatingMaskSet;
use crate::params::ParamStore;
use crate::tensor::{dot, softmax, DenseArray, FeatureMap};

pub const DEFAULT_HEADS: usize = 8;
pub const DEFAULT_MODEL_DIM: usize = 256;
const POSITION_TEMPERATURE: f64 = 10_000.0;

/// `C × d` matrix of class queries, one row per category.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassQuerySet {
    queries: DenseArray,
}

impl ClassQuerySet {
    pub fn new(queries: DenseArray) -> Result<Self> {
        if queries.ndim() != 2 {
            return Err(Error::arg("class queries must be a C x d matrix"));
        }
        Ok(Self { queries })
    }

    /// Uniform `[-scale, scale)` initialisation from a seed.
    pub fn seeded(categories: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            queries: DenseArray::from_fn(vec![categories, dim], |_| rng.random_range(-scale..scale)),
        }
    }

    pub fn categories(&self) -> usize {
        self.queries.rows()
    }

    pub fn dim(&self) -> usize {
        self.queries.cols()
    }

    pub fn row(&self, c: usize) -> &[f64] {
        self.queries.row(c)
    }

    pub fn as_array(&self) -> &DenseArray {
        &self.queries
    }

    pub fn into_array(self) -> DenseArray {
        self.queries
    }
}

/// Flattened feature tokens `T` with their positional encodings `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: DenseArray,
    positions: DenseArray,
    /// Start offset of every level followed by `N`.
    level_boundaries: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: DenseArray, positions: DenseArray, level_boundaries: Vec<usize>) -> Result<Self> {
        if tokens.ndim() != 2 || tokens.shape() != positions.shape() {
            return Err(Error::arg(format!(
                "tokens {:?} and positions {:?} must be equal N x d matrices",
                tokens.shape(),
                positions.shape()
            )));
        }
        let n = tokens.rows();
        let ok = level_boundaries.first() == Some(&0)
            && level_boundaries.last() == Some(&n)
            && level_boundaries.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::arg(format!(
                "level boundaries {level_boundaries:?} do not partition 0..{n}"
            )));
        }
        Ok(Self {
            tokens,
            positions,
            level_boundaries,
        })
    }

    /// Flattens sample `b` of every pyramid level (row index `h·W + w`,
    /// levels in order) and attaches sine positions. Channels must equal `d`.
    pub fn from_pyramid(pyramid: &[FeatureMap], b: usize) -> Result<Self> {
        let dim = pyramid
            .first()
            .map(FeatureMap::channels)
            .ok_or_else(|| Error::arg("empty pyramid"))?;
        let mut shapes = Vec::with_capacity(pyramid.len());
        let mut data = Vec::new();
        let mut bounds = vec![0];
        for level in pyramid {
            if level.channels() != dim {
                return Err(Error::arg("pyramid levels disagree on channel count"));
            }
            shapes.push((level.height(), level.width()));
            data.extend(level.tokens(b)?.into_data());
            bounds.push(bounds.last().unwrap() + level.spatial_len());
        }
        let n = *bounds.last().unwrap();
        let tokens = DenseArray::new(vec![n, dim], data)?;
        Self::new(tokens, sine_positions(&shapes, dim)?, bounds)
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn tokens(&self) -> &DenseArray {
        &self.tokens
    }

    pub fn positions(&self) -> &DenseArray {
        &self.positions
    }

    pub fn level_boundaries(&self) -> &[usize] {
        &self.level_boundaries
    }

    /// Same positions and boundaries, different token content.
    pub fn with_tokens(&self, tokens: DenseArray) -> Result<Self> {
        Self::new(tokens, self.positions.clone(), self.level_boundaries.clone())
    }
}

/// 2-D sine/cosine position encodings for every cell of every level.
///
/// Row layout is `[y-features (d/2) | x-features (d/2)]`. Coordinates are
/// normalised to `(0, 2π)` per level as `(i + 0.5) / extent · 2π`; feature
/// `k` of each half is `sin` (even `k`) or `cos` (odd `k`) of
/// `coord / 10000^(2⌊k/2⌋ / (d/2))`.
pub fn sine_positions(level_shapes: &[(usize, usize)], d: usize) -> Result<DenseArray> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::arg(format!("position dimension must be even, got {d}")));
    }
    let half = d / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| POSITION_TEMPERATURE.powf((2 * (k / 2)) as f64 / half as f64))
        .collect();
    let encode = |coord: f64, out: &mut Vec<f64>| {
        for (k, f) in freqs.iter().enumerate() {
            let v = coord / f;
            out.push(if k % 2 == 0 { v.sin() } else { v.cos() });
        }
    };
    let n: usize = level_shapes.iter().map(|(h, w)| h * w).sum();
    let mut data = Vec::with_capacity(n * d);
    for &(h, w) in level_shapes {
        for y in 0..h {
            let y_embed = (y as f64 + 0.5) / h as f64 * std::f64::consts::TAU;
            for x in 0..w {
                let x_embed = (x as f64 + 0.5) / w as f64 * std::f64::consts::TAU;
                encode(y_embed, &mut data);
                encode(x_embed, &mut data);
            }
        }
    }
    DenseArray::new(vec![n, d], data)
}

/// Projection weights of one cross-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: DenseArray,
    pub w_k: DenseArray,
    pub w_v: DenseArray,
    pub w_o: DenseArray,
    heads: usize,
}

impl AttentionParams {
    pub fn new(
        w_q: DenseArray,
        w_k: DenseArray,
        w_v: DenseArray,
        w_o: DenseArray,
        heads: usize,
    ) -> Result<Self> {
        let d = w_q.shape().first().copied().unwrap_or(0);
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v), ("w_o", &w_o)] {
            if w.shape() != [d, d] {
                return Err(Error::arg(format!(
                    "{name} has shape {:?}, expected {d}x{d}",
                    w.shape()
                )));
            }
        }
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::arg(format!("{heads} heads do not divide model dim {d}")));
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
        })
    }

    /// Xavier-uniform initialisation from a seed.
    pub fn seeded(d: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (2 * d) as f64).sqrt();
        let mut draw = || DenseArray::from_fn(vec![d, d], |_| rng.random_range(-bound..bound));
        let (w_q, w_k, w_v, w_o) = (draw(), draw(), draw(), draw());
        Self::new(w_q, w_k, w_v, w_o, heads)
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn with_zero_output(mut self) -> Self {
        self.w_o = DenseArray::zeros(vec![self.dim(), self.dim()]);
        self
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) {
        store.insert(format!("{prefix}.w_q"), self.w_q.clone());
        store.insert(format!("{prefix}.w_k"), self.w_k.clone());
        store.insert(format!("{prefix}.w_v"), self.w_v.clone());
        store.insert(format!("{prefix}.w_o"), self.w_o.clone());
    }

    pub fn read_from(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        let get = |n: &str| store.get(&format!("{prefix}.{n}")).cloned();
        Self::new(get("w_q")?, get("w_k")?, get("w_v")?, get("w_o")?, heads)
    }
}

/// Attention weights of one forward pass: per head a `C × N` matrix, zero on
/// masked positions and on rows of absent categories.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub weights: Vec<DenseArray>,
}

pub fn cross_attend(
    q: &ClassQuerySet,
    seq: &TokenSequence,
    masks: &GatingMaskSet,
    params: &AttentionParams,
) -> Result<ClassQuerySet> {
    cross_attend_traced(q, seq, masks, params).map(|(out, _)| out)
}

/// `Q + MHA(query = Q, key = T + P, value = T)` with per-category key masks.
pub fn cross_attend_traced(
    q: &ClassQuerySet,
    seq: &TokenSequence,
    masks: &GatingMaskSet,
    params: &AttentionParams,
) -> Result<(ClassQuerySet, AttentionTrace)> {
    let (c, d, n) = (q.categories(), q.dim(), seq.len());
    if seq.dim() != d || params.dim() != d {
        return Err(Error::arg(format!(
            "dimension mismatch: queries {d}, tokens {}, params {}",
            seq.dim(),
            params.dim()
        )));
    }
    if masks.num_categories() != c {
        return Err(Error::arg(format!(
            "{} category masks for {c} queries",
            masks.num_categories()
        )));
    }
    if masks.token_len() != n {
        return Err(Error::arg(format!(
            "token masks cover {} positions, sequence has {n}",
            masks.token_len()
        )));
    }

    let heads = params.heads();
    let dh = params.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let qp = q.queries.matmul(&params.w_q)?;
    let kp = seq.tokens.add(&seq.positions)?.matmul(&params.w_k)?;
    let vp = seq.tokens.matmul(&params.w_v)?;

    let mut out = q.queries.clone();
    let mut trace: Vec<DenseArray> = (0..heads).map(|_| DenseArray::zeros(vec![c, n])).collect();
    for cat in 0..c {
        let visible: Vec<usize> = (0..n).filter(|&j| masks.attendable(cat)[j]).collect();
        if visible.is_empty() {
            continue;
        }
        let mut context = vec![0.0; d];
        for (h, head_trace) in trace.iter_mut().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            let qh = &qp.row(cat)[cols.clone()];
            let scores: Vec<f64> = visible
                .iter()
                .map(|&j| dot(qh, &kp.row(j)[cols.clone()]) * scale)
                .collect();
            let weights = softmax(&scores)?;
            for (&j, &w) in visible.iter().zip(&weights) {
                head_trace.set(&[cat, j], w);
                for (ctx, &v) in context[cols.clone()].iter_mut().zip(&vp.row(j)[cols.clone()]) {
                    *ctx += w * v;
                }
            }
        }
        let ctx = DenseArray::new(vec![1, d], context)?;
        let delta = ctx.matmul(&params.w_o)?;
        for (o, dv) in out.row_mut(cat).iter_mut().zip(delta.data()) {
            *o += dv;
        }
    }
    Ok((ClassQuerySet { queries: out }, AttentionTrace { weights: trace }))
}

/// Applies one masked cross-attention per encoder block, carrying the
/// queries from block to block.
pub fn run_encoder_side(
    q0: &ClassQuerySet,
    seqs: &[TokenSequence],
    masks: &GatingMaskSet,
    params: &[AttentionParams],
) -> Result<ClassQuerySet> {
    if seqs.is_empty() {
        return Err(Error::arg("at least one encoder block is required"));
    }
    if seqs.len() != params.len() {
        return Err(Error::arg(format!(
            "{} token sequences for {} parameter blocks",
            seqs.len(),
            params.len()
        )));
    }
    seqs.iter()
        .zip(params)
        .try_fold(q0.clone(), |q, (seq, p)| cross_attend(&q, seq, masks, p))
}

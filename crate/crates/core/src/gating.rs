//! Object-aware gating masks.
//!
//! Each category gets a binary `H × W` mask marking pixels inside any of its
//! boxes. Pixel `(x, y)` (column `x`, row `y`, both integer indices) is set
//! when `x_min ≤ x ≤ x_max` and `y_min ≤ y ≤ y_max`; box coordinates may be
//! fractional. Masks are then max-pooled onto every pyramid level and
//! concatenated so they line up with the flattened feature-token sequence.
//! In the token form `true` means the token may be attended.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite box {self:?}")));
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::arg(format!("inverted box {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }

    /// Integer index range `lo..=hi` covered along one axis, clipped to `0..extent`.
    fn axis_range(lo: f64, hi: f64, extent: usize) -> Option<(usize, usize)> {
        if extent == 0 {
            return None;
        }
        let lo = lo.ceil().max(0.0);
        let hi = hi.floor().min((extent - 1) as f64);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

/// Boxes and their category ids for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub boxes: Vec<BoundingBox>,
    pub categories: Vec<usize>,
}

impl Annotation {
    pub fn new(boxes: Vec<BoundingBox>, categories: Vec<usize>) -> Result<Self> {
        if boxes.len() != categories.len() {
            return Err(Error::arg(format!(
                "{} boxes but {} categories",
                boxes.len(),
                categories.len()
            )));
        }
        Ok(Self { boxes, categories })
    }

    pub fn push(&mut self, b: BoundingBox, category: usize) {
        self.boxes.push(b);
        self.categories.push(category);
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Annotation holding the boxes of both inputs.
    pub fn union(&self, other: &Annotation) -> Annotation {
        let mut out = self.clone();
        out.boxes.extend_from_slice(&other.boxes);
        out.categories.extend_from_slice(&other.categories);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingMaskSet {
    height: usize,
    width: usize,
    /// Per category, row-major `H × W`.
    pixel_masks: Vec<Vec<bool>>,
    present: Vec<bool>,
    level_shapes: Vec<(usize, usize)>,
    token_masks: Vec<Vec<bool>>,
}

impl GatingMaskSet {
    /// Wraps precomputed token masks (no pixel-level part). A category is
    /// present iff it has at least one attendable token.
    pub fn from_token_masks(token_masks: Vec<Vec<bool>>) -> Result<Self> {
        let n = token_masks.first().map_or(0, Vec::len);
        if token_masks.iter().any(|m| m.len() != n) {
            return Err(Error::arg("token masks differ in length"));
        }
        Ok(Self {
            height: 0,
            width: 0,
            present: token_masks.iter().map(|m| m.iter().any(|&t| t)).collect(),
            pixel_masks: vec![Vec::new(); token_masks.len()],
            level_shapes: Vec::new(),
            token_masks,
        })
    }

    pub fn num_categories(&self) -> usize {
        self.present.len()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_mask(&self, category: usize) -> &[bool] {
        &self.pixel_masks[category]
    }

    pub fn pixel(&self, category: usize, y: usize, x: usize) -> bool {
        self.pixel_masks[category][y * self.width + x]
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn is_present(&self, category: usize) -> bool {
        self.present[category]
    }

    pub fn level_shapes(&self) -> &[(usize, usize)] {
        &self.level_shapes
    }

    pub fn is_aligned(&self) -> bool {
        !self.token_masks.is_empty() && self.token_masks.iter().all(|m| !m.is_empty())
    }

    /// Concatenated token length; zero before alignment.
    pub fn token_len(&self) -> usize {
        self.token_masks.first().map_or(0, Vec::len)
    }

    /// Attendable flags of `category` over the concatenated token sequence.
    pub fn attendable(&self, category: usize) -> &[bool] {
        &self.token_masks[category]
    }

    pub fn token_masks(&self) -> &[Vec<bool>] {
        &self.token_masks
    }

    /// Fraction of tokens `category` may attend to.
    pub fn coverage(&self, category: usize) -> f64 {
        let m = &self.token_masks[category];
        if m.is_empty() {
            return 0.0;
        }
        m.iter().filter(|&&t| t).count() as f64 / m.len() as f64
    }
}

/// Rasterises `ann` into one mask per category for an `H × W` image.
pub fn build_masks(
    ann: &Annotation,
    image_size: (usize, usize),
    num_categories: usize,
) -> Result<GatingMaskSet> {
    let (height, width) = image_size;
    if ann.boxes.len() != ann.categories.len() {
        return Err(Error::arg("annotation boxes and categories differ in length"));
    }
    let mut pixel_masks = vec![vec![false; height * width]; num_categories];
    for (b, &cat) in ann.boxes.iter().zip(&ann.categories) {
        if cat >= num_categories {
            return Err(Error::arg(format!(
                "category {cat} outside 0..{num_categories}"
            )));
        }
        b.validate()?;
        let (Some((x0, x1)), Some((y0, y1))) = (
            BoundingBox::axis_range(b.x_min, b.x_max, width),
            BoundingBox::axis_range(b.y_min, b.y_max, height),
        ) else {
            continue;
        };
        let mask = &mut pixel_masks[cat];
        for y in y0..=y1 {
            mask[y * width + x0..=y * width + x1].fill(true);
        }
    }
    let present = pixel_masks.iter().map(|m| m.iter().any(|&v| v)).collect();
    Ok(GatingMaskSet {
        height,
        width,
        pixel_masks,
        present,
        level_shapes: Vec::new(),
        token_masks: Vec::new(),
    })
}

/// Pixel span `[start, end)` of cell `i` when `extent` pixels are split into `cells`.
pub fn cell_span(i: usize, cells: usize, extent: usize) -> (usize, usize) {
    (i * extent / cells, (i + 1) * extent / cells)
}

/// Max-pools every category mask onto each level and concatenates the
/// levels in order. Cells use a floor partition of the image.
pub fn align_to_tokens(
    mask_set: &GatingMaskSet,
    level_shapes: &[(usize, usize)],
) -> Result<GatingMaskSet> {
    if level_shapes.is_empty() {
        return Err(Error::arg("no pyramid levels given"));
    }
    let (height, width) = (mask_set.height, mask_set.width);
    for &(h, w) in level_shapes {
        if h == 0 || w == 0 || h > height || w > width {
            return Err(Error::arg(format!(
                "level {h}x{w} is not a downscaling of {height}x{width}"
            )));
        }
    }
    let total: usize = level_shapes.iter().map(|(h, w)| h * w).sum();
    let token_masks = mask_set
        .pixel_masks
        .iter()
        .map(|mask| {
            let mut tokens = Vec::with_capacity(total);
            for &(lh, lw) in level_shapes {
                for i in 0..lh {
                    let (r0, r1) = cell_span(i, lh, height);
                    for j in 0..lw {
                        let (c0, c1) = cell_span(j, lw, width);
                        let hit = (r0..r1).any(|r| mask[r * width + c0..r * width + c1].contains(&true));
                        tokens.push(hit);
                    }
                }
            }
            tokens
        })
        .collect();
    Ok(GatingMaskSet {
        level_shapes: level_shapes.to_vec(),
        token_masks,
        ..mask_set.clone()
    })
}

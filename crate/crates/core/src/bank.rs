//! Self-organizing style memory bank.
//!
//! A bank holds at most `K` style prototypes for one feature-pyramid level.
//! Every observed [`ChannelStats`] is compared with all stored prototypes
//! using [`style_distance`](crate::stats::style_distance). Once the bank is
//! full, the adaptive threshold `τ = (α/K) Σ d_i` decides between
//!
//! - **fusion**: the nearest prototype moves toward the sample by an
//!   exponential moving average `p' = λ p + (1 - λ) s` (mean and std), or
//! - **replacement**: when `d_min > τ` the least frequently used prototype
//!   (ties: oldest `last_update`) is overwritten by the sample.
//!
//! In [`BankMode::Tta`] only fusion happens and the prototype count is frozen.
//!
//! Until the bank is full, observed samples are appended verbatim.
//!
//! # Persistence layout
//!
//! [`StyleMemoryBank::to_bytes`] writes, all integers and floats little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 6    | magic `b"SABANK"`                      |
//! | 6      | 4    | format version `u32` (= 1)             |
//! | 10     | 8    | capacity `K` (`u64`)                   |
//! | 18     | 8    | channels `C` (`u64`)                   |
//! | 26     | 8    | alpha (`f64`)                          |
//! | 34     | 8    | lambda (`f64`)                         |
//! | 42     | 1    | mode (`0` = train, `1` = tta)          |
//! | 43     | 8    | step (`u64`)                           |
//! | 51     | 8    | stored prototype count `n ≤ K` (`u64`) |
//!
//! followed by `n` records of `C` mean `f64`s, `C` std `f64`s, `use_count`
//! (`u64`) and `last_update` (`u64`). The total length must match exactly.

use crate::error::{Error, Result};
use crate::stats::{style_distance_unchecked, ChannelStats};

pub const DEFAULT_CAPACITY: usize = 4;
pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_LAMBDA: f64 = 0.9;

const MAGIC: &[u8; 6] = b"SABANK";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 6 + 4 + 8 + 8 + 8 + 8 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankMode {
    /// Fusion and replacement.
    Train,
    /// Fusion only; prototype count never changes.
    Tta,
}

/// Hyperparameters shared by all levels of a pyramid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankConfig {
    pub capacity: usize,
    /// Threshold temperature.
    pub alpha: f64,
    /// EMA momentum.
    pub lambda: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::arg("bank capacity must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::arg(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::arg(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylePrototype {
    pub style: ChannelStats,
    /// Number of observations credited to this slot since it was last written.
    pub use_count: u64,
    /// Bank step at which this slot was last fused or written.
    pub last_update: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateAction {
    /// Bank was not yet full; the sample was appended at `slot`.
    Bootstrap { slot: usize },
    /// Sample was merged into the nearest prototype.
    Fused { slot: usize },
    /// Least frequently used prototype was overwritten. `evicted_use_count`
    /// is the counter the slot carried before the reset.
    Replaced { slot: usize, evicted_use_count: u64 },
}

impl UpdateAction {
    pub fn slot(&self) -> usize {
        match *self {
            UpdateAction::Bootstrap { slot }
            | UpdateAction::Fused { slot }
            | UpdateAction::Replaced { slot, .. } => slot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub action: UpdateAction,
    /// Distances to every stored prototype before the update (empty on bootstrap).
    pub distances: Vec<f64>,
    pub d_min: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleMemoryBank {
    config: BankConfig,
    channels: usize,
    mode: BankMode,
    step: u64,
    prototypes: Vec<StylePrototype>,
}

impl StyleMemoryBank {
    pub fn new(config: BankConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::arg("bank needs at least one channel"));
        }
        Ok(Self {
            config,
            channels,
            mode: BankMode::Train,
            step: 0,
            prototypes: Vec::with_capacity(config.capacity),
        })
    }

    /// Builds a bank directly from prototype styles, each with `use_count = 1`.
    pub fn from_styles(config: BankConfig, styles: Vec<ChannelStats>) -> Result<Self> {
        let channels = styles
            .first()
            .map(ChannelStats::channels)
            .ok_or_else(|| Error::arg("from_styles needs at least one style"))?;
        let mut bank = Self::new(config, channels)?;
        if styles.len() > config.capacity {
            return Err(Error::arg(format!(
                "{} styles exceed capacity {}",
                styles.len(),
                config.capacity
            )));
        }
        for s in styles {
            bank.check_channels(&s)?;
            bank.step += 1;
            bank.prototypes.push(StylePrototype {
                style: s,
                use_count: 1,
                last_update: bank.step,
            });
        }
        Ok(bank)
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mode(&self) -> BankMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: BankMode) {
        self.mode = mode;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn prototypes(&self) -> &[StylePrototype] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.prototypes.len() == self.config.capacity
    }

    fn check_channels(&self, s: &ChannelStats) -> Result<()> {
        if s.channels() != self.channels {
            return Err(Error::arg(format!(
                "stats have {} channels, bank expects {}",
                s.channels(),
                self.channels
            )));
        }
        Ok(())
    }

    /// Distance from `s` to every stored prototype, in storage order.
    pub fn distances(&self, s: &ChannelStats) -> Result<Vec<f64>> {
        if self.prototypes.is_empty() {
            return Err(Error::state("distances requested from an empty bank"));
        }
        self.check_channels(s)?;
        Ok(self
            .prototypes
            .iter()
            .map(|p| style_distance_unchecked(s, &p.style))
            .collect())
    }

    /// Feeds one observation into the bank.
    pub fn observe(&mut self, s: &ChannelStats) -> Result<UpdateReport> {
        self.check_channels(s)?;
        if self.mode == BankMode::Train && !self.is_full() {
            self.step += 1;
            self.prototypes.push(StylePrototype {
                style: s.clone(),
                use_count: 1,
                last_update: self.step,
            });
            return Ok(UpdateReport {
                action: UpdateAction::Bootstrap {
                    slot: self.prototypes.len() - 1,
                },
                distances: Vec::new(),
                d_min: None,
                tau: None,
            });
        }
        if self.prototypes.is_empty() {
            return Err(Error::state("test-time update on an empty bank"));
        }

        let distances = self.distances(s)?;
        let (nearest, d_min) = argmin(&distances);
        let tau = self.config.alpha / self.config.capacity as f64 * distances.iter().sum::<f64>();
        self.step += 1;

        // Only a full bank can reach this branch in train mode.
        let action = if self.mode == BankMode::Train && d_min > tau {
            let slot = self.least_frequently_used();
            let evicted_use_count = self.prototypes[slot].use_count;
            self.prototypes[slot] = StylePrototype {
                style: s.clone(),
                use_count: 1,
                last_update: self.step,
            };
            UpdateAction::Replaced {
                slot,
                evicted_use_count,
            }
        } else {
            self.fuse(nearest, s);
            UpdateAction::Fused { slot: nearest }
        };

        Ok(UpdateReport {
            action,
            distances,
            d_min: Some(d_min),
            tau: Some(tau),
        })
    }

    fn fuse(&mut self, slot: usize, s: &ChannelStats) {
        // λp + (1-λ)x written as p + (1-λ)(x - p) so that x == p leaves p
        // bit-for-bit unchanged.
        let rate = 1.0 - self.config.lambda;
        let step = self.step;
        let proto = &mut self.prototypes[slot];
        let (mean, std) = proto.style.parts_mut();
        for (p, &x) in mean.iter_mut().zip(s.mean()) {
            *p += rate * (x - *p);
        }
        for (p, &x) in std.iter_mut().zip(s.std()) {
            *p += rate * (x - *p);
            assert!(*p > 0.0, "EMA of positive stds produced {p}");
        }
        proto.use_count += 1;
        proto.last_update = step;
    }

    fn least_frequently_used(&self) -> usize {
        self.prototypes
            .iter()
            .enumerate()
            .min_by_key(|(_, p)| (p.use_count, p.last_update))
            .map(|(i, _)| i)
            .expect("non-empty bank")
    }

    /// Prototype means stacked as a `K × C` row-major buffer.
    pub fn mean_matrix(&self) -> Vec<f64> {
        self.prototypes
            .iter()
            .flat_map(|p| p.style.mean().iter().copied())
            .collect()
    }

    /// Prototype stds stacked as a `K × C` row-major buffer.
    pub fn std_matrix(&self) -> Vec<f64> {
        self.prototypes
            .iter()
            .flat_map(|p| p.style.std().iter().copied())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let record_len = self.channels * 16 + 16;
        let mut out = Vec::with_capacity(HEADER_LEN + self.prototypes.len() * record_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.capacity as u64).to_le_bytes());
        out.extend_from_slice(&(self.channels as u64).to_le_bytes());
        out.extend_from_slice(&self.config.alpha.to_le_bytes());
        out.extend_from_slice(&self.config.lambda.to_le_bytes());
        out.push(match self.mode {
            BankMode::Train => 0,
            BankMode::Tta => 1,
        });
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.prototypes.len() as u64).to_le_bytes());
        for p in &self.prototypes {
            for v in p.style.mean().iter().chain(p.style.std()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&p.use_count.to_le_bytes());
            out.extend_from_slice(&p.last_update.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6)? != MAGIC {
            return Err(Error::format("missing SABANK magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported bank format version {version}"
            )));
        }
        let capacity = r.len_field("capacity")?;
        let channels = r.len_field("channels")?;
        let alpha = r.f64()?;
        let lambda = r.f64()?;
        let mode = match r.take(1)?[0] {
            0 => BankMode::Train,
            1 => BankMode::Tta,
            m => return Err(Error::format(format!("unknown mode byte {m}"))),
        };
        let step = r.u64()?;
        let count = r.len_field("prototype count")?;

        let config = BankConfig {
            capacity,
            alpha,
            lambda,
        };
        config
            .validate()
            .map_err(|e| Error::format(format!("bad header: {e}")))?;
        if channels == 0 {
            return Err(Error::format("bank header declares zero channels"));
        }
        if count > capacity {
            return Err(Error::format(format!(
                "header declares {count} prototypes for capacity {capacity}"
            )));
        }
        let record_len = channels
            .checked_mul(16)
            .and_then(|v| v.checked_add(16))
            .ok_or_else(|| Error::format("channel count overflows"))?;
        let expected = count
            .checked_mul(record_len)
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::format("declared size overflows"))?;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "expected {expected} bytes for {count} prototypes, got {}",
                bytes.len()
            )));
        }

        let mut prototypes = Vec::with_capacity(capacity);
        for i in 0..count {
            let mean = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let std = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let style = ChannelStats::new(mean, std)
                .map_err(|e| Error::format(format!("prototype {i}: {e}")))?;
            let use_count = r.u64()?;
            let last_update = r.u64()?;
            prototypes.push(StylePrototype {
                style,
                use_count,
                last_update,
            });
        }
        Ok(Self {
            config,
            channels,
            mode,
            step,
            prototypes,
        })
    }
}

fn argmin(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(format!(
                "non-finite value ending at byte {}",
                self.pos
            )));
        }
        Ok(v)
    }

    fn len_field(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(format!("{what} does not fit usize")))
    }
}

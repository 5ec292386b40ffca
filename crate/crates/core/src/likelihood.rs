//! Log-likelihood of observed pixel values given a partition.
//!
//! Blocks are independent leaves; channels are independent within a leaf.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ColorTextureModel, Image};
use crate::geometry::{bits, PixelSet};
use crate::partitions::Partition;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance, in level units, for a value to count as lying on the level grid.
pub const LEVEL_TOLERANCE: f64 = 1e-4;

/// Pixel values of one pixel set; `values[i * channels + c]` belongs to point `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationWindow {
    pub pixels: PixelSet,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ObservationWindow {
    pub fn new(pixels: PixelSet, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || values.len() != pixels.len() * channels {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} pixels with {channels} channels",
                values.len(),
                pixels.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("observed values must be finite".into()));
        }
        Ok(ObservationWindow { pixels, channels, values })
    }

    /// Values of `img` at the lattice points of `pixels`.
    pub fn from_image(img: &Image, pixels: PixelSet) -> Result<Self> {
        let mut values = Vec::with_capacity(pixels.len() * img.channels);
        for p in pixels.points() {
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < img.side as f64 && p.y < img.side as f64;
            if !inside || p.x.fract() != 0.0 || p.y.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("({}, {}) is not a pixel of the image", p.x, p.y)));
            }
            values.extend_from_slice(img.pixel(p.x as usize, p.y as usize));
        }
        ObservationWindow::new(pixels, img.channels, values)
    }

    pub fn value(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.channels + c]
    }

    fn check(&self, m: &Partition) -> Result<()> {
        if m.n() != self.pixels.len() {
            return Err(Error::InvalidParameter(format!(
                "partition over {} pixels, window has {}",
                m.n(),
                self.pixels.len()
            )));
        }
        m.validate()
    }
}

/// Per-block log values in block order and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodResult {
    pub per_block: Vec<f64>,
    pub total: f64,
}

impl LikelihoodResult {
    /// `per_pixel` on every pixel; the total is one product so it is bitwise
    /// independent of the block structure.
    fn constant(m: &Partition, per_pixel: f64) -> Self {
        let per_block = m.blocks().iter().map(|b| b.count_ones() as f64 * per_pixel).collect();
        LikelihoodResult { per_block, total: m.support().count_ones() as f64 * per_pixel }
    }

    fn from_blocks(per_block: Vec<f64>) -> Self {
        let total = per_block.iter().sum();
        LikelihoodResult { per_block, total }
    }
}

/// Likelihood used by the observer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodModel {
    /// A full colour-texture model.
    Model(ColorTextureModel),
    /// Constant `1 / texture_levels` per pixel and channel; values are not checked against a level grid.
    TextureOnly { channels: usize, texture_levels: u32 },
}

impl From<ColorTextureModel> for LikelihoodModel {
    fn from(m: ColorTextureModel) -> Self {
        LikelihoodModel::Model(m)
    }
}

/// Dispatches to the uniform or Gaussian likelihood.
pub fn log_likelihood(w: &ObservationWindow, m: &Partition, model: &LikelihoodModel) -> Result<LikelihoodResult> {
    match model {
        LikelihoodModel::Model(c @ ColorTextureModel::UniformDiscrete { .. }) => log_likelihood_uniform(w, m, c),
        LikelihoodModel::Model(c @ ColorTextureModel::Gaussian { .. }) => log_likelihood_gaussian(w, m, c),
        LikelihoodModel::TextureOnly { channels, texture_levels } => {
            w.check(m)?;
            if *channels != w.channels || *texture_levels == 0 {
                return Err(Error::InvalidParameter(format!(
                    "texture-only model with {channels} channels and {texture_levels} levels does not fit a {}-channel window",
                    w.channels
                )));
            }
            let per_pixel = -(*channels as f64) * (*texture_levels as f64).ln();
            Ok(LikelihoodResult::constant(m, per_pixel))
        }
    }
}

/// `|a| * channels * log p_t` with `p_t = 1 / (2 h + 1)`, split over blocks.
pub fn log_likelihood_uniform(w: &ObservationWindow, m: &Partition, model: &ColorTextureModel) -> Result<LikelihoodResult> {
    let ColorTextureModel::UniformDiscrete { channels, color_levels, texture_halfwidth } = model else {
        return Err(Error::InvalidParameter("uniform likelihood needs a uniform-discrete model".into()));
    };
    model.validate()?;
    w.check(m)?;
    if *channels != w.channels {
        return Err(Error::InvalidParameter(format!("model has {channels} channels, window {}", w.channels)));
    }
    let top = (*color_levels - 1) as f64;
    for (k, v) in w.values.iter().enumerate() {
        let level = v * top;
        if !(0.0..=1.0).contains(v) || (level - level.round()).abs() > LEVEL_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "value {v} of pixel {} is not on the {color_levels}-level grid",
                k / w.channels
            )));
        }
    }
    let log_pt = -((2 * *texture_halfwidth + 1) as f64).ln();
    let per_pixel = w.channels as f64 * log_pt;
    Ok(LikelihoodResult::constant(m, per_pixel))
}

/// Log-density of `values` under `N(mu 1, sigma_c^2 11^T + sigma_t^2 I)`.
pub fn gaussian_block_log_density(values: &[f64], mu: f64, sigma_c: f64, sigma_t: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let (vc, vt) = (sigma_c * sigma_c, sigma_t * sigma_t);
    let mean = values.iter().sum::<f64>() / nf;
    let within: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let lead = vt + nf * vc;
    let d = mean - mu;
    let log_det = (nf - 1.0) * vt.ln() + lead.ln();
    let quad = within / vt + nf * d * d / lead;
    -0.5 * (nf * LN_2PI + log_det + quad)
}

/// Sum over blocks and channels of the rank-one-plus-diagonal normal log-density.
pub fn log_likelihood_gaussian(w: &ObservationWindow, m: &Partition, model: &ColorTextureModel) -> Result<LikelihoodResult> {
    let ColorTextureModel::Gaussian { mu_c, sigma_c, sigma_t } = model else {
        return Err(Error::InvalidParameter("gaussian likelihood needs a gaussian model".into()));
    };
    model.validate()?;
    w.check(m)?;
    if mu_c.len() != w.channels {
        return Err(Error::InvalidParameter(format!("model has {} channels, window {}", mu_c.len(), w.channels)));
    }
    if sigma_c.iter().chain(sigma_t).any(|s| *s <= 0.0) {
        return Err(Error::InvalidParameter("gaussian likelihood needs sigma_c > 0 and sigma_t > 0".into()));
    }
    let mut buf = Vec::new();
    let per_block = m
        .blocks()
        .iter()
        .map(|&b| {
            (0..w.channels)
                .map(|c| {
                    buf.clear();
                    buf.extend(bits(b).map(|i| w.value(i, c)));
                    gaussian_block_log_density(&buf, mu_c[c], sigma_c[c], sigma_t[c])
                })
                .sum()
        })
        .collect();
    Ok(LikelihoodResult::from_blocks(per_block))
}

/// One channel of a discrete colour-plus-texture model on integer levels `0..L`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteChannel {
    /// `log P_c(c)` for `c = 0..L`.
    pub color_log_pmf: Vec<f64>,
    /// `log P_t(t)` for `t = -h..=h`, index `t + h`.
    pub texture_log_pmf: Vec<f64>,
}

impl DiscreteChannel {
    pub const MAX_LEVELS: usize = 256;

    /// Uniform colours on `levels` levels and uniform offsets on `[-halfwidth, halfwidth]`.
    pub fn uniform(levels: usize, halfwidth: usize) -> Self {
        DiscreteChannel {
            color_log_pmf: vec![-(levels as f64).ln(); levels],
            texture_log_pmf: vec![-((2 * halfwidth + 1) as f64).ln(); 2 * halfwidth + 1],
        }
    }

    fn validate(&self) -> Result<()> {
        let l = self.color_log_pmf.len();
        if l == 0 || l > Self::MAX_LEVELS || self.texture_log_pmf.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter("need 1..=256 colour levels and an odd texture support".into()));
        }
        Ok(())
    }

    fn texture(&self, t: i64) -> f64 {
        let h = (self.texture_log_pmf.len() / 2) as i64;
        if t.abs() > h {
            f64::NEG_INFINITY
        } else {
            self.texture_log_pmf[(t + h) as usize]
        }
    }

    /// `log sum_c P_c(c) prod_j P_t(s_j - c)` over one block's levels.
    pub fn block_log_likelihood(&self, levels: &[i64]) -> Result<f64> {
        self.validate()?;
        let terms: Vec<f64> = self
            .color_log_pmf
            .iter()
            .enumerate()
            .map(|(c, lp)| lp + levels.iter().map(|&s| self.texture(s - c as i64)).sum::<f64>())
            .collect();
        Ok(log_sum_exp(&terms))
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact discrete likelihood with independent channels. Values are mapped to
/// levels `round(v * (L - 1))` and must lie on the grid.
pub fn log_likelihood_discrete(w: &ObservationWindow, m: &Partition, channels: &[DiscreteChannel]) -> Result<LikelihoodResult> {
    w.check(m)?;
    if channels.len() != w.channels {
        return Err(Error::InvalidParameter(format!("{} channel models for {} channels", channels.len(), w.channels)));
    }
    let mut per_block = Vec::with_capacity(m.len());
    for &b in m.blocks() {
        let mut total = 0.0;
        for (c, ch) in channels.iter().enumerate() {
            let top = (ch.color_log_pmf.len().max(2) - 1) as f64;
            let levels = bits(b)
                .map(|i| {
                    let l = w.value(i, c) * top;
                    if (l - l.round()).abs() > LEVEL_TOLERANCE {
                        Err(Error::InvalidParameter(format!("value {} is not on the level grid", w.value(i, c))))
                    } else {
                        Ok(l.round() as i64)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            total += ch.block_log_likelihood(&levels)?;
        }
        per_block.push(total);
    }
    Ok(LikelihoodResult::from_blocks(per_block))
}

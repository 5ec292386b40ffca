//! Dead-leaves scene synthesis and image rendering.
//!
//! Pixels sit at integer coordinates `(x, y)`, `0 <= x, y < side`, stored
//! row-major with `y` as the row index. Leaf centres are uniform on
//! `[-r_max, side + r_max]^2`.
//!
//! Random streams derived from the master seed: stream 0 drives leaf
//! geometry, stream 1 the leaf colours and stream `2 + y` the texture of row `y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelSet, Point2};
use crate::partitions::Partition;
use crate::specfun::{power_law_sample, RadiusLaw};

/// Leaf draws per scene before generation gives up.
pub const DRAW_CAP: u64 = 10_000_000;

const STREAM_GEOMETRY: u64 = 0;
const STREAM_COLOR: u64 = 1;
const STREAM_TEXTURE: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub center: Point2,
    pub radius: f64,
}

impl Leaf {
    pub fn covers(&self, p: Point2) -> bool {
        p.dist(self.center) <= self.radius
    }

    /// Inclusive index range of lattice coordinates within the disk's box, clipped to `[0, side)`.
    fn span(&self, c: f64, side: usize) -> Option<(usize, usize)> {
        let lo = (c - self.radius).ceil().max(0.0);
        let hi = (c + self.radius).floor().min(side as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

/// Visible-leaf labelling of a `side x side` lattice. Label `i` (1-based)
/// marks pixels whose topmost covering leaf is `leaves[i - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub side: usize,
    pub labels: Vec<u32>,
    pub leaves: Vec<Leaf>,
    pub law: RadiusLaw,
    pub seed: u64,
}

impl Scene {
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.side + x]
    }

    pub fn pixel_set(&self) -> Result<PixelSet> {
        PixelSet::grid(self.side, self.side)
    }

    /// Labels restricted to `a`, whose points must be lattice pixels of the scene.
    pub fn partition_on(&self, a: &PixelSet) -> Result<Partition> {
        let labels = a
            .points()
            .iter()
            .map(|p| {
                let (x, y) = (p.x as usize, p.y as usize);
                if p.x < 0.0 || p.y < 0.0 || p.x.fract() != 0.0 || p.y.fract() != 0.0 || x >= self.side || y >= self.side {
                    return Err(Error::InvalidParameter(format!("({}, {}) is not a pixel of the scene", p.x, p.y)));
                }
                Ok(self.label_at(x, y))
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::group_by(&labels)
    }

    /// Checks labels, radii and occlusion consistency.
    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if self.side == 0 || self.labels.len() != self.side * self.side {
            return Err(Error::Format(format!("{} labels for side {}", self.labels.len(), self.side)));
        }
        let n = self.leaves.len();
        let mut seen = vec![false; n];
        for &l in &self.labels {
            if l == 0 || l as usize > n {
                return Err(Error::Format(format!("label {l} outside 1..={n}")));
            }
            seen[l as usize - 1] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("label {} is never visible", gap + 1)));
        }
        for (j, leaf) in self.leaves.iter().enumerate() {
            if !(leaf.radius >= self.law.r_min && leaf.radius <= self.law.r_max) || !leaf.center.is_finite() {
                return Err(Error::Format(format!("leaf {} has radius {} outside the law", j + 1, leaf.radius)));
            }
            let (Some((x0, x1)), Some((y0, y1))) = (leaf.span(leaf.center.x, self.side), leaf.span(leaf.center.y, self.side)) else {
                continue;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let l = self.label_at(x, y) as usize;
                    if l > j + 1 && leaf.covers(Point2::new(x as f64, y as f64)) {
                        return Err(Error::Format(format!("pixel ({x}, {y}) labelled {l} lies under leaf {}", j + 1)));
                    }
                }
            }
        }
        for y in 0..self.side {
            for x in 0..self.side {
                let l = self.label_at(x, y) as usize;
                if !self.leaves[l - 1].covers(Point2::new(x as f64, y as f64)) {
                    return Err(Error::Format(format!("pixel ({x}, {y}) lies outside its leaf {l}")));
                }
            }
        }
        Ok(())
    }
}

/// Scene plus every radius drawn, including those of discarded leaves.
#[derive(Clone, Debug)]
pub struct SceneTrace {
    pub scene: Scene,
    pub drawn_radii: Vec<f64>,
}

fn side_of(law: &RadiusLaw) -> Result<usize> {
    law.validate()?;
    if law.s < 1.0 || law.s.fract() != 0.0 || law.s > 1e5 {
        return Err(Error::InvalidParameter(format!("image side must be a positive integer, got {}", law.s)));
    }
    Ok(law.s as usize)
}

fn generate(law: &RadiusLaw, seed: u64, mut trace: Option<&mut Vec<f64>>) -> Result<Scene> {
    let side = side_of(law)?;
    let mut rng = stream(seed, STREAM_GEOMETRY);
    let mut labels = vec![0u32; side * side];
    let mut open = side * side;
    let mut leaves = Vec::new();
    let (origin, extent) = (law.frame_origin(), law.frame_side());
    let mut draws = 0u64;
    while open > 0 {
        if draws == DRAW_CAP {
            return Err(Error::DrawCapExceeded { draws });
        }
        draws += 1;
        let radius = power_law_sample(law, &mut rng);
        let center = Point2::new(origin + extent * rng.random::<f64>(), origin + extent * rng.random::<f64>());
        if let Some(t) = trace.as_deref_mut() {
            t.push(radius);
        }
        let leaf = Leaf { center, radius };
        let (Some((x0, x1)), Some((y0, y1))) = (leaf.span(center.x, side), leaf.span(center.y, side)) else {
            continue;
        };
        let label = leaves.len() as u32 + 1;
        let mut claimed = 0usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let cell = &mut labels[y * side + x];
                if *cell == 0 && leaf.covers(Point2::new(x as f64, y as f64)) {
                    *cell = label;
                    claimed += 1;
                }
            }
        }
        if claimed > 0 {
            leaves.push(leaf);
            open -= claimed;
        }
    }
    Ok(Scene { side, labels, leaves, law: *law, seed })
}

/// Draws leaves until every pixel is covered; `law.s` is the image side.
pub fn generate_scene(law: &RadiusLaw, seed: u64) -> Result<Scene> {
    generate(law, seed, None)
}

pub fn generate_scene_traced(law: &RadiusLaw, seed: u64) -> Result<SceneTrace> {
    let mut drawn_radii = Vec::new();
    let scene = generate(law, seed, Some(&mut drawn_radii))?;
    Ok(SceneTrace { scene, drawn_radii })
}

/// Leaf colour and additive texture distribution. Values live in `[0, 1]` per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColorTextureModel {
    /// Colours uniform on `color_levels` levels `k / (color_levels - 1)`;
    /// texture an integer level offset uniform on `[-texture_halfwidth, texture_halfwidth]`.
    UniformDiscrete { channels: usize, color_levels: u32, texture_halfwidth: u32 },
    /// Colours `N(mu_c, sigma_c^2)` and texture `N(0, sigma_t^2)`, per channel.
    Gaussian { mu_c: Vec<f64>, sigma_c: Vec<f64>, sigma_t: Vec<f64> },
}

impl ColorTextureModel {
    /// Gaussian model with the same parameters on every channel.
    pub fn gaussian_iso(channels: usize, mu_c: f64, sigma_c: f64, sigma_t: f64) -> Self {
        ColorTextureModel::Gaussian { mu_c: vec![mu_c; channels], sigma_c: vec![sigma_c; channels], sigma_t: vec![sigma_t; channels] }
    }

    pub fn channels(&self) -> usize {
        match self {
            ColorTextureModel::UniformDiscrete { channels, .. } => *channels,
            ColorTextureModel::Gaussian { mu_c, .. } => mu_c.len(),
        }
    }

    /// Structural checks; zero standard deviations are accepted here.
    pub fn validate(&self) -> Result<()> {
        let ch = self.channels();
        if ch != 1 && ch != 3 {
            return Err(Error::InvalidParameter(format!("1 or 3 channels supported, got {ch}")));
        }
        match self {
            ColorTextureModel::UniformDiscrete { color_levels, .. } => {
                if *color_levels < 2 {
                    return Err(Error::InvalidParameter("at least 2 colour levels required".into()));
                }
            }
            ColorTextureModel::Gaussian { mu_c, sigma_c, sigma_t } => {
                if sigma_c.len() != ch || sigma_t.len() != ch {
                    return Err(Error::InvalidParameter("mu_c, sigma_c and sigma_t lengths differ".into()));
                }
                let ok = mu_c.iter().all(|v| v.is_finite()) && sigma_c.iter().chain(sigma_t).all(|v| v.is_finite() && *v >= 0.0);
                if !ok {
                    return Err(Error::InvalidParameter("gaussian parameters must be finite with sigma >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// `side x side` image, `channels` values per pixel, row-major with `y` as row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub side: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(side: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != side * side * channels {
            return Err(Error::Format(format!("{} values for a {side}x{side}x{channels} image", values.len())));
        }
        Ok(Image { side, channels, values })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let k = (y * self.side + x) * self.channels;
        &self.values[k..k + self.channels]
    }
}

/// Rendered image and the number of values clamped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Render {
    pub image: Image,
    pub clamped: usize,
}

/// Base colour of every leaf, flattened `leaf * channels + c`. Colours are clamped into range.
pub fn leaf_colors(n_leaves: usize, model: &ColorTextureModel, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let ch = model.channels();
    let mut rng = stream(seed, STREAM_COLOR);
    let mut out = Vec::with_capacity(n_leaves * ch);
    for _ in 0..n_leaves {
        for c in 0..ch {
            out.push(match model {
                ColorTextureModel::UniformDiscrete { color_levels, .. } => rng.random_range(0..*color_levels) as f64,
                ColorTextureModel::Gaussian { mu_c, sigma_c, .. } => {
                    let z: f64 = rng.sample(StandardNormal);
                    (mu_c[c] + sigma_c[c] * z).clamp(0.0, 1.0)
                }
            });
        }
    }
    Ok(out)
}

pub fn render_image(scene: &Scene, model: &ColorTextureModel, seed: u64) -> Result<Image> {
    render_with_stats(scene, model, seed).map(|r| r.image)
}

/// Per-leaf colours plus independent per-pixel texture, clamped to `[0, 1]`.
pub fn render_with_stats(scene: &Scene, model: &ColorTextureModel, seed: u64) -> Result<Render> {
    let colors = leaf_colors(scene.leaves.len(), model, seed)?;
    let ch = model.channels();
    let side = scene.side;
    let rows: Vec<(Vec<f64>, usize)> = (0..side)
        .into_par_iter()
        .map(|y| {
            let mut rng = stream(seed, STREAM_TEXTURE + y as u64);
            let mut row = Vec::with_capacity(side * ch);
            let mut clamped = 0usize;
            for x in 0..side {
                let leaf = scene.label_at(x, y) as usize - 1;
                for c in 0..ch {
                    let base = colors[leaf * ch + c];
                    let v = match model {
                        ColorTextureModel::UniformDiscrete { color_levels, texture_halfwidth, .. } => {
                            let h = *texture_halfwidth as i64;
                            let t = rng.random_range(-h..=h) as f64;
                            let top = (*color_levels - 1) as f64;
                            let raw = base + t;
                            clamped += usize::from(raw < 0.0 || raw > top);
                            raw.clamp(0.0, top) / top
                        }
                        ColorTextureModel::Gaussian { sigma_t, .. } => {
                            let z: f64 = rng.sample(StandardNormal);
                            let raw = base + sigma_t[c] * z;
                            clamped += usize::from(!(0.0..=1.0).contains(&raw));
                            raw.clamp(0.0, 1.0)
                        }
                    };
                    row.push(v);
                }
            }
            (row, clamped)
        })
        .collect();
    let clamped = rows.iter().map(|r| r.1).sum();
    let values = rows.into_iter().flat_map(|r| r.0).collect();
    Ok(Render { image: Image::new(side, ch, values)?, clamped })
}

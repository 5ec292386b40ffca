//! Independent estimators of leaf probabilities and partition priors.
//!
//! Monte Carlo estimators split their samples into fixed-size chunks; chunk
//! `c` draws from ChaCha stream `c` of the seed, so results do not depend on
//! the number of worker threads.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bits, PixelSet, Point2};
use crate::partitions::Partition;
use crate::prior::LeafProbTable;
use crate::specfun::{power_law_cdf, power_law_sample, RadiusLaw};

/// Samples per chunk.
pub const CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

impl Estimate {
    pub fn exact(value: f64, n_samples: u64) -> Self {
        Estimate { value, std_error: 0.0, n_samples }
    }

    /// Mean and standard error of a Bernoulli sample with `hits` successes.
    pub fn bernoulli(hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        let var = if n > 1 { p * (1.0 - p) * n as f64 / (n - 1) as f64 } else { 0.0 };
        Estimate { value: p, std_error: (var / n as f64).sqrt(), n_samples: n }
    }

    /// `(value - reference) / std_error`; `None` when the error is zero and the values differ.
    pub fn z_score(&self, reference: f64) -> Option<f64> {
        let diff = self.value - reference;
        if self.std_error > 0.0 {
            Some(diff / self.std_error)
        } else if diff == 0.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

/// Result record of an oracle run against an analytic value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub target: String,
    pub analytic: f64,
    pub z_score: Option<f64>,
}

impl OracleReport {
    pub fn new(estimate: Estimate, target: impl Into<String>, analytic: f64) -> Self {
        OracleReport {
            value: estimate.value,
            std_error: estimate.std_error,
            n_samples: estimate.n_samples,
            target: target.into(),
            analytic,
            z_score: estimate.z_score(analytic),
        }
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn chunked<T, F>(n: u64, seed: u64, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK as u64) as usize;
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = (n - c as u64 * CHUNK as u64).min(CHUNK as u64);
            body(&mut chunk_rng(seed, c), len)
        })
        .collect()
}

fn covered(a: &PixelSet, p: Point2, r: f64) -> u64 {
    a.points().iter().enumerate().fold(0u64, |m, (k, x)| if p.dist(*x) <= r { m | 1 << k } else { m })
}

fn uniform_in<R: Rng>(rng: &mut R, lo: Point2, side: (f64, f64)) -> Point2 {
    Point2::new(lo.x + side.0 * rng.random::<f64>(), lo.y + side.1 * rng.random::<f64>())
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParameter("sample count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Unconditional probability that one leaf with centre uniform on `B`
/// covers exactly `v` among `a`.
pub fn mc_leaf_probability(a: &PixelSet, v: u64, law: &RadiusLaw, n: u64, seed: u64) -> Result<Estimate> {
    check_n(n)?;
    law.validate()?;
    let lo = Point2::new(law.frame_origin(), law.frame_origin());
    let side = law.frame_side();
    let hits: u64 = chunked(n, seed, |rng, len| {
        let mut h = 0u64;
        for _ in 0..len {
            let r = power_law_sample(law, rng);
            let p = uniform_in(rng, lo, (side, side));
            if covered(a, p, r) == v {
                h += 1;
            }
        }
        h
    })
    .iter()
    .sum();
    Ok(Estimate::bernoulli(hits, n))
}

/// `P(L = v) / P(L != empty)` from one leaf sample, with a delta-method error.
pub fn mc_leaf_ratio(a: &PixelSet, v: u64, law: &RadiusLaw, n: u64, seed: u64) -> Result<Estimate> {
    check_n(n)?;
    law.validate()?;
    let lo = Point2::new(law.frame_origin(), law.frame_origin());
    let side = law.frame_side();
    let counts: Vec<(u64, u64)> = chunked(n, seed, |rng, len| {
        let (mut x, mut y) = (0u64, 0u64);
        for _ in 0..len {
            let r = power_law_sample(law, rng);
            let c = covered(a, uniform_in(rng, lo, (side, side)), r);
            if c != 0 {
                y += 1;
                if c == v {
                    x += 1;
                }
            }
        }
        (x, y)
    });
    let (x, y) = counts.iter().fold((0, 0), |s, c| (s.0 + c.0, s.1 + c.1));
    if y == 0 {
        return Err(Error::InvalidParameter("no sampled leaf hit the pixel set".into()));
    }
    let nf = n as f64;
    let (mx, my) = (x as f64 / nf, y as f64 / nf);
    let ratio = mx / my;
    // Indicators with X <= Y: E[XY] = E[X].
    let (vx, vy, cxy) = (mx * (1.0 - mx), my * (1.0 - my), mx * (1.0 - my));
    let var = (vx - 2.0 * ratio * cxy + ratio * ratio * vy) / (my * my * nf);
    Ok(Estimate { value: ratio, std_error: var.max(0.0).sqrt(), n_samples: n })
}

/// Draws one dead-leaves partition of `a`, blocks in depth order.
/// Leaves missing `a` are redrawn; positions are drawn from the part of `B`
/// within `r_max` of the bounding box of `a`, which contains every hitting position.
pub fn sample_partition<R: Rng>(a: &PixelSet, law: &RadiusLaw, rng: &mut R) -> Vec<u64> {
    let (lo, side) = hit_box(a, law);
    let full = a.full_mask();
    let mut uncovered = full;
    let mut blocks = Vec::new();
    while uncovered != 0 {
        let r = power_law_sample(law, rng);
        let p = uniform_in(rng, lo, side);
        let fresh = covered(a, p, r) & uncovered;
        if fresh != 0 {
            blocks.push(fresh);
            uncovered &= !fresh;
        }
    }
    blocks
}

fn hit_box(a: &PixelSet, law: &RadiusLaw) -> (Point2, (f64, f64)) {
    let (blo, bhi) = a.bounding_box();
    let (f0, f1) = (law.frame_origin(), law.frame_origin() + law.frame_side());
    let lo = Point2::new((blo.x - law.r_max).max(f0), (blo.y - law.r_max).max(f0));
    let hi = Point2::new((bhi.x + law.r_max).min(f1), (bhi.y + law.r_max).min(f1));
    (lo, ((hi.x - lo.x).max(0.0), (hi.y - lo.y).max(0.0)))
}

/// Empirical distribution of canonical partitions over `n` simulated runs.
pub fn mc_partition_distribution(a: &PixelSet, law: &RadiusLaw, n: u64, seed: u64) -> Result<HashMap<Vec<u64>, u64>> {
    check_n(n)?;
    law.validate()?;
    if a.is_empty() {
        return Err(Error::InvalidParameter("pixel set is empty".into()));
    }
    let (_, side) = hit_box(a, law);
    if side.0 <= 0.0 || side.1 <= 0.0 {
        return Err(Error::InvalidParameter("pixel set lies outside the leaf frame".into()));
    }
    let parts = chunked(n, seed, |rng, len| {
        let mut counts: HashMap<Vec<u64>, u64> = HashMap::new();
        for _ in 0..len {
            let mut b = sample_partition(a, law, rng);
            b.sort_by_key(|m| m.trailing_zeros());
            *counts.entry(b).or_default() += 1;
        }
        counts
    });
    let mut total: HashMap<Vec<u64>, u64> = HashMap::new();
    for c in parts {
        for (k, v) in c {
            *total.entry(k).or_default() += v;
        }
    }
    Ok(total)
}

/// Frequency of the unordered partition `m` among simulated runs.
pub fn mc_partition_prior(a: &PixelSet, m: &Partition, law: &RadiusLaw, n: u64, seed: u64) -> Result<Estimate> {
    if m.n() != a.len() {
        return Err(Error::InvalidParameter("partition does not match the pixel set".into()));
    }
    m.validate()?;
    let dist = mc_partition_distribution(a, law, n, seed)?;
    let hits = dist.get(m.canonical().blocks()).copied().unwrap_or(0);
    Ok(Estimate::bernoulli(hits, n))
}

/// Radius handling of the grid estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusQuadrature {
    /// Exact radius integral for each position (half-discrete).
    Exact,
    /// Geometric radius grid with this many cells, each weighted by its exact `f_X` mass.
    Geometric(usize),
}

struct PositionGrid {
    origin: f64,
    h: f64,
    range: (usize, usize, usize, usize),
}

impl PositionGrid {
    /// Cells of the `res x res` grid on `B` whose centres lie within `r_max` of the box of `pts`.
    fn new(pts: &[Point2], law: &RadiusLaw, res: usize) -> Self {
        let origin = law.frame_origin();
        let h = law.frame_side() / res as f64;
        let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in pts {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let idx_lo = |c: f64| (((c - law.r_max - origin) / h - 0.5).floor().max(0.0) as usize).min(res);
        let idx_hi = |c: f64| (((c + law.r_max - origin) / h + 0.5).ceil().max(0.0) as usize).min(res);
        PositionGrid { origin, h, range: (idx_lo(lo.x), idx_hi(hi.x), idx_lo(lo.y), idx_hi(hi.y)) }
    }

    fn centre(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(self.origin + (ix as f64 + 0.5) * self.h, self.origin + (iy as f64 + 0.5) * self.h)
    }

    fn rows(&self) -> std::ops::Range<usize> {
        self.range.2..self.range.3
    }

    fn cols(&self) -> std::ops::Range<usize> {
        self.range.0..self.range.1
    }
}

fn radius_cells(law: &RadiusLaw, n: usize) -> Vec<(f64, f64)> {
    let ratio = (law.r_max / law.r_min).powf(1.0 / n as f64);
    (0..n)
        .map(|k| {
            let a = law.r_min * ratio.powi(k as i32);
            let b = if k + 1 == n { law.r_max } else { law.r_min * ratio.powi(k as i32 + 1) };
            ((a * b).sqrt(), power_law_cdf(b, law) - power_law_cdf(a, law))
        })
        .collect()
}

/// Deterministic grid estimate of the scaled probability `P(L_a = v)`.
pub fn grid_leaf_probability(a: &PixelSet, v: u64, law: &RadiusLaw, pos_res: usize, radius: RadiusQuadrature) -> Result<Estimate> {
    law.validate()?;
    if pos_res < 2 {
        return Err(Error::InvalidParameter("position resolution must be at least 2".into()));
    }
    if v == 0 || v & !a.full_mask() != 0 {
        return Err(Error::InvalidParameter(format!("subset {v:#x} is empty or outside the pixel set")));
    }
    let inside: Vec<Point2> = a.select(v);
    let outside: Vec<Point2> = a.select(a.full_mask() & !v);
    let grid = PositionGrid::new(&inside, law, pos_res);
    let cells = match radius {
        RadiusQuadrature::Exact => Vec::new(),
        RadiusQuadrature::Geometric(n) if n >= 1 => radius_cells(law, n),
        RadiusQuadrature::Geometric(_) => return Err(Error::InvalidParameter("radius resolution must be at least 1".into())),
    };
    let rows: Vec<f64> = grid
        .rows()
        .into_par_iter()
        .map(|iy| {
            let mut acc = 0.0;
            for ix in grid.cols() {
                let p = grid.centre(ix, iy);
                let need = inside.iter().map(|x| p.dist(*x)).fold(0.0, f64::max);
                let avoid = outside.iter().map(|x| p.dist(*x)).fold(f64::INFINITY, f64::min);
                if need >= avoid {
                    continue;
                }
                match radius {
                    RadiusQuadrature::Exact => {
                        let lo = need.max(law.r_min);
                        let hi = avoid.min(law.r_max);
                        if hi > lo {
                            acc += power_law_cdf(hi, law) - power_law_cdf(lo, law);
                        }
                    }
                    RadiusQuadrature::Geometric(_) => {
                        for &(rho, w) in &cells {
                            if rho >= need && rho < avoid {
                                acc += w;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let cell_area = grid.h * grid.h;
    let value = rows.iter().sum::<f64>() * cell_area / law.frame_area();
    let n = (pos_res * pos_res) as u64 * match radius {
        RadiusQuadrature::Exact => 1,
        RadiusQuadrature::Geometric(k) => k as u64,
    };
    Ok(Estimate::exact(value, n))
}

/// Half-discrete grid table for every non-empty subset of `residual`, in
/// scaled units. Each position contributes the exact radius mass of the
/// nested coverage sets ordered by distance.
pub fn grid_leaf_table(a: &PixelSet, residual: u64, law: &RadiusLaw, pos_res: usize) -> Result<LeafProbTable> {
    law.validate()?;
    if residual == 0 || residual & !a.full_mask() != 0 {
        return Err(Error::InvalidParameter(format!("residual set {residual:#x} is empty or outside the pixel set")));
    }
    let members: Vec<usize> = bits(residual).collect();
    let pts: Vec<Point2> = members.iter().map(|&g| a.point(g)).collect();
    let k = pts.len();
    let grid = PositionGrid::new(&pts, law, pos_res);
    let rows: Vec<Vec<(usize, f64)>> = grid
        .rows()
        .into_par_iter()
        .map(|iy| {
            let mut out = Vec::new();
            let mut order: Vec<(f64, usize)> = vec![(0.0, 0); k];
            for ix in grid.cols() {
                let p = grid.centre(ix, iy);
                for (slot, (q, x)) in order.iter_mut().zip(pts.iter().enumerate()) {
                    *slot = (p.dist(*x), q);
                }
                order.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut v = 0usize;
                for m in 0..k {
                    v |= 1 << order[m].1;
                    let lo = order[m].0.max(law.r_min);
                    let hi = if m + 1 < k { order[m + 1].0 } else { f64::INFINITY }.min(law.r_max);
                    if hi > lo {
                        out.push((v, power_law_cdf(hi, law) - power_law_cdf(lo, law)));
                    }
                }
            }
            out
        })
        .collect();
    let mut masses = vec![0.0; 1 << k];
    for row in rows {
        for (v, w) in row {
            masses[v] += w;
        }
    }
    let scale = grid.h * grid.h / law.frame_area();
    masses.iter_mut().for_each(|m| *m *= scale);
    Ok(LeafProbTable::from_local_masses(residual, masses))
}

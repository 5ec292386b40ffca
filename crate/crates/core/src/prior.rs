//! Analytic leaf-probability tables and the recursive partition prior.
//!
//! Masses are unscaled: the kernel `2 r^-3` is integrated against the area of
//! admissible leaf centres, and the factors `1/|B|` and
//! `1/(r_min^-2 - r_max^-2)` are never applied. Only ratios enter the prior.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bits, full_mask, orientation_sign, Branch, CriticalRadiusSchedule, PixelSet, Point2, EPS_GEOM};
use crate::partitions::Partition;
use crate::specfun::{PairTerms, RadiusLaw};

const TWO_PI: f64 = 2.0 * PI;

/// Negative masses down to this value are clamped to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// Unscaled masses `P(L_a = v)` for every non-empty `v` of one residual set.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafProbTable {
    residual: u64,
    members: Vec<usize>,
    masses: Vec<f64>,
    pub nonempty_mass: f64,
}

impl LeafProbTable {
    /// Table from masses indexed by local subset bits of `residual` (entry 0 is ignored).
    pub fn from_local_masses(residual: u64, mut masses: Vec<f64>) -> Self {
        let members: Vec<usize> = bits(residual).collect();
        assert_eq!(masses.len(), 1 << members.len(), "mass vector length mismatch");
        masses[0] = 0.0;
        let nonempty_mass = masses.iter().sum();
        LeafProbTable { residual, members, masses, nonempty_mass }
    }

    /// Pixel set (mask over the parent set) the table was built on.
    pub fn residual(&self) -> u64 {
        self.residual
    }

    fn local(&self, v: u64) -> Option<usize> {
        if v & !self.residual != 0 {
            return None;
        }
        let mut out = 0usize;
        for (k, &g) in self.members.iter().enumerate() {
            if v >> g & 1 == 1 {
                out |= 1 << k;
            }
        }
        Some(out)
    }

    fn global(&self, local: usize) -> u64 {
        bits(local as u64).fold(0, |m, k| m | 1 << self.members[k])
    }

    /// Mass of `v` (mask over the parent set); zero for `v` outside the residual set or empty.
    pub fn mass(&self, v: u64) -> f64 {
        match self.local(v) {
            Some(l) if l != 0 => self.masses[l],
            _ => 0.0,
        }
    }

    /// `(v, mass)` for all non-empty `v`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        (1..self.masses.len()).map(|l| (self.global(l), self.masses[l]))
    }

    pub fn len(&self) -> usize {
        self.masses.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `{"0x<mask>": mass}` over non-empty subsets.
    pub fn to_hex_map(&self) -> BTreeMap<String, f64> {
        self.iter().map(|(v, m)| (format!("{v:#x}"), m)).collect()
    }
}

/// Sum of all masses of the table.
pub fn nonempty_mass_for(table: &LeafProbTable) -> f64 {
    table.masses.iter().skip(1).sum()
}

struct Pair {
    p: usize,
    q: usize,
    ij: PairTerms,
    ji: PairTerms,
}

/// Reduction of a summed contribution into `[0, period)`, with a small
/// window below zero absorbing rounding of near-empty regions.
fn reduce(value: f64, period: f64) -> f64 {
    let tol = (1e-4 * period).min(1e-11);
    let k = ((value + tol) / period).floor();
    let r = value - k * period;
    r.max(0.0)
}

/// Scatters per-intersection-point values into subset accumulators at
/// evaluation radius `r`, then reduces modulo `period`.
///
/// `term(pair, branch)` returns the value of the point's term on circle `p`
/// and the value of the same point seen from circle `q` (opposite branch).
/// Singletons are disambiguated with the identity that the disk of
/// `x_i` is the disjoint union of the regions of all `v` containing `i`.
fn scatter_reduce<F>(pts: &[Point2], pairs: &[Pair], r: f64, period: f64, acc: &mut Scratch, mut term: F) -> Result<()>
where
    F: FnMut(&Pair, Branch) -> Result<(f64, f64)>,
{
    acc.clear();
    for pair in pairs {
        if pair.ij.d > 2.0 * r {
            continue;
        }
        let xi = pts[pair.p];
        let beta = (pair.ij.d / (2.0 * r)).min(1.0).acos();
        for branch in Branch::BOTH {
            let t = pair.ij.alpha + branch.sign() * beta;
            let q = Point2::new(xi.x + r * t.cos(), xi.y + r * t.sin());
            let (mut inside, mut free) = (0usize, 0usize);
            for (k, &x) in pts.iter().enumerate() {
                let d = q.dist(x);
                if d < r - EPS_GEOM {
                    inside |= 1 << k;
                } else if d <= r + EPS_GEOM {
                    free |= 1 << k;
                }
            }
            free |= (1 << pair.p) | (1 << pair.q);
            free &= !inside;
            let (on_i, on_j) = term(pair, branch)?;
            // Enumerate all subsets of `free` added to `inside`.
            let mut sub = free;
            loop {
                let v = inside | sub;
                if v != 0 {
                    let c = orientation_sign(v >> pair.p & 1 == 1, v >> pair.q & 1 == 1, branch);
                    // Seen from circle q the point has the opposite branch, hence the opposite sign.
                    acc.add(v, c * (on_i - on_j));
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & free;
            }
        }
    }
    let n = pts.len();
    acc.comp[..n].iter_mut().for_each(|c| *c = 0.0);
    for idx in 0..acc.touched.len() {
        let v = acc.touched[idx];
        if v.count_ones() >= 2 {
            let val = reduce(acc.raw[v], period);
            acc.reduced[v] = val;
            for k in bits(v as u64) {
                acc.comp[k] += val;
            }
        }
    }
    for idx in 0..acc.touched.len() {
        let v = acc.touched[idx];
        if v.count_ones() == 1 {
            let k = v.trailing_zeros() as usize;
            let expected = period - acc.comp[k];
            let raw = acc.raw[v];
            let val = raw - period * ((raw - expected) / period).round();
            acc.reduced[v] = val.clamp(0.0, period);
        }
    }
    Ok(())
}

struct Scratch {
    raw: Vec<f64>,
    reduced: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
    comp: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        let size = 1usize << k;
        Scratch { raw: vec![0.0; size], reduced: vec![0.0; size], seen: vec![false; size], touched: Vec::new(), comp: vec![0.0; k] }
    }

    fn add(&mut self, v: usize, x: f64) {
        if !self.seen[v] {
            self.seen[v] = true;
            self.touched.push(v);
        }
        self.raw[v] += x;
    }

    fn clear(&mut self) {
        for &v in &self.touched {
            self.raw[v] = 0.0;
            self.reduced[v] = 0.0;
            self.seen[v] = false;
        }
        self.touched.clear();
    }
}

fn local_geometry(a: &PixelSet, residual: u64) -> Result<(Vec<usize>, Vec<Point2>, Vec<Pair>)> {
    let members: Vec<usize> = bits(residual).collect();
    let pts: Vec<Point2> = members.iter().map(|&g| a.point(g)).collect();
    let mut pairs = Vec::new();
    for p in 0..pts.len() {
        for q in p + 1..pts.len() {
            pairs.push(Pair { p, q, ij: PairTerms::new(pts[p], pts[q])?, ji: PairTerms::new(pts[q], pts[p])? });
        }
    }
    Ok((members, pts, pairs))
}

/// Table over all of `a`.
pub fn leaf_prob_table(a: &PixelSet, law: &RadiusLaw) -> Result<LeafProbTable> {
    leaf_prob_table_on(a, a.full_mask(), law)
}

/// Table over the pixels of `a` selected by `residual`.
pub fn leaf_prob_table_on(a: &PixelSet, residual: u64, law: &RadiusLaw) -> Result<LeafProbTable> {
    law.validate()?;
    if residual == 0 || residual & !a.full_mask() != 0 {
        return Err(Error::InvalidParameter(format!("residual set {residual:#x} is empty or outside the pixel set")));
    }
    let (members, pts, pairs) = local_geometry(a, residual)?;
    let k = pts.len();
    if k > 30 {
        return Err(Error::InvalidParameter(format!("leaf tables are limited to 30 pixels, got {k}")));
    }
    let schedule = CriticalRadiusSchedule::build(a, residual, law.r_min, law.r_max)?.values();
    let mut masses = vec![0.0f64; 1 << k];
    let mut acc = Scratch::new(k);
    for w in schedule.windows(2) {
        let (r0, r1) = (w[0], w[1]);
        let period = TWO_PI * (r1 / r0).ln();
        let rm = 0.5 * (r0 + r1);
        scatter_reduce(&pts, &pairs, rm, period, &mut acc, |pair, branch| {
            let on_i = pair.ij.b(r1, branch)? - pair.ij.b(r0, branch)?;
            let on_j = pair.ji.b(r1, branch.flip())? - pair.ji.b(r0, branch.flip())?;
            Ok((on_i, on_j))
        })?;
        for &v in &acc.touched {
            masses[v] += acc.reduced[v];
        }
    }
    // Disk term below each pixel's first pair radius.
    for i in 0..k {
        let r_star = pairs
            .iter()
            .filter(|p| p.p == i || p.q == i)
            .map(|p| p.ij.d / 2.0)
            .fold(f64::INFINITY, f64::min);
        let upper = r_star.min(law.r_max);
        if upper > law.r_min {
            masses[1 << i] += TWO_PI * (upper / law.r_min).ln();
        }
    }
    for (v, m) in masses.iter_mut().enumerate().skip(1) {
        if *m < 0.0 {
            if *m < -NEGATIVE_CLAMP {
                return Err(Error::Internal(format!("negative leaf mass {m} for local subset {v:#x}")));
            }
            *m = 0.0;
        }
    }
    let nonempty_mass = masses.iter().skip(1).sum();
    Ok(LeafProbTable { residual, members, masses, nonempty_mass })
}

/// Area of the region of admissible centres for every non-empty subset of
/// `a` at one radius, from the same point scatter as the tables.
pub fn region_areas(a: &PixelSet, r: f64) -> Result<BTreeMap<u64, f64>> {
    let (members, pts, pairs) = local_geometry(a, a.full_mask())?;
    let mut acc = Scratch::new(pts.len());
    let disk = PI * r * r;
    scatter_reduce(&pts, &pairs, r, disk, &mut acc, |pair, branch| {
        Ok((pair.ij.area_term(r, branch)?, pair.ji.area_term(r, branch.flip())?))
    })?;
    let mut out = BTreeMap::new();
    for &v in &acc.touched {
        out.insert(bits(v as u64).fold(0u64, |m, k| m | 1 << members[k]), acc.reduced[v]);
    }
    for i in 0..pts.len() {
        let isolated = pairs.iter().filter(|p| p.p == i || p.q == i).all(|p| p.ij.d > 2.0 * r);
        if isolated {
            out.insert(1 << members[i], disk);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    Ordered,
    Unordered,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorResult {
    pub value: f64,
    pub log_value: f64,
    pub mode: PriorMode,
}

impl PriorResult {
    fn from_log(log_value: f64, mode: PriorMode) -> Self {
        PriorResult { value: log_value.exp(), log_value, mode }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Builder of the leaf table of one residual set.
pub type TableSource = Arc<dyn Fn(&PixelSet, u64, &RadiusLaw) -> Result<LeafProbTable> + Send + Sync>;

/// Prior evaluator for one pixel set and radius law, caching leaf tables per
/// residual set and unordered priors per residual partition.
pub struct PriorEngine {
    a: PixelSet,
    law: RadiusLaw,
    tables: DashMap<u64, Arc<LeafProbTable>>,
    memo: DashMap<Vec<u64>, f64>,
    memo_enabled: bool,
    source: Option<TableSource>,
}

impl PriorEngine {
    pub fn new(a: PixelSet, law: RadiusLaw) -> Result<Self> {
        law.validate()?;
        if a.is_empty() {
            return Err(Error::InvalidParameter("pixel set is empty".into()));
        }
        Ok(PriorEngine { a, law, tables: DashMap::new(), memo: DashMap::new(), memo_enabled: true, source: None })
    }

    /// Disables the unordered-prior memo; leaf tables are still cached.
    pub fn without_memo(mut self) -> Self {
        self.memo_enabled = false;
        self
    }

    /// Replaces the analytic tables by `source`, for example a grid estimate.
    pub fn with_table_source(mut self, source: TableSource) -> Self {
        self.source = Some(source);
        self.tables.clear();
        self.memo.clear();
        self
    }

    pub fn pixels(&self) -> &PixelSet {
        &self.a
    }

    pub fn law(&self) -> &RadiusLaw {
        &self.law
    }

    pub fn table(&self, residual: u64) -> Result<Arc<LeafProbTable>> {
        if let Some(t) = self.tables.get(&residual) {
            return Ok(Arc::clone(&t));
        }
        let t = Arc::new(match &self.source {
            Some(f) => f(&self.a, residual, &self.law)?,
            None => leaf_prob_table_on(&self.a, residual, &self.law)?,
        });
        self.tables.insert(residual, Arc::clone(&t));
        Ok(t)
    }

    /// Builds every table of every non-empty residual set, in parallel.
    pub fn precompute_tables(&self) -> Result<()> {
        let all = full_mask(self.a.len());
        (1..=all).into_par_iter().try_for_each(|m| self.table(m).map(|_| ()))
    }

    /// `P(L_residual = v) / P(L_residual != empty)`.
    pub fn layer_ratio(&self, residual: u64, v: u64) -> Result<f64> {
        let t = self.table(residual)?;
        if !(t.nonempty_mass > 0.0) {
            return Err(Error::ZeroMass { residual });
        }
        Ok(t.mass(v) / t.nonempty_mass)
    }

    fn check_partition(&self, m: &Partition) -> Result<()> {
        if m.n() != self.a.len() {
            return Err(Error::InvalidParameter(format!(
                "partition is over {} pixels, engine over {}",
                m.n(),
                self.a.len()
            )));
        }
        m.validate()
    }

    /// Per-layer ratios of a depth-ordered partition, top layer first.
    pub fn layer_ratios(&self, m: &Partition) -> Result<Vec<f64>> {
        self.check_partition(m)?;
        let mut residual = self.a.full_mask();
        let mut out = Vec::with_capacity(m.len());
        for &v in m.blocks() {
            out.push(self.layer_ratio(residual, v)?);
            residual &= !v;
        }
        Ok(out)
    }

    /// Prior of a depth-ordered partition (block 0 on top).
    pub fn prior_ordered(&self, m: &Partition) -> Result<PriorResult> {
        let log: f64 = self.layer_ratios(m)?.iter().map(|r| r.ln()).sum();
        Ok(PriorResult::from_log(log, PriorMode::Ordered))
    }

    /// Prior of an unordered partition, summed over all depth orders.
    pub fn prior_unordered(&self, m: &Partition) -> Result<PriorResult> {
        self.check_partition(m)?;
        let c = m.canonical();
        Ok(PriorResult::from_log(self.log_unordered(c.blocks())?, PriorMode::Unordered))
    }

    /// Log prior of the canonical blocks `blocks` on their union.
    pub fn log_unordered(&self, blocks: &[u64]) -> Result<f64> {
        if blocks.is_empty() {
            return Ok(0.0);
        }
        if self.memo_enabled {
            if let Some(v) = self.memo.get(blocks) {
                return Ok(*v);
            }
        }
        let residual = blocks.iter().fold(0, |a, b| a | b);
        let table = self.table(residual)?;
        if !(table.nonempty_mass > 0.0) {
            return Err(Error::ZeroMass { residual });
        }
        let log_nonempty = table.nonempty_mass.ln();
        let mut terms = Vec::with_capacity(blocks.len());
        let mut rest = Vec::with_capacity(blocks.len());
        for (idx, &v) in blocks.iter().enumerate() {
            let mass = table.mass(v);
            if mass == 0.0 {
                continue;
            }
            rest.clear();
            rest.extend(blocks.iter().enumerate().filter(|&(k, _)| k != idx).map(|(_, &b)| b));
            let sub = self.log_unordered(&rest)?;
            terms.push(mass.ln() - log_nonempty + sub);
        }
        let value = log_sum_exp(&terms);
        if self.memo_enabled {
            self.memo.insert(blocks.to_vec(), value);
        }
        Ok(value)
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }
}

/// Ordered prior without an engine.
pub fn prior_ordered(a: &PixelSet, m: &Partition, law: &RadiusLaw) -> Result<PriorResult> {
    PriorEngine::new(a.clone(), *law)?.prior_ordered(m)
}

/// Unordered prior without an engine.
pub fn prior_unordered(a: &PixelSet, m: &Partition, law: &RadiusLaw) -> Result<PriorResult> {
    PriorEngine::new(a.clone(), *law)?.prior_unordered(m)
}

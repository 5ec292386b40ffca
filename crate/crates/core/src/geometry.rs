//! Circle-arrangement primitives.
//!
//! All leaves share one radius `r` at a time, so every question about the
//! region of admissible leaf centres reduces to circles of equal radius drawn
//! around the pixels. Pixels are indexed by their position in a [`PixelSet`],
//! and subsets are `u64` bitmasks over those indices.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance in pixel units for every distance-versus-radius comparison.
pub const EPS_GEOM: f64 = 1e-9;

/// Arguments of `acos` in `[1, 1 + BETA_CLAMP]` are clamped to 1.
pub const BETA_CLAMP: f64 = 1e-12;

/// Largest pixel set addressable by a `u64` mask.
pub const MAX_PIXELS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Unit vector at angle `theta`.
pub fn unit(theta: f64) -> Point2 {
    Point2::new(theta.cos(), theta.sin())
}

/// Finite set of distinct sample points, stored in row-major `(y, x)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelSet {
    points: Vec<Point2>,
}

impl PixelSet {
    /// Sorts the points row-major by `(y, x)`; rejects duplicates, non-finite
    /// coordinates and sets larger than [`MAX_PIXELS`].
    pub fn new(mut points: Vec<Point2>) -> Result<Self> {
        if points.len() > MAX_PIXELS {
            return Err(Error::InvalidParameter(format!(
                "pixel sets are limited to {MAX_PIXELS} points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite point {p:?}")));
        }
        points.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
        for w in points.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Degenerate(format!("duplicate pixel {:?}", w[0])));
            }
        }
        Ok(PixelSet { points })
    }

    /// Integer lattice `{0..w} x {0..h}` with unit spacing.
    pub fn grid(w: usize, h: usize) -> Result<Self> {
        let pts = (0..h)
            .flat_map(|y| (0..w).map(move |x| Point2::new(x as f64, y as f64)))
            .collect();
        PixelSet::new(pts)
    }

    /// Axis-aligned window of integer pixels with lower-left corner `(x0, y0)`.
    pub fn window(x0: i64, y0: i64, w: usize, h: usize) -> Result<Self> {
        let pts = (0..h as i64)
            .flat_map(|dy| (0..w as i64).map(move |dx| Point2::new((x0 + dx) as f64, (y0 + dy) as f64)))
            .collect();
        PixelSet::new(pts)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point2 {
        self.points[i]
    }

    pub fn full_mask(&self) -> u64 {
        full_mask(self.points.len())
    }

    pub fn index_of(&self, p: Point2) -> Option<usize> {
        self.points.iter().position(|&q| q == p)
    }

    /// Mask of the given points; errors if any point is not a member.
    pub fn mask_of(&self, pts: &[Point2]) -> Result<u64> {
        let mut mask = 0u64;
        for &p in pts {
            let i = self
                .index_of(p)
                .ok_or_else(|| Error::InvalidParameter(format!("point {p:?} is not in the pixel set")))?;
            mask |= 1 << i;
        }
        Ok(mask)
    }

    /// Points selected by `mask`, in enumeration order.
    pub fn select(&self, mask: u64) -> Vec<Point2> {
        bits(mask).map(|i| self.points[i]).collect()
    }

    /// Smallest axis-aligned box `[lo, hi]` containing the set.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

pub fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Indices of the set bits of `mask`, ascending.
pub fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(i)
        }
    })
}

/// Which of the two circle-circle intersections: `t = alpha + beta` or `t = alpha - beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Plus, Branch::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Branch {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }
}

fn distinct(xi: Point2, xj: Point2) -> Result<()> {
    if xi == xj {
        Err(Error::Degenerate(format!("coincident points {xi:?}")))
    } else {
        Ok(())
    }
}

/// Radius at which the circles around `xi` and `xj` start to intersect.
pub fn pair_critical_radius(xi: Point2, xj: Point2) -> Result<f64> {
    distinct(xi, xj)?;
    Ok(xi.dist(xj) / 2.0)
}

/// Circumradius of the triangle `xi, xj, xk`, or `None` when collinear.
pub fn triple_circumradius(xi: Point2, xj: Point2, xk: Point2) -> Result<Option<f64>> {
    distinct(xi, xj)?;
    distinct(xj, xk)?;
    distinct(xi, xk)?;
    let mut s = [xi.dist(xj), xj.dist(xk), xi.dist(xk)];
    s.sort_by(|a, b| b.total_cmp(a));
    let [a, b, c] = s;
    // Heron in the cancellation-free ordering a >= b >= c.
    let prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    if prod <= 0.0 {
        return Ok(None);
    }
    let area = 0.25 * prod.sqrt();
    if area <= 1e-14 * a * a {
        return Ok(None);
    }
    Ok(Some(a * b * c / (4.0 * area)))
}

/// Angle of `xj - xi` using the sign rule `sgn(dy)`, falling back to
/// `sgn(dx)` when `dy = 0`. Horizontal vectors pointing left give `-pi`.
pub fn alpha_angle(xi: Point2, xj: Point2) -> Result<f64> {
    distinct(xi, xj)?;
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    if dy == 0.0 {
        return Ok(if dx > 0.0 { 0.0 } else { -PI });
    }
    Ok(dy.atan2(dx))
}

/// Sign factor `s_ij` of the angle rule.
pub fn s_ij(xi: Point2, xj: Point2) -> i8 {
    let dy = xj.y - xi.y;
    let dx = xj.x - xi.x;
    let v = if dy != 0.0 { dy } else { dx };
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Half-angle `beta(r) = acos(d / 2r)`; `None` if the circles do not meet.
pub fn beta_of_r(d: f64, r: f64) -> Option<f64> {
    let q = d / (2.0 * r);
    if q > 1.0 + BETA_CLAMP {
        None
    } else {
        Some(q.min(1.0).acos())
    }
}

/// One of the two intersection points of the radius-`r` circles around
/// pixels `i` and `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectionPoint {
    pub i: usize,
    pub j: usize,
    pub branch: Branch,
    pub alpha: f64,
    pub s_ij: i8,
    pub beta: f64,
    pub point: Point2,
}

impl IntersectionPoint {
    pub fn new(a: &PixelSet, i: usize, j: usize, branch: Branch, r: f64) -> Result<Option<Self>> {
        if i == j {
            return Err(Error::Degenerate("intersection point needs i != j".into()));
        }
        let (xi, xj) = (a.point(i), a.point(j));
        let alpha = alpha_angle(xi, xj)?;
        let Some(beta) = beta_of_r(xi.dist(xj), r) else {
            return Ok(None);
        };
        let t = alpha + branch.sign() * beta;
        Ok(Some(IntersectionPoint {
            i,
            j,
            branch,
            alpha,
            s_ij: s_ij(xi, xj),
            beta,
            point: Point2::new(xi.x + r * t.cos(), xi.y + r * t.sin()),
        }))
    }
}

/// Intersections of the radius-`r` circles around `xi` and `xj`, labelled by
/// branch: empty, one tangent point, or both points.
pub fn intersection_points(xi: Point2, xj: Point2, r: f64) -> Result<Vec<(Branch, Point2)>> {
    distinct(xi, xj)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let alpha = alpha_angle(xi, xj)?;
    let Some(beta) = beta_of_r(xi.dist(xj), r) else {
        return Ok(Vec::new());
    };
    let at = |b: Branch| {
        let t = alpha + b.sign() * beta;
        (b, Point2::new(xi.x + r * t.cos(), xi.y + r * t.sin()))
    };
    if beta == 0.0 {
        Ok(vec![at(Branch::Plus)])
    } else {
        Ok(vec![at(Branch::Plus), at(Branch::Minus)])
    }
}

/// Whether a leaf of radius `r` centred at `p` covers exactly the pixels of
/// `v` among `a`. Covered means distance `<= r`; ties within [`EPS_GEOM`]
/// count as covered.
pub fn membership_in_region(p: Point2, r: f64, v: u64, a: &PixelSet) -> bool {
    if v == 0 {
        return false;
    }
    a.points().iter().enumerate().all(|(k, &x)| {
        let covered = p.dist(x) <= r + EPS_GEOM;
        covered == (v >> k & 1 == 1)
    })
}

/// Whether intersection point `q` lies on the closure of the region for `v`:
/// members within `r`, non-members at least `r` away, both up to [`EPS_GEOM`].
pub fn delta_singular(q: Point2, r: f64, v: u64, a: &PixelSet) -> bool {
    a.points().iter().enumerate().all(|(k, &x)| {
        let d = q.dist(x);
        if v >> k & 1 == 1 {
            d <= r + EPS_GEOM
        } else {
            d >= r - EPS_GEOM
        }
    })
}

/// Empty-leaf variant: every pixel at least `r` away.
pub fn delta_singular_empty(q: Point2, r: f64, a: &PixelSet) -> bool {
    a.points().iter().all(|&x| q.dist(x) >= r - EPS_GEOM)
}

/// Combined orientation and endpoint sign of an intersection point's term.
pub fn orientation_sign(i_in_v: bool, j_in_v: bool, branch: Branch) -> f64 {
    if i_in_v != j_in_v {
        -branch.sign()
    } else {
        branch.sign()
    }
}

/// Classification of `a` around a point at distance-test radius `r`:
/// `(inside, free)` masks. Pixels not in either lie strictly outside.
pub fn classify(q: Point2, r: f64, a: &PixelSet, within: u64) -> (u64, u64) {
    let mut inside = 0u64;
    let mut free = 0u64;
    for k in bits(within) {
        let d = q.dist(a.point(k));
        if d < r - EPS_GEOM {
            inside |= 1 << k;
        } else if d <= r + EPS_GEOM {
            free |= 1 << k;
        }
    }
    (inside, free)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RadiusTag {
    Bound,
    Pair(usize, usize),
    Triple(usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalRadius {
    pub r: f64,
    pub tags: Vec<RadiusTag>,
}

/// Sorted critical radii of a pixel subset, clamped to `[r_min, r_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalRadiusSchedule {
    pub radii: Vec<CriticalRadius>,
}

impl CriticalRadiusSchedule {
    /// Schedule for the pixels of `a` selected by `within`.
    pub fn build(a: &PixelSet, within: u64, r_min: f64, r_max: f64) -> Result<Self> {
        let idx: Vec<usize> = bits(within).collect();
        let mut raw: Vec<(f64, RadiusTag)> = vec![(r_min, RadiusTag::Bound), (r_max, RadiusTag::Bound)];
        let keep = |r: f64| r > r_min && r < r_max;
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate().skip(p + 1) {
                let r = pair_critical_radius(a.point(i), a.point(j))?;
                if keep(r) {
                    raw.push((r, RadiusTag::Pair(i, j)));
                }
                for &k in &idx[q + 1..] {
                    if let Some(r) = triple_circumradius(a.point(i), a.point(j), a.point(k))? {
                        if keep(r) {
                            raw.push((r, RadiusTag::Triple(i, j, k)));
                        }
                    }
                }
            }
        }
        raw.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut radii: Vec<CriticalRadius> = Vec::new();
        for (r, tag) in raw {
            match radii.last_mut() {
                Some(last) if r - last.r < EPS_GEOM => last.tags.push(tag),
                _ => radii.push(CriticalRadius { r, tags: vec![tag] }),
            }
        }
        // The upper bound may have merged into a critical radius just below it.
        if let Some(last) = radii.last_mut() {
            last.r = r_max;
        }
        radii.first_mut().expect("bounds present").r = r_min;
        for c in &mut radii {
            c.tags.sort();
            c.tags.dedup();
        }
        Ok(CriticalRadiusSchedule { radii })
    }

    pub fn values(&self) -> Vec<f64> {
        self.radii.iter().map(|c| c.r).collect()
    }
}

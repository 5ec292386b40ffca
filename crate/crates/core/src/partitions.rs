//! Set partitions of a pixel set.
//!
//! Blocks are `u64` masks over pixel indices. A partition's block order is
//! significant for ordered (depth-indexed) use; [`Partition::canonical`]
//! orders blocks by their lowest pixel, which is the restricted-growth order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bits, full_mask, PixelSet, Point2};

/// Default enumeration cap on `|a|`.
pub const DEFAULT_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    n: usize,
    blocks: Vec<u64>,
}

impl Partition {
    /// Validates that `blocks` are non-empty, disjoint and cover `0..n`.
    pub fn new(n: usize, blocks: Vec<u64>) -> Result<Self> {
        let p = Partition { n, blocks };
        p.validate()?;
        Ok(p)
    }

    /// Partition of a subset: blocks must cover exactly `support`.
    pub fn on_support(n: usize, support: u64, blocks: Vec<u64>) -> Result<Self> {
        let p = Partition { n, blocks };
        p.check(support)?;
        Ok(p)
    }

    pub fn empty(n: usize) -> Self {
        Partition { n, blocks: Vec::new() }
    }

    /// From restricted-growth labels `0..k`, one per pixel.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut blocks = vec![0u64; k];
        for (i, &l) in labels.iter().enumerate() {
            blocks[l] |= 1 << i;
        }
        if blocks.contains(&0) {
            return Err(Error::InvalidParameter("labels must be contiguous".into()));
        }
        Partition::new(labels.len(), blocks)
    }

    /// Groups pixels by arbitrary label values; blocks follow first appearance.
    pub fn group_by<T: PartialEq>(labels: &[T]) -> Result<Self> {
        let mut keys: Vec<&T> = Vec::new();
        let mut blocks: Vec<u64> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            match keys.iter().position(|k| *k == l) {
                Some(b) => blocks[b] |= 1 << i,
                None => {
                    keys.push(l);
                    blocks.push(1 << i);
                }
            }
        }
        Partition::new(labels.len(), blocks)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(full_mask(self.n))
    }

    fn check(&self, support: u64) -> Result<()> {
        let mut seen = 0u64;
        for &b in &self.blocks {
            if b == 0 {
                return Err(Error::InvalidParameter("partition contains an empty block".into()));
            }
            if b & seen != 0 {
                return Err(Error::InvalidParameter("partition blocks overlap".into()));
            }
            seen |= b;
        }
        if seen != support {
            return Err(Error::InvalidParameter(format!(
                "partition covers {seen:#x}, expected {support:#x}"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[u64] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn support(&self) -> u64 {
        self.blocks.iter().fold(0, |a, b| a | b)
    }

    /// Blocks sorted by lowest member.
    pub fn canonical(&self) -> Partition {
        let mut blocks = self.blocks.clone();
        blocks.sort_by_key(|b| b.trailing_zeros());
        Partition { n: self.n, blocks }
    }

    pub fn is_canonical(&self) -> bool {
        self.blocks.windows(2).all(|w| w[0].trailing_zeros() < w[1].trailing_zeros())
    }

    /// Blocks intersected with `keep`, empties dropped, order preserved.
    pub fn restrict(&self, keep: u64) -> Partition {
        Partition {
            n: self.n,
            blocks: self.blocks.iter().map(|b| b & keep).filter(|&b| b != 0).collect(),
        }
    }

    /// Restricted-growth labels `0..k` for pixels of the support; `None` elsewhere.
    pub fn labels(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n];
        for (k, &b) in self.canonical().blocks.iter().enumerate() {
            for i in bits(b) {
                out[i] = Some(k);
            }
        }
        out
    }

    /// Compact label string, one base-36 digit per pixel starting at `1`.
    pub fn label_string(&self) -> String {
        self.labels()
            .iter()
            .map(|l| match l {
                Some(k) => std::char::from_digit((*k as u32 + 1) % 36, 36).unwrap_or('?'),
                None => '.',
            })
            .collect()
    }

    pub fn membership_map(&self, a: &PixelSet) -> MembershipMap {
        let mut labels = BTreeMap::new();
        for (k, &b) in self.blocks.iter().enumerate() {
            for i in bits(b) {
                labels.insert(PointKey::from(a.point(i)), k + 1);
            }
        }
        MembershipMap { labels }
    }

    /// JSON form: blocks of integer `[x, y]` pairs, in the partition's block order.
    pub fn to_coords(&self, a: &PixelSet) -> Result<Vec<Vec<[i64; 2]>>> {
        self.blocks
            .iter()
            .map(|&b| {
                bits(b)
                    .map(|i| {
                        let p = a.point(i);
                        if p.x.fract() != 0.0 || p.y.fract() != 0.0 {
                            return Err(Error::InvalidParameter(format!(
                                "pixel {p:?} has non-integer coordinates"
                            )));
                        }
                        Ok([p.x as i64, p.y as i64])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn from_coords(a: &PixelSet, blocks: &[Vec<[i64; 2]>]) -> Result<Self> {
        let masks = blocks
            .iter()
            .map(|b| {
                let pts: Vec<Point2> = b.iter().map(|&[x, y]| Point2::new(x as f64, y as f64)).collect();
                let m = a.mask_of(&pts)?;
                if m.count_ones() as usize != pts.len() {
                    return Err(Error::InvalidParameter("pixel repeated within a block".into()));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::new(a.len(), masks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointKey {
    pub y: OrdF64,
    pub x: OrdF64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OrdF64(pub f64);

impl PartialEq for OrdF64 {
    fn eq(&self, o: &Self) -> bool {
        self.0.total_cmp(&o.0).is_eq()
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

impl From<Point2> for PointKey {
    fn from(p: Point2) -> Self {
        PointKey { y: OrdF64(p.y), x: OrdF64(p.x) }
    }
}

/// Pixel to leaf index, `1..=n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipMap {
    pub labels: BTreeMap<PointKey, usize>,
}

impl MembershipMap {
    pub fn get(&self, p: Point2) -> Option<usize> {
        self.labels.get(&PointKey::from(p)).copied()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.values().copied().max().unwrap_or(0)
    }

    /// Image of the map is `1..=n` without gaps.
    pub fn is_contiguous(&self) -> bool {
        let mut used = vec![false; self.num_labels()];
        for &l in self.labels.values() {
            if l == 0 {
                return false;
            }
            used[l - 1] = true;
        }
        used.into_iter().all(|u| u)
    }
}

/// Bell numbers `B_0..=B_n`.
pub fn bell_numbers(n: usize) -> Vec<u128> {
    // Bell triangle: each row starts with the last entry of the previous row.
    let mut out = vec![1u128];
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let v = next.last().unwrap().saturating_add(x);
            next.push(v);
        }
        out.push(next[0]);
        row = next;
    }
    out
}

pub fn bell(n: usize) -> u128 {
    bell_numbers(n)[n]
}

/// Checks `n` against `cap`, returning the projected count on failure.
pub fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::CapExceeded { size: n, cap, bell: bell(n.min(100)) })
    } else {
        Ok(())
    }
}

/// Streams all partitions of `n` elements as restricted-growth strings in
/// lexicographic order, optionally restricted to strings starting with a prefix.
#[derive(Clone, Debug)]
pub struct PartitionIter {
    n: usize,
    fixed: usize,
    rgs: Vec<usize>,
    maxes: Vec<usize>,
    done: bool,
}

impl PartitionIter {
    pub fn new(n: usize) -> Self {
        PartitionIter::with_prefix(n, &[]).expect("empty prefix is valid")
    }

    /// Sub-stream of strings beginning with `prefix`.
    pub fn with_prefix(n: usize, prefix: &[usize]) -> Result<Self> {
        if prefix.len() > n {
            return Err(Error::InvalidParameter("prefix longer than the set".into()));
        }
        let mut rgs = vec![0usize; n];
        let mut maxes = vec![0usize; n];
        let mut m = 0usize;
        for (i, &l) in prefix.iter().enumerate() {
            let bound = if i == 0 { 0 } else { m + 1 };
            if l > bound {
                return Err(Error::InvalidParameter(format!("{prefix:?} is not a restricted-growth prefix")));
            }
            rgs[i] = l;
            m = m.max(l);
            maxes[i] = m;
        }
        for i in prefix.len()..n {
            maxes[i] = m;
        }
        Ok(PartitionIter { n, fixed: prefix.len().max(1).min(n), rgs, maxes, done: false })
    }

    fn current(&self) -> Partition {
        let k = if self.n == 0 { 0 } else { self.maxes[self.n - 1] + 1 };
        let mut blocks = vec![0u64; k];
        for (i, &l) in self.rgs.iter().enumerate() {
            blocks[l] |= 1 << i;
        }
        Partition { n: self.n, blocks }
    }

    fn advance(&mut self) {
        for i in (self.fixed..self.n).rev() {
            let bound = self.maxes[i - 1] + 1;
            if self.rgs[i] < bound {
                self.rgs[i] += 1;
                self.maxes[i] = self.maxes[i - 1].max(self.rgs[i]);
                for j in i + 1..self.n {
                    self.rgs[j] = 0;
                    self.maxes[j] = self.maxes[i];
                }
                return;
            }
        }
        self.done = true;
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let p = self.current();
        if self.n == 0 {
            self.done = true;
        } else {
            self.advance();
        }
        Some(p)
    }
}

/// All restricted-growth prefixes of length `depth` for `n` elements.
pub fn prefixes(n: usize, depth: usize) -> Vec<Vec<usize>> {
    let depth = depth.min(n);
    if depth == 0 {
        return vec![Vec::new()];
    }
    PartitionIter::new(depth).map(|p| p.labels().into_iter().map(|l| l.unwrap_or(0)).collect()).collect()
}

/// Streams the canonical partitions of `a`; errors above `cap`.
pub fn enumerate_partitions(a: &PixelSet, cap: usize) -> Result<PartitionIter> {
    check_cap(a.len(), cap)?;
    Ok(PartitionIter::new(a.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bell_counts() {
        assert_eq!(PartitionIter::new(1).count(), 1);
        assert_eq!(PartitionIter::new(3).count(), 5);
        assert_eq!(PartitionIter::new(9).count(), 21147);
        assert_eq!(bell(9), 21147);
        assert_eq!(PartitionIter::new(0).count(), 1);
    }

    #[test]
    fn lexicographic_and_valid() {
        let all: Vec<Partition> = PartitionIter::new(5).collect();
        let labels: Vec<Vec<Option<usize>>> = all.iter().map(|p| p.labels()).collect();
        for w in labels.windows(2) {
            assert!(w[0] < w[1]);
        }
        for p in &all {
            p.validate().unwrap();
            assert!(p.is_canonical());
        }
    }

    #[test]
    fn prefix_substreams_cover_everything() {
        let n = 7;
        let mut total = 0;
        let mut seen = std::collections::HashSet::new();
        for pre in prefixes(n, 3) {
            for p in PartitionIter::with_prefix(n, &pre).unwrap() {
                assert!(seen.insert(p.clone()));
                total += 1;
            }
        }
        assert_eq!(total, bell(n) as usize);
        assert!(PartitionIter::with_prefix(4, &[0, 2]).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let a = PixelSet::grid(4, 4).unwrap();
        match enumerate_partitions(&a, DEFAULT_CAP) {
            Err(Error::CapExceeded { size, bell, .. }) => {
                assert_eq!(size, 16);
                assert_eq!(bell, 10_480_142_147);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    fn example_partition(a: &PixelSet) -> Partition {
        let pt = |x: f64, y: f64| Point2::new(x, y);
        let v1 = a.mask_of(&[pt(1., 1.), pt(1., 2.), pt(2., 1.), pt(2., 2.)]).unwrap();
        let v2 = a.mask_of(&[pt(0., 0.), pt(0., 1.), pt(1., 0.), pt(0., 2.)]).unwrap();
        let v3 = a.mask_of(&[pt(2., 0.)]).unwrap();
        Partition::new(a.len(), vec![v1, v2, v3]).unwrap()
    }

    #[test]
    fn membership_of_example() {
        let a = PixelSet::grid(3, 3).unwrap();
        let m = example_partition(&a).membership_map(&a);
        let expect = [[2, 2, 3], [2, 1, 1], [2, 1, 1]];
        for (y, row) in expect.iter().enumerate() {
            for (x, &l) in row.iter().enumerate() {
                assert_eq!(m.get(Point2::new(x as f64, y as f64)), Some(l));
            }
        }
        assert!(m.is_contiguous());
        let whole = Partition::new(9, vec![a.full_mask()]).unwrap().membership_map(&a);
        assert!(whole.labels.values().all(|&l| l == 1));
        let singles = Partition::new(9, (0..9).map(|i| 1u64 << i).collect()).unwrap().membership_map(&a);
        let mut ls: Vec<usize> = singles.labels.values().copied().collect();
        ls.sort();
        assert_eq!(ls, (1..=9).collect::<Vec<_>>());
    }

    #[test]
    fn restrict_examples() {
        let a = PixelSet::grid(3, 3).unwrap();
        let m = example_partition(&a);
        assert_eq!(m.restrict(a.full_mask()), m);
        assert!(m.restrict(0).is_empty());
        let rest = m.restrict(a.full_mask() & !m.blocks()[0]);
        assert_eq!(rest.blocks(), &m.blocks()[1..]);
        assert_eq!(rest.support().count_ones(), 5);
    }

    #[test]
    fn canonical_examples() {
        let a = PixelSet::grid(3, 3).unwrap();
        let m = example_partition(&a);
        let mut rev = m.blocks().to_vec();
        rev.reverse();
        let r = Partition::new(9, rev).unwrap();
        assert_eq!(r.canonical(), m.canonical());
        assert_eq!(m.canonical().canonical(), m.canonical());
        assert_eq!(m.canonical().label_string(), "112133133");
    }

    #[test]
    fn coords_roundtrip() {
        let a = PixelSet::grid(3, 3).unwrap();
        let m = example_partition(&a).canonical();
        let c = m.to_coords(&a).unwrap();
        assert_eq!(Partition::from_coords(&a, &c).unwrap(), m);
        assert!(Partition::from_coords(&a, &[vec![[0, 0]]]).is_err());
    }

    #[test]
    fn invalid_partitions_rejected() {
        assert!(Partition::new(2, vec![0b01]).is_err());
        assert!(Partition::new(2, vec![0b11, 0b01]).is_err());
        assert!(Partition::new(2, vec![0b11, 0]).is_err());
        assert!(Partition::from_labels(&[0, 2]).is_err());
    }

    fn random_partition() -> impl Strategy<Value = (Partition, Vec<usize>)> {
        (1usize..=8).prop_flat_map(|n| {
            (proptest::collection::vec(0usize..n, n), Just(n)).prop_map(|(raw, n)| {
                let mut blocks = vec![0u64; n];
                for (i, l) in raw.iter().enumerate() {
                    blocks[*l] |= 1 << i;
                }
                blocks.retain(|&b| b != 0);
                let order: Vec<usize> = (0..blocks.len()).rev().collect();
                (Partition::new(n, blocks).unwrap(), order)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn canonicalize_idempotent_and_order_free((p, order) in random_partition(), seed in any::<u64>()) {
            let c = p.canonical();
            prop_assert_eq!(c.canonical(), c.clone());
            prop_assert!(c.is_canonical());
            let mut blocks: Vec<u64> = order.iter().map(|&k| p.blocks()[k]).collect();
            let len = blocks.len();
            if len > 1 {
                blocks.swap(seed as usize % len, (seed >> 32) as usize % len);
            }
            prop_assert_eq!(Partition::new(p.n(), blocks).unwrap().canonical(), c);
        }
    }
}

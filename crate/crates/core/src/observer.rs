//! Exhaustive posterior over the partitions of a pixel set.
//!
//! Records are ordered by descending unnormalised log posterior, ties by
//! restricted-growth label order. Zero-prior partitions carry a log prior
//! of negative infinity and a posterior of zero.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::likelihood::{log_likelihood, LikelihoodModel, ObservationWindow};
use crate::partitions::{check_cap, prefixes, Partition, PartitionIter, DEFAULT_CAP};
use crate::prior::PriorEngine;
use crate::specfun::RadiusLaw;

/// Length of the label prefixes that split the enumeration into sub-streams.
const PREFIX_DEPTH: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorRecord {
    pub partition: Partition,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub log_posterior_unnorm: f64,
    pub posterior: f64,
}

impl PosteriorRecord {
    fn rank_key(&self) -> Vec<usize> {
        self.partition.labels().into_iter().map(|l| l.unwrap_or(0)).collect()
    }

    /// JSON object with the label string and coordinate blocks; infinities become `null`.
    pub fn to_json(&self, w: &ObservationWindow) -> Result<Value> {
        Ok(json!({
            "partition": self.partition.label_string(),
            "blocks": self.partition.to_coords(&w.pixels)?,
            "log_prior": finite(self.log_prior),
            "log_likelihood": finite(self.log_likelihood),
            "log_posterior_unnorm": finite(self.log_posterior_unnorm),
            "posterior": self.posterior,
        }))
    }
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Descending log posterior, then descending log prior, then ascending labels.
/// The prior key keeps a constant likelihood from merging distinct priors into ties.
fn rank(a: &PosteriorRecord, b: &PosteriorRecord) -> Ordering {
    let desc = |x: f64, y: f64| y.partial_cmp(&x).unwrap_or(Ordering::Equal);
    desc(a.log_posterior_unnorm, b.log_posterior_unnorm)
        .then_with(|| desc(a.log_prior, b.log_prior))
        .then_with(|| a.rank_key().cmp(&b.rank_key()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub cap: usize,
    pub memo: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { cap: DEFAULT_CAP, memo: true }
    }
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub records: Vec<PosteriorRecord>,
    /// `log sum exp(log_posterior_unnorm)` over all records.
    pub log_evidence: f64,
}

/// Scores every partition of the window; sub-streams run on the current rayon pool.
struct Scorer<'a> {
    w: &'a ObservationWindow,
    model: &'a LikelihoodModel,
    engine: PriorEngine,
}

impl<'a> Scorer<'a> {
    fn new(w: &'a ObservationWindow, law: &RadiusLaw, model: &'a LikelihoodModel, opts: &SweepOptions) -> Result<Self> {
        if w.pixels.is_empty() {
            return Err(Error::InvalidParameter("observation window is empty".into()));
        }
        check_cap(w.pixels.len(), opts.cap)?;
        let mut engine = PriorEngine::new(w.pixels.clone(), *law)?;
        if !opts.memo {
            engine = engine.without_memo();
        }
        Ok(Scorer { w, model, engine })
    }

    fn score(&self, m: Partition) -> Result<PosteriorRecord> {
        let log_prior = self.engine.prior_unordered(&m)?.log_value;
        let log_likelihood = log_likelihood(self.w, &m, self.model)?.total;
        Ok(PosteriorRecord { partition: m, log_prior, log_likelihood, log_posterior_unnorm: log_prior + log_likelihood, posterior: 0.0 })
    }

    /// Calls `f` on each sub-stream's records, in parallel; outputs come back in stream order.
    fn map_streams<T: Send>(&self, f: impl Fn(&mut dyn Iterator<Item = Result<PosteriorRecord>>) -> Result<T> + Sync) -> Result<Vec<T>> {
        let n = self.w.pixels.len();
        prefixes(n, PREFIX_DEPTH)
            .into_par_iter()
            .map(|p| {
                let mut it = PartitionIter::with_prefix(n, &p)?.map(|m| self.score(m));
                f(&mut it)
            })
            .collect()
    }
}

/// Running `(max, sum exp(x - max))`.
#[derive(Clone, Copy, Debug)]
struct Lse {
    max: f64,
    sum: f64,
}

impl Lse {
    const EMPTY: Lse = Lse { max: f64::NEG_INFINITY, sum: 0.0 };

    fn push(self, x: f64) -> Lse {
        self.merge(Lse { max: x, sum: 1.0 })
    }

    fn merge(self, o: Lse) -> Lse {
        if o.max == f64::NEG_INFINITY {
            return self;
        }
        if self.max == f64::NEG_INFINITY {
            return o;
        }
        let m = self.max.max(o.max);
        Lse { max: m, sum: self.sum * (self.max - m).exp() + o.sum * (o.max - m).exp() }
    }

    fn value(self) -> f64 {
        self.max + self.sum.ln()
    }
}

fn normalise(records: &mut [PosteriorRecord], log_evidence: f64) -> Result<()> {
    if !log_evidence.is_finite() {
        return Err(Error::Internal("posterior evidence is not finite".into()));
    }
    for r in records {
        r.posterior = (r.log_posterior_unnorm - log_evidence).exp();
    }
    Ok(())
}

/// All records, normalised and sorted.
pub fn posterior_sweep(w: &ObservationWindow, law: &RadiusLaw, model: &LikelihoodModel, opts: &SweepOptions) -> Result<Sweep> {
    let scorer = Scorer::new(w, law, model, opts)?;
    let parts = scorer.map_streams(|it| it.collect::<Result<Vec<_>>>())?;
    let mut records: Vec<PosteriorRecord> = parts.into_iter().flatten().collect();
    let log_evidence = records.iter().fold(Lse::EMPTY, |l, r| l.push(r.log_posterior_unnorm)).value();
    normalise(&mut records, log_evidence)?;
    records.sort_by(rank);
    Ok(Sweep { records, log_evidence })
}

#[derive(Clone, Debug)]
pub struct MapEstimate {
    pub record: PosteriorRecord,
    /// Another record has a bit-identical log posterior.
    pub tie: bool,
}

/// Highest-posterior record. Records with bit-identical log posteriors are
/// flagged as a tie and resolved by the earliest labels.
pub fn map_partition(records: &[PosteriorRecord]) -> Result<MapEstimate> {
    let key = |r: &PosteriorRecord| r.log_posterior_unnorm;
    let top = records.iter().map(key).fold(f64::NEG_INFINITY, f64::max);
    let best = records
        .iter()
        .filter(|r| key(r) == top || top == f64::NEG_INFINITY)
        .min_by_key(|r| r.rank_key())
        .ok_or_else(|| Error::InvalidParameter("no records".into()))?;
    let ties = records.iter().filter(|r| r.log_posterior_unnorm == best.log_posterior_unnorm).count();
    Ok(MapEstimate { record: best.clone(), tie: ties > 1 })
}

/// First `k` records by rank.
pub fn top_k(records: &[PosteriorRecord], k: usize) -> Result<Vec<PosteriorRecord>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut out = records.to_vec();
    out.sort_by(rank);
    out.truncate(k);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct StreamSummary {
    pub top: Vec<PosteriorRecord>,
    pub log_evidence: f64,
    pub count: u64,
    pub map_tie: bool,
}

fn keep_top(acc: &mut Vec<PosteriorRecord>, r: PosteriorRecord, k: usize) {
    let pos = acc.binary_search_by(|x| rank(x, &r)).unwrap_or_else(|p| p);
    if pos < k {
        acc.insert(pos, r);
        acc.truncate(k);
    }
}

/// Two passes over the enumeration holding only `k` records: the first fixes
/// the evidence, the second emits normalised records. Memory use is `O(k)`
/// plus the prior caches.
pub fn posterior_top_k_streaming(
    w: &ObservationWindow,
    law: &RadiusLaw,
    model: &LikelihoodModel,
    k: usize,
    opts: &SweepOptions,
) -> Result<StreamSummary> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let scorer = Scorer::new(w, law, model, opts)?;
    let sums = scorer.map_streams(|it| {
        let (mut l, mut c) = (Lse::EMPTY, 0u64);
        for r in it {
            l = l.push(r?.log_posterior_unnorm);
            c += 1;
        }
        Ok((l, c))
    })?;
    let (lse, count) = sums.into_iter().fold((Lse::EMPTY, 0u64), |(a, c), (b, d)| (a.merge(b), c + d));
    let log_evidence = lse.value();
    // k + 1 records keep the tie check on the MAP exact.
    let keep = k.max(2);
    let tops = scorer.map_streams(|it| {
        let mut acc = Vec::with_capacity(keep + 1);
        for r in it {
            keep_top(&mut acc, r?, keep);
        }
        Ok(acc)
    })?;
    let mut top = Vec::with_capacity(keep);
    for r in tops.into_iter().flatten() {
        keep_top(&mut top, r, keep);
    }
    normalise(&mut top, log_evidence)?;
    let map_tie = top.len() > 1 && top[0].log_posterior_unnorm == top[1].log_posterior_unnorm;
    top.truncate(k);
    Ok(StreamSummary { top, log_evidence, count, map_tie })
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(out: &mut W, records: &[PosteriorRecord], w: &ObservationWindow) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, &r.to_json(w)?)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn csv_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.5e}")
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `partition,log_prior,log_likelihood,posterior`, six significant digits.
pub fn write_csv<W: Write>(out: &mut W, records: &[PosteriorRecord]) -> Result<()> {
    writeln!(out, "partition,log_prior,log_likelihood,posterior")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.partition.label_string(),
            csv_number(r.log_prior),
            csv_number(r.log_likelihood),
            csv_number(r.posterior)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::ColorTextureModel;
    use crate::geometry::{PixelSet, Point2};

    fn law() -> RadiusLaw {
        RadiusLaw::new(1.0, 2.0, 2.0).unwrap()
    }

    fn gaussian(ch: usize) -> LikelihoodModel {
        ColorTextureModel::gaussian_iso(ch, 0.5, 0.1, 0.01).into()
    }

    fn window(pts: &[(f64, f64)], values: Vec<f64>) -> ObservationWindow {
        let a = PixelSet::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap();
        ObservationWindow::new(a, 1, values).unwrap()
    }

    #[test]
    fn identical_pair_prefers_one_block() {
        let w = window(&[(0., 0.), (1., 0.)], vec![0.4, 0.4]);
        let s = posterior_sweep(&w, &law(), &gaussian(1), &SweepOptions::default()).unwrap();
        assert_eq!(s.records.len(), 2);
        assert_eq!(s.records[0].partition.len(), 1);
        assert!(s.records[0].posterior > s.records[1].posterior);
    }

    #[test]
    fn single_pixel() {
        let w = window(&[(0., 0.)], vec![0.3]);
        let s = posterior_sweep(&w, &law(), &gaussian(1), &SweepOptions::default()).unwrap();
        assert_eq!(s.records.len(), 1);
        assert!((s.records[0].posterior - 1.0).abs() < 1e-15);
        assert!(!map_partition(&s.records).unwrap().tie);
    }

    #[test]
    fn normalised_and_uniform_ranking_matches_prior() {
        let a = PixelSet::grid(2, 3).unwrap();
        let w = ObservationWindow::new(a, 1, vec![0.0, 1.0 / 20.0, 0.5, 0.5, 1.0, 0.25]).unwrap();
        let model = ColorTextureModel::UniformDiscrete { channels: 1, color_levels: 21, texture_halfwidth: 10 }.into();
        let s = posterior_sweep(&w, &law(), &model, &SweepOptions::default()).unwrap();
        assert_eq!(s.records.len(), 203);
        let total: f64 = s.records.iter().map(|r| r.posterior).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mut by_prior = s.records.clone();
        by_prior.sort_by(|x, y| y.log_prior.partial_cmp(&x.log_prior).unwrap().then_with(|| x.rank_key().cmp(&y.rank_key())));
        let a: Vec<_> = s.records.iter().map(|r| r.partition.clone()).collect();
        let b: Vec<_> = by_prior.iter().map(|r| r.partition.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn bit_identical_posteriors_flag_tie() {
        let rec = |blocks: Vec<u64>| PosteriorRecord {
            partition: Partition::new(3, blocks).unwrap(),
            log_prior: -1.5,
            log_likelihood: 2.0,
            log_posterior_unnorm: 0.5,
            posterior: 0.5,
        };
        let recs = vec![rec(vec![0b001, 0b110]), rec(vec![0b011, 0b100])];
        let map = map_partition(&recs).unwrap();
        assert!(map.tie);
        assert_eq!(map.record.partition.label_string(), "112");
    }

    #[test]
    fn memo_and_streaming_agree() {
        let a = PixelSet::new(vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(0., 1.), Point2::new(1., 1.), Point2::new(2., 1.)]).unwrap();
        let w = ObservationWindow::new(a, 1, vec![0.41, 0.43, 0.6, 0.62, 0.61]).unwrap();
        let model = gaussian(1);
        let opts = SweepOptions::default();
        let s = posterior_sweep(&w, &law(), &model, &opts).unwrap();
        let nm = posterior_sweep(&w, &law(), &model, &SweepOptions { memo: false, ..opts }).unwrap();
        for (x, y) in s.records.iter().zip(&nm.records) {
            assert_eq!(x.partition, y.partition);
            if x.log_posterior_unnorm.is_finite() {
                assert!((x.log_posterior_unnorm - y.log_posterior_unnorm).abs() < 1e-10);
            } else {
                assert_eq!(x.log_posterior_unnorm, y.log_posterior_unnorm);
            }
        }
        let st = posterior_top_k_streaming(&w, &law(), &model, 7, &opts).unwrap();
        assert_eq!(st.count, 52);
        assert!((st.log_evidence - s.log_evidence).abs() < 1e-12);
        for (x, y) in st.top.iter().zip(&s.records) {
            assert_eq!(x.partition, y.partition);
            assert!((x.posterior - y.posterior).abs() < 1e-12);
        }
        assert_eq!(top_k(&s.records, 1).unwrap()[0].partition, map_partition(&s.records).unwrap().record.partition);
        assert_eq!(top_k(&s.records, 1000).unwrap().len(), 52);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let a = PixelSet::grid(2, 3).unwrap();
        let w = ObservationWindow::new(a, 1, vec![0.4, 0.45, 0.5, 0.7, 0.72, 0.3]).unwrap();
        let run = |t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| posterior_sweep(&w, &law(), &gaussian(1), &SweepOptions::default()).unwrap())
        };
        let (a, b) = (run(1), run(3));
        let ra: Vec<_> = a.records.iter().map(|r| (r.partition.clone(), r.posterior.to_bits())).collect();
        let rb: Vec<_> = b.records.iter().map(|r| (r.partition.clone(), r.posterior.to_bits())).collect();
        assert_eq!(ra, rb);
    }

    #[test]
    fn map_invariant_to_prior_rescaling() {
        let a = PixelSet::grid(2, 2).unwrap();
        let w = ObservationWindow::new(a, 1, vec![0.4, 0.45, 0.5, 0.7]).unwrap();
        let s = posterior_sweep(&w, &law(), &gaussian(1), &SweepOptions::default()).unwrap();
        let mut shifted = s.records.clone();
        for r in &mut shifted {
            r.log_prior += 7.25;
            r.log_posterior_unnorm += 7.25;
        }
        assert_eq!(map_partition(&shifted).unwrap().record.partition, map_partition(&s.records).unwrap().record.partition);
    }

    #[test]
    fn exports() {
        let w = window(&[(0., 0.), (1., 0.)], vec![0.4, 0.4]);
        let s = posterior_sweep(&w, &law(), &gaussian(1), &SweepOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &s.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("partition,log_prior,log_likelihood,posterior\n11,"));
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &s.records, &w).unwrap();
        let first: Value = serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first["blocks"], json!([[[0, 0], [1, 0]]]));
    }

    #[test]
    fn cap_enforced() {
        let a = PixelSet::grid(4, 4).unwrap();
        let w = ObservationWindow::new(a, 1, vec![0.5; 16]).unwrap();
        let err = posterior_sweep(&w, &law(), &gaussian(1), &SweepOptions::default()).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { size: 16, .. }));
    }
}

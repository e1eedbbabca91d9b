//! Cumulative penalty scoring over all sample pairs.
//!
//! [`score_naive`] is the literal double loop and exists as a reference.
//! [`score_blocked`] is the production path: rows are L2-normalized once,
//! the upper triangle of the pair matrix is cut into `block_size` square
//! tiles, and tiles are evaluated in parallel. Each tile reports, for every
//! row it touches, one partial sum per side; a sample's score is the sum of
//! its partials taken in ascending block order. That combination order does
//! not depend on scheduling, so results are bit-identical for any number of
//! workers.

use std::io::{self, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::penalty::{cosine_similarity, pair_penalty, PairCase, PenaltyParams};

pub const DEFAULT_BLOCK_SIZE: usize = 256;

/// Per-sample cumulative penalties and their ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub cp_total: Vec<f64>,
    pub cp_case1: Vec<f64>,
    pub cp_case2: Vec<f64>,
    /// 1-based position after sorting `cp_total` descending.
    pub rank: Vec<usize>,
    pub params: PenaltyParams,
    pub dataset_fingerprint: String,
}

impl ScoreTable {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn cp_mean(&self, i: usize) -> f64 {
        let n = self.n();
        if n > 1 {
            self.cp_total[i] / (n - 1) as f64
        } else {
            0.0
        }
    }

    /// Sample indices ordered by rank (most difficult first).
    pub fn ranked_indices(&self) -> Vec<usize> {
        let mut order = vec![0; self.n()];
        for (i, &r) in self.rank.iter().enumerate() {
            order[r - 1] = i;
        }
        order
    }

    /// Exact equality including float bit patterns.
    pub fn bit_identical(&self, other: &ScoreTable) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.ids == other.ids
            && self.rank == other.rank
            && self.params == other.params
            && self.dataset_fingerprint == other.dataset_fingerprint
            && bits(&self.cp_total) == bits(&other.cp_total)
            && bits(&self.cp_case1) == bits(&other.cp_case1)
            && bits(&self.cp_case2) == bits(&other.cp_case2)
    }

    /// Scores CSV: `id,rank,cp_total,cp_case1,cp_case2,cp_mean`, rows in
    /// dataset order.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let res = (|| {
            wtr.write_record(["id", "rank", "cp_total", "cp_case1", "cp_case2", "cp_mean"])?;
            for i in 0..self.n() {
                wtr.write_record([
                    self.ids[i].as_str(),
                    &self.rank[i].to_string(),
                    &format_sig(self.cp_total[i], 9),
                    &format_sig(self.cp_case1[i], 9),
                    &format_sig(self.cp_case2[i], 9),
                    &format_sig(self.cp_mean(i), 9),
                ])?;
            }
            Ok::<_, csv::Error>(())
        })();
        res.map_err(io::Error::other)?;
        wtr.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }
}

/// `printf("%.{digits}g")`-style formatting.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_owned()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    total: f64,
    case1: f64,
    case2: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, value: f64, case: PairCase) {
        self.total += value;
        match case {
            PairCase::Case1 => self.case1 += value,
            PairCase::Case2 => self.case2 += value,
        }
    }

    #[inline]
    fn merge(&mut self, other: &Acc) {
        self.total += other.total;
        self.case1 += other.case1;
        self.case2 += other.case2;
    }
}

fn finish(ds: &LabeledDataset, params: &PenaltyParams, acc: Vec<Acc>) -> ScoreTable {
    let mut table = ScoreTable {
        ids: ds.ids().to_vec(),
        cp_total: acc.iter().map(|a| a.total).collect(),
        cp_case1: acc.iter().map(|a| a.case1).collect(),
        cp_case2: acc.iter().map(|a| a.case2).collect(),
        rank: Vec::new(),
        params: *params,
        dataset_fingerprint: ds.fingerprint(),
    };
    rank(&mut table);
    table
}

/// Reference implementation: for every `i`, sums the pair penalty with every
/// `j != i` in ascending `j`.
pub fn score_naive(ds: &LabeledDataset, params: &PenaltyParams) -> ScoreTable {
    let n = ds.n();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| ds.embeddings().row_f64(i)).collect();
    let labels = ds.labels();
    let mut acc = vec![Acc::default(); n];
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let x = cosine_similarity(&rows[i], &rows[j])
                .expect("validated datasets have no zero-norm rows")
                .value();
            if let Some(p) = pair_penalty(x, labels[i] == labels[j], params) {
                acc[i].add(p.value, p.case);
            }
        }
    }
    finish(ds, params, acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockedOptions {
    pub block_size: usize,
    pub workers: usize,
}

impl Default for BlockedOptions {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl BlockedOptions {
    pub fn new(block_size: usize, workers: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidParams("block_size must be >= 1".into()));
        }
        if workers == 0 {
            return Err(Error::InvalidParams("workers must be >= 1".into()));
        }
        Ok(Self {
            block_size,
            workers,
        })
    }
}

pub fn score_blocked(
    ds: &LabeledDataset,
    params: &PenaltyParams,
    opts: &BlockedOptions,
) -> Result<ScoreTable> {
    score_blocked_with_progress(ds, params, opts, &|_, _| {})
}

/// Like [`score_blocked`], calling `progress(done_tiles, total_tiles)` after
/// each tile completes. The callback may run on any worker thread.
pub fn score_blocked_with_progress(
    ds: &LabeledDataset,
    params: &PenaltyParams,
    opts: &BlockedOptions,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<ScoreTable> {
    let opts = BlockedOptions::new(opts.block_size, opts.workers)?;
    let n = ds.n();
    let d = ds.embeddings().d();
    let bs = opts.block_size.min(n.max(1));
    let nb = n.div_ceil(bs);
    let unit = ds.embeddings().normalized_rows();
    let labels: Vec<u32> = ds.labels().iter().map(|&l| l as u32).collect();

    let tiles: Vec<(usize, usize)> = (0..nb)
        .flat_map(|bi| (bi..nb).map(move |bj| (bi, bj)))
        .collect();
    let total_tiles = tiles.len();
    let done = AtomicUsize::new(0);
    let kernel = TileKernel {
        unit: &unit,
        labels: &labels,
        d,
        bs,
        n,
        params,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    let sums: Vec<TileSums> = pool.install(|| {
        tiles
            .par_iter()
            .map(|&(bi, bj)| {
                let s = kernel.run(bi, bj);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, total_tiles);
                s
            })
            .collect()
    });

    let mut slot = vec![usize::MAX; nb * nb];
    for (t, &(bi, bj)) in tiles.iter().enumerate() {
        slot[bi * nb + bj] = t;
    }
    let mut acc = vec![Acc::default(); n];
    for (i, a) in acc.iter_mut().enumerate() {
        let bi = i / bs;
        let li = i % bs;
        for k in 0..nb {
            if k > bi {
                a.merge(&sums[slot[bi * nb + k]].row[li]);
            } else if k == bi {
                let diag = &sums[slot[bi * nb + bi]];
                let mut part = diag.col[li];
                part.merge(&diag.row[li]);
                a.merge(&part);
            } else {
                a.merge(&sums[slot[k * nb + bi]].col[li]);
            }
        }
    }
    Ok(finish(ds, params, acc))
}

struct TileSums {
    /// Indexed by row within block `bi`: sum over the tile's columns.
    row: Vec<Acc>,
    /// Indexed by row within block `bj`: sum over the tile's rows.
    col: Vec<Acc>,
}

struct TileKernel<'a> {
    unit: &'a [f64],
    labels: &'a [u32],
    d: usize,
    bs: usize,
    n: usize,
    params: &'a PenaltyParams,
}

impl TileKernel<'_> {
    fn run(&self, bi: usize, bj: usize) -> TileSums {
        let (r0, r1) = (bi * self.bs, ((bi + 1) * self.bs).min(self.n));
        let (c0, c1) = (bj * self.bs, ((bj + 1) * self.bs).min(self.n));
        let mut row = vec![Acc::default(); r1 - r0];
        let mut col = vec![Acc::default(); c1 - c0];
        let d = self.d;
        for i in r0..r1 {
            let ui = &self.unit[i * d..(i + 1) * d];
            let li = self.labels[i];
            // a diagonal tile visits each unordered pair once (j > i)
            let start = if bi == bj { i + 1 } else { c0 };
            let ri = &mut row[i - r0];
            for j in start..c1 {
                let uj = &self.unit[j * d..(j + 1) * d];
                let x = dot(ui, uj).clamp(-1.0, 1.0);
                if let Some(p) = pair_penalty(x, li == self.labels[j], self.params) {
                    ri.add(p.value, p.case);
                    col[j - c0].add(p.value, p.case);
                }
            }
        }
        TileSums { row, col }
    }
}

/// Four-lane dot product. Lane assignment depends only on the index, so
/// `dot(a, b)` and `dot(b, a)` round identically.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Fills `rank` by descending `cp_total`; ties go to the lower index.
pub fn rank(table: &mut ScoreTable) {
    let mut order: Vec<usize> = (0..table.n()).collect();
    order.sort_by(|&i, &j| {
        table.cp_total[j]
            .total_cmp(&table.cp_total[i])
            .then(i.cmp(&j))
    });
    table.rank = vec![0; table.n()];
    for (pos, &i) in order.iter().enumerate() {
        table.rank[i] = pos + 1;
    }
}

/// One pair's share of a sample's cumulative penalty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contributor {
    pub index: usize,
    pub other_id: String,
    pub cosine: f64,
    pub case: PairCase,
    pub pair_penalty: f64,
}

/// The `top_m` pairs `(sample, j)` with the largest penalty under `params`,
/// ties broken by ascending `j`. Samples flagged in `excluded` are skipped.
pub fn top_contributors(
    ds: &LabeledDataset,
    sample: usize,
    params: &PenaltyParams,
    top_m: usize,
    excluded: Option<&[bool]>,
) -> Result<Vec<Contributor>> {
    if sample >= ds.n() {
        return Err(Error::UnknownSample(sample.to_string()));
    }
    if top_m == 0 {
        return Ok(Vec::new());
    }
    let emb = ds.embeddings();
    let ui = emb.row_f64(sample);
    let labels = ds.labels();
    let mut out = Vec::with_capacity(ds.n());
    for j in 0..ds.n() {
        if j == sample || excluded.is_some_and(|m| m[j]) {
            continue;
        }
        let x = cosine_similarity(&ui, &emb.row_f64(j))?.value();
        if let Some(p) = pair_penalty(x, labels[sample] == labels[j], params) {
            out.push(Contributor {
                index: j,
                other_id: ds.ids()[j].clone(),
                cosine: x,
                case: p.case,
                pair_penalty: p.value,
            });
        }
    }
    out.sort_by(|a, b| {
        b.pair_penalty
            .total_cmp(&a.pair_penalty)
            .then(a.index.cmp(&b.index))
    });
    out.truncate(top_m);
    Ok(out)
}

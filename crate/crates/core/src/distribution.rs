//! Empirical multivariate return distributions and ESR dominance.
//!
//! A return distribution is a matrix of samples, one row per sample and one
//! column per objective. CDFs are lower-orthant empirical CDFs, so every
//! value is a multiple of `1/m`; dominance checks compare those rationals
//! exactly on a fixed lattice of evaluation points.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Upper bound on the number of lattice points a grid may have.
pub const MAX_GRID_POINTS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnVector(pub Vec<f64>);

impl ReturnVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("return vector"));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &[f64]) -> bool {
        self.0.iter().zip(other).all(|(a, b)| a <= b)
    }

    /// Strict Pareto dominance: `>=` everywhere and `>` somewhere.
    pub fn pareto_dominates(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
            && self.0.iter().zip(&other.0).any(|(a, b)| a > b)
    }
}

impl std::ops::Deref for ReturnVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Sample matrix of shape `(m, d)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnDistribution {
    dim: usize,
    samples: Vec<f64>,
}

impl ReturnDistribution {
    pub fn from_samples(dim: usize, samples: Vec<f64>) -> Result<Self> {
        if dim == 0 || samples.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        if !samples.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: samples.len() % dim,
            });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("distribution samples"));
        }
        Ok(Self { dim, samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyDistribution)?;
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::from_samples(dim, rows.concat())
    }

    pub fn point_mass(v: &ReturnVector) -> Result<Self> {
        Self::from_samples(v.dim(), v.0.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.samples[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn raw(&self) -> &[f64] {
        &self.samples
    }

    /// Column `j` as a vector.
    pub fn marginal(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim != d {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: d,
            });
        }
        Ok(())
    }

    /// Number of samples `<= v` componentwise.
    pub fn count_le(&self, v: &[f64]) -> Result<usize> {
        self.check_dim(v.len())?;
        Ok(self
            .rows()
            .filter(|r| r.iter().zip(v).all(|(a, b)| a <= b))
            .count())
    }

    /// Lower-orthant empirical CDF at `v`.
    pub fn cdf_at(&self, v: &[f64]) -> Result<f64> {
        Ok(self.count_le(v)? as f64 / self.len() as f64)
    }

    pub fn expected_value(&self) -> ReturnVector {
        let m = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for r in self.rows() {
            for (acc, x) in mean.iter_mut().zip(r) {
                *acc += x;
            }
        }
        mean.iter_mut().for_each(|x| *x /= m);
        ReturnVector(mean)
    }

    /// Distribution of the sum of independent draws from `self` and `other`.
    ///
    /// With `cap = None` (or when the product fits in the cap) the result
    /// holds every pairwise sum, `self` index major. Otherwise a uniform
    /// subsample of `cap` pairs is drawn without replacement.
    pub fn convolve(&self, other: &Self, cap: Option<usize>, seed: u64) -> Result<Self> {
        self.check_dim(other.dim)?;
        let (ma, mb, d) = (self.len(), other.len(), self.dim);
        let total = ma * mb;
        let sum_pair = |k: usize, out: &mut Vec<f64>| {
            let (ra, rb) = (self.sample(k / mb), other.sample(k % mb));
            out.extend(ra.iter().zip(rb).map(|(x, y)| x + y));
        };
        let mut samples;
        match cap {
            Some(cap) if total > cap => {
                let cap = cap.max(1);
                let mut rng = seed::rng(seed);
                let mut picks = index::sample(&mut rng, total, cap).into_vec();
                picks.sort_unstable();
                samples = Vec::with_capacity(cap * d);
                for k in picks {
                    sum_pair(k, &mut samples);
                }
            }
            _ => {
                samples = Vec::with_capacity(total * d);
                for k in 0..total {
                    sum_pair(k, &mut samples);
                }
            }
        }
        Self::from_samples(d, samples)
    }

    /// Write one sample per row, comma separated, with a header line.
    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{}", header.join(",")).expect("vec write");
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}", line.join(",")).expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Read a file written by [`ReturnDistribution::write_csv`].
    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Self)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header: Vec<String> = match lines.next() {
            Some(l) => l
                .map_err(|e| Error::io(path, e))?
                .split(',')
                .map(str::to_owned)
                .collect(),
            None => return Err(Error::parse(path, "empty file")),
        };
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))?;
            rows.push(row);
        }
        let dist = Self::from_rows(&rows).map_err(|e| Error::parse(path, e))?;
        if dist.dim() != header.len() {
            return Err(Error::parse(path, "header width does not match rows"));
        }
        Ok((header, dist))
    }
}

/// Lattice of CDF evaluation points: `n_bins` evenly spaced values per
/// objective between `r_min` and `r_max` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfGrid {
    r_min: Vec<f64>,
    r_max: Vec<f64>,
    n_bins: usize,
}

impl CdfGrid {
    pub fn new(r_min: Vec<f64>, r_max: Vec<f64>, n_bins: usize) -> Result<Self> {
        if r_min.len() != r_max.len() {
            return Err(Error::DimensionMismatch {
                expected: r_min.len(),
                got: r_max.len(),
            });
        }
        if r_min.is_empty() {
            return Err(Error::InvalidGrid("zero objectives".into()));
        }
        if r_min.iter().chain(&r_max).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("grid bounds"));
        }
        if r_min.iter().zip(&r_max).any(|(a, b)| a >= b) {
            return Err(Error::InvalidGrid(
                "r_min must be < r_max componentwise".into(),
            ));
        }
        if n_bins < 2 {
            return Err(Error::InvalidGrid("n_bins must be >= 2".into()));
        }
        let points = (n_bins as u128).checked_pow(r_min.len() as u32);
        if points.is_none_or(|p| p > MAX_GRID_POINTS as u128) {
            return Err(Error::InvalidGrid(format!(
                "{n_bins}^{} lattice points exceeds {MAX_GRID_POINTS}",
                r_min.len()
            )));
        }
        Ok(Self {
            r_min,
            r_max,
            n_bins,
        })
    }

    /// Unit-spaced lattice covering integers `lo..=hi` in every objective.
    pub fn integer_lattice(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        let width = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| b - a)
            .max()
            .unwrap_or(0)
            .max(1);
        let lo_f: Vec<f64> = lo.iter().map(|&x| x as f64).collect();
        // every dimension shares n_bins, so pad narrower ones upward
        let hi_f: Vec<f64> = lo.iter().map(|&x| (x + width) as f64).collect();
        Self::new(lo_f, hi_f, width as usize + 1)
    }

    pub fn dim(&self) -> usize {
        self.r_min.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn r_min(&self) -> &[f64] {
        &self.r_min
    }

    pub fn r_max(&self) -> &[f64] {
        &self.r_max
    }

    pub fn n_points(&self) -> usize {
        self.n_bins.pow(self.dim() as u32)
    }

    /// Coordinate of lattice index `k` along objective `j`.
    pub fn coord(&self, j: usize, k: usize) -> f64 {
        if k + 1 == self.n_bins {
            return self.r_max[j];
        }
        let step = (self.r_max[j] - self.r_min[j]) / (self.n_bins - 1) as f64;
        self.r_min[j] + k as f64 * step
    }

    /// Lattice point with flat index `flat` (last objective fastest).
    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let d = self.dim();
        let mut p = vec![0.0; d];
        for j in (0..d).rev() {
            p[j] = self.coord(j, flat % self.n_bins);
            flat /= self.n_bins;
        }
        p
    }

    /// Smallest lattice index whose coordinate is `>= x`, clamping values
    /// outside `[r_min, r_max]`. The flag reports whether clamping happened.
    fn index_of(&self, j: usize, x: f64) -> (usize, bool) {
        if x > self.r_max[j] {
            return (self.n_bins - 1, true);
        }
        if x <= self.r_min[j] {
            return (0, x < self.r_min[j]);
        }
        let step = (self.r_max[j] - self.r_min[j]) / (self.n_bins - 1) as f64;
        let mut k = (((x - self.r_min[j]) / step).ceil() as usize).min(self.n_bins - 1);
        while k > 0 && self.coord(j, k - 1) >= x {
            k -= 1;
        }
        while self.coord(j, k) < x {
            k += 1;
        }
        (k, false)
    }

    /// Whether every sample of `z` lies inside the grid box.
    pub fn covers(&self, z: &ReturnDistribution) -> bool {
        z.rows().all(|r| {
            r.iter()
                .enumerate()
                .all(|(j, &x)| x >= self.r_min[j] && x <= self.r_max[j])
        })
    }
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// Lattice size above which two-objective CDFs switch to the sweep layout.
pub const DENSE_LAYOUT_LIMIT: usize = 1 << 18;

/// Storage strategy for a [`GridCdf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfLayout {
    /// Dense for small lattices, sweep for large two-objective lattices.
    Auto,
    /// Cumulative counts at every lattice point.
    Dense,
    /// Snapped sample cells only; comparisons run a plane sweep with a
    /// segment tree. Two objectives only.
    Sweep,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Dense(Vec<u32>),
    /// Cells `(kx, ky)` sorted by `kx`.
    Sweep(Vec<(u32, u32)>),
}

/// Empirical CDF of one distribution on every lattice point, as integer
/// counts out of `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCdf {
    repr: Repr,
    n_bins: usize,
    n_points: usize,
    m: u64,
    clamped: usize,
}

impl GridCdf {
    pub fn new(z: &ReturnDistribution, grid: &CdfGrid) -> Result<Self> {
        Self::with_layout(z, grid, CdfLayout::Auto)
    }

    pub fn with_layout(z: &ReturnDistribution, grid: &CdfGrid, layout: CdfLayout) -> Result<Self> {
        z.check_dim(grid.dim())?;
        let (d, n) = (grid.dim(), grid.n_bins);
        let sweep = match layout {
            CdfLayout::Auto => d == 2 && grid.n_points() > DENSE_LAYOUT_LIMIT,
            CdfLayout::Dense => false,
            CdfLayout::Sweep if d == 2 => true,
            CdfLayout::Sweep => {
                return Err(Error::InvalidGrid(
                    "sweep layout needs two objectives".into(),
                ))
            }
        };
        let mut clamped = 0;
        let mut cells = Vec::with_capacity(z.len());
        for r in z.rows() {
            let mut outside = false;
            let idx: Vec<usize> = r
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let (k, c) = grid.index_of(j, x);
                    outside |= c;
                    k
                })
                .collect();
            clamped += outside as usize;
            cells.push(idx);
        }
        let repr = if sweep {
            let mut pts: Vec<(u32, u32)> =
                cells.iter().map(|c| (c[0] as u32, c[1] as u32)).collect();
            pts.sort_unstable();
            Repr::Sweep(pts)
        } else {
            let mut counts = vec![0u32; grid.n_points()];
            for c in &cells {
                counts[c.iter().fold(0, |f, &k| f * n + k)] += 1;
            }
            // prefix sums along each axis turn the histogram into the orthant CDF
            let mut stride = 1;
            for _ in 0..d {
                let block = stride * n;
                for base in (0..counts.len()).step_by(block) {
                    for off in 0..stride {
                        let mut acc = 0u32;
                        for k in 0..n {
                            let idx = base + off + k * stride;
                            acc += counts[idx];
                            counts[idx] = acc;
                        }
                    }
                }
                stride = block;
            }
            Repr::Dense(counts)
        };
        if clamped > 0 {
            if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "{clamped} of {} samples fall outside the CDF grid box and were clamped; \
                     widen r_min/r_max",
                    z.len()
                );
            } else {
                log::debug!("{clamped} samples clamped into the CDF grid box");
            }
        }
        Ok(Self {
            repr,
            n_bins: n,
            n_points: grid.n_points(),
            m: z.len() as u64,
            clamped,
        })
    }

    /// Number of lattice points.
    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn samples(&self) -> u64 {
        self.m
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn layout(&self) -> CdfLayout {
        match self.repr {
            Repr::Dense(_) => CdfLayout::Dense,
            Repr::Sweep(_) => CdfLayout::Sweep,
        }
    }

    /// CDF value at flat lattice index `k`.
    pub fn value(&self, k: usize) -> f64 {
        self.count(k) as f64 / self.m as f64
    }

    pub fn count(&self, k: usize) -> u32 {
        match &self.repr {
            Repr::Dense(c) => c[k],
            Repr::Sweep(pts) => {
                let (kx, ky) = ((k / self.n_bins) as u32, (k % self.n_bins) as u32);
                pts.iter()
                    .take_while(|p| p.0 <= kx)
                    .filter(|p| p.1 <= ky)
                    .count() as u32
            }
        }
    }

    /// Visit `(max, min)` of `m_other * F_self - m_self * F_other` over each
    /// group of lattice points sharing a CDF value; stop when `f` is false.
    fn scan(&self, other: &Self, mut f: impl FnMut(i128, i128) -> bool) {
        let (m1, m2) = (self.m as i128, other.m as i128);
        match (&self.repr, &other.repr) {
            (Repr::Dense(a), Repr::Dense(b)) => {
                for (&c1, &c2) in a.iter().zip(b) {
                    let v = c1 as i128 * m2 - c2 as i128 * m1;
                    if !f(v, v) {
                        return;
                    }
                }
            }
            (Repr::Sweep(a), Repr::Sweep(b)) => {
                let mut tree = MaxMinTree::new(self.n_bins);
                let (mut i, mut j) = (0, 0);
                while i < a.len() || j < b.len() {
                    let x = match (a.get(i), b.get(j)) {
                        (Some(p), Some(q)) => p.0.min(q.0),
                        (Some(p), None) => p.0,
                        (None, Some(q)) => q.0,
                        (None, None) => unreachable!(),
                    };
                    while i < a.len() && a[i].0 == x {
                        tree.add_suffix(a[i].1 as usize, m2);
                        i += 1;
                    }
                    while j < b.len() && b[j].0 == x {
                        tree.add_suffix(b[j].1 as usize, -m1);
                        j += 1;
                    }
                    let (hi, lo) = tree.max_min();
                    if !f(hi, lo) {
                        return;
                    }
                }
            }
            _ => panic!("GridCdf layouts differ"),
        }
    }

    /// `F_self <= F_other` everywhere with strict inequality somewhere,
    /// comparing `c1/m1` and `c2/m2` by cross multiplication.
    pub fn dominates(&self, other: &Self) -> bool {
        let mut ok = true;
        let mut strict = false;
        self.scan(other, |hi, lo| {
            ok = hi <= 0;
            strict |= lo < 0;
            ok
        });
        ok && strict
    }

    /// Equal CDF values at every lattice point.
    pub fn same_as(&self, other: &Self) -> bool {
        let mut same = true;
        self.scan(other, |hi, lo| {
            same = hi == 0 && lo == 0;
            same
        });
        same
    }

    /// Largest absolute CDF difference over the lattice.
    pub fn sup_gap(&self, other: &Self) -> f64 {
        let mut gap: i128 = 0;
        self.scan(other, |hi, lo| {
            gap = gap.max(hi.abs()).max(lo.abs());
            true
        });
        gap as f64 / (self.m as f64 * other.m as f64)
    }
}

/// Segment tree over `0..n` supporting suffix addition and global max/min.
struct MaxMinTree {
    size: usize,
    max: Vec<i128>,
    min: Vec<i128>,
    lazy: Vec<i128>,
}

impl MaxMinTree {
    fn new(n: usize) -> Self {
        let size = n.next_power_of_two();
        Self {
            size,
            max: vec![0; 2 * size],
            min: vec![0; 2 * size],
            lazy: vec![0; 2 * size],
        }
    }

    fn add_suffix(&mut self, from: usize, v: i128) {
        // padding leaves past the lattice mirror the last real leaf
        self.add(1, 0, self.size, from, v);
    }

    fn add(&mut self, node: usize, lo: usize, hi: usize, from: usize, v: i128) {
        if hi <= from {
            return;
        }
        if lo >= from {
            self.max[node] += v;
            self.min[node] += v;
            self.lazy[node] += v;
            return;
        }
        let mid = (lo + hi) / 2;
        self.add(2 * node, lo, mid, from, v);
        self.add(2 * node + 1, mid, hi, from, v);
        let l = self.lazy[node];
        self.max[node] = self.max[2 * node].max(self.max[2 * node + 1]) + l;
        self.min[node] = self.min[2 * node].min(self.min[2 * node + 1]) + l;
    }

    fn max_min(&self) -> (i128, i128) {
        (self.max[1], self.min[1])
    }
}

/// ESR dominance of `z` over `z2` on the lattice of `grid`.
pub fn esr_dominates(
    z: &ReturnDistribution,
    z2: &ReturnDistribution,
    grid: &CdfGrid,
) -> Result<bool> {
    z.check_dim(z2.dim)?;
    Ok(GridCdf::new(z, grid)?.dominates(&GridCdf::new(z2, grid)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn pm(v: &[f64]) -> ReturnDistribution {
        ReturnDistribution::point_mass(&ReturnVector::new(v.to_vec()).unwrap()).unwrap()
    }

    fn unit_grid() -> CdfGrid {
        CdfGrid::new(vec![-2.0, -2.0], vec![3.0, 3.0], 11).unwrap()
    }

    #[test]
    fn point_mass_cdf() {
        let z = pm(&[0.0, 0.0]);
        assert_eq!(z.raw(), &[0.0, 0.0]);
        assert_eq!(pm(&[1.0, 1.0]).cdf_at(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(pm(&[1.0, 1.0]).cdf_at(&[1.0, 1.0]).unwrap(), 1.0);
        assert!(ReturnVector::new(vec![f64::NAN]).is_err());
        assert!(ReturnDistribution::from_samples(1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn cdf_counts_orthant() {
        let z = ReturnDistribution::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(z.cdf_at(&[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(z.cdf_at(&[3.0, 3.0]).unwrap(), 1.0);
        assert_eq!(z.cdf_at(&[-1.0, 5.0]).unwrap(), 0.0);
        assert!(z.cdf_at(&[0.0]).is_err());
    }

    #[test]
    fn convolution_small_cases() {
        let c = pm(&[1.0, 2.0]).convolve(&pm(&[3.0, 4.0]), None, 0).unwrap();
        assert_eq!(c, pm(&[4.0, 6.0]));
        let a = ReturnDistribution::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let b = pm(&[0.0, 1.0]);
        let c = a.convolve(&b, None, 0).unwrap();
        assert_eq!(
            c,
            ReturnDistribution::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap()
        );
        assert!(a.convolve(&pm(&[0.0]), None, 0).is_err());
    }

    #[test]
    fn capped_convolution_is_seeded_subset() {
        let mut rng = seed::rng(3);
        let rows = |rng: &mut seed::Rng, m| -> Vec<Vec<f64>> {
            (0..m)
                .map(|_| {
                    vec![
                        rng.random_range(0..100) as f64,
                        rng.random_range(0..100) as f64,
                    ]
                })
                .collect()
        };
        let a = ReturnDistribution::from_rows(&rows(&mut rng, 30)).unwrap();
        let b = ReturnDistribution::from_rows(&rows(&mut rng, 40)).unwrap();
        let full = a.convolve(&b, None, 0).unwrap();
        let c1 = a.convolve(&b, Some(50), 9).unwrap();
        let c2 = a.convolve(&b, Some(50), 9).unwrap();
        assert_eq!(c1.len(), 50);
        assert_eq!(c1, c2);
        assert_ne!(c1, a.convolve(&b, Some(50), 10).unwrap());
        let all: Vec<&[f64]> = full.rows().collect();
        assert!(c1.rows().all(|r| all.contains(&r)));
        assert_eq!(a.convolve(&b, Some(5000), 1).unwrap(), full);
    }

    #[test]
    fn expected_values() {
        assert_eq!(pm(&[2.0, 3.0]).expected_value().0, vec![2.0, 3.0]);
        let z = ReturnDistribution::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(z.expected_value().0, vec![1.0, 1.0]);
    }

    #[test]
    fn monte_carlo_mean() {
        // generator N((1,-2), diag(0.5, 3)^2); tolerance 3 sigma / sqrt(500)
        let mut rng = seed::rng(11);
        let (n0, n1) = (
            Normal::new(1.0, 0.5).unwrap(),
            Normal::new(-2.0, 3.0).unwrap(),
        );
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![n0.sample(&mut rng), n1.sample(&mut rng)])
            .collect();
        let mean = ReturnDistribution::from_rows(&rows)
            .unwrap()
            .expected_value();
        let tol = |s: f64| 3.0 * s / 500f64.sqrt();
        assert!((mean[0] - 1.0).abs() < tol(0.5));
        assert!((mean[1] + 2.0).abs() < tol(3.0));
    }

    #[test]
    fn dominance_basics() {
        let g = unit_grid();
        let z = pm(&[1.0, 1.0]);
        assert!(!esr_dominates(&z, &z, &g).unwrap());
        assert!(esr_dominates(&z, &pm(&[0.0, 0.0]), &g).unwrap());
        assert!(!esr_dominates(&pm(&[0.0, 0.0]), &z, &g).unwrap());
        assert!(!esr_dominates(&pm(&[1.0, 0.0]), &pm(&[0.0, 1.0]), &g).unwrap());
    }

    #[test]
    fn grid_cdf_matches_direct_evaluation() {
        let mut rng = seed::rng(5);
        let rows: Vec<Vec<f64>> = (0..37)
            .map(|_| vec![rng.random_range(-2.5..3.5), rng.random_range(-2.5..3.5)])
            .collect();
        let z = ReturnDistribution::from_rows(&rows).unwrap();
        let g = unit_grid();
        let cdf = GridCdf::new(&z, &g).unwrap();
        assert!(cdf.clamped() > 0);
        for k in 0..g.n_points() {
            let p = g.point(k);
            // clamping moves samples above r_max onto the last lattice line
            let clamped: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().map(|x| x.clamp(-2.0, 3.0)).collect())
                .collect();
            let direct = ReturnDistribution::from_rows(&clamped)
                .unwrap()
                .count_le(&p)
                .unwrap();
            assert_eq!(cdf.count(k) as usize, direct, "point {p:?}");
        }
    }

    #[test]
    fn three_dimensional_grid_cdf() {
        let z = ReturnDistribution::from_rows(&[vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0]]).unwrap();
        let g = CdfGrid::new(vec![0.0; 3], vec![2.0; 3], 3).unwrap();
        let cdf = GridCdf::new(&z, &g).unwrap();
        for k in 0..g.n_points() {
            assert_eq!(cdf.count(k) as usize, z.count_le(&g.point(k)).unwrap());
        }
    }

    #[test]
    fn grid_validation() {
        assert!(CdfGrid::new(vec![0.0], vec![0.0], 4).is_err());
        assert!(CdfGrid::new(vec![0.0], vec![1.0], 1).is_err());
        assert!(CdfGrid::new(vec![0.0, 0.0], vec![1.0], 4).is_err());
        assert!(CdfGrid::new(vec![0.0; 4], vec![1.0; 4], 2000).is_err());
        let g = CdfGrid::integer_lattice(vec![-3, 0], vec![2, 4]).unwrap();
        assert_eq!(g.n_bins(), 6);
        assert_eq!(
            (0..6).map(|k| g.coord(0, k)).collect::<Vec<_>>(),
            vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn exhaustive_grid_oracle_16x16() {
        // brute-force double loop over every lattice point
        let g = CdfGrid::new(vec![0.0, 0.0], vec![15.0, 15.0], 16).unwrap();
        let mut rng = seed::rng(21);
        for _ in 0..200 {
            let mk = |rng: &mut seed::Rng| {
                let rows: Vec<Vec<f64>> = (0..5)
                    .map(|_| vec![rng.random_range(0.0..15.0), rng.random_range(0.0..15.0)])
                    .collect();
                ReturnDistribution::from_rows(&rows).unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let mut all_le = true;
            let mut any_lt = false;
            for i in 0..16 {
                for j in 0..16 {
                    let v = [i as f64, j as f64];
                    let (fa, fb) = (a.cdf_at(&v).unwrap(), b.cdf_at(&v).unwrap());
                    all_le &= fa <= fb;
                    any_lt |= fa < fb;
                }
            }
            assert_eq!(esr_dominates(&a, &b, &g).unwrap(), all_le && any_lt);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let z = ReturnDistribution::from_rows(&[vec![0.1, -1e7], vec![1.0 / 3.0, 2e-9]]).unwrap();
        z.write_csv(&p, &["a".into(), "b".into()]).unwrap();
        let (h, back) = ReturnDistribution::read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(back, z);
    }

    #[test]
    fn sweep_layout_agrees_with_dense() {
        let g = CdfGrid::new(vec![0.0, 0.0], vec![20.0, 20.0], 41).unwrap();
        let mut rng = seed::rng(33);
        let mk = |rng: &mut seed::Rng, m: usize| {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| vec![rng.random_range(0..8) as f64, rng.random_range(0..8) as f64])
                .collect();
            ReturnDistribution::from_rows(&rows).unwrap()
        };
        for t in 0..400 {
            let a = mk(&mut rng, 1 + t % 7);
            let b = if t % 5 == 0 {
                a.clone()
            } else {
                mk(&mut rng, 1 + t % 4)
            };
            let (da, db) = (
                GridCdf::with_layout(&a, &g, CdfLayout::Dense).unwrap(),
                GridCdf::with_layout(&b, &g, CdfLayout::Dense).unwrap(),
            );
            let (sa, sb) = (
                GridCdf::with_layout(&a, &g, CdfLayout::Sweep).unwrap(),
                GridCdf::with_layout(&b, &g, CdfLayout::Sweep).unwrap(),
            );
            assert_eq!(da.dominates(&db), sa.dominates(&sb));
            assert_eq!(db.dominates(&da), sb.dominates(&sa));
            assert_eq!(da.same_as(&db), sa.same_as(&sb));
            assert_eq!(da.sup_gap(&db), sa.sup_gap(&sb));
            for k in (0..g.n_points()).step_by(37) {
                assert_eq!(da.count(k), sa.count(k));
            }
        }
        let g3 = CdfGrid::new(vec![0.0; 3], vec![1.0; 3], 4).unwrap();
        let z = ReturnDistribution::from_rows(&[vec![0.5; 3]]).unwrap();
        assert!(GridCdf::with_layout(&z, &g3, CdfLayout::Sweep).is_err());
    }

    #[test]
    fn large_two_objective_grids_use_sweep() {
        let g = CdfGrid::new(vec![-1.0, 0.0], vec![0.0, 2e7], 2000).unwrap();
        let z = ReturnDistribution::from_rows(&[vec![-0.5, 1e7], vec![-0.2, 3e6]]).unwrap();
        let w = ReturnDistribution::from_rows(&[vec![-0.5, 1.1e7], vec![-0.2, 3e6]]).unwrap();
        let (cz, cw) = (GridCdf::new(&z, &g).unwrap(), GridCdf::new(&w, &g).unwrap());
        assert_eq!(cz.layout(), CdfLayout::Sweep);
        assert!(cw.dominates(&cz));
        assert!(!cz.dominates(&cw));
        assert!((cz.sup_gap(&cw) - 0.5).abs() < 1e-12);
    }

    fn small_int_dist(max_m: usize) -> impl Strategy<Value = ReturnDistribution> {
        prop::collection::vec(prop::collection::vec(-4i32..5, 2), 1..=max_m).prop_map(|rows| {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect();
            ReturnDistribution::from_rows(&rows).unwrap()
        })
    }

    fn lattice() -> CdfGrid {
        CdfGrid::integer_lattice(vec![-10, -10], vec![10, 10]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn cdf_is_monotone(z in small_int_dist(8), v in prop::collection::vec(-5.0f64..5.0, 2), j in 0usize..2, bump in 0.0f64..3.0) {
            let mut w = v.clone();
            w[j] += bump;
            prop_assert!(z.cdf_at(&v).unwrap() <= z.cdf_at(&w).unwrap());
        }

        #[test]
        fn point_masses_reduce_to_pareto(a in prop::collection::vec(-4i32..5, 2), b in prop::collection::vec(-4i32..5, 2)) {
            let va = ReturnVector::new(a.into_iter().map(f64::from).collect()).unwrap();
            let vb = ReturnVector::new(b.into_iter().map(f64::from).collect()).unwrap();
            let za = ReturnDistribution::point_mass(&va).unwrap();
            let zb = ReturnDistribution::point_mass(&vb).unwrap();
            prop_assert_eq!(esr_dominates(&za, &zb, &lattice()).unwrap(), va.pareto_dominates(&vb));
        }

        #[test]
        fn dominance_is_a_strict_order(a in small_int_dist(4), b in small_int_dist(4), c in small_int_dist(4)) {
            let g = lattice();
            let (fa, fb, fc) = (GridCdf::new(&a, &g).unwrap(), GridCdf::new(&b, &g).unwrap(), GridCdf::new(&c, &g).unwrap());
            prop_assert!(!fa.dominates(&fa));
            prop_assert!(!(fa.dominates(&fb) && fb.dominates(&fa)));
            if fa.dominates(&fb) && fb.dominates(&fc) {
                prop_assert!(fa.dominates(&fc));
            }
        }

        #[test]
        fn convolution_matches_double_loop(a in small_int_dist(5), b in small_int_dist(5), v in prop::collection::vec(-8i32..9, 2)) {
            let c = a.convolve(&b, None, 0).unwrap();
            prop_assert_eq!(c.len(), a.len() * b.len());
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let mut hits = 0;
            for x in a.rows() {
                for y in b.rows() {
                    if x.iter().zip(y).zip(&v).all(|((p, q), t)| p + q <= *t) {
                        hits += 1;
                    }
                }
            }
            prop_assert_eq!(c.count_le(&v).unwrap(), hits);
            let (ea, eb, ec) = (a.expected_value(), b.expected_value(), c.expected_value());
            for j in 0..2 {
                prop_assert!((ec[j] - (ea[j] + eb[j])).abs() < 1e-12);
            }
        }

        #[test]
        fn common_shift_preserves_dominance(a in small_int_dist(4), b in small_int_dist(4), w in prop::collection::vec(-3i32..4, 2)) {
            let g = lattice();
            let shift = ReturnDistribution::point_mass(&ReturnVector(w.iter().map(|&x| f64::from(x)).collect())).unwrap();
            if esr_dominates(&a, &b, &g).unwrap() {
                let lo: Vec<i64> = w.iter().map(|&x| -10 + x as i64).collect();
                let hi: Vec<i64> = w.iter().map(|&x| 10 + x as i64).collect();
                let shifted = CdfGrid::integer_lattice(lo, hi).unwrap();
                let (sa, sb) = (a.convolve(&shift, None, 0).unwrap(), b.convolve(&shift, None, 0).unwrap());
                prop_assert!(esr_dominates(&sa, &sb, &shifted).unwrap());
            }
        }
    }
}

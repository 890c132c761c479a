//! Shape-based distance and k-shape clustering over z-normalized series.
//!
//! The distance between two series is one minus the maximum of their
//! normalized cross-correlation over all alignments, computed through an
//! FFT of length >= 2m-1. Cluster centroids are extracted as the principal
//! eigenvector (power iteration) of the Gram matrix of aligned, mean-
//! centered members, which maximizes the summed squared correlation to the
//! cluster.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};

/// A series normalized to mean 0 and population variance 1.
///
/// A constant source series normalizes to the all-zero vector; zero-energy
/// series are legal members here and are treated as having zero correlation
/// with everything (distance 1) inside the clustering loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ZNormSeries {
    pub values: Vec<f64>,
}

impl ZNormSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn is_zero_energy(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Distance and the alignment shift that achieved it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbdResult {
    /// In [0, 2]; 0 means identical shape after alignment.
    pub distance: f64,
    /// Delay applied to the second series to best match the first.
    pub shift: i64,
}

/// Fitted clustering: centroids, per-series labels, and the iteration trace.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<ZNormSeries>,
    pub labels: Vec<usize>,
    pub iterations_run: usize,
    /// Sum of distances to assigned centroids at the final iteration.
    pub inertia: f64,
    /// Inertia after each iteration, for convergence inspection.
    pub inertia_trace: Vec<f64>,
    pub seed: u64,
}

#[derive(Serialize)]
struct ClusterManifest {
    k: usize,
    seed: u64,
    iterations: usize,
    inertia: f64,
}

impl ClusterModel {
    /// Centroids as CSV rows `cluster,v0,v1,...`.
    pub fn centroids_csv(&self) -> String {
        let mut out = String::from("cluster,values\n");
        for (c, centroid) in self.centroids.iter().enumerate() {
            out.push_str(&c.to_string());
            for v in &centroid.values {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&ClusterManifest {
            k: self.k,
            seed: self.seed,
            iterations: self.iterations_run,
            inertia: self.inertia,
        })
        .expect("manifest serialization cannot fail")
    }
}

/// Subtract the mean and divide by the population standard deviation.
/// A constant input maps to the all-zero series.
pub fn z_normalize(x: &[f64]) -> Result<ZNormSeries> {
    if x.len() < 2 {
        return Err(Error::Dimension(format!(
            "need length >= 2 to z-normalize, got {}",
            x.len()
        )));
    }
    // Constant sources normalize to the zero series. The exact equality
    // check matters: summation rounding can leave a constant input with a
    // tiny nonzero variance that z-normalization would blow up into noise.
    if x.iter().all(|v| *v == x[0]) {
        return Ok(ZNormSeries {
            values: vec![0.0; x.len()],
        });
    }
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let variance = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    if variance == 0.0 {
        return Ok(ZNormSeries {
            values: vec![0.0; x.len()],
        });
    }
    let std = variance.sqrt();
    Ok(ZNormSeries {
        values: x.iter().map(|v| (v - mean) / std).collect(),
    })
}

/// Reusable FFT plans and scratch space for one series length.
struct NccEngine {
    m: usize,
    size: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl NccEngine {
    fn new(m: usize) -> Self {
        let size = (2 * m - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        NccEngine {
            m,
            size,
            fft: planner.plan_fft_forward(size),
            ifft: planner.plan_fft_inverse(size),
        }
    }

    /// Cross-correlation of x against y at every shift, scaled by the
    /// geometric mean of the energies. Entry `i` corresponds to shift
    /// `i - (m - 1)`: the delay applied to y.
    fn ncc(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(x.len(), self.m);
        debug_assert_eq!(y.len(), self.m);
        let r0x: f64 = x.iter().map(|v| v * v).sum();
        let r0y: f64 = y.iter().map(|v| v * v).sum();
        if r0x == 0.0 || r0y == 0.0 {
            return Err(Error::DegenerateSeries(
                "zero-energy series has no defined correlation".into(),
            ));
        }
        let norm = (r0x * r0y).sqrt();

        let mut fx: Vec<Complex<f64>> = x
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat_n(Complex::new(0.0, 0.0), self.size - self.m))
            .collect();
        let mut fy: Vec<Complex<f64>> = y
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat_n(Complex::new(0.0, 0.0), self.size - self.m))
            .collect();
        self.fft.process(&mut fx);
        self.fft.process(&mut fy);
        for (a, b) in fx.iter_mut().zip(&fy) {
            *a *= b.conj();
        }
        self.ifft.process(&mut fx);

        let scale = 1.0 / (self.size as f64 * norm);
        let m = self.m as i64;
        let out = (0..2 * self.m - 1)
            .map(|i| {
                let shift = i as i64 - (m - 1);
                let raw = if shift >= 0 {
                    fx[shift as usize].re
                } else {
                    fx[(self.size as i64 + shift) as usize].re
                };
                raw * scale
            })
            .collect();
        Ok(out)
    }

    /// Distance with the tie rule: among equal maxima prefer the smallest
    /// absolute shift, then the negative one.
    fn sbd(&self, x: &[f64], y: &[f64]) -> Result<SbdResult> {
        let ncc = self.ncc(x, y)?;
        let m = self.m as i64;
        let mut best_value = f64::NEG_INFINITY;
        let mut best_shift = 0i64;
        for (i, &value) in ncc.iter().enumerate() {
            let shift = i as i64 - (m - 1);
            let better = value > best_value
                || (value == best_value
                    && (shift.abs() < best_shift.abs()
                        || (shift.abs() == best_shift.abs() && shift < best_shift)));
            if better {
                best_value = value;
                best_shift = shift;
            }
        }
        Ok(SbdResult {
            distance: (1.0 - best_value).clamp(0.0, 2.0),
            shift: best_shift,
        })
    }

    /// Distance for the clustering loop, where zero-energy members and
    /// centroids are legal: correlation with them is defined as zero.
    fn sbd_or_one(&self, x: &ZNormSeries, y: &ZNormSeries) -> SbdResult {
        if x.is_zero_energy() || y.is_zero_energy() {
            return SbdResult {
                distance: 1.0,
                shift: 0,
            };
        }
        self.sbd(&x.values, &y.values)
            .expect("non-degenerate by construction")
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "series lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Dimension("series must have length >= 2".into()));
    }
    Ok(())
}

/// Normalized cross-correlation over all 2m-1 shifts.
pub fn ncc(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_pair(x, y)?;
    NccEngine::new(x.len()).ncc(x, y)
}

/// Shape-based distance between two series.
pub fn sbd(x: &[f64], y: &[f64]) -> Result<SbdResult> {
    check_pair(x, y)?;
    NccEngine::new(x.len()).sbd(x, y)
}

/// Delay `series` by `shift` steps (negative advances it), zero-padding
/// the vacated positions.
fn shift_series(series: &[f64], shift: i64) -> Vec<f64> {
    let m = series.len() as i64;
    (0..m)
        .map(|t| {
            let src = t - shift;
            if (0..m).contains(&src) {
                series[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Extract the centroid of a member set: align members to the previous
/// centroid, then take the principal eigenvector of the Gram matrix of the
/// mean-centered alignment, sign-matched to the previous centroid, and
/// z-normalize the result.
pub fn extract_shape(members: &[&ZNormSeries], previous_centroid: &ZNormSeries) -> Result<ZNormSeries> {
    if members.is_empty() {
        return Err(Error::EmptyInput("cannot extract a shape from an empty cluster".into()));
    }
    let m = previous_centroid.len();
    if members.iter().any(|s| s.len() != m) {
        return Err(Error::Dimension("member length differs from centroid length".into()));
    }
    let engine = NccEngine::new(m);

    let mut aligned: Vec<Vec<f64>> = Vec::with_capacity(members.len());
    for member in members {
        let row = if previous_centroid.is_zero_energy() || member.is_zero_energy() {
            member.values.clone()
        } else {
            let shift = engine
                .sbd(&previous_centroid.values, &member.values)
                .expect("checked non-degenerate")
                .shift;
            shift_series(&member.values, shift)
        };
        aligned.push(row);
    }
    // Mean-center each aligned row; the Gram matrix of the centered rows is
    // the projected matrix whose principal eigenvector is the centroid.
    for row in &mut aligned {
        let mean = row.iter().sum::<f64>() / m as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }

    let mut gram = vec![0.0f64; m * m];
    for row in &aligned {
        for i in 0..m {
            if row[i] == 0.0 {
                continue;
            }
            let ri = row[i];
            for j in 0..m {
                gram[i * m + j] += ri * row[j];
            }
        }
    }

    let start = if previous_centroid.is_zero_energy() {
        vec![1.0; m]
    } else {
        previous_centroid.values.clone()
    };
    let Some(mut eigen) = power_iteration(&gram, m, &start, 1e-8) else {
        // Zero Gram matrix: every member was constant.
        return Ok(ZNormSeries { values: vec![0.0; m] });
    };

    // Orient the eigenvector: toward the previous centroid when available,
    // otherwise toward the member mass.
    let reference_dot: f64 = if previous_centroid.is_zero_energy() {
        aligned
            .iter()
            .map(|row| row.iter().zip(&eigen).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    } else {
        previous_centroid
            .values
            .iter()
            .zip(&eigen)
            .map(|(a, b)| a * b)
            .sum()
    };
    if reference_dot < 0.0 {
        for v in &mut eigen {
            *v = -*v;
        }
    }
    z_normalize(&eigen)
}

/// Power iteration for the dominant eigenvector of a symmetric PSD matrix,
/// run to a relative step tolerance. Returns None for the zero matrix.
fn power_iteration(matrix: &[f64], m: usize, start: &[f64], tolerance: f64) -> Option<Vec<f64>> {
    let matvec = |v: &[f64], out: &mut [f64]| {
        for i in 0..m {
            let row = &matrix[i * m..(i + 1) * m];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut v = start.to_vec();
    let n0 = norm(&v);
    if n0 == 0.0 {
        v = vec![1.0; m];
    }
    let n0 = norm(&v);
    for x in &mut v {
        *x /= n0;
    }

    let mut next = vec![0.0; m];
    for attempt in 0..2 {
        for _ in 0..10_000 {
            matvec(&v, &mut next);
            let n = norm(&next);
            if n < 1e-300 {
                break;
            }
            for x in &mut next {
                *x /= n;
            }
            let step: f64 = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            std::mem::swap(&mut v, &mut next);
            if step <= tolerance {
                return Some(v);
            }
        }
        if norm(&v) > 0.0 && {
            matvec(&v, &mut next);
            norm(&next) >= 1e-300
        } {
            return Some(v);
        }
        // The start vector annihilated the matrix; retry from a fixed basis.
        if attempt == 0 {
            v = vec![1.0; m];
            if matrix.iter().all(|&x| x == 0.0) {
                return None;
            }
            // Perturb deterministically so no direction is orthogonal to
            // the range by coincidence.
            for (i, x) in v.iter_mut().enumerate() {
                *x += (i % 7) as f64 * 0.01;
            }
            let n = norm(&v);
            for x in &mut v {
                *x /= n;
            }
        }
    }
    None
}

/// Random-label initializations evaluated per clustering call; the
/// lowest-inertia result wins. Single inits land in poor basins often
/// enough to matter on weakly shaped series.
const KSHAPE_RESTARTS: u64 = 3;

/// k-shape clustering of raw sequences (z-normalized internally).
///
/// Each initialization starts from seeded uniform random labels and
/// alternates shape extraction with nearest-centroid assignment until
/// labels are stable or `max_iter` is reached; an empty cluster is
/// reseeded with the series farthest from its assigned centroid. The
/// best of a small fixed number of initializations (by final inertia)
/// is returned, all derived deterministically from `seed`.
pub fn kshape_cluster(
    sequences: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if sequences.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} sequences",
            sequences.len()
        )));
    }
    let m = sequences[0].len();
    if m < 2 {
        return Err(Error::Dimension("sequences must have length >= 2".into()));
    }
    if sequences.iter().any(|s| s.len() != m) {
        return Err(Error::Dimension("sequences must share one length".into()));
    }

    let series: Vec<ZNormSeries> = sequences
        .iter()
        .map(|s| z_normalize(s))
        .collect::<Result<_>>()?;
    let engine = NccEngine::new(m);

    let mut best: Option<ClusterModel> = None;
    for restart in 0..KSHAPE_RESTARTS {
        let mut mixed = seed ^ restart.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        mixed = (mixed ^ (mixed >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let mut model = kshape_single(&series, &engine, k, mixed, max_iter)?;
        model.seed = seed;
        if best
            .as_ref()
            .map(|b| model.inertia < b.inertia)
            .unwrap_or(true)
        {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart runs"))
}

fn kshape_single(
    series: &[ZNormSeries],
    engine: &NccEngine,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel> {
    let m = engine.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = series.iter().map(|_| rng.random_range(0..k)).collect();
    let mut centroids: Vec<ZNormSeries> = vec![
        ZNormSeries {
            values: vec![0.0; m],
        };
        k
    ];

    let mut inertia_trace = Vec::new();
    let mut iterations_run = 0;
    for _ in 0..max_iter {
        iterations_run += 1;

        for c in 0..k {
            let members: Vec<&ZNormSeries> = series
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(s, _)| s)
                .collect();
            if !members.is_empty() {
                centroids[c] = extract_shape(&members, &centroids[c])?;
            }
        }

        let mut distances: Vec<f64> = Vec::with_capacity(series.len());
        let mut next: Vec<usize> = Vec::with_capacity(series.len());
        for s in series {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = engine.sbd_or_one(centroid, s).distance;
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            next.push(best);
            distances.push(best_d);
        }

        // Reseed empty clusters with the globally farthest series.
        for c in 0..k {
            if next.iter().any(|&l| l == c) {
                continue;
            }
            let mut farthest: Option<(usize, f64)> = None;
            for (i, (&l, &d)) in next.iter().zip(&distances).enumerate() {
                if next.iter().filter(|&&x| x == l).count() <= 1 {
                    continue;
                }
                if farthest.map(|(_, best)| d > best).unwrap_or(true) {
                    farthest = Some((i, d));
                }
            }
            if let Some((i, _)) = farthest {
                next[i] = c;
                distances[i] = engine.sbd_or_one(&centroids[c], &series[i]).distance;
            }
        }

        inertia_trace.push(distances.iter().sum());
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }

    let inertia = *inertia_trace.last().unwrap_or(&0.0);
    Ok(ClusterModel {
        k,
        centroids,
        labels,
        iterations_run,
        inertia,
        inertia_trace,
        seed,
    })
}

/// Nearest centroid for a raw series; ties resolve to the lowest index.
pub fn assign(series: &[f64], model: &ClusterModel) -> Result<usize> {
    let m = model
        .centroids
        .first()
        .map(|c| c.len())
        .ok_or_else(|| Error::Config("model has no centroids".into()))?;
    if series.len() != m {
        return Err(Error::Dimension(format!(
            "series length {} vs centroid length {m}",
            series.len()
        )));
    }
    let z = z_normalize(series)?;
    let engine = NccEngine::new(m);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in model.centroids.iter().enumerate() {
        let d = engine.sbd_or_one(centroid, &z).distance;
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    Ok(best)
}

/// Rand index between two labelings: the fraction of pairs on which they
/// agree (together in both, or apart in both).
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut agree = 0u64;
    let mut total = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

//! Survey analytics: customer activeness, attendance sequences, pairwise
//! Hamming distances, and 1-D k-means over engagement levels.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ActivityMatrix;
use crate::error::{Error, Result};

/// Fraction of days on which a customer purchased at any shop.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivenessScore {
    pub customer_id: String,
    pub value: f64,
}

/// Binary per-day purchase indicator series for one customer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttendanceSequence {
    pub customer_id: String,
    pub bits: Vec<u8>,
}

/// Full pairwise Hamming distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    /// Row-major square matrix.
    pub values: Vec<u32>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.ids.len() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("customer_id");
        for id in &self.ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for j in 0..self.ids.len() {
                out.push(',');
                out.push_str(&self.get(i, j).to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn activeness(matrix: &ActivityMatrix, customer_id: &str) -> Result<ActivenessScore> {
    let u = matrix.customer_index(customer_id)?;
    let days = matrix.days();
    let purchase_days = (0..days).filter(|&d| matrix.any_purchase(u, d)).count();
    Ok(ActivenessScore {
        customer_id: customer_id.to_string(),
        value: purchase_days as f64 / days as f64,
    })
}

pub fn attendance_sequence(matrix: &ActivityMatrix, customer_id: &str) -> Result<AttendanceSequence> {
    let u = matrix.customer_index(customer_id)?;
    let bits = (0..matrix.days())
        .map(|d| u8::from(matrix.any_purchase(u, d)))
        .collect();
    Ok(AttendanceSequence {
        customer_id: customer_id.to_string(),
        bits,
    })
}

/// Number of positions at which two equal-length bit sequences differ.
pub fn hamming(x1: &[u8], x2: &[u8]) -> Result<u32> {
    if x1.len() != x2.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths {} vs {}",
            x1.len(),
            x2.len()
        )));
    }
    Ok(x1.iter().zip(x2).filter(|(a, b)| a != b).count() as u32)
}

/// Full pairwise Hamming matrix over attendance sequences.
pub fn hamming_matrix(sequences: &[AttendanceSequence]) -> Result<DistanceMatrix> {
    if sequences.len() < 2 {
        return Err(Error::EmptyInput(
            "need at least two sequences for a distance matrix".into(),
        ));
    }
    let n = sequences.len();
    let mut values = vec![0u32; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = hamming(&sequences[i].bits, &sequences[j].bits)?;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix {
        ids: sequences.iter().map(|s| s.customer_id.clone()).collect(),
        values,
    })
}

/// Lloyd iterations over scalar engagement values with a seeded
/// k-means++-style init. Returns one cluster label per input score.
///
/// An empty cluster is repaired by reseeding it with the point farthest
/// from its current centroid; convergence compares post-repair labels.
pub fn kmeans_engagement(
    scores: &[ActivenessScore],
    n_clusters: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no engagement scores".into()));
    }
    if n_clusters == 0 || n_clusters > scores.len() {
        return Err(Error::Config(format!(
            "n_clusters {} outside [1, {}]",
            n_clusters,
            scores.len()
        )));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++-style seeding: first center uniform, then proportional to
    // squared distance from the nearest chosen center.
    let mut centers = Vec::with_capacity(n_clusters);
    centers.push(values[rng.random_range(0..values.len())]);
    while centers.len() < n_clusters {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| {
                centers
                    .iter()
                    .map(|c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut draw = rng.random::<f64>() * total;
            let mut chosen = values.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if draw < w {
                    chosen = i;
                    break;
                }
                draw -= w;
            }
            values[chosen]
        } else {
            // All points coincide with existing centers.
            values[rng.random_range(0..values.len())]
        };
        centers.push(next);
    }

    let assign = |centers: &[f64]| -> Vec<usize> {
        values
            .iter()
            .map(|v| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = (v - center) * (v - center);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect()
    };

    let mut labels = assign(&centers);
    repair_empty_clusters(&values, &centers, &mut labels, n_clusters);
    for _ in 0..max_iter {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = values
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(v, _)| *v)
                .collect();
            if !members.is_empty() {
                *center = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let mut next = assign(&centers);
        repair_empty_clusters(&values, &centers, &mut next, n_clusters);
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }
    Ok(labels)
}

fn repair_empty_clusters(values: &[f64], centers: &[f64], labels: &mut [usize], n_clusters: usize) {
    for c in 0..n_clusters {
        if labels.iter().any(|&l| l == c) {
            continue;
        }
        // Farthest point from its own centroid, skipping singleton donors.
        let mut farthest: Option<(usize, f64)> = None;
        for (i, (&v, &l)) in values.iter().zip(labels.iter()).enumerate() {
            if labels.iter().filter(|&&x| x == l).count() <= 1 {
                continue;
            }
            let d = (v - centers[l]) * (v - centers[l]);
            if farthest.map(|(_, best)| d > best).unwrap_or(true) {
                farthest = Some((i, d));
            }
        }
        if let Some((i, _)) = farthest {
            labels[i] = c;
        }
    }
}

/// Sum of squared deviations from assigned cluster means.
pub fn kmeans_objective(values: &[f64], labels: &[usize], n_clusters: usize) -> f64 {
    let mut objective = 0.0;
    for c in 0..n_clusters {
        let members: Vec<f64> = values
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(v, _)| *v)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        objective += members.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    objective
}

/// Histogram of activeness values over `bins` equal-width bins on [0, 1].
pub fn activeness_histogram(scores: &[ActivenessScore], bins: usize) -> Vec<usize> {
    let mut hist = vec![0usize; bins];
    for s in scores {
        let mut b = (s.value * bins as f64).floor() as usize;
        if b >= bins {
            b = bins - 1;
        }
        hist[b] += 1;
    }
    hist
}

/// Head-to-tail shape check on a histogram: group occupied bins into
/// maximal contiguous runs; there must be at least two runs, and the
/// lowest and highest runs must carry the two largest run masses.
pub fn bimodality_check(histogram: &[usize]) -> bool {
    let mut runs: Vec<usize> = Vec::new();
    let mut current: Option<usize> = None;
    for &count in histogram {
        if count > 0 {
            *current.get_or_insert(0) += count;
        } else if let Some(mass) = current.take() {
            runs.push(mass);
        }
    }
    if let Some(mass) = current {
        runs.push(mass);
    }
    if runs.len() < 2 {
        return false;
    }
    let first = runs[0];
    let last = *runs.last().unwrap();
    runs[1..runs.len() - 1]
        .iter()
        .all(|&mid| mid <= first.min(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_activity_matrix, PurchaseEvent};

    fn matrix_from(events: &[(&str, &str, u32)], customers: &[&str], shops: &[&str], days: u32) -> ActivityMatrix {
        let events: Vec<PurchaseEvent> = events
            .iter()
            .map(|&(c, s, d)| PurchaseEvent {
                customer_id: c.into(),
                shop_id: s.into(),
                day: d,
            })
            .collect();
        let customers: Vec<String> = customers.iter().map(|s| s.to_string()).collect();
        let shops: Vec<String> = shops.iter().map(|s| s.to_string()).collect();
        build_activity_matrix(&events, &customers, &shops, days).unwrap()
    }

    #[test]
    fn activeness_counts_purchase_days() {
        let m = matrix_from(
            &[("a", "s0", 0), ("a", "s1", 0), ("a", "s0", 1), ("a", "s0", 3)],
            &["a", "b"],
            &["s0", "s1"],
            4,
        );
        assert_eq!(activeness(&m, "a").unwrap().value, 0.75);
        assert_eq!(activeness(&m, "b").unwrap().value, 0.0);
        assert!(matches!(activeness(&m, "zz"), Err(Error::Lookup(_))));
    }

    #[test]
    fn attendance_ors_over_shops() {
        let m = matrix_from(&[("a", "s0", 1), ("a", "s1", 1)], &["a"], &["s0", "s1"], 3);
        assert_eq!(attendance_sequence(&m, "a").unwrap().bits, vec![0, 1, 0]);
    }

    #[test]
    fn hamming_basics() {
        assert_eq!(hamming(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0);
        assert_eq!(hamming(&[0, 1, 1], &[1, 1, 0]).unwrap(), 2);
        assert!(matches!(
            hamming(&[0, 1, 1], &[0, 1, 1, 0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn hamming_matrix_structure() {
        let seqs = vec![
            AttendanceSequence { customer_id: "a".into(), bits: vec![0, 0] },
            AttendanceSequence { customer_id: "b".into(), bits: vec![1, 1] },
        ];
        let m = hamming_matrix(&seqs).unwrap();
        assert_eq!(m.get(0, 0), 0);
        assert_eq!(m.get(1, 1), 0);
        assert_eq!(m.get(0, 1), 2);
        assert_eq!(m.get(1, 0), 2);
        assert!(hamming_matrix(&seqs[..1]).is_err());
    }

    fn scores(values: &[f64]) -> Vec<ActivenessScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| ActivenessScore {
                customer_id: format!("c{i}"),
                value,
            })
            .collect()
    }

    /// Optimal 1-D clustering by brute-force enumeration of cut points
    /// over the sorted values.
    fn brute_force_best_objective(values: &[f64], k: usize) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let sse = |lo: usize, hi: usize| -> f64 {
            let seg = &sorted[lo..hi];
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            seg.iter().map(|v| (v - mean) * (v - mean)).sum()
        };
        assert_eq!(k, 3, "oracle written for k = 3");
        let mut best = f64::INFINITY;
        for cut1 in 1..n - 1 {
            for cut2 in cut1 + 1..n {
                let obj = sse(0, cut1) + sse(cut1, cut2) + sse(cut2, n);
                if obj < best {
                    best = obj;
                }
            }
        }
        best
    }

    #[test]
    fn kmeans_separates_three_plateaus() {
        let mut values = vec![0.0; 10];
        values.extend(vec![0.5; 10]);
        values.extend(vec![1.0; 10]);
        let s = scores(&values);
        let labels = kmeans_engagement(&s, 3, 17, 100).unwrap();
        // Each plateau is one pure cluster.
        for group in [0..10, 10..20, 20..30] {
            let first = labels[group.start];
            assert!(group.clone().all(|i| labels[i] == first));
        }
        assert_eq!(
            labels[0] != labels[10] && labels[10] != labels[20] && labels[0] != labels[20],
            true
        );
        // And the achieved objective matches the brute-force optimum (0 here).
        let objective = kmeans_objective(&values, &labels, 3);
        let best = brute_force_best_objective(&values, 3);
        assert!((objective - best).abs() < 1e-12);
    }

    #[test]
    fn kmeans_single_cluster() {
        let s = scores(&[0.1, 0.5, 0.9]);
        let labels = kmeans_engagement(&s, 1, 0, 50).unwrap();
        assert_eq!(labels, vec![0, 0, 0]);
    }

    #[test]
    fn kmeans_identical_values_terminates() {
        let s = scores(&[0.4; 8]);
        let labels = kmeans_engagement(&s, 2, 5, 100).unwrap();
        // Both clusters non-empty after the reseeding rule.
        assert!(labels.iter().any(|&l| l == 0));
        assert!(labels.iter().any(|&l| l == 1));
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        let s = scores(&[0.1, 0.2]);
        assert!(matches!(
            kmeans_engagement(&s, 3, 0, 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kmeans_objective_non_increasing_over_iteration_budgets() {
        // Running with a larger iteration cap can never end with a worse
        // objective: the trace is non-increasing.
        let values: Vec<f64> = (0..40).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let s = scores(&values);
        let mut previous = f64::INFINITY;
        for max_iter in 1..8 {
            let labels = kmeans_engagement(&s, 3, 23, max_iter).unwrap();
            let objective = kmeans_objective(&values, &labels, 3);
            assert!(objective <= previous + 1e-12);
            previous = objective;
        }
    }

    #[test]
    fn histogram_bins_and_bimodality() {
        let s = scores(&[0.02, 0.03, 0.05, 0.95, 0.92, 0.15]);
        let hist = activeness_histogram(&s, 10);
        assert_eq!(hist[0], 3);
        assert_eq!(hist[1], 1);
        assert_eq!(hist[9], 2);
        assert!(bimodality_check(&hist));
        // Mass concentrated in the middle is not head-to-tail.
        assert!(!bimodality_check(&[0, 1, 0, 9, 9, 0, 0, 1, 0, 0]));
        assert!(!bimodality_check(&[0, 0, 5, 0, 0, 0, 0, 0, 0, 0]));
    }
}

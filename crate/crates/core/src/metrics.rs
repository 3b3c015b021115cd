//! Retrieval metrics: part-averaged distance matrix, rank-k accuracy,
//! mean average precision, and mean inverse negative penalty.
//!
//! All metrics skip probes with no valid positive and report the skip
//! count. Distance ties are broken by lower gallery index for
//! deterministic results.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Mean over parts of the per-part Euclidean distance between probe and
/// gallery part-embedding matrices `[N,P,D]`. Returns `[Np,Ng]`.
pub fn distance_matrix(probe: &Tensor<f64>, gallery: &Tensor<f64>) -> Result<Tensor<f64>> {
    let ps = probe.shape();
    let gs = gallery.shape();
    if ps.len() != 3 || gs.len() != 3 || ps[1] != gs[1] || ps[2] != gs[2] {
        return Err(TensorError::ShapeMismatch(format!(
            "distance_matrix expects [Np,P,D] and [Ng,P,D], got {ps:?} and {gs:?}"
        )));
    }
    let (np, p, d) = (ps[0], ps[1], ps[2]);
    let ng = gs[0];
    let mut out = Tensor::zeros(&[np, ng]);
    for i in 0..np {
        for j in 0..ng {
            let mut acc = 0.0;
            for part in 0..p {
                let mut s = 0.0;
                for k in 0..d {
                    let a = probe.data()[(i * p + part) * d + k];
                    let b = gallery.data()[(j * p + part) * d + k];
                    s += (a - b) * (a - b);
                }
                acc += s.sqrt();
            }
            out.data_mut()[i * ng + j] = acc / p as f64;
        }
    }
    Ok(out)
}

/// Per-probe list of valid gallery indices sorted ascending by
/// (distance, gallery index).
fn sorted_valid(
    row: &[f64],
    ng: usize,
    probe_idx: usize,
    exclusion: Option<&[bool]>,
) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ng)
        .filter(|&j| exclusion.is_none_or(|m| !m[probe_idx * ng + j]))
        .collect();
    idx.sort_by(|&a, &b| {
        row[a]
            .partial_cmp(&row[b])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn check_dims(
    dists: &Tensor<f64>,
    probe_labels: &[usize],
    gallery_labels: &[usize],
    exclusion: Option<&[bool]>,
) -> Result<(usize, usize)> {
    let s = dists.shape();
    if s.len() != 2 {
        return Err(TensorError::ShapeMismatch(format!(
            "distance matrix must be 2-D, got {s:?}"
        )));
    }
    let (np, ng) = (s[0], s[1]);
    if probe_labels.len() != np || gallery_labels.len() != ng {
        return Err(TensorError::ShapeMismatch(format!(
            "labels ({}, {}) do not match distance matrix {np}x{ng}",
            probe_labels.len(),
            gallery_labels.len()
        )));
    }
    if let Some(m) = exclusion {
        if m.len() != np * ng {
            return Err(TensorError::ShapeMismatch(format!(
                "exclusion mask has {} entries, expected {}",
                m.len(),
                np * ng
            )));
        }
    }
    Ok((np, ng))
}

/// Fraction of probes whose `k` nearest valid gallery entries contain a
/// matching identity. Returns `(accuracy, skipped)` where `skipped` counts
/// probes with no valid positive (excluded from the denominator).
pub fn rank_k(
    dists: &Tensor<f64>,
    probe_labels: &[usize],
    gallery_labels: &[usize],
    k: usize,
    exclusion: Option<&[bool]>,
) -> Result<(f64, usize)> {
    let (np, ng) = check_dims(dists, probe_labels, gallery_labels, exclusion)?;
    let mut hits = 0usize;
    let mut valid = 0usize;
    let mut skipped = 0usize;
    for i in 0..np {
        let row = &dists.data()[i * ng..(i + 1) * ng];
        let order = sorted_valid(row, ng, i, exclusion);
        if !order.iter().any(|&j| gallery_labels[j] == probe_labels[i]) {
            skipped += 1;
            continue;
        }
        valid += 1;
        if order
            .iter()
            .take(k)
            .any(|&j| gallery_labels[j] == probe_labels[i])
        {
            hits += 1;
        }
    }
    let acc = if valid == 0 {
        0.0
    } else {
        hits as f64 / valid as f64
    };
    Ok((acc, skipped))
}

/// Mean average precision. Per probe, with positives at 1-based ranks
/// `r_1 < r_2 < ...` among the valid gallery sorted by distance,
/// `AP = mean_i (i / r_i)`. Probes without positives are skipped.
pub fn mean_ap(
    dists: &Tensor<f64>,
    probe_labels: &[usize],
    gallery_labels: &[usize],
    exclusion: Option<&[bool]>,
) -> Result<(f64, usize)> {
    let (np, ng) = check_dims(dists, probe_labels, gallery_labels, exclusion)?;
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut skipped = 0usize;
    for i in 0..np {
        let row = &dists.data()[i * ng..(i + 1) * ng];
        let order = sorted_valid(row, ng, i, exclusion);
        let mut npos = 0usize;
        let mut ap = 0.0;
        for (pos, &j) in order.iter().enumerate() {
            if gallery_labels[j] == probe_labels[i] {
                npos += 1;
                ap += npos as f64 / (pos + 1) as f64;
            }
        }
        if npos == 0 {
            skipped += 1;
            continue;
        }
        valid += 1;
        total += ap / npos as f64;
    }
    let v = if valid == 0 { 0.0 } else { total / valid as f64 };
    Ok((v, skipped))
}

/// Mean inverse negative penalty. Per probe,
/// `INP = (#positives) / (rank of the hardest positive)`.
pub fn m_inp(
    dists: &Tensor<f64>,
    probe_labels: &[usize],
    gallery_labels: &[usize],
    exclusion: Option<&[bool]>,
) -> Result<(f64, usize)> {
    let (np, ng) = check_dims(dists, probe_labels, gallery_labels, exclusion)?;
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut skipped = 0usize;
    for i in 0..np {
        let row = &dists.data()[i * ng..(i + 1) * ng];
        let order = sorted_valid(row, ng, i, exclusion);
        let mut npos = 0usize;
        let mut hardest = 0usize;
        for (pos, &j) in order.iter().enumerate() {
            if gallery_labels[j] == probe_labels[i] {
                npos += 1;
                hardest = pos + 1;
            }
        }
        if npos == 0 {
            skipped += 1;
            continue;
        }
        valid += 1;
        total += npos as f64 / hardest as f64;
    }
    let v = if valid == 0 { 0.0 } else { total / valid as f64 };
    Ok((v, skipped))
}

/// Brute-force counting oracles, written without sorting: ranks are
/// derived by counting entries with a strictly smaller (distance, index)
/// key. Exposed so integration suites can cross-check the sort-based
/// implementations above.
pub mod oracle {
    use super::*;

    fn key_less(row: &[f64], a: usize, b: usize) -> bool {
        row[a] < row[b] || (row[a] == row[b] && a < b)
    }

    fn rank_of(row: &[f64], j: usize, valid: &[usize]) -> usize {
        1 + valid.iter().filter(|&&o| key_less(row, o, j)).count()
    }

    fn valid_indices(ng: usize, i: usize, exclusion: Option<&[bool]>) -> Vec<usize> {
        (0..ng)
            .filter(|&j| exclusion.is_none_or(|m| !m[i * ng + j]))
            .collect()
    }

    pub fn rank_k(
        dists: &Tensor<f64>,
        probe_labels: &[usize],
        gallery_labels: &[usize],
        k: usize,
        exclusion: Option<&[bool]>,
    ) -> (f64, usize) {
        let ng = dists.shape()[1];
        let np = dists.shape()[0];
        let (mut hits, mut valid, mut skipped) = (0usize, 0usize, 0usize);
        for i in 0..np {
            let row = &dists.data()[i * ng..(i + 1) * ng];
            let vj = valid_indices(ng, i, exclusion);
            let positives: Vec<usize> = vj
                .iter()
                .copied()
                .filter(|&j| gallery_labels[j] == probe_labels[i])
                .collect();
            if positives.is_empty() {
                skipped += 1;
                continue;
            }
            valid += 1;
            let best = positives.iter().map(|&j| rank_of(row, j, &vj)).min().unwrap();
            if best <= k {
                hits += 1;
            }
        }
        (
            if valid == 0 {
                0.0
            } else {
                hits as f64 / valid as f64
            },
            skipped,
        )
    }

    pub fn mean_ap(
        dists: &Tensor<f64>,
        probe_labels: &[usize],
        gallery_labels: &[usize],
        exclusion: Option<&[bool]>,
    ) -> (f64, usize) {
        let ng = dists.shape()[1];
        let np = dists.shape()[0];
        let (mut total, mut valid, mut skipped) = (0.0, 0usize, 0usize);
        for i in 0..np {
            let row = &dists.data()[i * ng..(i + 1) * ng];
            let vj = valid_indices(ng, i, exclusion);
            let mut ranks: Vec<usize> = vj
                .iter()
                .copied()
                .filter(|&j| gallery_labels[j] == probe_labels[i])
                .map(|j| rank_of(row, j, &vj))
                .collect();
            if ranks.is_empty() {
                skipped += 1;
                continue;
            }
            ranks.sort_unstable();
            let ap: f64 = ranks
                .iter()
                .enumerate()
                .map(|(i0, &r)| (i0 + 1) as f64 / r as f64)
                .sum::<f64>()
                / ranks.len() as f64;
            total += ap;
            valid += 1;
        }
        (
            if valid == 0 { 0.0 } else { total / valid as f64 },
            skipped,
        )
    }

    pub fn m_inp(
        dists: &Tensor<f64>,
        probe_labels: &[usize],
        gallery_labels: &[usize],
        exclusion: Option<&[bool]>,
    ) -> (f64, usize) {
        let ng = dists.shape()[1];
        let np = dists.shape()[0];
        let (mut total, mut valid, mut skipped) = (0.0, 0usize, 0usize);
        for i in 0..np {
            let row = &dists.data()[i * ng..(i + 1) * ng];
            let vj = valid_indices(ng, i, exclusion);
            let ranks: Vec<usize> = vj
                .iter()
                .copied()
                .filter(|&j| gallery_labels[j] == probe_labels[i])
                .map(|j| rank_of(row, j, &vj))
                .collect();
            if ranks.is_empty() {
                skipped += 1;
                continue;
            }
            let hardest = *ranks.iter().max().unwrap();
            total += ranks.len() as f64 / hardest as f64;
            valid += 1;
        }
        (
            if valid == 0 { 0.0 } else { total / valid as f64 },
            skipped,
        )
    }
}

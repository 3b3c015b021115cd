//! Metric-learning losses: the batch-all triplet loss over part embeddings
//! and the part-averaged softmax cross-entropy.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Euclidean distance between rows `i` and `j` of one part's embedding
/// slice, plus the difference vector (used for the gradient).
fn part_distance<T: Scalar>(e: &[T], d: usize, i: usize, j: usize) -> T {
    let mut s = T::zero();
    for k in 0..d {
        let diff = e[i * d + k] - e[j * d + k];
        s = s + diff * diff;
    }
    s.sqrt()
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Batch-all triplet loss. For each part, enumerates every
    /// (anchor, positive, negative) triple with matching anchor/positive
    /// labels and a different negative label, hinges
    /// `max(0, d(a,p) - d(a,n) + margin)` on that part's Euclidean
    /// distances, and averages over the triples with positive loss
    /// (0 when none are active). The final loss is the mean over parts.
    ///
    /// Errors when the batch admits no valid triplet (fewer than two
    /// identities, or no identity with two samples).
    pub fn triplet_loss(self, labels: &[usize], margin: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "triplet_loss expects [B,P,D], got {shape:?}"
            )));
        }
        let (b, p, d) = (shape[0], shape[1], shape[2]);
        if labels.len() != b {
            return Err(TensorError::ShapeMismatch(format!(
                "expected {b} labels, got {}",
                labels.len()
            )));
        }
        let mut has_triplet = false;
        'outer: for a in 0..b {
            for pos in 0..b {
                if pos == a || labels[pos] != labels[a] {
                    continue;
                }
                if (0..b).any(|n| labels[n] != labels[a]) {
                    has_triplet = true;
                    break 'outer;
                }
            }
        }
        if !has_triplet {
            return Err(TensorError::Batch(
                "triplet loss requires at least two identities and one identity with two samples"
                    .into(),
            ));
        }
        let labels: Vec<usize> = labels.to_vec();
        let marg = T::of_f64(margin);

        let forward = {
            let labels = labels.clone();
            self.tape.with_value(self.id, move |x| {
                let data = x.data();
                let mut total = T::zero();
                for part in 0..p {
                    // Slice out this part's [B,D] block.
                    let mut e = vec![T::zero(); b * d];
                    for i in 0..b {
                        for k in 0..d {
                            e[i * d + k] = data[(i * p + part) * d + k];
                        }
                    }
                    let mut dist = vec![T::zero(); b * b];
                    for i in 0..b {
                        for j in 0..b {
                            dist[i * b + j] = part_distance(&e, d, i, j);
                        }
                    }
                    let mut active = 0usize;
                    let mut sum = T::zero();
                    for a in 0..b {
                        for pos in 0..b {
                            if pos == a || labels[pos] != labels[a] {
                                continue;
                            }
                            for n in 0..b {
                                if labels[n] == labels[a] {
                                    continue;
                                }
                                let l = dist[a * b + pos] - dist[a * b + n] + marg;
                                if l > T::zero() {
                                    active += 1;
                                    sum = sum + l;
                                }
                            }
                        }
                    }
                    if active > 0 {
                        total = total + sum / T::from_usize_(active);
                    }
                }
                Tensor::scalar(total / T::from_usize_(p))
            })
        };

        Ok(self.tape.push(
            forward,
            vec![self.id],
            Box::new(move |gout, _, pvals| {
                let x = pvals[0];
                let data = x.data();
                let g = gout.data()[0];
                let mut grad = Tensor::zeros(x.shape());
                for part in 0..p {
                    let mut e = vec![T::zero(); b * d];
                    for i in 0..b {
                        for k in 0..d {
                            e[i * d + k] = data[(i * p + part) * d + k];
                        }
                    }
                    let mut dist = vec![T::zero(); b * b];
                    for i in 0..b {
                        for j in 0..b {
                            dist[i * b + j] = part_distance(&e, d, i, j);
                        }
                    }
                    // First pass: count active triplets for the mean.
                    let mut active = 0usize;
                    for a in 0..b {
                        for pos in 0..b {
                            if pos == a || labels[pos] != labels[a] {
                                continue;
                            }
                            for n in 0..b {
                                if labels[n] == labels[a] {
                                    continue;
                                }
                                if dist[a * b + pos] - dist[a * b + n] + marg > T::zero() {
                                    active += 1;
                                }
                            }
                        }
                    }
                    if active == 0 {
                        continue;
                    }
                    let w = g / (T::from_usize_(active) * T::from_usize_(p));
                    // Second pass: distribute gradient through d(a,p) and
                    // -d(a,n). d d(i,j)/de_i = (e_i - e_j)/d(i,j); zero at
                    // coincident points.
                    let add_pair = |grad: &mut Tensor<T>, i: usize, j: usize, sign: T| {
                        let dij = dist[i * b + j];
                        if dij <= T::zero() {
                            return;
                        }
                        for k in 0..d {
                            let diff = (e[i * d + k] - e[j * d + k]) / dij;
                            let gi = (i * p + part) * d + k;
                            let gj = (j * p + part) * d + k;
                            grad.data_mut()[gi] = grad.data_mut()[gi] + sign * w * diff;
                            grad.data_mut()[gj] = grad.data_mut()[gj] - sign * w * diff;
                        }
                    };
                    for a in 0..b {
                        for pos in 0..b {
                            if pos == a || labels[pos] != labels[a] {
                                continue;
                            }
                            for n in 0..b {
                                if labels[n] == labels[a] {
                                    continue;
                                }
                                if dist[a * b + pos] - dist[a * b + n] + marg > T::zero() {
                                    add_pair(&mut grad, a, pos, T::one());
                                    add_pair(&mut grad, a, n, -T::one());
                                }
                            }
                        }
                    }
                }
                vec![grad]
            }),
        ))
    }

    /// Softmax cross-entropy over per-part logits [B,P,C], averaged over
    /// the batch and parts, with log-sum-exp stabilization.
    pub fn softmax_ce(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "softmax_ce expects [B,P,C], got {shape:?}"
            )));
        }
        let (b, p, c) = (shape[0], shape[1], shape[2]);
        if labels.len() != b {
            return Err(TensorError::ShapeMismatch(format!(
                "expected {b} labels, got {}",
                labels.len()
            )));
        }
        for &l in labels {
            if l >= c {
                return Err(TensorError::LabelOutOfRange {
                    label: l,
                    num_classes: c,
                });
            }
        }
        let labels: Vec<usize> = labels.to_vec();
        let forward = {
            let labels = labels.clone();
            self.tape.with_value(self.id, move |x| {
                let data = x.data();
                let mut total = T::zero();
                for i in 0..b {
                    for part in 0..p {
                        let row = &data[(i * p + part) * c..(i * p + part + 1) * c];
                        let mut m = row[0];
                        for &v in row.iter() {
                            if v > m {
                                m = v;
                            }
                        }
                        let mut lse = T::zero();
                        for &v in row.iter() {
                            lse = lse + (v - m).exp();
                        }
                        let lse = lse.ln() + m;
                        total = total + lse - row[labels[i]];
                    }
                }
                Tensor::scalar(total / T::from_usize_(b * p))
            })
        };
        Ok(self.tape.push(
            forward,
            vec![self.id],
            Box::new(move |gout, _, pvals| {
                let x = pvals[0];
                let data = x.data();
                let g = gout.data()[0] / T::from_usize_(b * p);
                let mut grad = Tensor::zeros(x.shape());
                for i in 0..b {
                    for part in 0..p {
                        let base = (i * p + part) * c;
                        let row = &data[base..base + c];
                        let mut m = row[0];
                        for &v in row.iter() {
                            if v > m {
                                m = v;
                            }
                        }
                        let mut z = T::zero();
                        for &v in row.iter() {
                            z = z + (v - m).exp();
                        }
                        for k in 0..c {
                            let prob = (row[k] - m).exp() / z;
                            let onehot = if k == labels[i] { T::one() } else { T::zero() };
                            grad.data_mut()[base + k] = g * (prob - onehot);
                        }
                    }
                }
                vec![grad]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, tie_free_tensor};
    use crate::rng::Rng;
    use crate::tape::Tape;

    fn leaf<'a>(tape: &'a Tape<f64>, shape: &[usize], data: &[f64]) -> Var<'a, f64> {
        tape.leaf(Tensor::from_f64_slice(shape, data).unwrap(), false)
    }

    /// Brute-force reference: identical enumeration written independently
    /// against plain nested loops over an [B][P][D] view.
    fn triplet_oracle(e: &[f64], b: usize, p: usize, d: usize, labels: &[usize], m: f64) -> f64 {
        let dist = |part: usize, i: usize, j: usize| -> f64 {
            (0..d)
                .map(|k| {
                    let a = e[(i * p + part) * d + k];
                    let bb = e[(j * p + part) * d + k];
                    (a - bb) * (a - bb)
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut total = 0.0;
        for part in 0..p {
            let mut sum = 0.0;
            let mut n_active = 0usize;
            for a in 0..b {
                for pos in 0..b {
                    if pos == a || labels[pos] != labels[a] {
                        continue;
                    }
                    for n in 0..b {
                        if labels[n] == labels[a] {
                            continue;
                        }
                        let l = dist(part, a, pos) - dist(part, a, n) + m;
                        if l > 0.0 {
                            sum += l;
                            n_active += 1;
                        }
                    }
                }
            }
            if n_active > 0 {
                total += sum / n_active as f64;
            }
        }
        total / p as f64
    }

    #[test]
    fn triplet_hinged_to_zero() {
        // Class A at {0,1}, class B at {3}: both triplets hinge to 0.
        let tape = Tape::new();
        let e = leaf(&tape, &[3, 1, 1], &[0.0, 1.0, 3.0]);
        let loss = e.triplet_loss(&[0, 0, 1], 0.2).unwrap();
        assert_eq!(loss.scalar_value(), 0.0);
    }

    #[test]
    fn triplet_active_example() {
        // Class A at {0,2}, class B at {1}: each triplet costs 1.2.
        let tape = Tape::new();
        let e = leaf(&tape, &[3, 1, 1], &[0.0, 1.0, 2.0]);
        let loss = e.triplet_loss(&[0, 1, 0], 0.2).unwrap();
        assert!((loss.scalar_value() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn triplet_identical_embeddings_cost_margin() {
        let tape = Tape::new();
        let e = leaf(&tape, &[4, 2, 3], &[0.5; 24]);
        let loss = e.triplet_loss(&[0, 0, 1, 1], 0.2).unwrap();
        assert!((loss.scalar_value() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn triplet_degenerate_batch_rejected() {
        let tape = Tape::new();
        // Single identity: no negative exists.
        let e = leaf(&tape, &[3, 1, 1], &[0.0, 1.0, 2.0]);
        assert!(e.triplet_loss(&[0, 0, 0], 0.2).is_err());
        // All distinct identities: no positive exists.
        let e2 = leaf(&tape, &[3, 1, 1], &[0.0, 1.0, 2.0]);
        assert!(e2.triplet_loss(&[0, 1, 2], 0.2).is_err());
    }

    #[test]
    fn triplet_matches_bruteforce_on_random_batches() {
        let mut rng = Rng::new(77);
        for trial in 0..20 {
            let (b, p, d) = (2 + rng.below(9), 1 + rng.below(3), 1 + rng.below(4));
            let labels: Vec<usize> = {
                // Force at least one repeated identity and two identities.
                let mut l: Vec<usize> = (0..b).map(|_| rng.below(3)).collect();
                l[0] = 0;
                if b > 1 {
                    l[1] = 0;
                }
                if b > 2 {
                    l[2] = 1;
                } else {
                    continue;
                }
                l
            };
            let data: Vec<f64> = (0..b * p * d).map(|_| rng.normal()).collect();
            let tape = Tape::new();
            let e = leaf(&tape, &[b, p, d], &data);
            let loss = e.triplet_loss(&labels, 0.2).unwrap().scalar_value();
            let want = triplet_oracle(&data, b, p, d, &labels, 0.2);
            assert!(
                (loss - want).abs() < 1e-6,
                "trial {trial}: {loss} vs {want}"
            );
        }
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = Rng::new(13);
        let e = tie_free_tensor(&[6, 2, 3], &mut rng);
        let labels = [0usize, 0, 1, 1, 2, 2];
        let report = check("triplet", &[e], 1e-6, 1e-4, None, |_tape, vars| {
            vars[0].triplet_loss(&labels, 0.2)
        })
        .unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_uniform_logits_is_ln4() {
        let tape = Tape::new();
        let logits = leaf(&tape, &[2, 1, 4], &[0.3; 8]);
        let loss = logits.softmax_ce(&[1, 3]).unwrap();
        assert!((loss.scalar_value() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_confident_correct_is_near_zero() {
        let tape = Tape::new();
        let logits = leaf(&tape, &[1, 1, 3], &[100.0, 0.0, 0.0]);
        let loss = logits.softmax_ce(&[0]).unwrap();
        assert!(loss.scalar_value() < 1e-12);
    }

    #[test]
    fn softmax_label_out_of_range_rejected() {
        let tape = Tape::new();
        let logits = leaf(&tape, &[1, 1, 3], &[0.0, 0.0, 0.0]);
        assert!(logits.softmax_ce(&[3]).is_err());
    }

    #[test]
    fn softmax_matches_loop_oracle() {
        let mut rng = Rng::new(31);
        let (b, p, c) = (4, 3, 5);
        let data: Vec<f64> = (0..b * p * c).map(|_| rng.normal() * 3.0).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
        let tape = Tape::new();
        let logits = leaf(&tape, &[b, p, c], &data);
        let got = logits.softmax_ce(&labels).unwrap().scalar_value();
        let mut want = 0.0;
        for i in 0..b {
            for part in 0..p {
                let row = &data[(i * p + part) * c..(i * p + part + 1) * c];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                want += z.ln() - row[labels[i]];
            }
        }
        want /= (b * p) as f64;
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn softmax_decreases_when_true_logit_grows() {
        let tape = Tape::new();
        let lo = leaf(&tape, &[1, 1, 3], &[0.5, 0.2, 0.1]);
        let hi = leaf(&tape, &[1, 1, 3], &[1.5, 0.2, 0.1]);
        let l1 = lo.softmax_ce(&[0]).unwrap().scalar_value();
        let l2 = hi.softmax_ce(&[0]).unwrap().scalar_value();
        assert!(l2 < l1);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let logits = tie_free_tensor(&[3, 2, 4], &mut rng);
        let labels = [0usize, 2, 3];
        let report = check("softmax-ce", &[logits], 1e-6, 1e-4, None, |_tape, vars| {
            vars[0].softmax_ce(&labels)
        })
        .unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }
}

//! Attack models. Every classifier outputs the probability of membership.

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttackError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub knn_k: usize,
    pub logreg_lr: f64,
    pub logreg_iters: usize,
    pub logreg_l2: f64,
    pub rf_trees: usize,
    pub rf_max_depth: usize,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self { knn_k: 5, logreg_lr: 0.1, logreg_iters: 500, logreg_l2: 1e-3, rf_trees: 100, rf_max_depth: 8 }
    }
}

fn check_classes(y: &[bool]) -> Result<()> {
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(AttackError::ClassImbalanceFatal);
    }
    Ok(())
}

/// Calibrated 1-D threshold: predicts member iff `score ≤ τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAttack {
    pub tau: f64,
    pub calibration_accuracy: f64,
}

impl ThresholdAttack {
    /// τ maximizes calibration accuracy over midpoints of consecutive distinct scores plus
    /// one value below and one above the range; ties go to the smaller τ.
    pub fn fit(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.is_empty() {
            return Err(AttackError::ClassImbalanceFatal);
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut candidates = vec![sorted[0] - 1.0];
        candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        candidates.push(sorted[sorted.len() - 1] + 1.0);
        let mut best = Self { tau: f64::NAN, calibration_accuracy: -1.0 };
        for tau in candidates {
            let correct = scores.iter().zip(labels).filter(|(&s, &l)| (s <= tau) == l).count();
            let acc = correct as f64 / scores.len() as f64;
            if acc > best.calibration_accuracy {
                best = Self { tau, calibration_accuracy: acc };
            }
        }
        Ok(best)
    }

    pub fn predict(&self, score: f64) -> bool {
        score <= self.tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    /// Full-batch gradient descent on mean cross-entropy plus `l2/2 ‖w‖²`, from zero.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &AttackParams) -> Result<Self> {
        check_classes(y)?;
        let d = x[0].len();
        let n = x.len() as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..params.logreg_iters {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (row, &label) in x.iter().zip(y) {
                let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let err = sigmoid(z) - label as u8 as f64;
                gb += err;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += err * v;
                }
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= params.logreg_lr * (g / n + params.logreg_l2 * *wi);
            }
            b -= params.logreg_lr * gb / n;
        }
        Ok(Self { weights: w, bias: b })
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.bias + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

impl Knn {
    pub fn fit(x: &[Vec<f64>], y: &[bool], k: usize) -> Result<Self> {
        check_classes(y)?;
        Ok(Self { k: k.clamp(1, x.len()), rows: x.to_vec(), labels: y.to_vec() })
    }

    /// Fraction of members among the k nearest rows (Euclidean; equal distances keep row order).
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d[..self.k].iter().filter(|(_, i)| self.labels[*i]).count() as f64 / self.k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf(p) => *p,
            Node::Split { feature, threshold, left, right } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_depth: usize,
    n_candidates: usize,
}

impl TreeBuilder<'_> {
    /// Best (weighted child Gini, feature, threshold) among candidate features; zero-gain
    /// splits are accepted so interaction patterns like XOR can still be separated.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut features: Vec<usize> = sample(rng, d, self.n_candidates).into_vec();
        features.sort_unstable();
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        for f in features {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_pos = 0;
            for k in 0..n - 1 {
                left_pos += self.y[order[k]] as usize;
                let (lv, rv) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if lv == rv {
                    continue;
                }
                let nl = k + 1;
                let imp = (nl as f64 * gini(left_pos, nl) + (n - nl) as f64 * gini(total_pos - left_pos, n - nl))
                    / n as f64;
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, 0.5 * (lv + rv)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn build(&self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let leaf = Node::Leaf(pos as f64 / idx.len() as f64);
        if depth >= self.max_depth || idx.len() < 2 || pos == 0 || pos == idx.len() {
            return leaf;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return leaf;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(&l, depth + 1, rng)),
            right: Box::new(self.build(&r, depth + 1, rng)),
        }
    }
}

/// Bagged Gini trees with ⌊√d⌋ random candidate features per split. A leaf votes with
/// its member fraction; the forest averages the votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Node>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &AttackParams, seed: u64) -> Result<Self> {
        check_classes(y)?;
        let d = x[0].len();
        let builder = TreeBuilder {
            x,
            y,
            max_depth: params.rf_max_depth,
            n_candidates: ((d as f64).sqrt().floor() as usize).clamp(1, d),
        };
        let trees = (0..params.rf_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let boot: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
                builder.build(&boot, 0, &mut rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (a, b) = (rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0f64));
                (vec![a, b], (a > 0.0) != (b > 0.0))
            })
            .unzip()
    }

    #[test]
    fn threshold_examples() {
        let t = ThresholdAttack::fit(&[5.0, 6.0, 50.0, 60.0], &[true, true, false, false]).unwrap();
        assert!(t.tau > 6.0 && t.tau < 50.0 && t.calibration_accuracy == 1.0);
        let t = ThresholdAttack::fit(&[3.0; 5], &[true, true, true, false, false]).unwrap();
        assert!(t.predict(3.0));
        let t = ThresholdAttack::fit(&[3.0; 4], &[true, false, false, false]).unwrap();
        assert!(!t.predict(3.0));
        // all candidates tie at 0.5: the smallest τ wins
        let t = ThresholdAttack::fit(&[1.0, 2.0], &[false, true]).unwrap();
        assert_eq!(t.tau, 0.0);
    }

    #[test]
    fn logreg_separable() {
        let x = vec![vec![-2.0, -1.0], vec![-1.0, -2.0], vec![1.0, 2.0], vec![2.0, 1.0]];
        let y = vec![false, false, true, true];
        let m = LogisticRegression::fit(&x, &y, &AttackParams::default()).unwrap();
        assert!(x.iter().zip(&y).all(|(r, &l)| (m.predict_proba(r) >= 0.5) == l));
        assert!(matches!(LogisticRegression::fit(&x, &[true; 4], &AttackParams::default()), Err(AttackError::ClassImbalanceFatal)));
    }

    #[test]
    fn knn_self_and_ties() {
        let (x, y) = xor(30, 1);
        let m = Knn::fit(&x, &y, 1).unwrap();
        assert!(x.iter().zip(&y).all(|(r, &l)| (m.predict_proba(r) >= 0.5) == l));
        let dup = Knn::fit(&[vec![0.0], vec![0.0], vec![5.0]], &[true, false, false], 1).unwrap();
        assert_eq!(dup.predict_proba(&[0.0]), 1.0);
    }

    #[test]
    fn forest_learns_xor() {
        let (x, y) = xor(400, 2);
        let (tx, ty) = xor(400, 3);
        let p = AttackParams { rf_trees: 100, rf_max_depth: 3, ..Default::default() };
        let f = RandomForest::fit(&x, &y, &p, 7).unwrap();
        let acc = tx.iter().zip(&ty).filter(|(r, &l)| (f.predict_proba(r) >= 0.5) == l).count() as f64 / 400.0;
        assert!(acc > 0.9, "{acc}");
        assert_eq!(f, RandomForest::fit(&x, &y, &p, 7).unwrap());
    }
}

//! Training objective: cross-entropy plus optional alignment, uniformity and
//! supervised contrastive terms over unit-norm features.
//!
//! Every term has an analytic gradient validated against central finite
//! differences, so values and gradients are computed along the same algebraic
//! route (literal pair differences, dot-product similarities).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};

/// Lenient unit-norm precondition: loose enough that finite-difference
/// probing (steps up to 1e-4) stays inside the valid domain.
const LOSS_UNIT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub alignment: f64,
    pub uniformity: f64,
    pub supcon: f64,
    #[serde(default = "default_supcon_temperature")]
    pub supcon_temperature: f64,
    #[serde(default = "default_uniformity_t")]
    pub uniformity_t: f64,
    #[serde(default = "default_alignment_alpha")]
    pub alignment_alpha: f64,
}

fn default_supcon_temperature() -> f64 {
    0.1
}

fn default_uniformity_t() -> f64 {
    2.0
}

fn default_alignment_alpha() -> f64 {
    2.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            alignment: 0.0,
            uniformity: 0.0,
            supcon: 0.0,
            supcon_temperature: default_supcon_temperature(),
            uniformity_t: default_uniformity_t(),
            alignment_alpha: default_alignment_alpha(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let enabled = [self.ce, self.alignment, self.uniformity, self.supcon];
        if enabled.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if enabled.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.supcon_temperature <= 0.0 || self.uniformity_t <= 0.0 || self.alignment_alpha <= 0.0
        {
            return Err(Error::Config("loss hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted total plus the raw per-term values that produced it. Terms that
/// were requested but undefined on the batch are listed in `skipped`.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_term: BTreeMap<String, f64>,
    pub skipped: Vec<String>,
}

fn check_unit_rows(features: &Mat, op: &str) -> Result<()> {
    for i in 0..features.rows() {
        let n = norm(features.row(i));
        if (n - 1.0).abs() > LOSS_UNIT_TOL {
            return Err(Error::Precondition(format!(
                "{op} needs unit-norm rows; row {i} has norm {n:.6}"
            )));
        }
    }
    Ok(())
}

fn pair_dist2(features: &Mat, i: usize, j: usize) -> f64 {
    features
        .row(i)
        .iter()
        .zip(features.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("labels must be 0 or 1, got {bad}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cross-entropy

/// Mean negative log-likelihood of the true class under softmax.
pub fn cross_entropy(logits: &Mat, labels: &[u8]) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Also returns dL/dlogits.
pub fn cross_entropy_with_grad(logits: &Mat, labels: &[u8]) -> Result<(f64, Mat)> {
    if logits.rows() == 0 {
        return Err(Error::Input("cross-entropy needs at least one sample".into()));
    }
    if logits.rows() != labels.len() || logits.cols() != 2 {
        return Err(Error::Shape(format!(
            "logits {}x{} vs {} labels",
            logits.rows(),
            logits.cols(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let b = logits.rows() as f64;
    let mut total = 0.0;
    let mut dlogits = Mat::zeros(logits.rows(), 2);
    for i in 0..logits.rows() {
        let r = logits.row(i);
        let max = r[0].max(r[1]);
        let e0 = (r[0] - max).exp();
        let e1 = (r[1] - max).exp();
        let z = e0 + e1;
        let y = labels[i] as usize;
        total += -(r[y] - max - z.ln());
        let d = dlogits.row_mut(i);
        d[0] = (e0 / z - if y == 0 { 1.0 } else { 0.0 }) / b;
        d[1] = (e1 / z - if y == 1 { 1.0 } else { 0.0 }) / b;
    }
    Ok((total / b, dlogits))
}

// ---------------------------------------------------------------------------
// alignment

/// Mean `||x_i - x_j||^alpha` over same-class pairs i<j.
pub fn alignment_loss(features: &Mat, labels: &[u8], alpha: f64) -> Result<f64> {
    Ok(alignment_with_grad(features, labels, alpha)?.0)
}

pub fn alignment_with_grad(features: &Mat, labels: &[u8], alpha: f64) -> Result<(f64, Mat)> {
    check_unit_rows(features, "alignment loss")?;
    check_labels(labels)?;
    let b = features.rows();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    let mut grad = Mat::zeros(b, features.cols());
    let mut contributions: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..b {
        for j in (i + 1)..b {
            if labels[i] != labels[j] {
                continue;
            }
            pairs += 1;
            let d2 = pair_dist2(features, i, j);
            sum += d2.powf(alpha / 2.0);
            let w = if d2 > 0.0 { alpha * d2.powf(alpha / 2.0 - 1.0) } else { 0.0 };
            contributions.push((i, j, w));
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedTerm("alignment: no same-class pair in batch".into()));
    }
    let inv = 1.0 / pairs as f64;
    for (i, j, w) in contributions {
        for c in 0..features.cols() {
            let diff = features.get(i, c) - features.get(j, c);
            let g = w * diff * inv;
            grad.set(i, c, grad.get(i, c) + g);
            grad.set(j, c, grad.get(j, c) - g);
        }
    }
    Ok((sum * inv, grad))
}

// ---------------------------------------------------------------------------
// uniformity

/// `log(mean over pairs of exp(-t ||x_i - x_j||^2))`; always <= 0.
pub fn uniformity_loss(features: &Mat, t: f64) -> Result<f64> {
    Ok(uniformity_with_grad(features, t)?.0)
}

pub fn uniformity_with_grad(features: &Mat, t: f64) -> Result<(f64, Mat)> {
    let b = features.rows();
    if b < 2 {
        return Err(Error::UndefinedTerm("uniformity needs at least two samples".into()));
    }
    check_unit_rows(features, "uniformity loss")?;
    let mut kernel_sum = 0.0;
    let mut kernels: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..b {
        for j in (i + 1)..b {
            let d2 = pair_dist2(features, i, j);
            let k = (-t * d2).exp();
            kernel_sum += k;
            kernels.push((i, j, k));
        }
    }
    let pairs = (b * (b - 1) / 2) as f64;
    let loss = (kernel_sum / pairs).ln();
    let mut grad = Mat::zeros(b, features.cols());
    for (i, j, k) in kernels {
        let w = -2.0 * t * k / kernel_sum;
        for c in 0..features.cols() {
            let diff = features.get(i, c) - features.get(j, c);
            grad.set(i, c, grad.get(i, c) + w * diff);
            grad.set(j, c, grad.get(j, c) - w * diff);
        }
    }
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// supervised contrastive

/// Per-anchor mean over positives of `-log(exp(s_ip) / sum_a exp(s_ia))`
/// with `s = similarity / temperature`, averaged over anchors that have at
/// least one positive. Anchors without a positive are excluded.
pub fn supcon_loss(features: &Mat, labels: &[u8], temperature: f64) -> Result<f64> {
    Ok(supcon_with_grad(features, labels, temperature)?.0)
}

pub fn supcon_with_grad(features: &Mat, labels: &[u8], temperature: f64) -> Result<(f64, Mat)> {
    check_unit_rows(features, "supervised contrastive loss")?;
    check_labels(labels)?;
    let b = features.rows();
    let anchors: Vec<usize> = (0..b)
        .filter(|&i| (0..b).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    if anchors.is_empty() {
        return Err(Error::UndefinedTerm("supcon: no anchor has a positive".into()));
    }

    let mut total = 0.0;
    let mut grad = Mat::zeros(b, features.cols());
    let inv_anchors = 1.0 / anchors.len() as f64;
    for &i in &anchors {
        let scores: Vec<(usize, f64)> = (0..b)
            .filter(|&a| a != i)
            .map(|a| (a, dot(features.row(i), features.row(a)) / temperature))
            .collect();
        let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|(_, s)| (s - max).exp()).sum();
        let log_z = max + z.ln();
        let positives: Vec<usize> =
            scores.iter().filter(|(a, _)| labels[*a] == labels[i]).map(|(a, _)| *a).collect();
        let inv_p = 1.0 / positives.len() as f64;
        let mut anchor_loss = 0.0;
        for &(a, s) in &scores {
            let q = (s - log_z).exp();
            let is_pos = if labels[a] == labels[i] { inv_p } else { 0.0 };
            if is_pos > 0.0 {
                anchor_loss += -(s - log_z) * inv_p;
            }
            // dL/ds_ia for this anchor, scaled by the anchor average.
            let coeff = (q - is_pos) * inv_anchors / temperature;
            for c in 0..features.cols() {
                grad.set(i, c, grad.get(i, c) + coeff * features.get(a, c));
                grad.set(a, c, grad.get(a, c) + coeff * features.get(i, c));
            }
        }
        total += anchor_loss;
    }
    Ok((total * inv_anchors, grad))
}

// ---------------------------------------------------------------------------
// composite

/// Weighted sum of the enabled terms. Zero-weight terms are not computed.
/// Pairwise terms that are undefined on this batch are skipped and recorded
/// rather than failing the step.
pub fn composite(
    logits: &Mat,
    features: &Mat,
    labels: &[u8],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(composite_with_grads(logits, features, labels, weights)?.0)
}

/// Also returns (dL/dlogits, dL/dfeatures), each already weight-scaled.
pub fn composite_with_grads(
    logits: &Mat,
    features: &Mat,
    labels: &[u8],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Mat, Mat)> {
    weights.validate()?;
    let mut per_term = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut total = 0.0;
    let mut dlogits = Mat::zeros(logits.rows(), logits.cols());
    let mut dfeatures = Mat::zeros(features.rows(), features.cols());

    if weights.ce > 0.0 {
        let (v, mut g) = cross_entropy_with_grad(logits, labels)?;
        per_term.insert("ce".to_string(), v);
        total += weights.ce * v;
        g.scale(weights.ce);
        dlogits.add_assign(&g);
    }
    if weights.alignment > 0.0 {
        match alignment_with_grad(features, labels, weights.alignment_alpha) {
            Ok((v, mut g)) => {
                per_term.insert("alignment".to_string(), v);
                total += weights.alignment * v;
                g.scale(weights.alignment);
                dfeatures.add_assign(&g);
            }
            Err(Error::UndefinedTerm(_)) => skipped.push("alignment".to_string()),
            Err(e) => return Err(e),
        }
    }
    if weights.uniformity > 0.0 {
        match uniformity_with_grad(features, weights.uniformity_t) {
            Ok((v, mut g)) => {
                per_term.insert("uniformity".to_string(), v);
                total += weights.uniformity * v;
                g.scale(weights.uniformity);
                dfeatures.add_assign(&g);
            }
            Err(Error::UndefinedTerm(_)) => skipped.push("uniformity".to_string()),
            Err(e) => return Err(e),
        }
    }
    if weights.supcon > 0.0 {
        match supcon_with_grad(features, labels, weights.supcon_temperature) {
            Ok((v, mut g)) => {
                per_term.insert("supcon".to_string(), v);
                total += weights.supcon * v;
                g.scale(weights.supcon);
                dfeatures.add_assign(&g);
            }
            Err(Error::UndefinedTerm(_)) => skipped.push("supcon".to_string()),
            Err(e) => return Err(e),
        }
    }

    Ok((LossBreakdown { total, per_term, skipped }, dlogits, dfeatures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::l2_normalize;
    use crate::util::stream_rng;
    use rand::Rng;

    fn unit_batch(rng: &mut impl Rng, b: usize, d: usize) -> Mat {
        let raw = Mat::from_fn(b, d, |_, _| rng.gen_range(-1.0..1.0));
        l2_normalize(&raw).unwrap()
    }

    #[test]
    fn ce_uniform_softmax_is_ln2() {
        let logits = Mat::zeros(3, 2);
        let v = cross_entropy(&logits, &[0, 1, 1]).unwrap();
        assert!((v - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_large_margin_approaches_zero() {
        let logits = Mat::from_vec(1, 2, vec![-40.0, 40.0]);
        let v = cross_entropy(&logits, &[1]).unwrap();
        assert!(v < 1e-12, "got {v}");
    }

    #[test]
    fn ce_matches_naive_per_sample_oracle() {
        let mut rng = stream_rng(1, "ce");
        let logits = Mat::from_fn(8, 2, |_, _| rng.gen_range(-3.0..3.0));
        let labels: Vec<u8> = (0..8).map(|_| rng.gen_range(0..2) as u8).collect();
        let got = cross_entropy(&logits, &labels).unwrap();
        let mut want = 0.0;
        for i in 0..8 {
            let r = logits.row(i);
            let p = r[labels[i] as usize].exp() / (r[0].exp() + r[1].exp());
            want += -p.ln();
        }
        want /= 8.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_bad_labels() {
        let logits = Mat::zeros(1, 2);
        assert!(matches!(cross_entropy(&logits, &[2]), Err(Error::Input(_))));
        assert!(matches!(cross_entropy(&Mat::zeros(0, 2), &[]), Err(Error::Input(_))));
    }

    #[test]
    fn alignment_examples() {
        // Identical same-class rows -> 0.
        let f = Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(alignment_loss(&f, &[1, 1], 2.0).unwrap().abs() < 1e-12);
        // Orthogonal unit vectors, alpha 2 -> squared distance 2.
        let f = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!((alignment_loss(&f, &[0, 0], 2.0).unwrap() - 2.0).abs() < 1e-12);
        // No same-class pair.
        assert!(matches!(
            alignment_loss(&f, &[0, 1], 2.0),
            Err(Error::UndefinedTerm(_))
        ));
    }

    #[test]
    fn alignment_matches_literal_pair_loop() {
        let mut rng = stream_rng(2, "align");
        for _ in 0..20 {
            let b = rng.gen_range(2..10);
            let f = unit_batch(&mut rng, b, 6);
            let labels: Vec<u8> = (0..b).map(|_| rng.gen_range(0..2) as u8).collect();
            let alpha = 2.0;
            let got = match alignment_loss(&f, &labels, alpha) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let mut sum = 0.0;
            let mut n = 0;
            for i in 0..b {
                for j in (i + 1)..b {
                    if labels[i] == labels[j] {
                        let d2: f64 = (0..6)
                            .map(|c| (f.get(i, c) - f.get(j, c)).powi(2))
                            .sum();
                        sum += d2.powf(alpha / 2.0);
                        n += 1;
                    }
                }
            }
            assert!((got - sum / n as f64).abs() < 1e-9);
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn uniformity_examples() {
        let f = Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(uniformity_loss(&f, 3.0).unwrap().abs() < 1e-12);
        // Antipodal pair: ||x - (-x)||^2 = 4, t = 2 -> log exp(-8) = -8.
        let f = Mat::from_vec(2, 2, vec![1.0, 0.0, -1.0, 0.0]);
        assert!((uniformity_loss(&f, 2.0).unwrap() + 8.0).abs() < 1e-12);
        assert!(matches!(uniformity_loss(&Mat::from_vec(1, 2, vec![1.0, 0.0]), 2.0),
            Err(Error::UndefinedTerm(_))));
    }

    #[test]
    fn uniformity_matches_literal_loop_and_is_nonpositive() {
        let mut rng = stream_rng(3, "unif");
        let f = unit_batch(&mut rng, 16, 8);
        let t = 2.0;
        let got = uniformity_loss(&f, t).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for i in 0..16 {
            for j in (i + 1)..16 {
                let d2: f64 = (0..8).map(|c| (f.get(i, c) - f.get(j, c)).powi(2)).sum();
                sum += (-t * d2).exp();
                n += 1;
            }
        }
        let want = (sum / n as f64).ln();
        assert!((got - want).abs() < 1e-9);
        assert!(got <= 0.0);
    }

    #[test]
    fn supcon_two_same_class_is_zero() {
        let mut rng = stream_rng(4, "supcon");
        let f = unit_batch(&mut rng, 2, 5);
        let v = supcon_loss(&f, &[1, 1], 0.5).unwrap();
        assert!(v.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn supcon_flat_temperature_limit() {
        let mut rng = stream_rng(5, "supcon2");
        let b = 6;
        let f = unit_batch(&mut rng, b, 5);
        let labels = vec![1u8; b];
        let v = supcon_loss(&f, &labels, 1e9).unwrap();
        assert!((v - ((b - 1) as f64).ln()).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn supcon_matches_triple_loop_oracle() {
        let mut rng = stream_rng(6, "supcon3");
        let b = 8;
        let f = unit_batch(&mut rng, b, 6);
        let labels: Vec<u8> = (0..b).map(|_| rng.gen_range(0..2) as u8).collect();
        let tau = 0.1;
        let got = supcon_loss(&f, &labels, tau).unwrap();

        // Literal formulation: no shared Gram matrix, no log-sum-exp trick.
        let sim = |i: usize, j: usize| -> f64 {
            (0..6).map(|c| f.get(i, c) * f.get(j, c)).sum::<f64>()
        };
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..b {
            let positives: Vec<usize> =
                (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
            if positives.is_empty() {
                continue;
            }
            anchors += 1;
            let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (sim(i, a) / tau).exp()).sum();
            let mut li = 0.0;
            for &p in &positives {
                li += -((sim(i, p) / tau).exp() / denom).ln();
            }
            total += li / positives.len() as f64;
        }
        let want = total / anchors as f64;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn composite_reductions() {
        let mut rng = stream_rng(7, "comp");
        let f = unit_batch(&mut rng, 6, 5);
        let labels = vec![0u8, 0, 0, 1, 1, 1];
        let logits = Mat::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));

        let only_ce = LossWeights { ce: 1.0, ..Default::default() };
        let b = composite(&logits, &f, &labels, &only_ce).unwrap();
        assert!((b.total - cross_entropy(&logits, &labels).unwrap()).abs() < 1e-12);
        assert_eq!(b.per_term.len(), 1);

        let only_supcon = LossWeights { ce: 0.0, supcon: 1.0, ..Default::default() };
        let b = composite(&logits, &f, &labels, &only_supcon).unwrap();
        assert!((b.total - supcon_loss(&f, &labels, 0.1).unwrap()).abs() < 1e-12);

        let ce_unif = LossWeights { ce: 1.0, uniformity: 1.0, ..Default::default() };
        let b = composite(&logits, &f, &labels, &ce_unif).unwrap();
        let want =
            cross_entropy(&logits, &labels).unwrap() + uniformity_loss(&f, 2.0).unwrap();
        assert!((b.total - want).abs() < 1e-6);

        // Weighted-sum invariant.
        let w = LossWeights { ce: 0.7, alignment: 0.3, uniformity: 0.2, ..Default::default() };
        let b = composite(&logits, &f, &labels, &w).unwrap();
        let recomputed = 0.7 * b.per_term["ce"] + 0.3 * b.per_term["alignment"]
            + 0.2 * b.per_term["uniformity"];
        assert!((b.total - recomputed).abs() < 1e-6);
    }

    #[test]
    fn composite_skips_undefined_terms() {
        let f = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let labels = vec![0u8, 1];
        let logits = Mat::zeros(2, 2);
        let w = LossWeights { ce: 1.0, alignment: 0.5, ..Default::default() };
        let b = composite(&logits, &f, &labels, &w).unwrap();
        assert_eq!(b.skipped, vec!["alignment"]);
        assert!(!b.per_term.contains_key("alignment"));
    }

    #[test]
    fn composite_rejects_all_zero_weights() {
        let w = LossWeights { ce: 0.0, ..Default::default() };
        let f = Mat::from_vec(1, 2, vec![1.0, 0.0]);
        assert!(matches!(
            composite(&Mat::zeros(1, 2), &f, &[0], &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn losses_are_isometry_invariant() {
        let mut rng = stream_rng(8, "rot");
        let f = unit_batch(&mut rng, 8, 4);
        let labels: Vec<u8> = vec![0, 0, 0, 1, 1, 1, 0, 1];
        // Givens rotation in the (0, 2) plane composed with one in (1, 3).
        let a = 0.7f64;
        let bphi = 1.2f64;
        let rot = |row: &[f64]| -> Vec<f64> {
            let mut v = row.to_vec();
            let (c, s) = (a.cos(), a.sin());
            let (x, y) = (v[0], v[2]);
            v[0] = c * x - s * y;
            v[2] = s * x + c * y;
            let (c, s) = (bphi.cos(), bphi.sin());
            let (x, y) = (v[1], v[3]);
            v[1] = c * x - s * y;
            v[3] = s * x + c * y;
            v
        };
        let rotated = Mat::from_fn(8, 4, |i, j| rot(f.row(i))[j]);
        let pairs = [
            (alignment_loss(&f, &labels, 2.0).unwrap(),
             alignment_loss(&rotated, &labels, 2.0).unwrap()),
            (uniformity_loss(&f, 2.0).unwrap(), uniformity_loss(&rotated, 2.0).unwrap()),
            (supcon_loss(&f, &labels, 0.2).unwrap(), supcon_loss(&rotated, &labels, 0.2).unwrap()),
        ];
        for (x, y) in pairs {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream_rng(9, "grad");
        for _ in 0..5 {
            let b = rng.gen_range(4..8);
            let d = rng.gen_range(3..8);
            let f = unit_batch(&mut rng, b, d);
            let mut labels: Vec<u8> = (0..b).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 0;
            labels[2] = 1;
            labels[3] = 1;

            type LossFn = Box<dyn Fn(&Mat) -> f64>;
            let cases: Vec<(LossFn, Mat)> = vec![
                (
                    {
                        let labels = labels.clone();
                        Box::new(move |m: &Mat| alignment_loss(m, &labels, 2.0).unwrap())
                    },
                    alignment_with_grad(&f, &labels, 2.0).unwrap().1,
                ),
                (
                    Box::new(move |m: &Mat| uniformity_loss(m, 2.0).unwrap()),
                    uniformity_with_grad(&f, 2.0).unwrap().1,
                ),
                (
                    {
                        let labels = labels.clone();
                        Box::new(move |m: &Mat| supcon_loss(m, &labels, 0.3).unwrap())
                    },
                    supcon_with_grad(&f, &labels, 0.3).unwrap().1,
                ),
            ];
            // Perturbations move points off the sphere; evaluate the losses
            // on raw perturbed inputs (the formulas stay smooth nearby), so
            // relax the unit check through tiny steps.
            let eps = 1e-5;
            for (loss, grad) in cases {
                for _ in 0..4 {
                    let i = rng.gen_range(0..b);
                    let j = rng.gen_range(0..d);
                    let mut up = f.clone();
                    up.set(i, j, f.get(i, j) + eps);
                    let mut dn = f.clone();
                    dn.set(i, j, f.get(i, j) - eps);
                    let numeric = (loss(&up) - loss(&dn)) / (2.0 * eps);
                    let analytic = grad.get(i, j);
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-3,
                        "analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }
}

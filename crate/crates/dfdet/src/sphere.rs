//! The hyperspherical head: L2 normalization onto the unit sphere, spherical
//! linear interpolation between same-class features, and the linear binary
//! classifier. Forward ops plus the manual backward passes the trainer needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::params::{ParamEntry, ParamTree};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, matmul_nn, matmul_tn, norm, Mat};
use crate::util::stream_rng;

/// How far a row may drift from unit length and still count as normalized.
pub const UNIT_TOL: f64 = 1e-5;
/// Below this angle the closed-form interpolation divides by ~0; fall back
/// to linear interpolation plus renormalization (the correct limit).
const PARALLEL_THETA: f64 = 1e-6;

/// Per-frame feature vectors with labels (0 = real, 1 = fake) and the video
/// each frame came from.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub features: Mat,
    pub labels: Vec<u8>,
    pub video_ids: Vec<String>,
    pub normalized: bool,
}

impl FeatureBatch {
    pub fn new(features: Mat, labels: Vec<u8>, video_ids: Vec<String>) -> Result<Self> {
        if features.rows() != labels.len() || features.rows() != video_ids.len() {
            return Err(Error::Input(format!(
                "batch size mismatch: {} features, {} labels, {} video ids",
                features.rows(),
                labels.len(),
                video_ids.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("labels must be 0 or 1, got {bad}")));
        }
        Ok(Self { features, labels, video_ids, normalized: false })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Projects features onto the unit sphere and flips the flag.
    pub fn normalize(&self) -> Result<Self> {
        let mut out = self.clone();
        out.features = l2_normalize(&self.features)?;
        out.normalized = true;
        Ok(out)
    }
}

/// Linear binary classifier on top of the features.
#[derive(Debug, Clone)]
pub struct HeadParams {
    /// D x 2.
    pub weight: Mat,
    pub bias: [f64; 2],
}

impl HeadParams {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "head-init");
        let weight = Mat::from_fn(dim, 2, |_, _| rng.gen_range(-0.01..0.01));
        Self { weight, bias: [0.0, 0.0] }
    }

    /// Adds shape-only head entries to a parameter tree (for accounting on
    /// trees without tensor data).
    pub fn attach_structural(tree: &mut ParamTree, dim: usize) {
        tree.insert("head.weight", ParamEntry { shape: vec![dim, 2], trainable: false, data: None });
        tree.insert("head.bias", ParamEntry { shape: vec![2], trainable: false, data: None });
    }

    /// Adds this head's tensors to the tree.
    pub fn attach_to_tree(&self, tree: &mut ParamTree) {
        tree.insert(
            "head.weight",
            ParamEntry {
                shape: vec![self.weight.rows(), 2],
                trainable: false,
                data: Some(self.weight.data().to_vec()),
            },
        );
        tree.insert(
            "head.bias",
            ParamEntry { shape: vec![2], trainable: false, data: Some(self.bias.to_vec()) },
        );
    }

    pub fn from_tree(tree: &ParamTree) -> Result<Self> {
        let weight = tree.mat("head.weight")?;
        let b = tree.vec("head.bias")?;
        Ok(Self { weight, bias: [b[0], b[1]] })
    }
}

/// Scale every row to unit Euclidean norm.
pub fn l2_normalize(features: &Mat) -> Result<Mat> {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let n = norm(out.row(i));
        if n < 1e-12 {
            return Err(Error::Degenerate(format!(
                "row {i} has norm {n:.3e}; features collapsed upstream"
            )));
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(out)
}

/// dL/dx for y = x / ||x||: `(dy - (y.dy) y) / ||x||`, row-wise.
pub fn l2_normalize_backward(original: &Mat, dnormalized: &Mat) -> Mat {
    let mut dx = Mat::zeros(original.rows(), original.cols());
    for i in 0..original.rows() {
        let x = original.row(i);
        let dy = dnormalized.row(i);
        let n = norm(x);
        let inv = 1.0 / n;
        let yhat: Vec<f64> = x.iter().map(|v| v * inv).collect();
        let proj = dot(&yhat, dy);
        let dxr = dx.row_mut(i);
        for j in 0..x.len() {
            dxr[j] = (dy[j] - proj * yhat[j]) * inv;
        }
    }
    dx
}

fn check_unit(x: &[f64], which: &str) -> Result<()> {
    let n = norm(x);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Precondition(format!(
            "slerp needs unit inputs; {which} has norm {n:.6}"
        )));
    }
    Ok(())
}

/// Constant-speed geodesic interpolation between two unit vectors. Output is
/// renormalized to absorb rounding. Exactly antipodal inputs have no unique
/// geodesic and are rejected.
pub fn slerp(xi: &[f64], xj: &[f64], t: f64) -> Result<Vec<f64>> {
    check_unit(xi, "first endpoint")?;
    check_unit(xj, "second endpoint")?;
    let mut out = slerp_raw(xi, xj, t)?;
    let n = norm(&out);
    for v in &mut out {
        *v /= n;
    }
    Ok(out)
}

/// The interpolation before output renormalization.
fn slerp_raw(xi: &[f64], xj: &[f64], t: f64) -> Result<Vec<f64>> {
    let d = dot(xi, xj).clamp(-1.0, 1.0);
    if d <= -1.0 + 1e-12 {
        return Err(Error::Degenerate("slerp endpoints are antipodal".into()));
    }
    let theta = d.acos();
    let mut out = vec![0.0; xi.len()];
    if theta < PARALLEL_THETA {
        axpy(1.0 - t, xi, &mut out);
        axpy(t, xj, &mut out);
    } else {
        let sin_theta = theta.sin();
        axpy(((1.0 - t) * theta).sin() / sin_theta, xi, &mut out);
        axpy((t * theta).sin() / sin_theta, xj, &mut out);
    }
    Ok(out)
}

/// One slerp application inside a batch: output row `out_row` was produced
/// from `src` and same-class `partner` at parameter `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlerpPairing {
    pub out_row: usize,
    pub src: usize,
    pub partner: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlerpMode {
    /// Interpolated rows replace their source rows; batch size is preserved.
    #[default]
    Replace,
    /// Interpolated rows are appended after the originals.
    Append,
}

/// For each feature with at least one same-class partner, draw a partner
/// uniformly (excluding self) and t ~ U(0,1), and emit the interpolation.
/// Rows without a partner pass through unchanged. Labels and video ids
/// follow the source row. Returns the pairing log alongside the batch.
pub fn slerp_augment_batch(
    batch: &FeatureBatch,
    rng: &mut impl Rng,
    mode: SlerpMode,
) -> Result<(FeatureBatch, Vec<SlerpPairing>)> {
    if !batch.normalized {
        return Err(Error::Precondition("slerp augmentation needs a normalized batch".into()));
    }
    let b = batch.len();
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in batch.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }

    let mut pairings = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    if mode == SlerpMode::Append {
        for i in 0..b {
            rows.push(batch.features.row(i).to_vec());
        }
        labels.extend_from_slice(&batch.labels);
        ids.extend_from_slice(&batch.video_ids);
    }
    for i in 0..b {
        let mates = &by_class[batch.labels[i] as usize];
        let has_partner = mates.len() > 1;
        if !has_partner {
            if mode == SlerpMode::Replace {
                rows.push(batch.features.row(i).to_vec());
                labels.push(batch.labels[i]);
                ids.push(batch.video_ids[i].clone());
            }
            continue;
        }
        // Draw uniformly from mates excluding self: index into the list with
        // the self position removed.
        let mut pick = rng.gen_range(0..mates.len() - 1);
        let self_pos = mates.iter().position(|&m| m == i).unwrap();
        if pick >= self_pos {
            pick += 1;
        }
        let partner = mates[pick];
        let t: f64 = rng.gen::<f64>();
        let out = slerp(batch.features.row(i), batch.features.row(partner), t)?;
        pairings.push(SlerpPairing { out_row: rows.len(), src: i, partner, t });
        rows.push(out);
        labels.push(batch.labels[i]);
        ids.push(batch.video_ids[i].clone());
    }

    let dim = batch.features.cols();
    let mut features = Mat::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        features.row_mut(i).copy_from_slice(r);
    }
    Ok((
        FeatureBatch { features, labels, video_ids: ids, normalized: true },
        pairings,
    ))
}

/// dL/d(original rows) given gradients on the augmented batch. `original`
/// must be the pre-augmentation (normalized) features.
pub fn slerp_augment_backward(
    original: &Mat,
    pairings: &[SlerpPairing],
    d_augmented: &Mat,
) -> Mat {
    let mut dx = Mat::zeros(original.rows(), original.cols());
    let mut covered = vec![false; d_augmented.rows()];
    for p in pairings {
        covered[p.out_row] = true;
        let xi = original.row(p.src);
        let xj = original.row(p.partner);
        let g_out = d_augmented.row(p.out_row);
        // Chain through the output renormalization first.
        let raw = slerp_raw(xi, xj, p.t).expect("pairing recorded for valid inputs");
        let g = {
            let m = Mat::from_vec(1, raw.len(), raw.clone());
            let gm = Mat::from_vec(1, g_out.len(), g_out.to_vec());
            l2_normalize_backward(&m, &gm)
        };
        let g = g.row(0);

        let d = dot(xi, xj).clamp(-1.0, 1.0);
        let theta = d.acos();
        if theta < PARALLEL_THETA {
            axpy(1.0 - p.t, g, dx.row_mut(p.src));
            axpy(p.t, g, dx.row_mut(p.partner));
        } else {
            let sin_t = theta.sin();
            let a = ((1.0 - p.t) * theta).sin() / sin_t;
            let b = (p.t * theta).sin() / sin_t;
            let da_dtheta = ((1.0 - p.t) * ((1.0 - p.t) * theta).cos() * sin_t
                - ((1.0 - p.t) * theta).sin() * theta.cos())
                / (sin_t * sin_t);
            let db_dtheta = (p.t * (p.t * theta).cos() * sin_t
                - (p.t * theta).sin() * theta.cos())
                / (sin_t * sin_t);
            let dtheta_dd = -1.0 / (1.0 - d * d).sqrt();
            let bracket = (da_dtheta * dot(g, xi) + db_dtheta * dot(g, xj)) * dtheta_dd;
            axpy(a, g, dx.row_mut(p.src));
            axpy(bracket, xj, dx.row_mut(p.src));
            axpy(b, g, dx.row_mut(p.partner));
            axpy(bracket, xi, dx.row_mut(p.partner));
        }
    }
    // Pass-through rows: gradient flows straight to the source row.
    for (row, was_covered) in covered.iter().enumerate() {
        if !was_covered && row < original.rows() {
            axpy(1.0, d_augmented.row(row), dx.row_mut(row));
        }
    }
    dx
}

/// Logits = features * W + b, one row per feature.
pub fn classify(features: &Mat, params: &HeadParams) -> Result<Mat> {
    if features.cols() != params.weight.rows() {
        return Err(Error::Shape(format!(
            "feature dim {} vs head dim {}",
            features.cols(),
            params.weight.rows()
        )));
    }
    let mut logits = matmul_nn(features, &params.weight);
    logits.add_row_bias(&params.bias);
    Ok(logits)
}

/// Probability of the fake class (softmax component 1), row-wise.
pub fn fake_scores(logits: &Mat) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let r = logits.row(i);
            1.0 / (1.0 + (r[0] - r[1]).exp())
        })
        .collect()
}

/// Returns (dW, dbias, dfeatures) for dL/dlogits.
pub fn classify_backward(
    features: &Mat,
    params: &HeadParams,
    dlogits: &Mat,
) -> (Mat, [f64; 2], Mat) {
    let dw = matmul_tn(features, dlogits); // [D,2]
    let mut db = [0.0, 0.0];
    for i in 0..dlogits.rows() {
        db[0] += dlogits.get(i, 0);
        db[1] += dlogits.get(i, 1);
    }
    let dfeat = matmul_nn(dlogits, &params.weight.transpose());
    (dw, db, dfeat)
}

//! Pre-norm vision transformer: forward pass, activation caches, and manual
//! backward pass producing per-parameter gradients keyed by tree names.
//!
//! The same code runs the large pretrained encoder (inference) and the toy
//! encoder (training in tests). Gradients are computed for every parameter;
//! the optimizer decides which ones move.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, matmul_nn, matmul_nt, matmul_tn, Mat};
use crate::peft::lora_term;

use super::params::ParamTree;
use super::{EncoderSpec, Precision};

const LN_EPS: f64 = 1e-5;
const QUICK_GELU_C: f64 = 1.702;

/// Weight matrices materialized once from a [`ParamTree`] so the per-image
/// forward/backward does no name lookups or clones.
pub struct VitWeights {
    pub(crate) patch_embed: Mat,
    pub(crate) class_embedding: Vec<f64>,
    pub(crate) pos_embed: Mat,
    pub(crate) ln_pre: Affine,
    pub(crate) blocks: Vec<BlockWeights>,
    pub(crate) ln_post: Affine,
}

pub(crate) struct Affine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
    /// Low-rank factors beside the frozen weight: (down [r,in], up [out,r], scale).
    pub lora: Option<(Mat, Mat, f64)>,
}

pub(crate) struct BlockWeights {
    pub ln_1: Affine,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln_2: Affine,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl VitWeights {
    /// `lora_scale` = alpha / rank for any low-rank factor pairs present in
    /// the tree; ignored when none are attached.
    pub fn from_tree(spec: &EncoderSpec, tree: &ParamTree, lora_scale: f64) -> Result<Self> {
        let affine = |name: &str| -> Result<Affine> {
            Ok(Affine {
                gamma: tree.vec(&format!("{name}.weight"))?.to_vec(),
                beta: tree.vec(&format!("{name}.bias"))?.to_vec(),
            })
        };
        let linear = |name: &str| -> Result<Linear> {
            let lora = if tree.contains(&format!("{name}.weight.lora_a")) {
                Some((
                    tree.mat(&format!("{name}.weight.lora_a"))?,
                    tree.mat(&format!("{name}.weight.lora_b"))?,
                    lora_scale,
                ))
            } else {
                None
            };
            Ok(Linear {
                w: tree.mat(&format!("{name}.weight"))?,
                b: tree.vec(&format!("{name}.bias"))?.to_vec(),
                lora,
            })
        };
        let mut blocks = Vec::with_capacity(spec.num_layers);
        for i in 0..spec.num_layers {
            let p = format!("blocks.{i}");
            blocks.push(BlockWeights {
                ln_1: affine(&format!("{p}.ln_1"))?,
                q: linear(&format!("{p}.attn.q_proj"))?,
                k: linear(&format!("{p}.attn.k_proj"))?,
                v: linear(&format!("{p}.attn.v_proj"))?,
                out: linear(&format!("{p}.attn.out_proj"))?,
                ln_2: affine(&format!("{p}.ln_2"))?,
                fc1: linear(&format!("{p}.mlp.fc1"))?,
                fc2: linear(&format!("{p}.mlp.fc2"))?,
            });
        }
        Ok(Self {
            patch_embed: tree.mat("patch_embed.weight")?,
            class_embedding: tree.vec("class_embedding")?.to_vec(),
            pos_embed: tree.mat("pos_embed")?,
            ln_pre: affine("ln_pre")?,
            blocks,
            ln_post: affine("ln_post")?,
        })
    }
}

// ---------------------------------------------------------------------------
// forward

pub(crate) struct LnCache {
    xhat: Mat,
    inv_sigma: Vec<f64>,
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    h1: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Vec<Mat>, // per-head softmax matrices [T,T]
    concat: Mat,
    ln2: LnCache,
    h2: Mat,
    f1: Mat,
    act: Mat,
}

/// Everything the backward pass needs for one image.
pub struct VitCache {
    patches: Mat,
    ln_pre: LnCache,
    blocks: Vec<BlockCache>,
    ln_post: LnCache,
}

fn quantize(m: &mut Mat, precision: Precision) {
    if precision == Precision::Reduced {
        for v in m.data_mut() {
            *v = *v as f32 as f64;
        }
    }
}

fn ln_forward(x: &Mat, aff: &Affine) -> (Mat, LnCache) {
    let w = x.cols();
    let mut xhat = Mat::zeros(x.rows(), w);
    let mut inv_sigma = vec![0.0; x.rows()];
    let mut y = Mat::zeros(x.rows(), w);
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_sigma[i] = inv;
        for j in 0..w {
            let xh = (row[j] - mean) * inv;
            xhat.set(i, j, xh);
            y.set(i, j, xh * aff.gamma[j] + aff.beta[j]);
        }
    }
    (y, LnCache { xhat, inv_sigma })
}

fn ln_backward(dy: &Mat, cache: &LnCache, aff: &Affine) -> (Mat, Vec<f64>, Vec<f64>) {
    let w = dy.cols();
    let mut dx = Mat::zeros(dy.rows(), w);
    let mut dgamma = vec![0.0; w];
    let mut dbeta = vec![0.0; w];
    for i in 0..dy.rows() {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..w {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            let dxh = dyr[j] * aff.gamma[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= w as f64;
        mean_dxhat_xhat /= w as f64;
        let inv = cache.inv_sigma[i];
        let dxr = dx.row_mut(i);
        for j in 0..w {
            let dxh = dyr[j] * aff.gamma[j];
            dxr[j] = inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

fn linear_forward(x: &Mat, lin: &Linear) -> Mat {
    let mut y = matmul_nt(x, &lin.w);
    y.add_row_bias(&lin.b);
    if let Some((a, b, scale)) = &lin.lora {
        let delta = lora_term(x, a, b, *scale);
        y.add_assign(&delta);
    }
    y
}

fn softmax_rows(m: &mut Mat) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn head_slice(m: &Mat, head: usize, dh: usize) -> Mat {
    Mat::from_fn(m.rows(), dh, |i, j| m.get(i, head * dh + j))
}

fn head_join(parts: &[Mat], w: usize) -> Mat {
    let t = parts[0].rows();
    let dh = parts[0].cols();
    Mat::from_fn(t, w, |i, j| parts[j / dh].get(i, j % dh))
}

/// Splits a normalized image tensor `[3 * side * side]` into flattened
/// patches, channel-major within each patch.
pub fn image_to_patches(pixels: &[f64], spec: &EncoderSpec) -> Mat {
    let s = spec.input_side;
    let p = spec.patch_size();
    let (gr, gc) = spec.patch_grid;
    debug_assert_eq!(pixels.len(), 3 * s * s);
    Mat::from_fn(gr * gc, 3 * p * p, |idx, f| {
        let (pr, pc) = (idx / gc, idx % gc);
        let ch = f / (p * p);
        let dy = (f / p) % p;
        let dx = f % p;
        pixels[ch * s * s + (pr * p + dy) * s + (pc * p + dx)]
    })
}

/// Forward pass for one image; returns the feature vector (classification
/// token after the final norm) and, when `with_cache`, the activations the
/// backward pass needs.
pub fn forward_image(
    spec: &EncoderSpec,
    weights: &VitWeights,
    pixels: &[f64],
    precision: Precision,
    with_cache: bool,
) -> Result<(Vec<f64>, Option<VitCache>)> {
    let w = spec.feature_dim;
    let heads = spec.num_heads;
    let dh = w / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let tokens = spec.token_count();
    if pixels.len() != 3 * spec.input_side * spec.input_side {
        return Err(Error::Shape(format!(
            "expected {} pixel values, got {}",
            3 * spec.input_side * spec.input_side,
            pixels.len()
        )));
    }

    let patches = image_to_patches(pixels, spec);
    let embedded = matmul_nt(&patches, &weights.patch_embed);
    let mut x = Mat::zeros(tokens, w);
    x.row_mut(0).copy_from_slice(&weights.class_embedding);
    for i in 0..embedded.rows() {
        x.row_mut(i + 1).copy_from_slice(embedded.row(i));
    }
    x.add_assign(&weights.pos_embed);
    quantize(&mut x, precision);

    let (mut x, ln_pre_cache) = ln_forward(&x, &weights.ln_pre);
    quantize(&mut x, precision);

    let mut block_caches = Vec::new();
    for bw in &weights.blocks {
        let (h1, ln1) = ln_forward(&x, &bw.ln_1);
        let q = linear_forward(&h1, &bw.q);
        let k = linear_forward(&h1, &bw.k);
        let v = linear_forward(&h1, &bw.v);
        let mut heads_out = Vec::with_capacity(heads);
        let mut attn_mats = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = head_slice(&q, h, dh);
            let kh = head_slice(&k, h, dh);
            let vh = head_slice(&v, h, dh);
            let mut scores = matmul_nt(&qh, &kh);
            scores.scale(scale);
            softmax_rows(&mut scores);
            heads_out.push(matmul_nn(&scores, &vh));
            attn_mats.push(scores);
        }
        let concat = head_join(&heads_out, w);
        let attn_out = linear_forward(&concat, &bw.out);
        let mut x_mid = x.clone();
        x_mid.add_assign(&attn_out);
        quantize(&mut x_mid, precision);

        let (h2, ln2) = ln_forward(&x_mid, &bw.ln_2);
        let f1 = linear_forward(&h2, &bw.fc1);
        let mut act = f1.clone();
        for vv in act.data_mut() {
            let s = 1.0 / (1.0 + (-QUICK_GELU_C * *vv).exp());
            *vv *= s;
        }
        let f2 = linear_forward(&act, &bw.fc2);
        let mut x_out = x_mid.clone();
        x_out.add_assign(&f2);
        quantize(&mut x_out, precision);

        if with_cache {
            block_caches.push(BlockCache {
                ln1,
                h1,
                q,
                k,
                v,
                attn: attn_mats,
                concat,
                ln2,
                h2,
                f1,
                act,
            });
        }
        x = x_out;
    }

    let cls = Mat::from_vec(1, w, x.row(0).to_vec());
    let (mut feat_row, ln_post_cache) = ln_forward(&cls, &weights.ln_post);
    quantize(&mut feat_row, precision);
    let feature = feat_row.row(0).to_vec();

    let cache = with_cache.then(|| VitCache {
        patches,
        ln_pre: ln_pre_cache,
        blocks: block_caches,
        ln_post: ln_post_cache,
    });
    Ok((feature, cache))
}

// ---------------------------------------------------------------------------
// backward

/// Per-parameter gradient accumulator keyed by tree names.
#[derive(Default)]
pub struct GradStore {
    map: IndexMap<String, Vec<f64>>,
}

impl GradStore {
    pub fn acc(&mut self, name: &str, grad: &[f64]) {
        match self.map.get_mut(name) {
            Some(g) => axpy(1.0, grad, g),
            None => {
                self.map.insert(name.to_string(), grad.to_vec());
            }
        }
    }

    pub fn acc_mat(&mut self, name: &str, grad: &Mat) {
        self.acc(name, grad.data());
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn merge(&mut self, other: GradStore) {
        for (name, g) in other.map {
            self.acc(&name, &g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.map.values_mut() {
            for v in g {
                *v *= s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

fn colsum(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        axpy(1.0, m.row(i), &mut out);
    }
    out
}

/// Backward through a linear layer: accumulates weight/bias (and low-rank
/// factor) grads, returns dL/dx.
fn linear_backward(
    name: &str,
    lin: &Linear,
    x: &Mat,
    dy: &Mat,
    grads: &mut GradStore,
) -> Mat {
    let dw = matmul_tn(dy, x);
    grads.acc_mat(&format!("{name}.weight"), &dw);
    grads.acc(&format!("{name}.bias"), &colsum(dy));
    let mut dx = matmul_nn(dy, &lin.w);
    if let Some((a, b, scale)) = &lin.lora {
        // y_lora = scale * (x a^T) b^T
        let xa = matmul_nt(x, a); // [n, r]
        let mut db = matmul_tn(dy, &xa); // [out, r]
        db.scale(*scale);
        grads.acc_mat(&format!("{name}.weight.lora_b"), &db);
        let mut dyb = matmul_nn(dy, b); // [n, r]
        dyb.scale(*scale);
        let da = matmul_tn(&dyb, x); // [r, in]
        grads.acc_mat(&format!("{name}.weight.lora_a"), &da);
        let dx_lora = matmul_nn(&dyb, a); // [n, in]
        dx.add_assign(&dx_lora);
    }
    dx
}

/// Backward pass for one image given dL/dfeature. Accumulates parameter
/// gradients into `grads`.
pub fn backward_image(
    spec: &EncoderSpec,
    weights: &VitWeights,
    cache: &VitCache,
    dfeature: &[f64],
    grads: &mut GradStore,
) {
    let w = spec.feature_dim;
    let heads = spec.num_heads;
    let dh = w / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let tokens = spec.token_count();

    // ln_post saw only the classification token.
    let dfeat = Mat::from_vec(1, w, dfeature.to_vec());
    let (dcls, dgamma, dbeta) = ln_backward(&dfeat, &cache.ln_post, &weights.ln_post);
    grads.acc("ln_post.weight", &dgamma);
    grads.acc("ln_post.bias", &dbeta);

    let mut dx = Mat::zeros(tokens, w);
    dx.row_mut(0).copy_from_slice(dcls.row(0));

    for (i, (bw, bc)) in weights.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let p = format!("blocks.{i}");
        // x_out = x_mid + fc2(act(fc1(ln2(x_mid))))
        let df2 = dx.clone();
        let mut dact = linear_backward(&format!("{p}.mlp.fc2"), &bw.fc2, &bc.act, &df2, grads);
        for (dv, &f) in dact.data_mut().iter_mut().zip(bc.f1.data()) {
            let s = 1.0 / (1.0 + (-QUICK_GELU_C * f).exp());
            *dv *= s + f * QUICK_GELU_C * s * (1.0 - s);
        }
        let dh2 = linear_backward(&format!("{p}.mlp.fc1"), &bw.fc1, &bc.h2, &dact, grads);
        let (dx_mid_ln, dg2, db2) = ln_backward(&dh2, &bc.ln2, &bw.ln_2);
        grads.acc(&format!("{p}.ln_2.weight"), &dg2);
        grads.acc(&format!("{p}.ln_2.bias"), &db2);
        let mut dx_mid = dx;
        dx_mid.add_assign(&dx_mid_ln);

        // x_mid = x_in + out_proj(concat_heads(attn))
        let dattn_out = dx_mid.clone();
        let dconcat = linear_backward(
            &format!("{p}.attn.out_proj"),
            &bw.out,
            &bc.concat,
            &dattn_out,
            grads,
        );
        let mut dq = Mat::zeros(tokens, w);
        let mut dk = Mat::zeros(tokens, w);
        let mut dv = Mat::zeros(tokens, w);
        for h in 0..heads {
            let doh = head_slice(&dconcat, h, dh);
            let a = &bc.attn[h];
            let vh = head_slice(&bc.v, h, dh);
            let qh = head_slice(&bc.q, h, dh);
            let kh = head_slice(&bc.k, h, dh);
            let da = matmul_nt(&doh, &vh); // [T,T]
            let dvh = matmul_tn(a, &doh); // [T,dh]
            // softmax backward per row
            let mut ds = Mat::zeros(tokens, tokens);
            for r in 0..tokens {
                let ar = a.row(r);
                let dar = da.row(r);
                let inner = dot(ar, dar);
                let dsr = ds.row_mut(r);
                for c in 0..tokens {
                    dsr[c] = ar[c] * (dar[c] - inner);
                }
            }
            ds.scale(scale);
            let dqh = matmul_nn(&ds, &kh);
            let dkh = matmul_nn(&ds.transpose(), &qh);
            for r in 0..tokens {
                for c in 0..dh {
                    dq.set(r, h * dh + c, dqh.get(r, c));
                    dk.set(r, h * dh + c, dkh.get(r, c));
                    dv.set(r, h * dh + c, dvh.get(r, c));
                }
            }
        }
        let mut dh1 = linear_backward(&format!("{p}.attn.q_proj"), &bw.q, &bc.h1, &dq, grads);
        dh1.add_assign(&linear_backward(&format!("{p}.attn.k_proj"), &bw.k, &bc.h1, &dk, grads));
        dh1.add_assign(&linear_backward(&format!("{p}.attn.v_proj"), &bw.v, &bc.h1, &dv, grads));
        let (dx_in_ln, dg1, db1) = ln_backward(&dh1, &bc.ln1, &bw.ln_1);
        grads.acc(&format!("{p}.ln_1.weight"), &dg1);
        grads.acc(&format!("{p}.ln_1.bias"), &db1);
        let mut dx_in = dx_mid;
        dx_in.add_assign(&dx_in_ln);
        dx = dx_in;
    }

    let (dx0, dg, db) = ln_backward(&dx, &cache.ln_pre, &weights.ln_pre);
    grads.acc("ln_pre.weight", &dg);
    grads.acc("ln_pre.bias", &db);

    grads.acc_mat("pos_embed", &dx0);
    grads.acc("class_embedding", dx0.row(0));
    let dembedded = Mat::from_fn(tokens - 1, w, |i, j| dx0.get(i + 1, j));
    let dpatch = matmul_tn(&dembedded, &cache.patches);
    grads.acc_mat("patch_embed.weight", &dpatch);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::params::ParamTree;
    use crate::util::stream_rng;
    use rand::Rng;

    fn toy_setup() -> (EncoderSpec, ParamTree, Vec<f64>, Vec<f64>) {
        let spec = EncoderSpec::toy();
        let tree = ParamTree::initialized(&spec, 11);
        let mut rng = stream_rng(5, "vit-test");
        let pixels: Vec<f64> =
            (0..3 * spec.input_side * spec.input_side).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..spec.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (spec, tree, pixels, probe)
    }

    fn probe_loss(spec: &EncoderSpec, tree: &ParamTree, pixels: &[f64], probe: &[f64]) -> f64 {
        let weights = VitWeights::from_tree(spec, tree, 0.0).unwrap();
        let (feat, _) = forward_image(spec, &weights, pixels, Precision::Full, false).unwrap();
        dot(&feat, probe)
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let (spec, tree, pixels, _) = toy_setup();
        let weights = VitWeights::from_tree(&spec, &tree, 0.0).unwrap();
        let (f1, _) = forward_image(&spec, &weights, &pixels, Precision::Full, false).unwrap();
        let (f2, _) = forward_image(&spec, &weights, &pixels, Precision::Full, false).unwrap();
        assert_eq!(f1, f2);
        assert!(f1.iter().all(|v| v.is_finite()));
        assert_eq!(f1.len(), spec.feature_dim);
    }

    #[test]
    fn reduced_precision_stays_close_to_full() {
        let (spec, tree, pixels, _) = toy_setup();
        let weights = VitWeights::from_tree(&spec, &tree, 0.0).unwrap();
        let (full, _) = forward_image(&spec, &weights, &pixels, Precision::Full, false).unwrap();
        let (red, _) = forward_image(&spec, &weights, &pixels, Precision::Reduced, false).unwrap();
        for (a, b) in full.iter().zip(&red) {
            assert!((a - b).abs() < 1e-4, "full {a} vs reduced {b}");
        }
    }

    /// Central finite differences over a sample of every parameter kind.
    /// Validates the full manual backward chain end to end.
    #[test]
    fn gradients_match_finite_differences() {
        let (spec, mut tree, pixels, probe) = toy_setup();
        let weights = VitWeights::from_tree(&spec, &tree, 0.0).unwrap();
        let (_, cache) = forward_image(&spec, &weights, &pixels, Precision::Full, true).unwrap();
        let mut grads = GradStore::default();
        backward_image(&spec, &weights, &cache.unwrap(), &probe, &mut grads);

        let samples = [
            ("ln_post.weight", 3),
            ("ln_pre.bias", 0),
            ("blocks.0.ln_1.weight", 5),
            ("blocks.1.ln_2.bias", 2),
            ("blocks.0.attn.q_proj.weight", 17),
            ("blocks.1.attn.v_proj.bias", 1),
            ("blocks.0.attn.out_proj.weight", 33),
            ("blocks.1.mlp.fc1.weight", 100),
            ("blocks.0.mlp.fc2.bias", 4),
            ("patch_embed.weight", 50),
            ("class_embedding", 2),
            ("pos_embed", 21),
        ];
        let eps = 1e-5;
        for (name, idx) in samples {
            let analytic = grads.get(name).unwrap()[idx];
            let orig = tree.get(name).unwrap().data.as_ref().unwrap()[idx];
            tree.get_mut(name).unwrap().data.as_mut().unwrap()[idx] = orig + eps;
            let up = probe_loss(&spec, &tree, &pixels, &probe);
            tree.get_mut(name).unwrap().data.as_mut().unwrap()[idx] = orig - eps;
            let down = probe_loss(&spec, &tree, &pixels, &probe);
            tree.get_mut(name).unwrap().data.as_mut().unwrap()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-5,
                "{name}[{idx}]: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn lora_zero_up_factor_is_identity() {
        let (spec, mut tree, pixels, _) = toy_setup();
        let base = {
            let weights = VitWeights::from_tree(&spec, &tree, 0.0).unwrap();
            forward_image(&spec, &weights, &pixels, Precision::Full, false).unwrap().0
        };
        // Attach rank-2 factors on one projection: down random, up zero.
        let w = spec.feature_dim;
        let mut rng = stream_rng(9, "lora-test");
        let a: Vec<f64> = (0..2 * w).map(|_| rng.gen_range(-0.1..0.1)).collect();
        tree.insert(
            "blocks.0.attn.q_proj.weight.lora_a",
            crate::backbone::params::ParamEntry { shape: vec![2, w], trainable: true, data: Some(a) },
        );
        tree.insert(
            "blocks.0.attn.q_proj.weight.lora_b",
            crate::backbone::params::ParamEntry {
                shape: vec![w, 2],
                trainable: true,
                data: Some(vec![0.0; 2 * w]),
            },
        );
        let weights = VitWeights::from_tree(&spec, &tree, 8.0).unwrap();
        let (with_lora, _) =
            forward_image(&spec, &weights, &pixels, Precision::Full, false).unwrap();
        assert_eq!(base, with_lora, "zero up-factor must leave outputs bit-identical");
    }
}

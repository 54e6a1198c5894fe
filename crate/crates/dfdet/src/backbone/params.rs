//! Named parameter trees: ordered name -> (shape, trainable, data).
//!
//! Names are derived from the architecture alone, so they are stable across
//! runs — adapter selection, checkpointing and freeze accounting all key on
//! them. A tree can be purely structural (no data) when only shapes and
//! counts are needed, e.g. trainability accounting for the large encoder.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::util::{fingerprint_f64, stream_rng};

use super::EncoderSpec;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Option<Vec<f64>>,
}

impl ParamEntry {
    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamTree {
    entries: IndexMap<String, ParamEntry>,
}

/// Enumerates every learnable tensor of the encoder, in forward order.
pub fn encoder_layout(spec: &EncoderSpec) -> Vec<(String, Vec<usize>)> {
    let w = spec.feature_dim;
    let p = spec.patch_size();
    let tokens = spec.token_count();
    let mut out = vec![
        ("patch_embed.weight".into(), vec![w, 3 * p * p]),
        ("class_embedding".into(), vec![w]),
        ("pos_embed".into(), vec![tokens, w]),
        ("ln_pre.weight".into(), vec![w]),
        ("ln_pre.bias".into(), vec![w]),
    ];
    for i in 0..spec.num_layers {
        let b = format!("blocks.{i}");
        out.push((format!("{b}.ln_1.weight"), vec![w]));
        out.push((format!("{b}.ln_1.bias"), vec![w]));
        for proj in ["q_proj", "k_proj", "v_proj"] {
            out.push((format!("{b}.attn.{proj}.weight"), vec![w, w]));
            out.push((format!("{b}.attn.{proj}.bias"), vec![w]));
        }
        out.push((format!("{b}.attn.out_proj.weight"), vec![w, w]));
        out.push((format!("{b}.attn.out_proj.bias"), vec![w]));
        out.push((format!("{b}.ln_2.weight"), vec![w]));
        out.push((format!("{b}.ln_2.bias"), vec![w]));
        out.push((format!("{b}.mlp.fc1.weight"), vec![spec.mlp_dim, w]));
        out.push((format!("{b}.mlp.fc1.bias"), vec![spec.mlp_dim]));
        out.push((format!("{b}.mlp.fc2.weight"), vec![w, spec.mlp_dim]));
        out.push((format!("{b}.mlp.fc2.bias"), vec![w]));
    }
    out.push(("ln_post.weight".into(), vec![w]));
    out.push(("ln_post.bias".into(), vec![w]));
    out
}

impl ParamTree {
    /// Shapes and names only; no tensor data. Enough for freeze/unfreeze
    /// accounting without touching a weights file.
    pub fn structural(spec: &EncoderSpec) -> Self {
        let mut tree = Self::default();
        for (name, shape) in encoder_layout(spec) {
            tree.entries.insert(name, ParamEntry { shape, trainable: false, data: None });
        }
        tree
    }

    /// Fixed-seed random initialization; layer norms start at identity.
    pub fn initialized(spec: &EncoderSpec, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "encoder-init");
        let mut tree = Self::default();
        for (name, shape) in encoder_layout(spec) {
            let n: usize = shape.iter().product();
            let data = init_values(&name, n, &mut rng);
            tree.entries.insert(name, ParamEntry { shape, trainable: false, data: Some(data) });
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ParamEntry) {
        self.entries.insert(name.into(), entry);
    }

    /// Tensor data of `name` viewed as a matrix. 1-D entries become one row.
    pub fn mat(&self, name: &str) -> Result<Mat> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let data = e
            .data
            .as_ref()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` has no tensor data")))?;
        let (r, c) = match e.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => return Err(Error::Shape(format!("parameter `{name}` has rank {}", s.len()))),
        };
        Ok(Mat::from_vec(r, c, data.clone()))
    }

    pub fn vec(&self, name: &str) -> Result<&[f64]> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        e.data
            .as_deref()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` has no tensor data")))
    }

    pub fn total_count(&self) -> usize {
        self.entries.values().map(ParamEntry::count).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(ParamEntry::count).sum()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn freeze_all(&mut self) {
        for e in self.entries.values_mut() {
            e.trainable = false;
        }
    }

    /// Bit-exact fingerprint over the data of all frozen entries.
    pub fn frozen_fingerprint(&self) -> String {
        fingerprint_f64(
            self.entries
                .values()
                .filter(|e| !e.trainable)
                .filter_map(|e| e.data.as_deref()),
        )
    }

    /// Bit-exact fingerprint over all entry data.
    pub fn full_fingerprint(&self) -> String {
        fingerprint_f64(self.entries.values().filter_map(|e| e.data.as_deref()))
    }
}

fn init_values(name: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if name.ends_with("ln_1.weight")
        || name.ends_with("ln_2.weight")
        || name == "ln_pre.weight"
        || name == "ln_post.weight"
    {
        return vec![1.0; n];
    }
    if name.ends_with(".bias") {
        return vec![0.0; n];
    }
    // Truncated-normal-ish init, scale 0.02 (standard transformer init).
    (0..n).map(|_| sample_normal(rng) * 0.02).collect()
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_total_count_matches_hand_count() {
        // Hand count for width 8, patch 4 (input 48), 5 tokens, 2 blocks, mlp 32:
        //   patch_embed 8*48=384, class 8, pos 5*8=40, ln_pre 16,
        //   per block: 16 + 3*(64+8) + (64+8) + 16 + (256+32) + (256+8) = 872,
        //   ln_post 16  =>  384+8+40+16+2*872+16 = 2208.
        let tree = ParamTree::structural(&EncoderSpec::toy());
        assert_eq!(tree.total_count(), 2208);
    }

    #[test]
    fn large_total_count_in_expected_range() {
        let tree = ParamTree::structural(&EncoderSpec::clip_vit_l14());
        let total = tree.total_count();
        assert_eq!(total, 303_179_776);
        assert!((300_000_000..=306_000_000).contains(&total));
    }

    #[test]
    fn norm_param_count_formula() {
        for spec in [EncoderSpec::toy(), EncoderSpec::clip_vit_l14()] {
            let tree = ParamTree::structural(&spec);
            let ln_params: usize = tree
                .iter()
                .filter(|(name, _)| name.contains("ln_"))
                .map(|(_, e)| e.count())
                .sum();
            // One weight + one bias per norm layer; 2 norms per block plus pre/post.
            let norm_layers = 2 * spec.num_layers + 2;
            assert_eq!(ln_params, 2 * spec.feature_dim * norm_layers);
        }
    }

    #[test]
    fn names_stable_and_unique() {
        let a = ParamTree::structural(&EncoderSpec::toy());
        let b = ParamTree::structural(&EncoderSpec::toy());
        let na: Vec<_> = a.names().collect();
        let nb: Vec<_> = b.names().collect();
        assert_eq!(na, nb);
        let mut sorted = na.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), na.len(), "parameter names must be unique");
        assert!(a.iter().all(|(_, e)| !e.shape.is_empty()));
    }

    #[test]
    fn initialized_tree_is_reproducible() {
        let a = ParamTree::initialized(&EncoderSpec::toy(), 3);
        let b = ParamTree::initialized(&EncoderSpec::toy(), 3);
        let c = ParamTree::initialized(&EncoderSpec::toy(), 4);
        assert_eq!(a.full_fingerprint(), b.full_fingerprint());
        assert_ne!(a.full_fingerprint(), c.full_fingerprint());
        assert_eq!(a.vec("ln_pre.weight").unwrap(), &[1.0; 8]);
    }
}

//! Parameter-efficient fine-tuning: select which backbone parameters train,
//! attach low-rank factor pairs, and report the trainable fraction.
//!
//! Selection is glob-style over dot-separated parameter names so a report
//! can always be audited against `parameter_tree` output.

use serde::{Deserialize, Serialize};

use crate::backbone::params::{ParamEntry, ParamTree};
use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, Mat};
use crate::util::stream_rng;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeftStrategy {
    /// Only the classifier head trains.
    LinearProbe,
    /// Affine scale/shift of every norm layer plus the head.
    LnTuning,
    /// Biases inside the MLP blocks plus the head.
    BiasTuning,
    /// Low-rank factor pairs beside attention query/value weights.
    Lora,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub strategy: PeftStrategy,
    #[serde(default = "default_lora_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_lora_alpha")]
    pub lora_alpha: f64,
    /// Empty means "use the strategy's default patterns".
    #[serde(default)]
    pub target_patterns: Vec<String>,
}

fn default_lora_rank() -> usize {
    4
}

fn default_lora_alpha() -> f64 {
    8.0
}

impl AdapterSpec {
    pub fn for_strategy(strategy: PeftStrategy) -> Self {
        Self {
            strategy,
            lora_rank: default_lora_rank(),
            lora_alpha: default_lora_alpha(),
            target_patterns: Vec::new(),
        }
    }

    pub fn effective_patterns(&self) -> Vec<String> {
        if !self.target_patterns.is_empty() {
            return self.target_patterns.clone();
        }
        let defaults: &[&str] = match self.strategy {
            PeftStrategy::LinearProbe => &[],
            PeftStrategy::LnTuning => {
                &["ln_pre.*", "ln_post.*", "blocks.*.ln_1.*", "blocks.*.ln_2.*"]
            }
            PeftStrategy::BiasTuning => &["blocks.*.mlp.*.bias"],
            PeftStrategy::Lora => {
                &["blocks.*.attn.q_proj.weight", "blocks.*.attn.v_proj.weight"]
            }
        };
        defaults.iter().map(|s| s.to_string()).collect()
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy == PeftStrategy::Lora && self.lora_rank == 0 {
            return Err(Error::Config("lora_rank must be >= 1".into()));
        }
        if self.strategy != PeftStrategy::LinearProbe && self.effective_patterns().is_empty() {
            return Err(Error::Config("adapter needs at least one target pattern".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainabilityReport {
    pub trainable_count: usize,
    pub total_count: usize,
    pub fraction: f64,
    pub trainable_names: Vec<String>,
}

/// Glob match with `*` matching any substring of a dot-separated name.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0usize, 0usize);
    let (mut star, mut mark) = (usize::MAX, 0usize);
    while ni < n.len() {
        if pi < p.len() && (p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = pi;
            mark = ni;
            pi += 1;
        } else if star != usize::MAX {
            pi = star + 1;
            mark += 1;
            ni = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

/// Freeze everything, then unfreeze exactly what the spec selects. The
/// classifier head (entries named `head.*`) always trains. For LoRA the
/// matched base weights stay frozen and factor pairs are attached beside
/// them; re-applying is a no-op for factors that already exist.
pub fn apply_adapter(
    tree: &mut ParamTree,
    spec: &AdapterSpec,
    seed: u64,
) -> Result<TrainabilityReport> {
    spec.validate()?;
    tree.freeze_all();

    let patterns = spec.effective_patterns();
    let matched: Vec<String> = tree
        .names()
        .filter(|n| patterns.iter().any(|p| glob_match(p, n)))
        .map(str::to_string)
        .collect();
    if spec.strategy != PeftStrategy::LinearProbe && matched.is_empty() {
        return Err(Error::Config(format!(
            "adapter patterns {patterns:?} matched zero parameters"
        )));
    }

    match spec.strategy {
        PeftStrategy::LinearProbe => {}
        PeftStrategy::Lora => {
            let mut rng = stream_rng(seed, "lora-init");
            for name in &matched {
                let entry = tree
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
                let [out, inp] = entry.shape.as_slice() else {
                    return Err(Error::Shape(format!(
                        "lora target `{name}` must be a 2-D weight, got {:?}",
                        entry.shape
                    )));
                };
                let (out, inp) = (*out, *inp);
                let has_data = entry.data.is_some();
                let a_name = format!("{name}.lora_a");
                let b_name = format!("{name}.lora_b");
                if !tree.contains(&a_name) {
                    let data = has_data.then(|| {
                        (0..spec.lora_rank * inp)
                            .map(|_| rng.gen_range(-0.01..0.01))
                            .collect::<Vec<f64>>()
                    });
                    tree.insert(
                        a_name.clone(),
                        ParamEntry { shape: vec![spec.lora_rank, inp], trainable: false, data },
                    );
                }
                if !tree.contains(&b_name) {
                    let data = has_data.then(|| vec![0.0; out * spec.lora_rank]);
                    tree.insert(
                        b_name.clone(),
                        ParamEntry { shape: vec![out, spec.lora_rank], trainable: false, data },
                    );
                }
                tree.get_mut(&a_name).unwrap().trainable = true;
                tree.get_mut(&b_name).unwrap().trainable = true;
            }
        }
        _ => {
            for name in &matched {
                tree.get_mut(name).unwrap().trainable = true;
            }
        }
    }

    for head in ["head.weight", "head.bias"] {
        if let Some(e) = tree.get_mut(head) {
            e.trainable = true;
        }
    }

    let trainable_count = tree.trainable_count();
    let total_count = tree.total_count();
    Ok(TrainabilityReport {
        trainable_count,
        total_count,
        fraction: trainable_count as f64 / total_count as f64,
        trainable_names: tree.trainable_names(),
    })
}

/// Low-rank delta for a whole activation matrix: `scale * (x a^T) b^T`.
pub fn lora_term(x: &Mat, down: &Mat, up: &Mat, scale: f64) -> Mat {
    let mut t = matmul_nt(x, down); // [n, r]
    t.scale(scale);
    matmul_nt(&t, up) // [n, out]
}

/// Single-vector low-rank forward: frozen path plus
/// `(alpha / rank) * up * down * input`.
pub fn lora_forward(
    input: &[f64],
    frozen_weight: &Mat,
    down: &Mat,
    up: &Mat,
    alpha: f64,
) -> Result<Vec<f64>> {
    if frozen_weight.cols() != input.len() {
        return Err(Error::Shape(format!(
            "weight expects input of {}, got {}",
            frozen_weight.cols(),
            input.len()
        )));
    }
    if down.rows() != up.cols() {
        return Err(Error::Shape(format!(
            "factor ranks disagree: down is {}x{}, up is {}x{}",
            down.rows(),
            down.cols(),
            up.rows(),
            up.cols()
        )));
    }
    if down.cols() != input.len() || up.rows() != frozen_weight.rows() {
        return Err(Error::Shape("factor shapes do not match the frozen weight".into()));
    }
    let x = Mat::from_vec(1, input.len(), input.to_vec());
    let mut y = matmul_nt(&x, frozen_weight);
    let delta = lora_term(&x, down, up, alpha / down.rows() as f64);
    y.add_assign(&delta);
    Ok(y.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{parameter_tree, EncoderSpec};
    use crate::sphere::HeadParams;

    fn large_tree_with_head() -> ParamTree {
        let mut tree = parameter_tree(&EncoderSpec::clip_vit_l14()).unwrap();
        HeadParams::attach_structural(&mut tree, 1024);
        tree
    }

    #[test]
    fn glob_matching() {
        assert!(glob_match("blocks.*.ln_1.*", "blocks.3.ln_1.weight"));
        assert!(glob_match("*.bias", "blocks.0.mlp.fc1.bias"));
        assert!(!glob_match("*.bias", "blocks.0.mlp.fc1.weight"));
        assert!(glob_match("ln_pre.*", "ln_pre.weight"));
        assert!(!glob_match("ln_pre.*", "ln_post.weight"));
        assert!(glob_match("*", "anything.at.all"));
        assert!(!glob_match("blocks.*.attn.q_proj.weight", "blocks.0.attn.k_proj.weight"));
    }

    #[test]
    fn ln_tuning_counts_on_large_model() {
        let mut tree = large_tree_with_head();
        let report =
            apply_adapter(&mut tree, &AdapterSpec::for_strategy(PeftStrategy::LnTuning), 0)
                .unwrap();
        // 2 * 1024 * (2*24 + 2) norm affines plus the 1024x2 + 2 head.
        assert_eq!(report.trainable_count, 102_400 + 2050);
        let within = (report.trainable_count as f64 - 104_000.0).abs() / 104_000.0;
        assert!(within < 0.05, "trainable count {} not ~104K", report.trainable_count);
        assert!(report.fraction > 0.0002 && report.fraction < 0.0005);
    }

    #[test]
    fn linear_probe_trains_exactly_the_head() {
        let mut tree = large_tree_with_head();
        let report =
            apply_adapter(&mut tree, &AdapterSpec::for_strategy(PeftStrategy::LinearProbe), 0)
                .unwrap();
        assert_eq!(report.trainable_names, vec!["head.weight", "head.bias"]);
        assert_eq!(report.trainable_count, 1024 * 2 + 2);
    }

    #[test]
    fn bias_tuning_targets_mlp_biases_only() {
        let mut tree = parameter_tree(&EncoderSpec::toy()).unwrap();
        HeadParams::attach_structural(&mut tree, 8);
        let report =
            apply_adapter(&mut tree, &AdapterSpec::for_strategy(PeftStrategy::BiasTuning), 0)
                .unwrap();
        let expected = [
            "blocks.0.mlp.fc1.bias",
            "blocks.0.mlp.fc2.bias",
            "blocks.1.mlp.fc1.bias",
            "blocks.1.mlp.fc2.bias",
            "head.weight",
            "head.bias",
        ];
        assert_eq!(report.trainable_names, expected);
        assert!(report
            .trainable_names
            .iter()
            .filter(|n| !n.starts_with("head"))
            .all(|n| n.ends_with(".bias") && n.contains(".mlp.")));
    }

    #[test]
    fn zero_match_fails_loudly() {
        let mut tree = parameter_tree(&EncoderSpec::toy()).unwrap();
        let spec = AdapterSpec {
            target_patterns: vec!["no.such.parameter.*".into()],
            ..AdapterSpec::for_strategy(PeftStrategy::LnTuning)
        };
        assert!(matches!(apply_adapter(&mut tree, &spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn apply_adapter_is_idempotent_and_partitions() {
        let mut tree = parameter_tree(&EncoderSpec::toy()).unwrap();
        HeadParams::attach_structural(&mut tree, 8);
        let spec = AdapterSpec { lora_rank: 2, ..AdapterSpec::for_strategy(PeftStrategy::Lora) };
        let r1 = apply_adapter(&mut tree, &spec, 7).unwrap();
        let entries_after_first = tree.len();
        let r2 = apply_adapter(&mut tree, &spec, 7).unwrap();
        assert_eq!(tree.len(), entries_after_first, "factors must not duplicate");
        assert_eq!(r1.trainable_names, r2.trainable_names);
        assert_eq!(r1.trainable_count, r2.trainable_count);
        // Partition: trainable + frozen = all.
        let frozen = tree.iter().filter(|(_, e)| !e.trainable).count();
        assert_eq!(frozen + r2.trainable_names.len(), tree.len());
        // Base weights stay frozen under lora.
        assert!(!tree.get("blocks.0.attn.q_proj.weight").unwrap().trainable);
        assert!(tree.get("blocks.0.attn.q_proj.weight.lora_a").unwrap().trainable);
    }

    #[test]
    fn lora_forward_zero_up_equals_frozen_path() {
        let w = Mat::from_fn(3, 4, |i, j| (i + j) as f64 * 0.5);
        let down = Mat::from_fn(2, 4, |i, j| (i as f64 - j as f64) * 0.1);
        let up = Mat::zeros(3, 2);
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = lora_forward(&x, &w, &down, &up, 16.0).unwrap();
        let base = matmul_nt(&Mat::from_vec(1, 4, x.to_vec()), &w);
        assert_eq!(y, base.row(0));
    }

    #[test]
    fn lora_forward_matches_dense_recomputation() {
        // rank-1 on a 4x4 weight; oracle adds the dense delta W + s*up*down.
        let w = Mat::from_fn(4, 4, |i, j| ((i * 4 + j) as f64).sin());
        let down = Mat::from_fn(1, 4, |_, j| 0.3 - j as f64 * 0.1);
        let up = Mat::from_fn(4, 1, |i, _| 0.2 + i as f64 * 0.05);
        let alpha = 2.0;
        let x = [0.4, -1.2, 2.0, 0.7];
        let y = lora_forward(&x, &w, &down, &up, alpha).unwrap();
        let scale = alpha / 1.0;
        let dense = Mat::from_fn(4, 4, |i, j| w.get(i, j) + scale * up.get(i, 0) * down.get(0, j));
        let want = matmul_nt(&Mat::from_vec(1, 4, x.to_vec()), &dense);
        for (a, b) in y.iter().zip(want.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lora_rank_mismatch_is_shape_error() {
        let w = Mat::zeros(3, 4);
        let down = Mat::zeros(2, 4);
        let up = Mat::zeros(3, 3); // rank 3 != 2
        assert!(matches!(
            lora_forward(&[0.0; 4], &w, &down, &up, 1.0),
            Err(Error::Shape(_))
        ));
    }
}

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::math::Matrix;
use super::ModelError;

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;
/// Samples beyond this many standard deviations are redrawn.
pub const INIT_TRUNCATION: f64 = 2.0;

/// Geometry of the encoder and its classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub feed_forward_size: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// Desk-scale geometry: two layers, two heads, hidden width 32.
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_size: 32,
            feed_forward_size: 128,
            vocab_size: 200,
            max_len: 32,
            num_classes: 3,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-12,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// BERT-base geometry (12 layers, 12 heads, hidden 768).
    pub fn bert_base(vocab_size: usize, num_classes: usize) -> Self {
        EncoderConfig {
            num_layers: 12,
            num_heads: 12,
            hidden_size: 768,
            feed_forward_size: 3072,
            vocab_size,
            max_len: 512,
            num_classes,
            ..EncoderConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_size", self.hidden_size),
            ("feed_forward_size", self.feed_forward_size),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !matches!(self.num_classes, 2 | 3) {
            return Err(ModelError::InvalidConfig(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(ModelError::InvalidConfig("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of one encoder block. Projection matrices are stored input-major
/// (`in × out`) so that `x · W` applies them to row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query_w: Matrix,
    pub query_b: Matrix,
    pub key_w: Matrix,
    pub key_b: Matrix,
    pub value_w: Matrix,
    pub value_b: Matrix,
    pub attn_out_w: Matrix,
    pub attn_out_b: Matrix,
    pub attn_norm_scale: Matrix,
    pub attn_norm_shift: Matrix,
    pub ff_in_w: Matrix,
    pub ff_in_b: Matrix,
    pub ff_out_w: Matrix,
    pub ff_out_b: Matrix,
    pub ff_norm_scale: Matrix,
    pub ff_norm_shift: Matrix,
}

const LAYER_TENSOR_NAMES: [&str; 16] = [
    "attention.query.weight",
    "attention.query.bias",
    "attention.key.weight",
    "attention.key.bias",
    "attention.value.weight",
    "attention.value.bias",
    "attention.output.weight",
    "attention.output.bias",
    "attention.norm.scale",
    "attention.norm.shift",
    "feed_forward.input.weight",
    "feed_forward.input.bias",
    "feed_forward.output.weight",
    "feed_forward.output.bias",
    "feed_forward.norm.scale",
    "feed_forward.norm.shift",
];

impl LayerParams {
    fn zeros(h: usize, f: usize) -> Self {
        LayerParams {
            query_w: Matrix::zeros(h, h),
            query_b: Matrix::zeros(1, h),
            key_w: Matrix::zeros(h, h),
            key_b: Matrix::zeros(1, h),
            value_w: Matrix::zeros(h, h),
            value_b: Matrix::zeros(1, h),
            attn_out_w: Matrix::zeros(h, h),
            attn_out_b: Matrix::zeros(1, h),
            attn_norm_scale: Matrix::zeros(1, h),
            attn_norm_shift: Matrix::zeros(1, h),
            ff_in_w: Matrix::zeros(h, f),
            ff_in_b: Matrix::zeros(1, f),
            ff_out_w: Matrix::zeros(f, h),
            ff_out_b: Matrix::zeros(1, h),
            ff_norm_scale: Matrix::zeros(1, h),
            ff_norm_shift: Matrix::zeros(1, h),
        }
    }

    fn tensors(&self) -> [&Matrix; 16] {
        [
            &self.query_w,
            &self.query_b,
            &self.key_w,
            &self.key_b,
            &self.value_w,
            &self.value_b,
            &self.attn_out_w,
            &self.attn_out_b,
            &self.attn_norm_scale,
            &self.attn_norm_shift,
            &self.ff_in_w,
            &self.ff_in_b,
            &self.ff_out_w,
            &self.ff_out_b,
            &self.ff_norm_scale,
            &self.ff_norm_shift,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.query_w,
            &mut self.query_b,
            &mut self.key_w,
            &mut self.key_b,
            &mut self.value_w,
            &mut self.value_b,
            &mut self.attn_out_w,
            &mut self.attn_out_b,
            &mut self.attn_norm_scale,
            &mut self.attn_norm_shift,
            &mut self.ff_in_w,
            &mut self.ff_in_b,
            &mut self.ff_out_w,
            &mut self.ff_out_b,
            &mut self.ff_norm_scale,
            &mut self.ff_norm_shift,
        ]
    }
}

/// Every learnable tensor of the model. The same type doubles as the gradient
/// and optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub token_embeddings: Matrix,
    pub position_embeddings: Matrix,
    pub segment_embeddings: Matrix,
    pub embed_norm_scale: Matrix,
    pub embed_norm_shift: Matrix,
    pub layers: Vec<LayerParams>,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
}

impl ModelParams {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &EncoderConfig) -> Self {
        let h = config.hidden_size;
        ModelParams {
            config: config.clone(),
            token_embeddings: Matrix::zeros(config.vocab_size, h),
            position_embeddings: Matrix::zeros(config.max_len, h),
            segment_embeddings: Matrix::zeros(2, h),
            embed_norm_scale: Matrix::zeros(1, h),
            embed_norm_shift: Matrix::zeros(1, h),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::zeros(h, config.feed_forward_size))
                .collect(),
            classifier_w: Matrix::zeros(h, config.num_classes),
            classifier_b: Matrix::zeros(1, config.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Stable names in traversal order, e.g. `layers.0.attention.query.weight`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "embeddings.token",
            "embeddings.position",
            "embeddings.segment",
            "embeddings.norm.scale",
            "embeddings.norm.shift",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 0..self.layers.len() {
            names.extend(LAYER_TENSOR_NAMES.iter().map(|n| format!("layers.{i}.{n}")));
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![
            &self.token_embeddings,
            &self.position_embeddings,
            &self.segment_embeddings,
            &self.embed_norm_scale,
            &self.embed_norm_shift,
        ];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.token_embeddings,
            &mut self.position_embeddings,
            &mut self.segment_embeddings,
            &mut self.embed_norm_scale,
            &mut self.embed_norm_shift,
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        self.tensor_names().into_iter().zip(self.tensors()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.rows == y.rows && x.cols == y.cols)
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, m: &mut Matrix) {
    for x in &mut m.data {
        *x = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= INIT_TRUNCATION {
                break z * INIT_STD;
            }
        };
    }
}

/// Random initialization: truncated-normal weights and embeddings, unit
/// layer-norm scales, zero shifts and biases.
pub fn init_params(config: &EncoderConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut p = ModelParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    truncated_normal(&mut rng, &mut p.token_embeddings);
    truncated_normal(&mut rng, &mut p.position_embeddings);
    truncated_normal(&mut rng, &mut p.segment_embeddings);
    p.embed_norm_scale.data.fill(1.0);
    for layer in &mut p.layers {
        for w in [
            &mut layer.query_w,
            &mut layer.key_w,
            &mut layer.value_w,
            &mut layer.attn_out_w,
            &mut layer.ff_in_w,
            &mut layer.ff_out_w,
        ] {
            truncated_normal(&mut rng, w);
        }
        layer.attn_norm_scale.data.fill(1.0);
        layer.ff_norm_scale.data.fill(1.0);
    }
    truncated_normal(&mut rng, &mut p.classifier_w);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = EncoderConfig::default();
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert_eq!(a, b);
        let c = init_params(&EncoderConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.token_embeddings, c.token_embeddings);
    }

    #[test]
    fn init_follows_stated_rules() {
        let p = init_params(&EncoderConfig::default()).unwrap();
        assert!(p.embed_norm_scale.data.iter().all(|&x| x == 1.0));
        for l in &p.layers {
            assert!(l.attn_norm_scale.data.iter().all(|&x| x == 1.0));
            assert!(l.ff_norm_scale.data.iter().all(|&x| x == 1.0));
            assert!(l.ff_norm_shift.data.iter().all(|&x| x == 0.0));
            assert!(l.query_b.data.iter().all(|&x| x == 0.0));
        }
        assert!(p.classifier_b.data.iter().all(|&x| x == 0.0));
        for (name, t) in p.named_tensors() {
            if name.ends_with("weight") || name.starts_with("embeddings.") && !name.contains("norm") {
                assert!(t.data.iter().all(|x| x.abs() <= 0.04), "{name}");
            }
        }
        let w = &p.layers[0].ff_in_w.data;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.002);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = EncoderConfig {
            vocab_size: 50,
            num_classes: 2,
            ..EncoderConfig::default()
        };
        let p = init_params(&cfg).unwrap();
        assert_eq!((p.token_embeddings.rows, p.token_embeddings.cols), (50, 32));
        assert_eq!((p.classifier_w.rows, p.classifier_w.cols), (32, 2));
        assert_eq!((p.layers[1].ff_out_w.rows, p.layers[1].ff_out_w.cols), (128, 32));
        assert_eq!(p.tensor_names().len(), p.tensors().len());
        assert_eq!(p.tensors().len(), 5 + 2 * 16 + 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = EncoderConfig::default();
        for bad in [
            EncoderConfig { num_heads: 3, ..base.clone() },
            EncoderConfig { num_layers: 0, ..base.clone() },
            EncoderConfig { num_classes: 4, ..base.clone() },
            EncoderConfig { dropout_rate: 1.0, ..base.clone() },
        ] {
            assert!(init_params(&bad).is_err());
        }
    }

    #[test]
    fn bert_base_geometry_counts() {
        let cfg = EncoderConfig::bert_base(119_547, 3);
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 64);
    }
}

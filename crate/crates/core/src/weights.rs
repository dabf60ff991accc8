//! Parameter tensors for the encoder, the canonical tensor-name scheme and
//! seeded random initialization.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{ModelConfig, Pooling};
use crate::error::{Error, Result};
use crate::frontend::NormalizerParams;
use crate::rng::SplitMix64;

/// Standard deviation of seeded initial weights.
pub const INIT_STD: f64 = 0.02;
/// Batch-norm epsilon assumed when a checkpoint carries statistics but no eps.
pub const DEFAULT_NORMALIZER_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                what: "tensor data".into(),
                expected: format!("{shape:?} ({n} values)"),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Role of a tensor in the canonical listing; drives default init values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    NormScale,
    NormShift,
    Optional,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
}

const NORMALIZER_NAMES: [&str; 5] = [
    "frontend.norm.mean",
    "frontend.norm.var",
    "frontend.norm.weight",
    "frontend.norm.bias",
    "frontend.norm.eps",
];

/// Every tensor name a file for `cfg` may contain, in canonical order.
///
/// Linear weights are `[in, out]`; the patch kernel keeps the
/// convolution layout `[d, 1, P, P]`.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let d = cfg.embed_dim;
    let p = cfg.patch_size;
    let h = cfg.mlp_dim();
    let spec = |name: String, shape: &[usize], kind| TensorSpec { name, shape: shape.to_vec(), kind };
    let mut out = vec![
        spec("patch_embed.weight".into(), &[d, 1, p, p], TensorKind::Weight),
        spec("patch_embed.bias".into(), &[d], TensorKind::Weight),
        spec("pos_embed.time".into(), &[cfg.max_time_patches, d], TensorKind::Weight),
        spec("pos_embed.freq".into(), &[cfg.n_freq_patches(), d], TensorKind::Weight),
    ];
    if cfg.pooling == Pooling::Cls {
        out.push(spec("cls_token".into(), &[d], TensorKind::Weight));
    }
    for l in 0..cfg.n_layers {
        let b = |s: &str| format!("blocks.{l}.{s}");
        out.push(spec(b("norm1.weight"), &[d], TensorKind::NormScale));
        out.push(spec(b("norm1.bias"), &[d], TensorKind::NormShift));
        for proj in ["wq", "wk", "wv", "wo"] {
            out.push(spec(b(&format!("attn.{proj}.weight")), &[d, d], TensorKind::Weight));
            out.push(spec(b(&format!("attn.{proj}.bias")), &[d], TensorKind::Weight));
        }
        out.push(spec(b("norm2.weight"), &[d], TensorKind::NormScale));
        out.push(spec(b("norm2.bias"), &[d], TensorKind::NormShift));
        out.push(spec(b("mlp.fc1.weight"), &[d, h], TensorKind::Weight));
        out.push(spec(b("mlp.fc1.bias"), &[h], TensorKind::Weight));
        out.push(spec(b("mlp.fc2.weight"), &[h, d], TensorKind::Weight));
        out.push(spec(b("mlp.fc2.bias"), &[d], TensorKind::Weight));
    }
    out.push(spec("norm.weight".into(), &[d], TensorKind::NormScale));
    out.push(spec("norm.bias".into(), &[d], TensorKind::NormShift));
    out.push(spec("head.weight".into(), &[d, cfg.n_classes], TensorKind::Weight));
    out.push(spec("head.bias".into(), &[cfg.n_classes], TensorKind::Weight));
    for name in &NORMALIZER_NAMES[..4] {
        out.push(spec((*name).into(), &[cfg.n_mels], TensorKind::Optional));
    }
    out.push(spec(NORMALIZER_NAMES[4].into(), &[1], TensorKind::Optional));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub norm1_weight: Tensor,
    pub norm1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub norm2_weight: Tensor,
    pub norm2_bias: Tensor,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl LayerWeights {
    const SUFFIXES: [&'static str; 16] = [
        "norm1.weight",
        "norm1.bias",
        "attn.wq.weight",
        "attn.wq.bias",
        "attn.wk.weight",
        "attn.wk.bias",
        "attn.wv.weight",
        "attn.wv.bias",
        "attn.wo.weight",
        "attn.wo.bias",
        "norm2.weight",
        "norm2.bias",
        "mlp.fc1.weight",
        "mlp.fc1.bias",
        "mlp.fc2.weight",
        "mlp.fc2.bias",
    ];

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.norm1_weight,
            &self.norm1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.norm2_weight,
            &self.norm2_bias,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.norm1_weight,
            &mut self.norm1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.norm2_weight,
            &mut self.norm2_bias,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }
}

/// All parameters of one model. Immutable once built; share it by reference
/// across streams.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub config: ModelConfig,
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub time_pos: Tensor,
    pub freq_pos: Tensor,
    pub cls_token: Option<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub norm_weight: Tensor,
    pub norm_bias: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    /// `None` when the source carried no batch-norm statistics; the forward
    /// pass then treats the normalizer as the identity.
    pub normalizer: Option<NormalizerParams>,
}

impl WeightSet {
    /// Builds a weight set by pulling each canonical tensor from `fetch`.
    ///
    /// Shapes are checked in canonical order and the first mismatch is
    /// reported by name. Normalizer tensors are optional as a group.
    pub fn from_named<F>(cfg: &ModelConfig, mut fetch: F) -> Result<Self>
    where
        F: FnMut(&str) -> Option<Tensor>,
    {
        cfg.validate()?;
        let mut take = |spec: &TensorSpec| -> Result<Option<Tensor>> {
            match fetch(&spec.name) {
                None if spec.kind == TensorKind::Optional => Ok(None),
                None => Err(Error::Shape {
                    what: spec.name.clone(),
                    expected: format!("{:?}", spec.shape),
                    got: "missing".to_string(),
                }),
                Some(t) if t.shape() != spec.shape.as_slice() => Err(Error::Shape {
                    what: spec.name.clone(),
                    expected: format!("{:?}", spec.shape),
                    got: format!("{:?}", t.shape()),
                }),
                Some(t) => Ok(Some(t)),
            }
        };

        let specs = tensor_specs(cfg);
        let mut it = specs.iter();
        let mut next = |take: &mut dyn FnMut(&TensorSpec) -> Result<Option<Tensor>>| {
            let spec = it.next().expect("canonical listing exhausted");
            take(spec)
        };
        let mut req = |take: &mut dyn FnMut(&TensorSpec) -> Result<Option<Tensor>>| {
            next(take).map(|t| t.expect("required tensors are never None"))
        };

        let patch_weight = req(&mut take)?;
        let patch_bias = req(&mut take)?;
        let time_pos = req(&mut take)?;
        let freq_pos = req(&mut take)?;
        let cls_token = if cfg.pooling == Pooling::Cls { Some(req(&mut take)?) } else { None };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            layers.push(LayerWeights {
                norm1_weight: req(&mut take)?,
                norm1_bias: req(&mut take)?,
                wq: req(&mut take)?,
                bq: req(&mut take)?,
                wk: req(&mut take)?,
                bk: req(&mut take)?,
                wv: req(&mut take)?,
                bv: req(&mut take)?,
                wo: req(&mut take)?,
                bo: req(&mut take)?,
                norm2_weight: req(&mut take)?,
                norm2_bias: req(&mut take)?,
                fc1_weight: req(&mut take)?,
                fc1_bias: req(&mut take)?,
                fc2_weight: req(&mut take)?,
                fc2_bias: req(&mut take)?,
            });
        }
        let norm_weight = req(&mut take)?;
        let norm_bias = req(&mut take)?;
        let head_weight = req(&mut take)?;
        let head_bias = req(&mut take)?;

        let mut optional = [None, None, None, None, None];
        for slot in optional.iter_mut() {
            *slot = next(&mut take)?;
        }
        let normalizer = match optional {
            [None, None, None, None, None] => None,
            [Some(mean), Some(var), Some(gamma), Some(beta), eps] => Some(NormalizerParams {
                mean: mean.into_data(),
                var: var.into_data(),
                gamma: gamma.into_data(),
                beta: beta.into_data(),
                eps: eps.map_or(DEFAULT_NORMALIZER_EPS, |t| t.data()[0]),
            }),
            ref partial => {
                let missing = NORMALIZER_NAMES[..4]
                    .iter()
                    .zip(partial.iter())
                    .find(|(_, t)| t.is_none())
                    .map(|(n, _)| *n)
                    .unwrap_or(NORMALIZER_NAMES[0]);
                return Err(Error::Shape {
                    what: missing.to_string(),
                    expected: format!("[{}] (normalizer tensors come as a group)", cfg.n_mels),
                    got: "missing".to_string(),
                });
            }
        };

        let w = Self {
            config: *cfg,
            patch_weight,
            patch_bias,
            time_pos,
            freq_pos,
            cls_token,
            layers,
            norm_weight,
            norm_bias,
            head_weight,
            head_bias,
            normalizer,
        };
        w.validate()?;
        Ok(w)
    }

    /// Canonical `(name, tensor)` listing, including the normalizer group
    /// when present.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = vec![
            ("patch_embed.weight".into(), self.patch_weight.clone()),
            ("patch_embed.bias".into(), self.patch_bias.clone()),
            ("pos_embed.time".into(), self.time_pos.clone()),
            ("pos_embed.freq".into(), self.freq_pos.clone()),
        ];
        if let Some(cls) = &self.cls_token {
            out.push(("cls_token".into(), cls.clone()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (suffix, t) in LayerWeights::SUFFIXES.iter().zip(layer.tensors()) {
                out.push((format!("blocks.{l}.{suffix}"), t.clone()));
            }
        }
        out.push(("norm.weight".into(), self.norm_weight.clone()));
        out.push(("norm.bias".into(), self.norm_bias.clone()));
        out.push(("head.weight".into(), self.head_weight.clone()));
        out.push(("head.bias".into(), self.head_bias.clone()));
        if let Some(n) = &self.normalizer {
            let m = n.mean.len();
            let vecs = [&n.mean, &n.var, &n.gamma, &n.beta];
            for (name, v) in NORMALIZER_NAMES[..4].iter().zip(vecs) {
                out.push(((*name).into(), Tensor { shape: vec![m], data: v.clone() }));
            }
            out.push((NORMALIZER_NAMES[4].into(), Tensor { shape: vec![1], data: vec![n.eps] }));
        }
        out
    }

    /// Deterministic initialization: truncated normal weights (std 0.02,
    /// ±2σ), unit/zero layer norms, no frontend normalizer.
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        Self::from_named(cfg, |name| {
            let spec = tensor_specs(cfg).into_iter().find(|s| s.name == name)?;
            let n: usize = spec.shape.iter().product();
            let data = match spec.kind {
                TensorKind::Optional => return None,
                TensorKind::NormScale => vec![1.0; n],
                TensorKind::NormShift => vec![0.0; n],
                TensorKind::Weight => {
                    (0..n).map(|_| rng.next_truncated_normal(INIT_STD) as f32).collect()
                }
            };
            Some(Tensor { shape: spec.shape, data })
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Shape {
                what: "blocks".into(),
                expected: format!("{} layers", cfg.n_layers),
                got: format!("{} layers", self.layers.len()),
            });
        }
        if self.cls_token.is_some() != (cfg.pooling == Pooling::Cls) {
            return Err(Error::Config("cls_token must be present exactly when pooling is cls".into()));
        }
        let named = self.named_tensors();
        for spec in tensor_specs(cfg) {
            if let Some((_, t)) = named.iter().find(|(n, _)| *n == spec.name) {
                if t.shape() != spec.shape.as_slice() {
                    return Err(Error::Shape {
                        what: spec.name,
                        expected: format!("{:?}", spec.shape),
                        got: format!("{:?}", t.shape()),
                    });
                }
                if t.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(spec.name));
                }
            }
        }
        if let Some(n) = &self.normalizer {
            n.validate(cfg.n_mels)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn normalizer_or_identity(&self) -> NormalizerParams {
        self.normalizer
            .clone()
            .unwrap_or_else(|| NormalizerParams::identity(self.config.n_mels))
    }

    /// Mutable access to every tensor, in canonical order (normalizer excluded).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_weight,
            &mut self.patch_bias,
            &mut self.time_pos,
            &mut self.freq_pos,
        ];
        if let Some(cls) = self.cls_token.as_mut() {
            out.push(cls);
        }
        for layer in self.layers.iter_mut() {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            &mut self.norm_weight,
            &mut self.norm_bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }
}

/// Closed-form parameter count for `cfg` (normalizer excluded).
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    tensor_specs(cfg)
        .iter()
        .filter(|s| s.kind != TensorKind::Optional)
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

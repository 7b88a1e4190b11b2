//! Flat parameter vector layout.
//!
//! Parameters are stored in one `Vec<f64>` in this order, every matrix
//! row-major with shape `(fan_in, fan_out)`:
//!
//! 1. embeddings, `[token][code][feature]`, shape `N_t x 2^t x d_f`;
//! 2. per encoder layer: `W_Q`, `W_K`, `W_V` (`d_f x d_atten`), LayerNorm-1
//!    gain and bias (`d_f`), `W_FFN` (`d_f x d_f`), `b_FFN`, LayerNorm-2
//!    gain and bias;
//! 3. per token: the hidden MLP layers (weight then bias) followed by the
//!    output head weight (`fan_in x D*t*N_e`) and bias.
//!
//! Gradients and optimizer state use the same order.

use super::AnsatzConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderOffsets {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub ffn: Dense,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpOffsets {
    pub hidden: Vec<Dense>,
    pub head: Dense,
}

/// Named parameter groups, used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Embedding,
    Query,
    Key,
    Value,
    LayerNorm,
    FeedForward,
    Mlp,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub embedding: usize,
    pub encoder: Vec<EncoderOffsets>,
    pub mlps: Vec<MlpOffsets>,
    pub total: usize,
    groups: Vec<(usize, ParamGroup)>,
}

impl ParamLayout {
    pub fn new(cfg: &AnsatzConfig, n_tokens: usize, n_electrons: usize) -> Self {
        let d = cfg.d_f;
        let mut groups = Vec::new();
        let mut cursor = 0usize;
        let mut take = |len: usize, group: ParamGroup, groups: &mut Vec<(usize, ParamGroup)>| {
            let start = cursor;
            groups.push((start, group));
            cursor += len;
            start
        };
        let embedding = take(n_tokens * (1 << cfg.t) * d, ParamGroup::Embedding, &mut groups);
        let mut encoder = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            let w_q = take(d * cfg.d_atten, ParamGroup::Query, &mut groups);
            let w_k = take(d * cfg.d_atten, ParamGroup::Key, &mut groups);
            let w_v = take(d * cfg.d_atten, ParamGroup::Value, &mut groups);
            let ln1_gain = take(d, ParamGroup::LayerNorm, &mut groups);
            let ln1_bias = take(d, ParamGroup::LayerNorm, &mut groups);
            let ffn_w = take(d * d, ParamGroup::FeedForward, &mut groups);
            let ffn_b = take(d, ParamGroup::FeedForward, &mut groups);
            let ln2_gain = take(d, ParamGroup::LayerNorm, &mut groups);
            let ln2_bias = take(d, ParamGroup::LayerNorm, &mut groups);
            encoder.push(EncoderOffsets {
                w_q,
                w_k,
                w_v,
                ln1_gain,
                ln1_bias,
                ffn: Dense {
                    weight: ffn_w,
                    bias: ffn_b,
                    fan_in: d,
                    fan_out: d,
                },
                ln2_gain,
                ln2_bias,
            });
        }
        let head_width = cfg.n_dets * cfg.t * n_electrons;
        let mut mlps = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let mut hidden = Vec::with_capacity(cfg.mlp_layers);
            let mut fan_in = d;
            for _ in 0..cfg.mlp_layers {
                let weight = take(fan_in * cfg.d_mlp, ParamGroup::Mlp, &mut groups);
                let bias = take(cfg.d_mlp, ParamGroup::Mlp, &mut groups);
                hidden.push(Dense {
                    weight,
                    bias,
                    fan_in,
                    fan_out: cfg.d_mlp,
                });
                fan_in = cfg.d_mlp;
            }
            let weight = take(fan_in * head_width, ParamGroup::Head, &mut groups);
            let bias = take(head_width, ParamGroup::Head, &mut groups);
            mlps.push(MlpOffsets {
                hidden,
                head: Dense {
                    weight,
                    bias,
                    fan_in,
                    fan_out: head_width,
                },
            });
        }
        ParamLayout {
            embedding,
            encoder,
            mlps,
            total: cursor,
            groups,
        }
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        let pos = self.groups.partition_point(|&(start, _)| start <= index);
        self.groups[pos.saturating_sub(1)].1
    }
}

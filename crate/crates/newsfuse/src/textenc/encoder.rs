//! The L-block transformer encoder (single-head attention, post-norm) with
//! per-block [CLS] state extraction. One forward graph per example; batching
//! happens above via parallel gradient accumulation.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, Mat, ParamBinder, ParamSet, VarId};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Default feed-forward widening factor.
pub const FFN_FACTOR: usize = 4;

/// Initialize backbone parameters under `backbone.*` names. Blocks are
/// 1-based so names line up with block-selection indices.
pub fn init_backbone_params(
    params: &mut ParamSet,
    layers: usize,
    hidden: usize,
    ffn_factor: usize,
    vocab_size: usize,
    max_seq_len: usize,
    rng: &mut ChaCha8Rng,
) {
    let ffn = hidden * ffn_factor.max(1);
    params.insert(
        "backbone.embed.token".into(),
        Mat::gaussian(vocab_size, hidden, 0.0, 0.1, rng),
    );
    params.insert(
        "backbone.embed.pos".into(),
        Mat::gaussian(max_seq_len, hidden, 0.0, 0.1, rng),
    );
    for i in 1..=layers {
        for proj in ["query", "key", "value", "proj"] {
            params.insert(
                format!("backbone.block{i}.attn.{proj}.weight"),
                Mat::gaussian(hidden, hidden, 0.0, (1.0 / hidden as f64).sqrt(), rng),
            );
            params.insert(
                format!("backbone.block{i}.attn.{proj}.bias"),
                Mat::zeros(1, hidden),
            );
        }
        params.insert(
            format!("backbone.block{i}.norm1.gain"),
            Mat::from_vec(1, hidden, vec![1.0; hidden]),
        );
        params.insert(
            format!("backbone.block{i}.norm1.offset"),
            Mat::zeros(1, hidden),
        );
        params.insert(
            format!("backbone.block{i}.ffn.fc1.weight"),
            Mat::he_normal(hidden, ffn, rng),
        );
        params.insert(format!("backbone.block{i}.ffn.fc1.bias"), Mat::zeros(1, ffn));
        params.insert(
            format!("backbone.block{i}.ffn.fc2.weight"),
            Mat::he_normal(ffn, hidden, rng),
        );
        params.insert(
            format!("backbone.block{i}.ffn.fc2.bias"),
            Mat::zeros(1, hidden),
        );
        params.insert(
            format!("backbone.block{i}.norm2.gain"),
            Mat::from_vec(1, hidden, vec![1.0; hidden]),
        );
        params.insert(
            format!("backbone.block{i}.norm2.offset"),
            Mat::zeros(1, hidden),
        );
    }
}

pub fn backbone_param_names(layers: usize) -> Vec<String> {
    let mut names = vec!["backbone.embed.token".into(), "backbone.embed.pos".into()];
    for i in 1..=layers {
        for proj in ["query", "key", "value", "proj"] {
            names.push(format!("backbone.block{i}.attn.{proj}.weight"));
            names.push(format!("backbone.block{i}.attn.{proj}.bias"));
        }
        for norm in ["norm1", "norm2"] {
            names.push(format!("backbone.block{i}.{norm}.gain"));
            names.push(format!("backbone.block{i}.{norm}.offset"));
        }
        for fc in ["fc1", "fc2"] {
            names.push(format!("backbone.block{i}.ffn.{fc}.weight"));
            names.push(format!("backbone.block{i}.ffn.{fc}.bias"));
        }
    }
    names
}

/// Shape-check a loaded parameter set against the expected backbone layout,
/// listing every offending name.
pub fn validate_backbone_params(
    params: &ParamSet,
    layers: usize,
    hidden: usize,
) -> Result<()> {
    let mut offenders = Vec::new();
    for name in backbone_param_names(layers) {
        match params.get(&name) {
            None => offenders.push(format!("{name} (missing)")),
            Some(m) => {
                let ok = if name.ends_with(".bias") || name.contains(".norm") {
                    m.rows == 1
                } else if name.contains("attn") {
                    m.shape() == (hidden, hidden)
                } else {
                    m.cols == hidden || m.rows == hidden
                };
                if !ok {
                    offenders.push(format!("{name} (shape {:?})", m.shape()));
                }
            }
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint {
            message: "backbone checkpoint does not match config".into(),
            names: offenders,
        })
    }
}

/// Build the forward graph for one token sequence; returns the [CLS] node
/// (a 1 x H take_rows) after each block, in block order.
pub fn backbone_graph(
    g: &mut Graph,
    binder: &mut ParamBinder,
    ids: &[u32],
    layers: usize,
    hidden: usize,
) -> Vec<VarId> {
    let token_table = binder.bind(g, "backbone.embed.token");
    let pos_table = binder.bind(g, "backbone.embed.pos");
    let token_rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let pos_rows: Vec<usize> = (0..ids.len()).collect();
    let tok = g.take_rows(token_table, &token_rows);
    let pos = g.take_rows(pos_table, &pos_rows);
    let mut x = g.add(tok, pos);

    let scale = 1.0 / (hidden as f64).sqrt();
    let mut cls_nodes = Vec::with_capacity(layers);
    for i in 1..=layers {
        let wq = binder.bind(g, &format!("backbone.block{i}.attn.query.weight"));
        let bq = binder.bind(g, &format!("backbone.block{i}.attn.query.bias"));
        let wk = binder.bind(g, &format!("backbone.block{i}.attn.key.weight"));
        let bk = binder.bind(g, &format!("backbone.block{i}.attn.key.bias"));
        let wv = binder.bind(g, &format!("backbone.block{i}.attn.value.weight"));
        let bv = binder.bind(g, &format!("backbone.block{i}.attn.value.bias"));
        let wo = binder.bind(g, &format!("backbone.block{i}.attn.proj.weight"));
        let bo = binder.bind(g, &format!("backbone.block{i}.attn.proj.bias"));

        let q = g.matmul(x, wq);
        let q = g.add_row(q, bq);
        let k = g.matmul(x, wk);
        let k = g.add_row(k, bk);
        let v = g.matmul(x, wv);
        let v = g.add_row(v, bv);
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        let ctx = g.matmul(attn, v);
        let ctx = g.matmul(ctx, wo);
        let ctx = g.add_row(ctx, bo);

        let res1 = g.add(x, ctx);
        let g1 = binder.bind(g, &format!("backbone.block{i}.norm1.gain"));
        let o1 = binder.bind(g, &format!("backbone.block{i}.norm1.offset"));
        let normed1 = g.layer_norm_rows(res1, g1, o1, LAYER_NORM_EPS);

        let w1 = binder.bind(g, &format!("backbone.block{i}.ffn.fc1.weight"));
        let b1 = binder.bind(g, &format!("backbone.block{i}.ffn.fc1.bias"));
        let w2 = binder.bind(g, &format!("backbone.block{i}.ffn.fc2.weight"));
        let b2 = binder.bind(g, &format!("backbone.block{i}.ffn.fc2.bias"));
        let h = g.matmul(normed1, w1);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let h = g.matmul(h, w2);
        let h = g.add_row(h, b2);

        let res2 = g.add(normed1, h);
        let g2 = binder.bind(g, &format!("backbone.block{i}.norm2.gain"));
        let o2 = binder.bind(g, &format!("backbone.block{i}.norm2.offset"));
        x = g.layer_norm_rows(res2, g2, o2, LAYER_NORM_EPS);

        cls_nodes.push(g.take_rows(x, &[0]));
    }
    cls_nodes
}

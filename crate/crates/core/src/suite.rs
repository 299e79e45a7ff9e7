//! Reference gradient-check cases: one small, seeded instance of every
//! learnable block, at shapes no larger than 1×8×8×8.

use crate::autodiff::Graph;
use crate::blocks::{
    init_params, Block, ChannelAttention, Dwc, GroupAttention, SelectiveFusion, SpatialAttention, Upsample, UpsampleMode,
};
use crate::error::Result;
use crate::gradcheck::GraphBlock;
use crate::model::{FeatureVars, Head, Model, ModelConfig};
use crate::rng::Stream;
use crate::tensor::{ParamStore, Scalar, Tensor};

pub struct BlockCase<T: Scalar> {
    pub name: &'static str,
    /// Every op in the block is linear in the input and in each parameter.
    pub linear: bool,
    pub block: GraphBlock<T>,
    pub input: Tensor<T>,
}

fn rand_t<T: Scalar>(dims: [usize; 4], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    let mut s = Stream::new(seed);
    Tensor::from_fn(dims, |_, _, _, _| T::of(s.uniform(lo, hi)))
}

/// Two-level, width-4 model used by the model-level cases.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        levels: 2,
        base_channels: 4,
        groups: 2,
        reduction: 2,
        ..ModelConfig::toy()
    }
}

fn case<T: Scalar, B: Block + 'static>(
    name: &'static str,
    linear: bool,
    b: B,
    seed: u64,
    input: Tensor<T>,
    f: fn(&B, &mut Graph<T>, &ParamStore<T>, crate::autodiff::Var) -> Result<crate::autodiff::Var>,
) -> BlockCase<T> {
    let ps = init_params(&b.specs(), seed);
    BlockCase {
        name,
        linear,
        block: GraphBlock::new(ps, move |g, ps, x| f(&b, g, ps, x)),
        input,
    }
}

pub fn block_cases<T: Scalar>() -> Result<Vec<BlockCase<T>>> {
    let mut v = vec![
        case(
            "dwc",
            true,
            Dwc::new("dwc", 3, 4, 3),
            1,
            rand_t([1, 3, 8, 8], -1.0, 1.0, 2),
            |b, g, ps, x| b.forward(g, ps, x),
        ),
        case(
            "group_attention",
            false,
            GroupAttention::new("ga", 8, 4, 2)?,
            3,
            rand_t([1, 8, 8, 8], -1.0, 1.0, 4),
            |b, g, ps, x| b.forward(g, ps, x),
        ),
        case(
            "spatial_attention",
            false,
            SpatialAttention::new("sa"),
            5,
            rand_t([1, 4, 8, 8], -1.0, 1.0, 6),
            |b, g, ps, x| b.forward(g, ps, x),
        ),
        case(
            "channel_attention",
            false,
            ChannelAttention::new("ca", 8, 2)?,
            7,
            rand_t([1, 8, 8, 8], -1.0, 1.0, 8),
            |b, g, ps, x| b.forward(g, ps, x),
        ),
        case(
            "scf_fuse",
            false,
            SelectiveFusion::new("scf", 4, 2)?,
            9,
            rand_t([1, 8, 8, 8], -1.0, 1.0, 10),
            // input channels [0, 4) are I_h, [4, 8) are X_ga
            |b, g, ps, x| {
                let ih = g.slice_channels(x, 0, 4)?;
                let xg = g.slice_channels(x, 4, 4)?;
                b.forward(g, ps, ih, xg)
            },
        ),
        case(
            "upsample_block",
            true,
            Upsample::new("up", 8, 4, 3, UpsampleMode::Nearest),
            11,
            rand_t([1, 8, 4, 4], -1.0, 1.0, 12),
            |b, g, ps, x| b.forward(g, ps, x),
        ),
        case(
            "upsample_block_bilinear",
            true,
            Upsample::new("up", 8, 4, 3, UpsampleMode::Bilinear),
            11,
            rand_t([1, 8, 4, 4], -1.0, 1.0, 12),
            |b, g, ps, x| b.forward(g, ps, x),
        ),
    ];

    let cfg = tiny_config();

    let m = Model::new(cfg.clone())?;
    v.push(BlockCase {
        name: "mfe_level",
        linear: true,
        block: GraphBlock::new(m.init_params(), move |g, ps, x| {
            let (out, skip) = m.mfe_level(g, ps, 0, x)?;
            let skip = g.wt_inverse(skip)?;
            let out = g.upsample_nearest(out);
            let out = g.slice_channels(out, 0, 4)?;
            let both = g.concat(&[out, skip])?;
            Ok(both)
        }),
        input: rand_t([1, 4, 8, 8], -1.0, 1.0, 13),
    });

    let m = Model::new(cfg.clone())?;
    let ps: ParamStore<T> = m.init_params();
    let feats = m.encode(&rand_t([1, 3, 8, 8], 0.0, 1.0, 14), &ps)?;
    let deep = feats.enc.last().cloned().expect("at least one level");
    let skips = feats.skip;
    let levels = cfg.levels;
    v.push(BlockCase {
        name: "decode",
        linear: false,
        block: GraphBlock::new(ps, move |g, ps, x| {
            let mut enc: Vec<_> = (1..levels).map(|_| g.constant(Tensor::zeros([1, 1, 1, 1]))).collect();
            enc.push(x);
            let skip = skips.iter().map(|t| g.constant(t.clone())).collect();
            let (p_h, p_r) = m.decode_graph(g, ps, &FeatureVars { enc, skip, crop: (8, 8) })?;
            g.concat(&[p_h, p_r])
        }),
        input: deep,
    });

    let m = Model::new(cfg.clone())?;
    let all: ParamStore<T> = m.init_params();
    let mut heads = ParamStore::new();
    for (n, p) in all.iter().filter(|(n, _)| n.starts_with("head.")) {
        heads.insert(n, p.value.clone());
    }
    v.push(BlockCase {
        name: "heads",
        linear: false,
        block: GraphBlock::new(heads, move |g, ps, x| {
            let a = m.head(g, ps, Head::HighFrequency, x, (6, 7))?;
            let b = m.head(g, ps, Head::Reconstruction, x, (6, 7))?;
            g.concat(&[a, b])
        }),
        input: rand_t([1, 4, 8, 8], -1.0, 1.0, 15),
    });

    let m = Model::new(cfg)?;
    v.push(BlockCase {
        name: "forward",
        linear: false,
        block: GraphBlock::new(m.init_params(), move |g, ps, x| {
            let (p_h, p_r) = m.forward_graph(g, ps, x)?;
            g.concat(&[p_h, p_r])
        }),
        input: rand_t([1, 3, 8, 8], 0.0, 1.0, 16),
    });
    Ok(v)
}

#![allow(dead_code)]

pub mod oracle;

use clearseg_core::checkpoint::{LinearWeights, SplitMix64};
use clearseg_core::{
    gen_fixture_checkpoint, AttnMode, GeluVariant, SurgeryConfig, Tensor, VitConfig, VitEncoder,
    VitWeights,
};

fn amplify_linear(l: &mut LinearWeights, f: f32) {
    l.weight = l.weight.scale(f);
    l.bias = l.bias.scale(f);
}

/// Scales every non-layer-norm tensor so attention is far from uniform.
pub fn amplify(w: &mut VitWeights, f: f32) {
    w.patch_embed = w.patch_embed.scale(f);
    w.class_token = w.class_token.scale(f);
    w.pos_embed = w.pos_embed.scale(f);
    w.proj = w.proj.scale(f);
    for b in &mut w.blocks {
        for l in [
            &mut b.q, &mut b.k, &mut b.v, &mut b.out, &mut b.fc1, &mut b.fc2,
        ] {
            amplify_linear(l, f);
        }
    }
}

pub fn random_pixels(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    Tensor::new(
        vec![3, h, w],
        (0..3 * h * w).map(|_| 2.0 * rng.next_symmetric()).collect(),
    )
    .unwrap()
}

pub struct Case {
    pub encoder: VitEncoder,
    pub pixels: Tensor,
    pub surgery: Option<SurgeryConfig>,
}

/// Random tiny encoder (d ≤ 32, L ≤ 3, heads ∈ {1, 2, 4}), image and surgery.
pub fn random_case(seed: u64) -> Case {
    let mut rng = SplitMix64::new(seed ^ 0xC1EA_5EED);
    let mut pick = |n: u64| (rng.next_u64() % n) as usize;
    let heads = [1, 2, 4][pick(3)];
    let head_dim = [2, 4, 8][pick(3)];
    let width = heads * head_dim;
    let layers = 1 + pick(3);
    let patch = 2 + pick(3);
    let grid = 1 + pick(3);
    let embed = 3 + pick(6);
    let gelu = if pick(2) == 0 {
        GeluVariant::Quick
    } else {
        GeluVariant::Exact
    };
    let cfg = VitConfig::new(grid * patch, patch, width, layers, heads, embed, gelu).unwrap();
    let (mut w, _) = gen_fixture_checkpoint(seed, &cfg).unwrap();
    amplify(&mut w, 20.0 + pick(30) as f32);
    let (gh, gw) = (1 + pick(4), 1 + pick(4));
    let surgery = match pick(4) {
        0 => None,
        _ => Some(SurgeryConfig {
            attn_mode: AttnMode::ALL[pick(6)],
            keep_residual: pick(2) == 0,
            keep_ffn: pick(2) == 0,
            alpha: [0.5, 1.0, 2.0][pick(3)],
            residual_mask_beta: [0.0, 0.0, 0.25, 1.0][pick(4)],
        }),
    };
    let pixels = random_pixels(gh * patch, gw * patch, seed.wrapping_mul(31));
    Case {
        encoder: VitEncoder::new(cfg, w).unwrap(),
        pixels,
        surgery,
    }
}

//! Architecture registry.
//!
//! * `small_cnn_k`, k in 3..=6 — conv/norm/relu blocks with one tap per
//!   block, max-pool downsampling while spatial extent allows.
//! * `resnet18_style` — CIFAR-style stem plus four stages of two basic
//!   blocks; one tap after each main-path normalization layer, 17 total.
//! * `alexnet_style` — five plain conv stages, one tap per stage.
//!
//! Widths are scaled down for single-core CPU training; topology and tap
//! counts are what the protocols depend on.

use rand_chacha::ChaCha8Rng;

use super::{TapSpec, TappedModel};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Block, Conv2d, Linear};
use crate::num::Scalar;
use crate::seed::rng_for;

/// Names accepted by [`build_model`].
pub fn arch_registry() -> Vec<String> {
    let mut names: Vec<String> = (3..=6).map(|k| format!("small_cnn_{k}")).collect();
    names.push("resnet18_style".into());
    names.push("alexnet_style".into());
    names
}

/// Construct a tapped model with deterministic, seeded initialization.
pub fn build_model<F: Scalar>(
    arch_name: &str,
    image_side: usize,
    seed: u64,
) -> Result<TappedModel<F>> {
    if image_side < 16 {
        return Err(Error::invalid(
            "image_side",
            format!("{image_side} below the minimum of 16"),
        ));
    }
    let mut rng = rng_for(seed, &["init", arch_name]);
    let (encoder, taps, last_channels) = match arch_name {
        "small_cnn_3" => small_cnn(3, image_side, &mut rng),
        "small_cnn_4" => small_cnn(4, image_side, &mut rng),
        "small_cnn_5" => small_cnn(5, image_side, &mut rng),
        "small_cnn_6" => small_cnn(6, image_side, &mut rng),
        "resnet18_style" => resnet18_style(&mut rng),
        "alexnet_style" => alexnet_style(&mut rng),
        other => {
            return Err(Error::UnknownArch {
                name: other.to_string(),
                known: arch_registry(),
            })
        }
    };
    let head = Linear::new(last_channels, 1, &mut rng);
    Ok(TappedModel {
        arch_name: arch_name.to_string(),
        image_side,
        init_seed: seed,
        encoder,
        head,
        taps,
    })
}

fn small_cnn<F: Scalar>(
    k: usize,
    image_side: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Block<F>>, Vec<TapSpec>, usize) {
    const CHANNELS: [usize; 6] = [8, 16, 32, 32, 32, 32];
    let mut blocks = Vec::new();
    let mut taps = Vec::new();
    let mut in_c = 1;
    let mut side = image_side;
    for b in 0..k {
        let out_c = CHANNELS[b];
        blocks.push(Block::Conv(Conv2d::new(in_c, out_c, 3, 1, 1, rng)));
        blocks.push(Block::Norm(BatchNorm2d::new(out_c)));
        blocks.push(Block::Relu);
        blocks.push(Block::Tap);
        taps.push(TapSpec {
            index: b,
            name: format!("block{}", b + 1),
            feature_channels: out_c,
        });
        // downsample through the first three blocks; the deeper blocks
        // keep a coarse grid so their taps see large receptive fields
        if b < 3 && side >= 2 {
            blocks.push(Block::MaxPool(2));
            side /= 2;
        }
        in_c = out_c;
    }
    (blocks, taps, in_c)
}

fn basic_block<F: Scalar>(
    in_c: usize,
    out_c: usize,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Block<F> {
    let main = vec![
        Block::Conv(Conv2d::new(in_c, out_c, 3, stride, 1, rng)),
        Block::Norm(BatchNorm2d::new(out_c)),
        Block::Tap,
        Block::Relu,
        Block::Conv(Conv2d::new(out_c, out_c, 3, 1, 1, rng)),
        Block::Norm(BatchNorm2d::new(out_c)),
        Block::Tap,
    ];
    let shortcut = if stride != 1 || in_c != out_c {
        vec![
            Block::Conv(Conv2d::new(in_c, out_c, 1, stride, 0, rng)),
            Block::Norm(BatchNorm2d::new(out_c)),
        ]
    } else {
        Vec::new()
    };
    Block::Residual { main, shortcut }
}

fn resnet18_style<F: Scalar>(rng: &mut ChaCha8Rng) -> (Vec<Block<F>>, Vec<TapSpec>, usize) {
    let base = 8;
    let mut blocks = Vec::new();
    let mut taps = Vec::new();
    let mut tap_no = 0usize;
    let push_tap = |taps: &mut Vec<TapSpec>, name: String, channels: usize| {
        taps.push(TapSpec {
            index: taps.len(),
            name,
            feature_channels: channels,
        });
    };

    // stem
    blocks.push(Block::Conv(Conv2d::new(1, base, 3, 1, 1, rng)));
    blocks.push(Block::Norm(BatchNorm2d::new(base)));
    blocks.push(Block::Tap);
    push_tap(&mut taps, "stem.bn".into(), base);
    tap_no += 1;
    blocks.push(Block::Relu);

    let widths = [base, base * 2, base * 4, base * 8];
    let mut in_c = base;
    for (stage, &w) in widths.iter().enumerate() {
        for block_idx in 0..2 {
            let stride = if stage > 0 && block_idx == 0 { 2 } else { 1 };
            blocks.push(basic_block(in_c, w, stride, rng));
            for bn in 1..=2 {
                push_tap(
                    &mut taps,
                    format!("layer{}.{}.bn{}", stage + 1, block_idx, bn),
                    w,
                );
                tap_no += 1;
            }
            blocks.push(Block::Relu);
            in_c = w;
        }
    }
    debug_assert_eq!(tap_no, 17);
    (blocks, taps, in_c)
}

fn alexnet_style<F: Scalar>(rng: &mut ChaCha8Rng) -> (Vec<Block<F>>, Vec<TapSpec>, usize) {
    const CHANNELS: [usize; 5] = [16, 32, 48, 48, 32];
    let mut blocks = Vec::new();
    let mut taps = Vec::new();
    let mut in_c = 1;
    for (i, &out_c) in CHANNELS.iter().enumerate() {
        blocks.push(Block::Conv(Conv2d::new(in_c, out_c, 3, 1, 1, rng)));
        blocks.push(Block::Relu);
        blocks.push(Block::Tap);
        taps.push(TapSpec {
            index: i,
            name: format!("conv{}", i + 1),
            feature_channels: out_c,
        });
        if i == 0 || i == 1 || i == 4 {
            blocks.push(Block::MaxPool(2));
        }
        in_c = out_c;
    }
    (blocks, taps, in_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn tap_counts_match_registry_contract() {
        let m: TappedModel<f32> = build_model("small_cnn_5", 32, 1).unwrap();
        assert_eq!(m.n_taps(), 5);
        let m: TappedModel<f32> = build_model("small_cnn_3", 32, 1).unwrap();
        assert_eq!(m.n_taps(), 3);
        let m: TappedModel<f32> = build_model("resnet18_style", 32, 1).unwrap();
        assert_eq!(m.n_taps(), 17);
        let m: TappedModel<f32> = build_model("alexnet_style", 32, 1).unwrap();
        assert_eq!(m.n_taps(), 5);
    }

    #[test]
    fn unknown_arch_lists_registry() {
        let err = build_model::<f32>("vgg", 32, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vgg"));
        assert!(msg.contains("resnet18_style"));
        assert!(msg.contains("small_cnn_5"));
    }

    #[test]
    fn tap_indices_contiguous_and_ordered() {
        for arch in arch_registry() {
            let m: TappedModel<f32> = build_model(&arch, 32, 9).unwrap();
            for (i, t) in m.taps.iter().enumerate() {
                assert_eq!(t.index, i, "{arch}: tap {i} has index {}", t.index);
            }
        }
    }

    #[test]
    fn forward_shapes_consistent_across_archs() {
        for arch in arch_registry() {
            let mut m: TappedModel<f32> = build_model(&arch, 32, 3).unwrap();
            let x = Array4::from_elem((2, 1, 32, 32), 0.5f32);
            let pass = m.forward_train(&x);
            assert_eq!(pass.taps.len(), m.n_taps(), "{arch}");
            assert_eq!(pass.logits.len(), 2, "{arch}");
            for (tap, spec) in pass.taps.iter().zip(&m.taps) {
                assert_eq!(tap.dim().1, spec.feature_channels, "{arch} {}", spec.name);
            }
            let eval = m.forward_eval(&x);
            assert_eq!(eval.tap_pooled.len(), m.n_taps(), "{arch}");
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a: TappedModel<f32> = build_model("small_cnn_4", 32, 7).unwrap();
        let b: TappedModel<f32> = build_model("small_cnn_4", 32, 7).unwrap();
        assert_eq!(a.state(), b.state());
        let c: TappedModel<f32> = build_model("small_cnn_4", 32, 8).unwrap();
        assert_ne!(a.state(), c.state());
    }
}

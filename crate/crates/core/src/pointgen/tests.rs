use super::*;
use crate::autodiff::{Adam, ParamSet};
use crate::config::{Fusion, PosEmb};

fn toy_net(seed: u64) -> (PointGenNet, std::rc::Rc<std::cell::RefCell<ParamSet>>) {
    let cfg = PipelineConfig::toy();
    let set = ParamSet::shared();
    let b = ParamBuilder::new(&set, seed);
    (PointGenNet::new(&b, &cfg), set)
}

fn toy_cloud(n: usize, seed: u64) -> FrustumCloud {
    let cfg = PipelineConfig::toy();
    let mut rng = Rng::new(seed);
    let s = cfg.crop_size as f64;
    let mut f = FrustumCloud::default();
    for _ in 0..n {
        f.points.push([
            12.0 + rng.range(-1.5, 1.5),
            rng.range(-1.5, 1.5),
            rng.range(0.0, 1.5),
        ]);
        f.projections
            .push([rng.range(1.0, s - 1.0), rng.range(1.0, s - 1.0)]);
        f.rgb.push([rng.uniform(), rng.uniform(), rng.uniform()]);
    }
    f.fg_mask = Some(vec![true; n]);
    f
}

fn toy_features(seed: u64) -> Tensor {
    let cfg = PipelineConfig::toy();
    let mut rng = Rng::new(seed);
    let n = cfg.crop_size * cfg.crop_size * cfg.image_feat_dim;
    Tensor::from_vec(
        (0..n).map(|_| rng.range(-0.5, 0.5)).collect(),
        &[cfg.crop_size, cfg.crop_size, cfg.image_feat_dim],
    )
}


fn f2d_rows(n: usize, seed: u64) -> Tensor {
    let cfg = PipelineConfig::toy();
    let mut rng = Rng::new(seed);
    Tensor::from_vec(
        (0..n * cfg.image_feat_dim).map(|_| rng.range(-0.5, 0.5)).collect(),
        &[n, cfg.image_feat_dim],
    )
}

#[test]
fn sample_targets_counts() {
    let mut rng = Rng::new(1);
    // boundary: n' = m gives k = 0
    let probs = vec![1.0; 64 * 64];
    assert!(sample_targets(&probs, 64, 1024, 1024, &mut rng).is_empty());
    // k = m - n'
    let t = sample_targets(&probs, 64, 600, 1024, &mut rng);
    assert_eq!(t.len(), 424);
    // n' > m also empty
    assert!(sample_targets(&probs, 64, 2000, 1024, &mut rng).is_empty());
}

#[test]
fn sampled_pixels_satisfy_threshold_when_available() {
    let mut rng = Rng::new(2);
    let mut probs = vec![0.0; 16 * 16];
    let fg: Vec<usize> = (0..40).map(|i| i * 6 % 256).collect();
    for &i in &fg {
        probs[i] = 0.9;
    }
    let targets = sample_targets(&probs, 16, 10, 40, &mut rng);
    assert_eq!(targets.len(), 30);
    for t in &targets {
        let flat = t[1] as usize * 16 + t[0] as usize;
        assert!(probs[flat] >= 0.5, "pixel {t:?} below threshold");
    }
}

#[test]
fn sample_targets_fallbacks() {
    let mut rng = Rng::new(3);
    // fewer qualifying than k: sample with replacement from them
    let mut probs = vec![0.0; 16];
    probs[5] = 0.8;
    probs[9] = 0.7;
    let t = sample_targets(&probs, 4, 0, 10, &mut rng);
    assert_eq!(t.len(), 10);
    for p in &t {
        let flat = p[1] as usize * 4 + p[0] as usize;
        assert!(flat == 5 || flat == 9);
    }
    // none qualify: top-k most-foreground pixels
    let probs2: Vec<f64> = (0..16).map(|i| 0.4 - i as f64 * 0.01).collect();
    let t2 = sample_targets(&probs2, 4, 0, 3, &mut rng);
    let flats: Vec<usize> = t2.iter().map(|p| p[1] as usize * 4 + p[0] as usize).collect();
    assert_eq!(flats, vec![0, 1, 2]);
}

#[test]
fn sequence_with_zero_targets_is_all_known() {
    let (net, _) = toy_net(4);
    let cloud = toy_cloud(6, 4);
    let c = crate::segmentation::centroid_of(&cloud.points);
    let seq = build_sequence(&net, &cloud, &[], f2d_rows(6, 4), c);
    assert_eq!(seq.len(), 6);
    assert!(seq.known_mask.iter().all(|&k| k));
}

#[test]
fn unknown_rows_share_the_embedding() {
    let (net, _) = toy_net(5);
    let cloud = toy_cloud(3, 5);
    let c = crate::segmentation::centroid_of(&cloud.points);
    let seq = build_sequence(&net, &cloud, &[[2.0, 3.0], [7.0, 1.0]], f2d_rows(5, 5), c);
    let d = net.unknown.numel();
    let v = seq.f3d.to_vec();
    let row3 = &v[3 * d..4 * d];
    let row4 = &v[4 * d..5 * d];
    assert_eq!(row3, row4);
    assert_eq!(row3, net.unknown.to_vec().as_slice());
}

#[test]
fn sequence_construction_is_order_invariant() {
    let (net, _) = toy_net(6);
    let cloud = toy_cloud(5, 6);
    let c = crate::segmentation::centroid_of(&cloud.points);
    let f2d = f2d_rows(5, 6);
    let seq = build_sequence(&net, &cloud, &[], f2d.clone(), c);

    let perm = vec![3usize, 1, 4, 0, 2];
    let shuffled = cloud.select(&perm);
    let seq_p = build_sequence(&net, &shuffled, &[], f2d.gather_rows(&perm), c);

    let d = net.unknown.numel();
    let a = seq.f3d.to_vec();
    let b = seq_p.f3d.to_vec();
    for (new_row, &src) in perm.iter().enumerate() {
        assert_eq!(&b[new_row * d..(new_row + 1) * d], &a[src * d..(src + 1) * d]);
        assert_eq!(seq_p.c2d[new_row], seq.c2d[src]);
    }
}

#[test]
fn singleton_context_attends_with_weight_one() {
    let cfg = PipelineConfig::toy();
    let (net, _) = toy_net(7);
    let layer = &net.layers[0];
    let m = 2;
    let d = cfg.hidden_dim;
    let mut rng = Rng::new(7);
    let f3d = Tensor::from_vec((0..m * d).map(|_| rng.range(-1.0, 1.0)).collect(), &[m, d]);
    let pos = Tensor::from_vec(
        (0..m * net.pos.dim()).map(|_| rng.range(-1.0, 1.0)).collect(),
        &[m, net.pos.dim()],
    );
    let f2d = Tensor::from_vec(
        (0..m * cfg.image_feat_dim).map(|_| rng.range(-1.0, 1.0)).collect(),
        &[m, cfg.image_feat_dim],
    );
    let known = vec![true, false];
    let mut trace = AttentionTrace::default();
    let _ = layer.forward(&f3d, &pos, &f2d, &known, Some(&mut trace));

    let w = trace.weights.unwrap();
    let h = cfg.attn_heads;
    for head in 0..h {
        // target row (1) attends only the known column (0), weight exactly 1
        let base = head * m * m + m; // row 1
        assert_eq!(w[base], 1.0);
        assert_eq!(w[base + 1], 0.0);
    }
    // pre-residual context row of the target equals the known point's V row
    let ctx = trace.context.unwrap();
    let vals = trace.values.unwrap();
    for c in 0..d {
        assert_eq!(ctx[d + c], vals[c], "channel {c}");
    }
}

#[test]
fn identical_keys_split_attention_evenly() {
    let cfg = PipelineConfig::toy();
    let (net, _) = toy_net(8);
    let layer = &net.layers[0];
    let d = cfg.hidden_dim;
    let mut rng = Rng::new(8);
    let row_f3d: Vec<f64> = (0..d).map(|_| rng.range(-1.0, 1.0)).collect();
    let row_pos: Vec<f64> = (0..net.pos.dim()).map(|_| rng.range(-1.0, 1.0)).collect();
    let row_f2d: Vec<f64> = (0..cfg.image_feat_dim).map(|_| rng.range(-1.0, 1.0)).collect();
    // rows 0 and 1 identical (hence identical keys), row 2 is the target
    let mut f3d = row_f3d.clone();
    f3d.extend_from_slice(&row_f3d);
    f3d.extend((0..d).map(|_| rng.range(-1.0, 1.0)));
    let mut pos = row_pos.clone();
    pos.extend_from_slice(&row_pos);
    pos.extend((0..net.pos.dim()).map(|_| rng.range(-1.0, 1.0)));
    let mut f2d = row_f2d.clone();
    f2d.extend_from_slice(&row_f2d);
    f2d.extend((0..cfg.image_feat_dim).map(|_| rng.range(-1.0, 1.0)));

    let mut trace = AttentionTrace::default();
    let _ = layer.forward(
        &Tensor::from_vec(f3d, &[3, d]),
        &Tensor::from_vec(pos, &[3, net.pos.dim()]),
        &Tensor::from_vec(f2d, &[3, cfg.image_feat_dim]),
        &[true, true, false],
        Some(&mut trace),
    );
    let w = trace.weights.unwrap();
    for head in 0..cfg.attn_heads {
        let base = head * 9 + 6; // row 2
        assert!((w[base] - 0.5).abs() < 1e-12);
        assert!((w[base + 1] - 0.5).abs() < 1e-12);
        assert_eq!(w[base + 2], 0.0);
    }
}

#[test]
fn known_rows_invariant_to_unknown_content_and_count() {
    let cfg = PipelineConfig::toy();
    let (net, _) = toy_net(9);
    let cloud = toy_cloud(5, 9);
    let known_f2d = f2d_rows(5, 9);
    let c = crate::segmentation::centroid_of(&cloud.points);

    let run = |targets: &[[f64; 2]], tseed: u64| -> Vec<f64> {
        // target F_2d rows differ per call; known rows stay fixed
        let f2d = crate::autodiff::concat(
            &[known_f2d.clone(), f2d_rows(targets.len(), tseed)],
            0,
        )
        .unwrap();
        let seq = build_sequence(&net, &cloud, targets, f2d, c);
        let out = net.run_stack(&seq);
        out.to_vec()[..5 * cfg.hidden_dim].to_vec()
    };

    let base = run(&[[3.0, 3.0]], 100);
    let more = run(&[[3.0, 3.0], [9.0, 2.0], [1.0, 7.0]], 101);
    let moved = run(&[[11.0, 11.0]], 102);
    for (a, b) in base.iter().zip(&more) {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in base.iter().zip(&moved) {
        assert!((a - b).abs() < 1e-9);
    }

    // direct f3d perturbation of an unknown row
    let f2d6 = crate::autodiff::concat(&[known_f2d.clone(), f2d_rows(1, 103)], 0).unwrap();
    let seq = build_sequence(&net, &cloud, &[[3.0, 3.0]], f2d6, c);
    let out1 = net.layers[0]
        .forward(
            &seq.f3d,
            &net.pos.encode(&seq.c2d, cfg.crop_size),
            &seq.f2d,
            &seq.known_mask,
            None,
        )
        .to_vec();
    let mut bumped = seq.f3d.to_vec();
    let d = cfg.hidden_dim;
    for x in bumped[5 * d..6 * d].iter_mut() {
        *x += 0.731;
    }
    let out2 = net.layers[0]
        .forward(
            &Tensor::from_vec(bumped, &[6, d]),
            &net.pos.encode(&seq.c2d, cfg.crop_size),
            &seq.f2d,
            &seq.known_mask,
            None,
        )
        .to_vec();
    for i in 0..5 * d {
        assert!((out1[i] - out2[i]).abs() < 1e-9, "known row changed at {i}");
    }
}

#[test]
fn stack_is_permutation_equivariant() {
    let cfg = PipelineConfig::toy();
    let (net, _) = toy_net(10);
    let cloud = toy_cloud(4, 10);
    let c = crate::segmentation::centroid_of(&cloud.points);
    let targets = [[2.0, 5.0], [8.0, 8.0]];
    let seq = build_sequence(&net, &cloud, &targets, f2d_rows(6, 10), c);
    let out = net.run_stack(&seq).to_vec();

    // permute all six rows of the sequence by hand
    let perm = vec![5usize, 2, 0, 4, 1, 3];
    let d = cfg.hidden_dim;
    let f3d_v = seq.f3d.to_vec();
    let f2d_v = seq.f2d.to_vec();
    let ci = cfg.image_feat_dim;
    let mut f3d_p = Vec::new();
    let mut f2d_p = Vec::new();
    let mut c2d_p = Vec::new();
    let mut known_p = Vec::new();
    for &src in &perm {
        f3d_p.extend_from_slice(&f3d_v[src * d..(src + 1) * d]);
        f2d_p.extend_from_slice(&f2d_v[src * ci..(src + 1) * ci]);
        c2d_p.push(seq.c2d[src]);
        known_p.push(seq.known_mask[src]);
    }
    let seq_p = PointSequence {
        c2d: c2d_p,
        f2d: Tensor::from_vec(f2d_p, &[6, ci]),
        f3d: Tensor::from_vec(f3d_p, &[6, d]),
        known_mask: known_p,
    };
    let out_p = net.run_stack(&seq_p).to_vec();
    for (row, &src) in perm.iter().enumerate() {
        for ch in 0..d {
            let diff = (out_p[row * d + ch] - out[src * d + ch]).abs();
            assert!(diff < 1e-9, "row {row} ch {ch} diff {diff}");
        }
    }
}

#[test]
fn value_rows_have_zero_sensitivity_to_f2d() {
    let cfg = PipelineConfig::toy();
    let (net, _) = toy_net(11);
    let layer = &net.layers[0];
    let d = cfg.hidden_dim;
    let mut rng = Rng::new(11);
    let f3d = Tensor::from_vec((0..3 * d).map(|_| rng.range(-1.0, 1.0)).collect(), &[3, d]);
    let pos = Tensor::from_vec(
        (0..3 * net.pos.dim()).map(|_| rng.range(-1.0, 1.0)).collect(),
        &[3, net.pos.dim()],
    );
    let f2d_a = Tensor::from_vec(
        (0..3 * cfg.image_feat_dim).map(|_| rng.range(-1.0, 1.0)).collect(),
        &[3, cfg.image_feat_dim],
    );
    let f2d_b = Tensor::from_vec(
        (0..3 * cfg.image_feat_dim).map(|_| rng.range(-1.0, 1.0)).collect(),
        &[3, cfg.image_feat_dim],
    );
    let known = vec![true, true, false];
    let mut ta = AttentionTrace::default();
    let mut tb = AttentionTrace::default();
    let _ = layer.forward(&f3d, &pos, &f2d_a, &known, Some(&mut ta));
    let _ = layer.forward(&f3d, &pos, &f2d_b, &known, Some(&mut tb));
    assert_eq!(ta.values.unwrap(), tb.values.unwrap());
}

#[test]
fn zero_weight_decode_puts_targets_at_centroid() {
    let (mut net, _) = toy_net(12);
    for l in net.decode.iter_mut() {
        l.weight = Tensor::zeros(l.weight.shape());
        l.bias = Tensor::zeros(l.bias.shape());
    }
    let cloud = toy_cloud(4, 12);
    let feats = toy_features(12);
    let centroid = crate::segmentation::centroid_of(&cloud.points);
    let out = generate_points(&net, &cloud, &[[2.0, 2.0], [5.0, 5.0]], &feats);
    assert_eq!(out.len(), 2);
    for p in &out {
        for i in 0..3 {
            assert!((p[i] - centroid[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn decode_shape_and_empty_case() {
    let (net, _) = toy_net(13);
    let cloud = toy_cloud(4, 13);
    let feats = toy_features(13);
    assert!(generate_points(&net, &cloud, &[], &feats).is_empty());
    let out = generate_points(&net, &cloud, &[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], &feats);
    assert_eq!(out.len(), 3);
}

#[test]
fn mask_recover_zero_ratio_gives_constant_zero() {
    let (net, _) = toy_net(14);
    let cloud = toy_cloud(6, 14);
    let feats = f2d_rows(6, 14);
    let mut rng = Rng::new(0);
    let out = mask_and_recover_loss(&net, &cloud, &feats, &mut rng, Some(0.0), (0.1, 0.5))
        .unwrap()
        .unwrap();
    assert_eq!(out.loss.item(), 0.0);
    assert!(!out.loss.is_tracked());
    assert_eq!(out.n_masked, 0);
}

#[test]
fn mask_recover_skips_below_two_foreground() {
    let (net, _) = toy_net(15);
    let mut cloud = toy_cloud(5, 15);
    cloud.fg_mask = Some(vec![true, false, false, false, false]);
    let feats = f2d_rows(5, 15);
    let mut rng = Rng::new(0);
    assert!(mask_and_recover_loss(&net, &cloud, &feats, &mut rng, None, (0.1, 0.5))
        .unwrap()
        .is_none());
}

#[test]
fn mask_recover_keeps_one_context_point() {
    let (net, _) = toy_net(16);
    let cloud = toy_cloud(5, 16);
    let feats = f2d_rows(5, 16);
    let mut rng = Rng::new(0);
    // ratio 1.0 would mask everything; the clamp must leave one
    let out = mask_and_recover_loss(&net, &cloud, &feats, &mut rng, Some(1.0), (0.1, 0.5))
        .unwrap()
        .unwrap();
    assert_eq!(out.n_masked, 4);
}

#[test]
fn overfit_recovers_coincident_points() {
    // five points at one position; mask all but one; a few optimizer steps
    // drive the recovery error to ~0
    let cfg = PipelineConfig::toy();
    let set = ParamSet::shared();
    let b = ParamBuilder::new(&set, 17);
    let net = PointGenNet::new(&b, &cfg);

    let mut cloud = FrustumCloud::default();
    for _ in 0..5 {
        cloud.points.push([10.0, 1.0, 0.5]);
        cloud.projections.push([8.0, 8.0]);
        cloud.rgb.push([0.5, 0.5, 0.5]);
    }
    cloud.fg_mask = Some(vec![true; 5]);
    let feats = f2d_rows(5, 17);

    let mut adam = Adam::new();
    let mut last = f64::INFINITY;
    for step in 0..20 {
        set.borrow().zero_grads();
        let mut rng = Rng::new(100 + step);
        let out = mask_and_recover_loss(&net, &cloud, &feats, &mut rng, Some(0.9), (0.1, 0.5))
            .unwrap()
            .unwrap();
        out.loss.backward().unwrap();
        adam.step(&set.borrow(), 1e-3);
        last = out.loss.item();
    }
    assert!(last < 1e-3, "final loss {last}");
}

#[test]
fn fusion_variants_run() {
    for fusion in [Fusion::Concat, Fusion::Add, Fusion::Gating] {
        for pos_emb in [PosEmb::Mlp, PosEmb::Sinusoid, PosEmb::None] {
            for asymmetric in [true, false] {
                let mut cfg = PipelineConfig::toy();
                cfg.fusion = fusion;
                cfg.pos_emb = pos_emb;
                cfg.asymmetric = asymmetric;
                let set = ParamSet::shared();
                let b = ParamBuilder::new(&set, 21);
                let net = PointGenNet::new(&b, &cfg);
                let cloud = toy_cloud(4, 21);
                let feats = toy_features(21);
                let out = generate_points(&net, &cloud, &[[2.0, 2.0]], &feats);
                assert_eq!(out.len(), 1, "{fusion:?}/{pos_emb:?}/asym={asymmetric}");
                assert!(out[0].iter().all(|v| v.is_finite()));
            }
        }
    }
}

#[test]
fn gradcheck_suite_passes() {
    for r in gradcheck_suite(2024) {
        assert!(
            r.passed(),
            "{}: rel err {} >= {}",
            r.op,
            r.max_rel_err,
            r.tolerance
        );
    }
}

use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;
use signveil::attention::{
    attend_over_context, attention_weights, cross_frame_attention, self_attention,
    AttentionWeights, FrameFeatures,
};
use signveil::backbones::toys::{IdentityCodec, LossyCodec};
use signveil::backbones::AutoEncoder;
use signveil::face::{self, AffineTransform, FaceCrop, PixelBox};
use signveil::fusion::{
    adain, build_reference_frame, fidelity_encode, ofg_stage1, ofg_stage2_update, warp, FlowField,
    OcclusionMask, ReferenceFrame,
};
use signveil::scheduler::{add_noise, estimate_x0, make_schedule, ScheduleKind};
use signveil::{Grid, Space};

fn grid_strategy(space: Space, c: usize, h: usize, w: usize) -> impl Strategy<Value = Grid> {
    prop::collection::vec(-3.0f64..3.0, c * h * w).prop_map(move |v| {
        Grid::new(
            ndarray::Array3::from_shape_vec((c, h, w), v).unwrap(),
            space,
        )
    })
}

fn unit_grid(c: usize, h: usize, w: usize) -> impl Strategy<Value = Grid> {
    prop::collection::vec(0.0f64..1.0, c * h * w).prop_map(move |v| {
        Grid::new(
            ndarray::Array3::from_shape_vec((c, h, w), v).unwrap(),
            Space::Image,
        )
    })
}

fn binary_mask(h: usize, w: usize) -> impl Strategy<Value = OcclusionMask> {
    prop::collection::vec(prop::bool::ANY, h * w).prop_map(move |bits| {
        OcclusionMask::from_fn(h, w, |y, x| if bits[y * w + x] { 1.0 } else { 0.0 }).unwrap()
    })
}

fn soft_mask(h: usize, w: usize) -> impl Strategy<Value = OcclusionMask> {
    prop::collection::vec(0.0f64..=1.0, h * w)
        .prop_map(move |v| OcclusionMask::from_fn(h, w, |y, x| v[y * w + x]).unwrap())
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-scale..scale, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// Token count, model width, head width, then tokens and weights.
fn attention_case() -> impl Strategy<Value = (FrameFeatures, AttentionWeights)> {
    (1usize..=8, 1usize..=16, 1usize..=8).prop_flat_map(|(n, d_model, d)| {
        (
            matrix(n, d_model, 2.0),
            matrix(d_model, d, 1.0),
            matrix(d_model, d, 1.0),
            matrix(d_model, d, 1.0),
        )
            .prop_map(|(tokens, q, k, v)| {
                (
                    FrameFeatures::new(tokens, 0).unwrap(),
                    AttentionWeights::new(q, k, v).unwrap(),
                )
            })
    })
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn estimate_x0_inverts_add_noise(
        x0 in grid_strategy(Space::Latent, 2, 4, 4),
        eps in grid_strategy(Space::Latent, 2, 4, 4),
        steps in 1usize..=50,
        frac in 0.0f64..1.0,
        cosine in prop::bool::ANY,
    ) {
        let kind = if cosine { ScheduleKind::Cosine { s: 0.008 } } else { ScheduleKind::default() };
        let schedule = make_schedule(steps, kind).unwrap();
        let t = 1 + ((steps - 1) as f64 * frac) as usize;
        let x_t = add_noise(&x0, t, &eps, &schedule).unwrap();
        let back = estimate_x0(&x_t, &eps, t, &schedule).unwrap();
        prop_assert!(back.max_abs_diff(&x0).unwrap() < 1e-6);
    }

    #[test]
    fn duplicated_context_equals_self_attention((v, w) in attention_case()) {
        let cross = cross_frame_attention(&v, &v, &v, &w).unwrap();
        let own = self_attention(&v, &w).unwrap();
        prop_assert!(max_abs(&cross, &own) < 1e-6);
    }

    #[test]
    fn attention_rows_are_stochastic(q in matrix(5, 4, 5.0), k in matrix(7, 4, 5.0)) {
        let a = attention_weights(&q, &k);
        for row in a.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn permuting_context_rows_leaves_output_unchanged(
        (v, w) in attention_case(),
        shift in 0usize..8,
    ) {
        let ctx = concatenate(Axis(0), &[v.tokens().view(), v.tokens().map(|x| x * 0.5).view()]).unwrap();
        let n = ctx.nrows();
        let order: Vec<usize> = (0..n).map(|i| (i * 3 + shift) % n).collect();
        let mut seen = order.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() == n);
        let permuted = ctx.select(Axis(0), &order);
        let a = attend_over_context(&v, &ctx, &w).unwrap();
        let b = attend_over_context(&v, &permuted, &w).unwrap();
        prop_assert!(max_abs(&a, &b) < 1e-9);
    }

    #[test]
    fn stage1_binary_mask_is_per_pixel_select(
        own in grid_strategy(Space::Latent, 4, 8, 8),
        anchor in grid_strategy(Space::Latent, 4, 8, 8),
        mask in binary_mask(8, 8),
    ) {
        let out = ofg_stage1(&own, &anchor, &FlowField::zeros(8, 8), &mask).unwrap();
        for c in 0..4 { for y in 0..8 { for x in 0..8 {
            let expected = if mask.at(y, x) == 1.0 { own.get(c, y, x) } else { anchor.get(c, y, x) };
            prop_assert_eq!(out.get(c, y, x), expected);
        }}}
    }

    #[test]
    fn reference_frame_binary_masks_select_one_source(
        cur in unit_grid(3, 8, 8),
        prev in unit_grid(3, 8, 8),
        anc in unit_grid(3, 8, 8),
        mp in binary_mask(8, 8),
        ma in binary_mask(8, 8),
    ) {
        let z = FlowField::zeros(8, 8);
        let r = build_reference_frame(&cur, &prev, &anc, &z, &z, &mp, &ma).unwrap();
        for c in 0..3 { for y in 0..8 { for x in 0..8 {
            let expected = match (ma.at(y, x) == 1.0, mp.at(y, x) == 1.0) {
                (false, _) => anc.get(c, y, x),
                (true, false) => prev.get(c, y, x),
                (true, true) => cur.get(c, y, x),
            };
            prop_assert_eq!(r.image().get(c, y, x), expected);
        }}}
        for y in 0..8 { for x in 0..8 {
            prop_assert_eq!(r.combined_mask().at(y, x), ma.at(y, x).min(mp.at(y, x)));
        }}
    }

    #[test]
    fn soft_blends_are_convex(
        own in grid_strategy(Space::Latent, 2, 8, 8),
        anchor in grid_strategy(Space::Latent, 2, 8, 8),
        mask in soft_mask(8, 8),
    ) {
        let out = ofg_stage1(&own, &anchor, &FlowField::zeros(8, 8), &mask).unwrap();
        for c in 0..2 { for y in 0..8 { for x in 0..8 {
            let (a, b) = (own.get(c, y, x), anchor.get(c, y, x));
            let v = out.get(c, y, x);
            prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
        }}}
    }

    #[test]
    fn stage2_mask_extremes(
        x_next in grid_strategy(Space::Latent, 3, 8, 8),
        img in unit_grid(3, 8, 8),
        t in 1usize..=10,
        seed in any::<u64>(),
    ) {
        let schedule = make_schedule(10, ScheduleKind::default()).unwrap();
        let keep = ReferenceFrame::new(img.clone(), OcclusionMask::filled(8, 8, 1.0).unwrap()).unwrap();
        let out = ofg_stage2_update(&x_next, &keep, t, &schedule, &IdentityCodec, 2, seed).unwrap();
        prop_assert_eq!(out, x_next.clone());

        let take = ReferenceFrame::new(img.clone(), OcclusionMask::clear(8, 8)).unwrap();
        let a = ofg_stage2_update(&x_next, &take, t, &schedule, &IdentityCodec, 2, seed).unwrap();
        let b = ofg_stage2_update(&x_next.map(|v| v + 1.0), &take, t, &schedule, &IdentityCodec, 2, seed).unwrap();
        // with nothing kept, the result ignores x_next entirely
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_flow_warp_is_identity(g in grid_strategy(Space::Image, 3, 6, 9)) {
        prop_assert_eq!(warp(&g, &FlowField::zeros(6, 9)).unwrap(), g);
    }

    #[test]
    fn adain_matches_style_moments(
        x in grid_strategy(Space::Latent, 3, 6, 6),
        style in grid_strategy(Space::Latent, 3, 5, 7),
    ) {
        let out = adain(&x, &style).unwrap();
        let got = out.channel_stats();
        let (xs, ss) = (x.channel_stats(), style.channel_stats());
        for c in 0..3 {
            prop_assume!(xs[c].1 > 1e-3);
            prop_assert!((got[c].0 - ss[c].0).abs() < 1e-5);
            prop_assert!((got[c].1 - ss[c].1).abs() < 1e-5);
        }
    }

    #[test]
    fn fidelity_encoding_never_decodes_worse(img in unit_grid(3, 8, 8), k in 0usize..4) {
        let codec = LossyCodec::default();
        let plain = codec.decode(&codec.encode(&img).unwrap()).unwrap().mse(&img).unwrap();
        let z = fidelity_encode(&img, &codec, k).unwrap();
        prop_assert!(codec.decode(&z).unwrap().mse(&img).unwrap() <= plain);
    }

    #[test]
    fn crop_transform_round_trips_corners(
        x in 0usize..40, y in 0usize..40, side in 4usize..24, crop in 8usize..64,
    ) {
        let frame = Grid::filled(Space::Image, 3, 64, 64, 0.5);
        let cfg = face::FaceConfig { crop_size: crop, ..Default::default() };
        let bbox = PixelBox::new(x, y, side, side);
        prop_assume!(bbox.fits_in(64, 64));
        let c: FaceCrop = face::crop_face(&frame, bbox, &cfg).unwrap();
        let t: AffineTransform = c.align_transform;
        let inv = t.inverse().unwrap();
        let n = crop as f64;
        for (u, v) in [(0.0, 0.0), (n, 0.0), (0.0, n), (n, n)] {
            let (fx, fy) = t.apply(u, v);
            let (u2, v2) = inv.apply(fx, fy);
            prop_assert!((u - u2).abs() < 0.5 && (v - v2).abs() < 0.5);
        }
        let (fx, fy) = t.apply(n, n);
        prop_assert!((fx - (bbox.x + bbox.w) as f64).abs() < 0.5);
        prop_assert!((fy - (bbox.y + bbox.h) as f64).abs() < 0.5);
    }
}

#[test]
fn suppressed_anchor_keys_leave_previous_only_attention() {
    // keys are the raw token (w_k = I); a large negative first coordinate on
    // the anchor tokens drives their logits toward -inf for a positive query
    let eye = Array2::eye(2);
    let w = AttentionWeights::new(eye.clone(), eye.clone(), eye).unwrap();
    let v = FrameFeatures::new(ndarray::array![[1.0, 0.2], [0.5, -0.3]], 0).unwrap();
    let anchor = FrameFeatures::new(ndarray::array![[-1e4, 0.0], [-2e4, 1.0]], 1).unwrap();
    let prev = FrameFeatures::new(ndarray::array![[0.3, 0.4], [0.9, -0.7]], 2).unwrap();
    let out = cross_frame_attention(&v, &anchor, &prev, &w).unwrap();

    // masked-softmax oracle over the previous tokens only
    let scale = 1.0 / 2f64.sqrt();
    for (i, q) in v.tokens().rows().into_iter().enumerate() {
        let logits: Vec<f64> = prev
            .tokens()
            .rows()
            .into_iter()
            .map(|k| q.dot(&k) * scale)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for d in 0..2 {
            let expected: f64 = (0..2).map(|j| e[j] / s * prev.tokens()[[j, d]]).sum();
            assert!((out[[i, d]] - expected).abs() < 1e-9);
        }
    }
}

#[test]
fn stage1_checkerboard_matches_oracle() {
    let own = Grid::from_fn(Space::Latent, (2, 8, 8), |(c, y, x)| {
        (c * 64 + y * 8 + x) as f64
    });
    let anchor = own.map(|v| -v - 1.0);
    let mask = OcclusionMask::from_fn(8, 8, |y, x| ((x + y) % 2) as f64).unwrap();
    let out = ofg_stage1(&own, &anchor, &FlowField::zeros(8, 8), &mask).unwrap();
    for c in 0..2 {
        for y in 0..8 {
            for x in 0..8 {
                let src = if (x + y) % 2 == 1 { &own } else { &anchor };
                assert_eq!(out.get(c, y, x), src.get(c, y, x));
            }
        }
    }
}

#[test]
fn stage2_half_mask_splits_rows() {
    let schedule = make_schedule(10, ScheduleKind::default()).unwrap();
    let x_next = Grid::filled(Space::Latent, 3, 8, 8, 5.0);
    let img = Grid::from_fn(Space::Image, (3, 8, 8), |(c, y, x)| {
        (c + y + x) as f64 / 20.0
    });
    let take_all = ReferenceFrame::new(img.clone(), OcclusionMask::clear(8, 8)).unwrap();
    let renoised =
        ofg_stage2_update(&x_next, &take_all, 4, &schedule, &IdentityCodec, 2, 9).unwrap();
    let half = OcclusionMask::from_fn(8, 8, |y, _| if y < 4 { 1.0 } else { 0.0 }).unwrap();
    let split = ReferenceFrame::new(img, half).unwrap();
    let out = ofg_stage2_update(&x_next, &split, 4, &schedule, &IdentityCodec, 2, 9).unwrap();
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                let expected = if y < 4 { 5.0 } else { renoised.get(c, y, x) };
                assert_eq!(out.get(c, y, x), expected);
            }
        }
    }
}

use cdiff_core::cdiff::{reverse_step, ReverseNoise};
use cdiff_core::data::{pixel_to_unit, unit_to_pixel};
use cdiff_core::eval::{mse, psnr, psnr_from_mse};
use cdiff_core::link::{
    bits_to_bytes, bytes_to_bits, gray_decode, gray_encode, repetition_decode, repetition_encode, ConstellationSpec,
};
use cdiff_core::nn::{AdamConfig, DenoiserModel, OptimizerState, Tensor, UNetConfig};
use cdiff_core::schedule::{LambdaShape, ScheduleTable};
use proptest::prelude::*;

proptest! {
    #[test]
    fn pixel_codec_is_a_bijection(p in any::<u8>()) {
        let v = pixel_to_unit(p);
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert_eq!(unit_to_pixel(v), p);
    }

    #[test]
    fn unit_to_pixel_saturates(v in -10.0f64..10.0) {
        let p = unit_to_pixel(v);
        if v <= -1.0 { prop_assert_eq!(p, 0); }
        if v >= 1.0 { prop_assert_eq!(p, 255); }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit(v in 0usize..(1 << 20)) {
        prop_assert_eq!(gray_decode(gray_encode(v)), v);
        prop_assert_eq!((gray_encode(v) ^ gray_encode(v + 1)).count_ones(), 1);
    }

    #[test]
    fn bytes_bits_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let bits = bytes_to_bits(&bytes);
        prop_assert_eq!(bits.len(), 8 * bytes.len());
        prop_assert_eq!(bits_to_bytes(&bits), bytes);
    }

    #[test]
    fn repetition_corrects_minority_flips(
        bits in proptest::collection::vec(0u8..2, 1..64),
        flip in any::<u64>(),
    ) {
        let r = 3;
        let mut coded = repetition_encode(&bits, r).unwrap();
        // one flip per block never changes the majority
        for (i, block) in coded.chunks_mut(r).enumerate() {
            block[((flip >> (i % 64)) as usize) % r] ^= 1;
        }
        prop_assert_eq!(repetition_decode(&coded, r).unwrap(), bits);
    }

    #[test]
    fn modulation_is_invertible(order_log in 1u32..4, seed in any::<u64>()) {
        let spec = ConstellationSpec::new(1 << (2 * order_log)).unwrap();
        let k = spec.bits_per_symbol();
        let bits: Vec<u8> = (0..16 * k).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let s = spec.modulate(&bits).unwrap();
        let mut back = Vec::new();
        for i in 0..s.len() {
            spec.label_bits(spec.nearest(s.get(i)), &mut back);
        }
        prop_assert_eq!(back, bits);
        let energy = spec.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / spec.order() as f64;
        prop_assert!((energy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_and_mse_are_dual(a in proptest::collection::vec(0.0f64..1.0, 16), b in proptest::collection::vec(0.0f64..1.0, 16)) {
        let m = mse(&a, &b).unwrap();
        let p = psnr(&a, &b).unwrap();
        if m == 0.0 {
            prop_assert!(p.is_infinite());
        } else {
            prop_assert!((p - psnr_from_mse(m)).abs() < 1e-10);
            prop_assert!((10f64.powf(-p / 10.0) - m).abs() < 1e-10 * m.max(1.0));
        }
    }

    #[test]
    fn schedule_invariants(steps in 2usize..300, b0 in 1e-4f64..0.2, span in 1e-4f64..0.5) {
        let b1 = (b0 + span).min(0.95);
        let zero = ScheduleTable::build(steps, b0, b1, LambdaShape::Zero).unwrap();
        for t in 1..=steps {
            prop_assert!((zero.delta(t) - (1.0 - zero.alpha_bar(t))).abs() < 1e-12);
            prop_assert!((zero.delta_cond(t) - zero.beta(t)).abs() < 1e-12);
        }
        // the linear-λ schedule is only feasible for some β ranges
        if let Ok(tbl) = ScheduleTable::build(steps, b0, b1, LambdaShape::Linear) {
            prop_assert_eq!(tbl.lambda(steps), 1.0);
            let mut prev = 1.0;
            for t in 1..=steps {
                prop_assert!(tbl.alpha_bar(t) < prev);
                prev = tbl.alpha_bar(t);
                prop_assert!(tbl.delta(t) > 0.0);
                prop_assert!(tbl.delta_cond(t) > 0.0);
                prop_assert!(tbl.reverse_coeffs(t).unwrap().x.is_finite());
            }
        }
    }

    #[test]
    fn reverse_step_matches_its_coefficients(
        t in 1usize..=10,
        v in proptest::collection::vec(-1.0f64..1.0, 4 * 8),
    ) {
        let tbl = ScheduleTable::build(10, 0.02, 0.2, LambdaShape::Linear).unwrap();
        let (x, rest) = v.split_at(8);
        let (xh, rest) = rest.split_at(8);
        let (e, z) = rest.split_at(8);
        let c = tbl.reverse_coeffs(t).unwrap();
        for noise in [ReverseNoise::Marginal, ReverseNoise::Posterior] {
            let out = reverse_step(&tbl, t, x, xh, e, Some(z), noise).unwrap();
            let s = if t == 1 { 0.0 } else { noise.std(&tbl, t) };
            for i in 0..8 {
                let want = c.x * x[i] + c.xhat * xh[i] - c.eps * e[i] + s * z[i];
                prop_assert!((out[i] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn ema_tracks_the_weights() {
    let cfg = UNetConfig {
        widths: vec![4, 8],
        time_dim: 8,
        steps: 10,
        zero_init_output: false,
    };
    let mut model = DenoiserModel::new(cfg, 1).unwrap();
    let d = 0.9;
    let mut opt = OptimizerState::new(&model, AdamConfig::default(), d);
    let ones: Vec<Option<Tensor>> = model
        .params()
        .tensors()
        .iter()
        .map(|p| Some(Tensor::new(p.shape().to_vec(), vec![1.0; p.numel()]).unwrap()))
        .collect();
    let mut expect: Vec<Vec<f64>> = model.params().tensors().iter().map(|p| p.data().to_vec()).collect();
    for _ in 0..5 {
        opt.adam_step(&mut model, &ones).unwrap();
        for (e, w) in expect.iter_mut().zip(model.params().tensors()) {
            for (s, &wj) in e.iter_mut().zip(w.data()) {
                *s = d * *s + (1.0 - d) * wj;
            }
        }
    }
    for (e, s) in expect.iter().zip(opt.shadow().tensors()) {
        for (a, b) in e.iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // constant unit gradient: Adam moves every weight by exactly lr per step
    let first = DenoiserModel::new(model.config().clone(), 1).unwrap();
    let moved = first.params().get(0).data()[0] - model.params().get(0).data()[0];
    assert!((moved - 5e-3).abs() < 1e-9, "{moved}");
}

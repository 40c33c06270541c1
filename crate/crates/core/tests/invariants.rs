use approx::assert_relative_eq;
use proptest::prelude::*;
use tnshield_core::analysis::{image_to_rcw, nmi, rcw_to_image};
use tnshield_core::formats::{ht_decompose, tt_svd, tucker_decompose};
use tnshield_core::quantize::{
    dequantize, quantize_network, quantize_uniform, Codebook, QuantizerPlan,
};
use tnshield_core::svd::{merge_bins, svd};
use tnshield_core::{tnz, DenseTensor, Matrix, RankPolicy, RobustBinConfig, TensorNetwork};

fn tensor(max_order: usize) -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(2usize..5, 2..=max_order).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0f64..10.0, n)
            .prop_map(move |data| DenseTensor::new(shape.clone(), data).unwrap())
    })
}

fn rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    num.sqrt() / a.frobenius_norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequential_formats_meet_tolerance(t in tensor(4), eps in 0.01f64..0.6) {
        prop_assume!(t.frobenius_norm() > 1e-6);
        let policy = RankPolicy::tolerance(eps);
        let tt = TensorNetwork::Tt(tt_svd(&t, &policy, None).unwrap());
        let tk = TensorNetwork::Tucker(tucker_decompose(&t, &policy).unwrap());
        let ht = TensorNetwork::Ht(ht_decompose(&t, &policy).unwrap());
        for net in [tt, tk, ht] {
            let e = rel_err(&t, &net.reconstruct().unwrap());
            prop_assert!(e <= eps * (1.0 + 1e-9) + 1e-12, "{:?}: {} > {}", net.format(), e, eps);
        }
    }

    #[test]
    fn storage_count_matches_blocks(t in tensor(4), eps in 0.0f64..0.5) {
        let net = TensorNetwork::Ht(ht_decompose(&t, &RankPolicy::tolerance(eps)).unwrap());
        let subs = net.subtensors();
        let shapes = net.layout().subtensor_shapes().unwrap();
        prop_assert_eq!(subs.len(), shapes.len());
        for (s, shape) in subs.iter().zip(&shapes) {
            prop_assert_eq!(s.len(), shape.iter().product::<usize>());
        }
        prop_assert_eq!(net.storage_count(), subs.iter().map(|s| s.len()).sum::<usize>());
        prop_assert_eq!(net.layout().storage_count(), net.storage_count());
    }

    #[test]
    fn tnz_roundtrip_is_lossless(t in tensor(4), eps in 0.0f64..0.5) {
        let policy = RankPolicy::tolerance(eps);
        for net in [
            TensorNetwork::Tt(tt_svd(&t, &policy, None).unwrap()),
            TensorNetwork::Tucker(tucker_decompose(&t, &policy).unwrap()),
            TensorNetwork::Ht(ht_decompose(&t, &policy).unwrap()),
        ] {
            let q = quantize_network(&net, &QuantizerPlan::default()).unwrap();
            let bytes = tnz::encode(&q);
            prop_assert_eq!(bytes.len(), tnz::encoded_len(&q));
            let back = tnz::decode(&bytes).unwrap();
            prop_assert_eq!(&back, &q);
            prop_assert_eq!(tnz::encode(&back), bytes);
            prop_assert_eq!(q.code_count(), net.storage_count());
        }
    }

    #[test]
    fn uniform_codes_within_half_step(x in prop::collection::vec(-1e3f64..1e3, 1..300)) {
        let q = quantize_uniform(&x).unwrap();
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let half = (hi - lo) / 255.0 / 2.0;
        let uniform = matches!(q.codebook, Codebook::Uniform { .. });
        prop_assert!(uniform);
        for (v, d) in x.iter().zip(dequantize(&q)) {
            prop_assert!((v - d).abs() <= half * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn nmi_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 2..200),
        b in prop::collection::vec(-5.0f64..5.0, 2..200),
        bins in 2usize..64,
    ) {
        let ab = nmi(&a, &b, bins).unwrap();
        let ba = nmi(&b, &a, bins).unwrap();
        prop_assert_eq!(ab.value, ba.value);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab.value));
        let aa = nmi(&a, &a, bins).unwrap();
        prop_assert!(aa.degenerate || (aa.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn robust_merge_conserves_spectrum_mass(
        data in prop::collection::vec(-3.0f64..3.0, 48),
        beta in 0.005f64..2.0,
    ) {
        let m = Matrix::new(6, 8, data).unwrap();
        let plain = svd(&m).unwrap();
        let merged = merge_bins(&plain, &RobustBinConfig::with_beta(beta));
        let total: f64 = plain.s.iter().sum();
        let kept: f64 = merged.factors.s.iter().sum();
        assert_relative_eq!(kept, total, max_relative = 1e-12);
        prop_assert!(merged.factors.s.windows(2).all(|w| w[0] >= w[1]));
        // output is sorted by mass; by position the bins tile the index range
        let mut bins = merged.bins.clone();
        bins.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in &bins {
            prop_assert_eq!(r.start, next);
            next = r.end;
        }
        prop_assert_eq!(next, plain.s.len());
    }

    #[test]
    fn rcw_layout_is_invertible(t in tensor(3)) {
        prop_assume!(t.order() == 3);
        let back = rcw_to_image(&image_to_rcw(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }
}

use ndarray::Array2;
use proptest::prelude::*;

use cosmovae::container::Container;
use cosmovae::engine::{pair_masks, psnr, split_validation};
use cosmovae::grf::PowerSpectrum;
use cosmovae::inpaint::composite;
use cosmovae::losses::{dilate_mask, kl_loss, Connectivity};
use cosmovae::sphere_data::{denormalize, normalize, NormMode, NormSource, NormalizationRecord};
use cosmovae::vae::LatentDistribution;

fn image(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-10.0..10.0f64, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(prop::bool::weighted(0.3), h * w)
        .prop_map(move |v| Array2::from_shape_vec((h, w), v.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
}

proptest! {
    #[test]
    fn normalization_round_trips(values in prop::collection::vec(-1e3..1e3f64, 2..64), zscore in any::<bool>()) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let mode = if zscore { NormMode::ZScore } else { NormMode::MinMax };
        let rec = NormalizationRecord::fit(mode, NormSource::PerPatch, values.iter().copied()).unwrap();
        let back = denormalize(&normalize(&values, &rec).unwrap(), &rec).unwrap();
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn composite_keeps_valid_pixels_and_fills_holes((x, m, y) in (image(8, 8), mask(8, 8), image(8, 8))) {
        let c = composite(&x, &m, &y);
        for idx in ndarray::indices((8, 8)) {
            let want = if m[idx] == 1.0 { y[idx] } else { x[idx] };
            prop_assert_eq!(c[idx].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn kl_is_non_negative(
        terms in prop::collection::vec((-5.0..5.0f64, -20.0..20.0f64, 1e-6..1e3f64), 1..16)
    ) {
        let dist = LatentDistribution {
            mu: terms.iter().map(|t| t.0).collect(),
            log_var: terms.iter().map(|t| t.1).collect(),
        };
        let prior: Vec<f64> = terms.iter().map(|t| t.2).collect();
        prop_assert!(kl_loss(&dist, &prior).unwrap() >= -1e-12);
    }

    #[test]
    fn kl_vanishes_when_posterior_equals_prior(log_var in prop::collection::vec(-10.0..10.0f64, 1..16)) {
        let prior: Vec<f64> = log_var.iter().map(|v| v.exp()).collect();
        let dist = LatentDistribution { mu: vec![0.0; log_var.len()], log_var };
        prop_assert!(kl_loss(&dist, &prior).unwrap().abs() < 1e-9);
    }

    #[test]
    fn dilation_contains_mask_and_four_is_inside_eight(m in mask(10, 12)) {
        let four = dilate_mask(&m, Connectivity::Four);
        let eight = dilate_mask(&m, Connectivity::Eight);
        for idx in ndarray::indices((10, 12)) {
            prop_assert!(m[idx] == 0.0 || four[idx]);
            prop_assert!(!four[idx] || eight[idx]);
        }
    }

    #[test]
    fn mask_pairing_is_a_seeded_permutation(n in 1usize..64, pool_len in 1usize..8, seed in any::<u64>(), epoch in 0u64..4) {
        let pool = vec![Array2::from_elem((2, 2), 1.0); pool_len];
        let a = pair_masks(n, &pool, seed, epoch).unwrap();
        prop_assert_eq!(&a, &pair_masks(n, &pool, seed, epoch).unwrap());
        let mut seen: Vec<usize> = a.iter().map(|p| p.0).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert!(a.iter().all(|p| p.1 < pool_len));
    }

    #[test]
    fn validation_split_partitions_indices(n in 1usize..200, fraction in 0.0..0.9f64, seed in any::<u64>()) {
        let (train, val) = split_validation(n, fraction, 3, seed);
        prop_assert!(!train.is_empty());
        let mut all: Vec<usize> = train.iter().copied().chain(val.iter().map(|v| v.0)).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn psnr_inverts_mse(mse in 1e-8..1e2f64, peak in 0.1..10.0f64) {
        let p = psnr(mse, peak);
        prop_assert!((peak * peak / 10f64.powf(p / 10.0) - mse).abs() <= 1e-9 * mse);
    }

    #[test]
    fn spectrum_text_round_trips(values in prop::collection::vec(0.0..1e6f64, 1..40)) {
        let s = PowerSpectrum::new(values).unwrap();
        prop_assert_eq!(PowerSpectrum::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn container_bytes_round_trip(data in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..32)) {
        let mut c = Container::default();
        c.insert("a", vec![data.len()], data.clone());
        c.metadata.insert("k".into(), "v".into());
        prop_assert_eq!(Container::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
    }
}

use proptest::prelude::*;
use strainlab::*;

fn field(na: usize, nl: usize, vals: &[f64]) -> DisplacementField {
    DisplacementField::from_fn(na, nl, |i, j| (vals[(j * na + i) % vals.len()], 0.0))
}

fn close(a: &StrainMap, b: &StrainMap, tol: f64) -> bool {
    a.valid() == b.valid()
        && a.strain()
            .as_slice()
            .iter()
            .zip(b.strain().as_slice())
            .all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lsqse_recovers_affine_slope(
        na in 7usize..60,
        nl in 1usize..5,
        half in 1usize..4,
        slope in -0.05f64..0.05,
        offset in -20.0f64..20.0,
    ) {
        let cfg = LsqseConfig { kernel_samples: 2 * half + 1 };
        let u = DisplacementField::from_fn(na, nl, |i, _| (offset + slope * i as f64, 0.0));
        let s = lsqse_axial(&u, &cfg, 0.02).unwrap();
        for i in half..na - half {
            for j in 0..nl {
                prop_assert!((s.strain().get(i, j) + slope).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lsqse_is_linear(
        na in 9usize..40,
        a in prop::collection::vec(-3.0f64..3.0, 1..64),
        b in prop::collection::vec(-3.0f64..3.0, 1..64),
    ) {
        let cfg = LsqseConfig { kernel_samples: 7 };
        let (ua, ub) = (field(na, 3, &a), field(na, 3, &b));
        let sum = DisplacementField::from_fn(na, 3, |i, j| (ua.axial.get(i, j) + ub.axial.get(i, j), 0.0));
        let (sa, sb) = (lsqse_axial(&ua, &cfg, 1.0).unwrap(), lsqse_axial(&ub, &cfg, 1.0).unwrap());
        let combined = StrainMap::new(
            Grid2::from_fn(na, 3, |i, j| sa.strain().get(i, j) + sb.strain().get(i, j)),
            sa.valid().clone(),
        )
        .unwrap();
        prop_assert!(close(&lsqse_axial(&sum, &cfg, 1.0).unwrap(), &combined, 1e-12));
    }

    #[test]
    fn gradient_strain_negates_centred_difference(
        na in 3usize..40,
        vals in prop::collection::vec(-5.0f64..5.0, 1..64),
    ) {
        let u = field(na, 2, &vals);
        let s = gradient_strain(&u).unwrap();
        for i in 1..na - 1 {
            let want = -(u.axial.get(i + 1, 1) - u.axial.get(i - 1, 1)) / 2.0;
            prop_assert_eq!(s.strain().get(i, 1), want);
        }
    }

    #[test]
    fn rf_frames_round_trip_bit_exact(
        na in 2usize..20,
        nl in 2usize..6,
        vals in prop::collection::vec(-1e6f32..1e6, 1..120),
    ) {
        let g = Grid2::from_fn(na, nl, |i, j| vals[(j * na + i) % vals.len()]);
        let frame = RfFrame::new(g, 40e6, 7e6, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f");
        write_frame(&path, &frame).unwrap();
        let back = read_frame(&path).unwrap();
        prop_assert_eq!(back.samples(), frame.samples());
        prop_assert_eq!(back.axial_spacing_mm(), frame.axial_spacing_mm());
    }
}

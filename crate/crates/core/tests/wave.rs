use proptest::prelude::*;
use stochmor::linalg::{eigenvalues, spectral_abscissa};
use stochmor::wave::*;
use stochmor::NoiseKind;

#[test]
fn damping_two_puts_every_pole_on_minus_one() {
    let m = build_wave_model(&WaveConfig::preset(Preset::Mult, 40)).unwrap();
    for z in eigenvalues(&m.a).unwrap() {
        assert!((z.re + 1.0).abs() < 1e-6, "{z}");
    }
}

#[test]
fn block_eigenvalues_match_closed_form() {
    let m = build_wave_model(&WaveConfig::preset(Preset::Add, 6)).unwrap();
    let alpha: f64 = 0.1;
    for l in 1..=3 {
        let i = 2 * (l - 1);
        let block = m.a.view((i, i), (2, 2)).into_owned();
        let disc = alpha * alpha - 4.0 * (l * l) as f64;
        let im = (-disc).sqrt() / 2.0;
        for z in eigenvalues(&block).unwrap() {
            assert!((z.re + alpha / 2.0).abs() < 1e-12 && (z.im.abs() - im).abs() < 1e-12);
        }
    }
}

#[test]
fn sparsity_pattern() {
    for preset in [Preset::Mult, Preset::Add] {
        let m = build_wave_model(&WaveConfig::preset(preset, 30)).unwrap();
        // 1-based odd rows are 0-based even rows.
        for i in (0..30).step_by(2) {
            assert!(m.b1.row(i).iter().all(|&v| v == 0.0));
            if let Some(b2) = &m.b2 {
                assert!(b2.row(i).iter().all(|&v| v == 0.0));
            }
        }
        for n in m.noise_matrices() {
            for ((i, j), &v) in n.iter().enumerate().map(|(idx, v)| ((idx % 30, idx / 30), v)) {
                if v != 0.0 {
                    assert!(i % 2 == 1 && j % 2 == 0, "nonzero at ({i}, {j})");
                }
            }
        }
    }
}

#[test]
fn doubling_preserves_leading_coefficients() {
    for preset in [Preset::Mult, Preset::Add] {
        for output in [OutputKind::Position, OutputKind::Velocity] {
            let small = build_wave_model(&WaveConfig::preset(preset, 20).with_output(output)).unwrap();
            let large = build_wave_model(&WaveConfig::preset(preset, 40).with_output(output)).unwrap();
            assert_eq!(small.b1, large.b1.rows(0, 20).into_owned());
            assert_eq!(small.c, large.c.columns(0, 20).into_owned());
            if let (Some(s), Some(l)) = (&small.b2, &large.b2) {
                assert_eq!(*s, l.rows(0, 20).into_owned());
            }
        }
    }
}

#[test]
fn preset_kinds_and_shapes() {
    let add = build_wave_model(&WaveConfig::preset(Preset::Add, 1000)).unwrap();
    assert_eq!(add.kind, NoiseKind::Additive);
    assert_eq!(add.b2.as_ref().unwrap().shape(), (1000, 2));
    let mult = build_wave_model(&WaveConfig::preset(Preset::Mult, 100)).unwrap();
    assert_eq!(mult.kind, NoiseKind::Multiplicative);
    assert_eq!(mult.noise_matrices().len(), 2);
    assert_eq!(Preset::parse("add").unwrap(), Preset::Add);
    assert!(Preset::parse("heat").is_err());
    assert!(WaveConfig::preset(Preset::Add, 7).validate().is_err());
    assert!(WaveConfig::preset(Preset::Add, 8).with_epsilon(2.0).validate().is_err());
}

#[test]
fn gaussian_weighted_coefficient_converges() {
    let g = FunctionSpec::Gaussian { center: std::f64::consts::FRAC_PI_2, rate: 1.0 };
    let a = galerkin_coefficient(&FunctionSpec::Sin { freq: 1.0 }, 1, Some(&g)).unwrap();
    let gram = weighted_sine_gram(&g, 3).unwrap();
    assert!((a - gram[(0, 0)]).abs() < 1e-12);
    assert!((gram[(0, 1)] - gram[(1, 0)]).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positive_damping_is_hurwitz(alpha in 0.01f64..5.0, half in 1usize..20) {
        let mut cfg = WaveConfig::preset(Preset::Add, 2 * half);
        cfg.alpha = alpha;
        let m = build_wave_model(&cfg).unwrap();
        prop_assert!(spectral_abscissa(&m.a).unwrap() < 0.0);
    }
}

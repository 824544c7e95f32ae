use std::fs;

use dinr::fft::fft2;
use dinr::metrics::{error_maps, mse, power_spectrum_2d, psnr, ssim, write_grid_pgm};
use dinr::signal::{
    add_noise, dataset_to_grid, grid_to_dataset, load_raw_grid, make_coord_grid, normalize, subsample, synth_signal, write_raw_grid,
    Component, GridSignal, NormalizeMode, Provenance, ScalarType, SynthKind, SynthSpec,
};
use dinr::{Error, Tensor};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn grid(dims: &[usize], v: Vec<f64>) -> GridSignal {
    GridSignal::from_values(dims, v, Some((-1.0, 1.0)), Provenance::Derived("test".into())).unwrap()
}

fn random_grid(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut g = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..rows * cols).map(|_| g.random_range(-1.0..1.0)).collect()
}

fn direct_dft(v: &[f64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for u in 0..rows {
        for w in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..rows {
                for c in 0..cols {
                    let ang = -2.0 * std::f64::consts::PI * ((u * r) as f64 / rows as f64 + (w * c) as f64 / cols as f64);
                    acc += v[r * cols + c] * Complex64::from_polar(1.0, ang);
                }
            }
            out[u * cols + w] = acc;
        }
    }
    out
}

fn write_f32(path: &std::path::Path, v: &[f32]) {
    fs::write(path, v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
}

#[test]
fn raw_grid_loading() {
    let dir = tempfile::tempdir().unwrap();
    let (data, header) = (dir.path().join("g.raw"), dir.path().join("g.toml"));
    fs::write(&header, "dims = [2, 2]\ndtype = \"f32\"\nnormalize = \"unit\"\n").unwrap();
    write_f32(&data, &[0.0, 1.0, 2.0, 3.0]);
    let g = load_raw_grid(&data, &header).unwrap();
    let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    assert!(g.values.data().iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-15));

    write_f32(&data, &[5.0; 4]);
    assert_eq!(load_raw_grid(&data, &header).unwrap().values.data(), &[0.0; 4]);

    write_f32(&data, &[1.0; 3]);
    assert!(matches!(load_raw_grid(&data, &header), Err(Error::SizeMismatch { expected: 16, actual: 12, .. })));

    fs::write(&header, "dims = [2, 2]\ndtype = \"f32\"\nnormalize = \"unit\"\nextra = 1\n").unwrap();
    assert!(matches!(load_raw_grid(&data, &header), Err(Error::Format(_))));
}

#[test]
fn raw_grid_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, header) = (dir.path().join("s.raw"), dir.path().join("s.toml"));
    let s = synth_signal(&SynthSpec::sinusoids(vec![Component { frequency: vec![3.0, 1.0], amplitude: 1.0, phase: 0.0 }]), &[8, 6]).unwrap();
    write_raw_grid(&s, &data, &header, ScalarType::F64, NormalizeMode::None).unwrap();
    assert_eq!(fs::metadata(&data).unwrap().len(), 8 * 6 * 8);
    let back = load_raw_grid(&data, &header).unwrap();
    assert_eq!(back.values, s.values);
}

#[test]
fn coordinate_grids() {
    assert_eq!(make_coord_grid(&[2]).unwrap().data(), &[-1.0, 1.0]);
    assert_eq!(make_coord_grid(&[3]).unwrap().data(), &[-1.0, 0.0, 1.0]);
    let c = make_coord_grid(&[2, 2]).unwrap();
    assert_eq!(c.shape(), &[4, 2]);
    assert!(c.data().iter().all(|v| v.abs() == 1.0));
}

#[test]
fn synthetic_rings_peak_where_placed() {
    let comps = [2.0, 8.0, 20.0].iter().map(|&f| Component { frequency: vec![f, 0.0], amplitude: 1.0, phase: 0.4 }).collect();
    let s = synth_signal(&SynthSpec::sinusoids(comps), &[64, 64]).unwrap();
    let radial = power_spectrum_2d(&s).unwrap().radial;
    assert_eq!(radial.len(), 32);
    for k in [2usize, 8, 20] {
        assert!(radial[k].1 > radial[k - 1].1 && radial[k].1 > radial[k + 1].1, "ring {k}");
    }
}

#[test]
fn noise_field_spectrum_decays() {
    let spec = SynthSpec {
        kind: SynthKind::SpectralNoiseField,
        components: vec![Component { frequency: vec![16.0, 16.0], amplitude: 1.0, phase: 0.0 }],
        seed: 3,
        spectral_slope: 2.0,
    };
    let s = synth_signal(&spec, &[32, 32]).unwrap();
    assert_eq!(s, synth_signal(&spec, &[32, 32]).unwrap());
    let r = power_spectrum_2d(&s).unwrap();
    assert!(r.ring_energy(1) > 0.0);
    assert!(r.radial[2].1 > r.radial[12].1);
}

#[test]
fn noise_std_matches_level() {
    let v: Vec<f64> = random_grid(100, 100, 1).iter().map(|x| x * 3f64.sqrt()).collect();
    let ds = grid_to_dataset(&grid(&[100, 100], v)).unwrap();
    let sd = |t: &Tensor| {
        let n = t.len() as f64;
        let m = t.data().iter().sum::<f64>() / n;
        (t.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let noisy = add_noise(&ds, 0.3, 9).unwrap();
    let diff = Tensor::new(vec![ds.len()], noisy.targets.data().iter().zip(ds.targets.data()).map(|(a, b)| a - b).collect()).unwrap();
    let ratio = sd(&diff) / sd(&ds.targets);
    assert!((ratio - 0.3).abs() < 0.015, "{ratio}");
    assert_eq!(noisy.coords, ds.coords);
    assert_eq!(add_noise(&ds, 0.0, 9).unwrap(), ds);
}

#[test]
fn one_dimensional_dataset() {
    let ds = grid_to_dataset(&grid(&[8], (0..8).map(|i| i as f64 / 8.0).collect())).unwrap();
    assert_eq!(ds.len(), 8);
    assert_eq!(ds.coords.shape(), &[8, 1]);
}

#[test]
fn fft_matches_direct_dft() {
    for (rows, cols) in [(8, 8), (16, 16), (6, 10)] {
        let v = random_grid(rows, cols, (rows * cols) as u64);
        let input: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let fast = fft2(&input, rows, cols, false).unwrap();
        let slow = direct_dft(&v, rows, cols);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-9, "{rows}x{cols}: {err}");
    }
}

#[test]
fn parseval() {
    let v = random_grid(16, 16, 77);
    let p = power_spectrum_2d(&grid(&[16, 16], v.clone())).unwrap();
    let lhs = p.power.data().iter().sum::<f64>() / 256.0;
    let rhs: f64 = v.iter().map(|x| x * x).sum();
    assert!((lhs - rhs).abs() <= 1e-9 * rhs);
}

#[test]
fn sinusoid_peaks_against_direct_dft() {
    let n = 16;
    let k = 3;
    let v: Vec<f64> = (0..n * n).map(|i| (2.0 * std::f64::consts::PI * (k * (i % n)) as f64 / n as f64).cos()).collect();
    let p = power_spectrum_2d(&grid(&[n, n], v.clone())).unwrap();
    let dft = direct_dft(&v, n, n);
    let c = n / 2;
    let expected = (n * n) as f64 / 2.0;
    assert!((p.power.data()[c * n + c + k] - expected.powi(2)).abs() < 1e-6);
    assert!((p.power.data()[c * n + c - k] - expected.powi(2)).abs() < 1e-6);
    assert!((dft[k].norm_sqr() - expected.powi(2)).abs() < 1e-6);
    let total: f64 = p.power.data().iter().sum();
    assert!((total - 2.0 * expected.powi(2)).abs() < 1e-6 * total);
}

#[test]
fn error_map_group_and_argmax() {
    let t = grid(&[2, 2], vec![0.0; 4]);
    let a = grid(&[2, 2], vec![0.0, 2.0, 0.0, 0.0]);
    let b = grid(&[2, 2], vec![0.0, 0.0, 4.0, 0.0]);
    let maps = error_maps(&[(&a, &t), (&b, &t)]).unwrap();
    assert_eq!(maps[0].values.data(), &[0.0, 0.5, 0.0, 0.0]);
    assert_eq!(maps[1].values.data(), &[0.0, 0.0, 1.0, 0.0]);
    assert_eq!(error_maps(&[(&t, &t)]).unwrap()[0].values.data(), &[0.0; 4]);
}

#[test]
fn ssim_of_negated_checkerboard_signal_is_nonpositive() {
    // window means stay near zero, so only the anti-correlated structure term counts
    let v: Vec<f64> = (0..256).map(|i| if (i / 16 + i % 16) % 2 == 0 { 0.8 } else { -0.8 }).collect();
    let g = grid(&[16, 16], v.clone());
    let neg = grid(&[16, 16], v.iter().map(|x| -x).collect());
    assert!(ssim(&neg, &g).unwrap() <= 0.0);
}

#[test]
fn volume_ssim_is_slice_average() {
    let v = random_grid(4 * 12, 12, 5);
    let w: Vec<f64> = v.iter().map(|x| 0.9 * x).collect();
    let vol = ssim(&grid(&[4, 12, 12], w.clone()), &grid(&[4, 12, 12], v.clone())).unwrap();
    let mean: f64 = (0..4)
        .map(|s| ssim(&grid(&[12, 12], w[s * 144..(s + 1) * 144].to_vec()), &grid(&[12, 12], v[s * 144..(s + 1) * 144].to_vec())).unwrap())
        .sum::<f64>()
        / 4.0;
    assert!((vol - mean).abs() < 1e-14);
}

#[test]
fn pgm_is_sixteen_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a/b.pgm");
    write_grid_pgm(&path, &grid(&[3, 5], vec![0.0; 15])).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n5 3\n65535\n"));
    assert_eq!(bytes.len(), b"P5\n5 3\n65535\n".len() + 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_is_idempotent(v in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        for mode in [NormalizeMode::Unit, NormalizeMode::Symmetric, NormalizeMode::None] {
            let mut a = v.clone();
            normalize(&mut a, mode);
            let mut b = a.clone();
            normalize(&mut b, mode);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
        }
    }

    #[test]
    fn dataset_grid_roundtrip(rows in 2usize..9, cols in 2usize..9, seed in any::<u64>()) {
        let g = grid(&[rows, cols], random_grid(rows, cols, seed));
        prop_assert_eq!(dataset_to_grid(&grid_to_dataset(&g).unwrap()).unwrap().values, g.values);
    }

    #[test]
    fn subsample_partitions(n in 2usize..200, frac in 0.01f64..1.0, seed in any::<u64>()) {
        let ds = grid_to_dataset(&grid(&[n], random_grid(n, 1, seed))).unwrap();
        let (train, hold) = subsample(&ds, frac, seed).unwrap();
        let mut all: Vec<usize> = train.indices.iter().chain(&hold.indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let again = subsample(&ds, frac, seed).unwrap();
        prop_assert_eq!(again.0.indices, train.indices);
    }

    #[test]
    fn ssim_is_bounded(seed in any::<u64>(), rows in 3usize..20, cols in 3usize..20) {
        let a = grid(&[rows, cols], random_grid(rows, cols, seed));
        let b = grid(&[rows, cols], random_grid(rows, cols, seed ^ 7));
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn psnr_decreases_with_perturbation(d1 in 0.001f64..0.5, extra in 0.001f64..0.5) {
        let x = Tensor::new(vec![64], random_grid(64, 1, 3)).unwrap();
        let scaled = |d: f64| Tensor::new(vec![64], x.data().iter().map(|v| v * (1.0 + d)).collect()).unwrap();
        let p1 = psnr(mse(&scaled(d1), &x).unwrap(), 1.0).unwrap();
        let p2 = psnr(mse(&scaled(d1 + extra), &x).unwrap(), 1.0).unwrap();
        prop_assert!(p2 < p1);
    }
}

#[test]
fn subsample_examples() {
    let ds = grid_to_dataset(&grid(&[100], random_grid(100, 1, 0))).unwrap();
    let (t, h) = subsample(&ds, 0.25, 1).unwrap();
    assert_eq!((t.len(), h.len()), (25, 75));
    let (t, h) = subsample(&ds, 1.0, 1).unwrap();
    assert_eq!((t.len(), h.len()), (100, 0));
}

mod common;

use proptest::prelude::*;
use stformer::dsp::{extract_mfcc, power_spectrum, read_wav, write_wav, MelFilterbank};
use stformer::tensor::RngStream;
use stformer::{AudioSignal, FeatureConfig, MfccMatrix};

use common::{naive_mfcc, naive_power_spectrum, random_signal, triangle, MfccParams};

fn noise(n: usize, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    (0..n).map(|_| amp * rng.uniform_range(-1.0, 1.0)).collect()
}

fn mfcc(x: &[f64]) -> MfccMatrix {
    extract_mfcc(&AudioSignal::new(x.to_vec(), 16000).unwrap(), &FeatureConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_power_matches_dft(log_n in 1u32..10, fill in 0.1f64..1.0, seed: u64) {
        let n = 1usize << log_n;
        let len = ((n as f64 * fill).ceil() as usize).clamp(1, n);
        let x = noise(len, 1.0, seed);
        let got = power_spectrum(&x, n).unwrap();
        let want = naive_power_spectrum(&x, n);
        prop_assert_eq!(got.len(), n / 2 + 1);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn shifting_by_whole_hops_shifts_rows(hops in 1usize..5, seed: u64) {
        let x = noise(3200, 0.5, seed);
        let mut shifted = noise(hops * 160, 0.5, seed ^ 1);
        shifted.extend_from_slice(&x);
        let (a, b) = (mfcc(&x), mfcc(&shifted));
        prop_assert_eq!(b.frames(), a.frames() + hops);
        // Row 0 is excluded: pre-emphasis sees a predecessor only in the shifted copy.
        for f in 1..a.frames() {
            for c in 0..a.coeffs() {
                prop_assert!((a.at(f, c) - b.at(f + hops, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn scaling_amplitude_only_moves_c0(gain in 0.1f64..10.0, seed: u64) {
        let x = noise(2400, 0.05, seed);
        let y: Vec<f64> = x.iter().map(|v| v * gain).collect();
        let (a, b) = (mfcc(&x), mfcc(&y));
        let n_filters = FeatureConfig::default().n_filters as f64;
        let shift = n_filters * (gain * gain).ln();
        for f in 0..a.frames() {
            prop_assert!((b.at(f, 0) - a.at(f, 0) - shift).abs() <= 1e-9 * (1.0 + a.at(f, 0).abs()));
            for c in 1..a.coeffs() {
                prop_assert!((b.at(f, c) - a.at(f, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn save_load_round_trip(seed: u64) {
        let m = mfcc(&noise(1600, 0.3, seed));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mfcc");
        m.save(&path).unwrap();
        let back = MfccMatrix::load(&path).unwrap();
        prop_assert_eq!((back.frames(), back.coeffs()), (m.frames(), m.coeffs()));
        for (a, b) in m.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn extraction_matches_oracle_on_a_few_signals() {
    let p = MfccParams::default();
    for seed in 0..4 {
        let mut rng = RngStream::new(seed);
        let x = random_signal(4000, &mut rng);
        let got = mfcc(&x);
        let want = naive_mfcc(&x, &p);
        assert_eq!(got.frames(), want.len());
        for (f, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((got.at(f, c) - v).abs() <= 1e-8, "frame {f} coeff {c}");
            }
        }
    }
}

#[test]
fn filterbank_matches_triangles() {
    let p = MfccParams::default();
    let fb = MelFilterbank::new(26, 512, 16000, 0.0, 8000.0).unwrap();
    for n in 0..26 {
        for (k, w) in fb.filter(n).iter().enumerate() {
            let want = triangle(&p, n, k as f64 * 16000.0 / 512.0);
            assert!((w - want).abs() <= 1e-12, "filter {n} bin {k}: {w} vs {want}");
        }
    }
}

#[test]
fn wav_round_trip_keeps_features() {
    let mut rng = RngStream::new(9);
    let x = random_signal(4000, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    write_wav(&path, &AudioSignal::new(x, 16000).unwrap()).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate(), 16000);
    assert_eq!(back.len(), 4000);
    let again = dir.path().join("b.wav");
    write_wav(&again, &back).unwrap();
    assert_eq!(read_wav(&again).unwrap().samples(), back.samples());
}

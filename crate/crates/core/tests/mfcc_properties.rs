use deceptio::data::PcmSignal;
use deceptio::mfcc::{extract_mfcc, log_mel_energies, mel_center_frequencies, MfccConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * amplitude).collect()
}

#[test]
fn tone_at_filter_center_peaks_in_that_filter() {
    let cfg = MfccConfig::default();
    let centers = mel_center_frequencies(&cfg, 16000);
    for filter in [8usize, 12, 17, 22] {
        let f = centers[filter];
        let samples: Vec<f64> = (0..16000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin())
            .collect();
        let energies = log_mel_energies(
            &PcmSignal {
                sample_rate: 16000,
                samples,
            },
            &cfg,
        )
        .unwrap();
        for frame in &energies {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, filter, "tone at {f:.1} Hz");
        }
    }
}

#[test]
fn doubling_amplitude_shifts_only_c0() {
    let cfg = MfccConfig::default();
    let base = noise(8000, 0.1, 3);
    let doubled: Vec<f64> = base.iter().map(|v| v * 2.0).collect();
    let a = extract_mfcc(&PcmSignal { sample_rate: 16000, samples: base }, &cfg).unwrap();
    let b = extract_mfcc(&PcmSignal { sample_rate: 16000, samples: doubled }, &cfg).unwrap();
    let shift = (cfg.filter_count as f64).sqrt() * 4f64.ln();
    for (ra, rb) in a.rows().zip(b.rows()) {
        assert!((rb[0] - ra[0] - shift).abs() < 1e-6);
        for j in 1..ra.len() {
            assert!((ra[j] - rb[j]).abs() < 1e-6);
        }
    }
}

#[test]
fn one_hop_shift_moves_rows_by_one() {
    let cfg = MfccConfig::default();
    let x = noise(9600, 0.3, 8);
    let shifted = x[160..].to_vec();
    let a = extract_mfcc(&PcmSignal { sample_rate: 16000, samples: x }, &cfg).unwrap();
    let b = extract_mfcc(&PcmSignal { sample_rate: 16000, samples: shifted }, &cfg).unwrap();
    assert_eq!(b.len(), a.len() - 1);
    for j in 1..b.len() {
        for (u, v) in a.row(j + 1).iter().zip(b.row(j)) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn rows_finite_for_silence_and_noise() {
    let cfg = MfccConfig::default();
    let mut samples = vec![0.0; 4000];
    samples.extend(noise(4000, 1.0, 1));
    let bag = extract_mfcc(&PcmSignal { sample_rate: 16000, samples }, &cfg).unwrap();
    assert!(bag.as_slice().iter().all(|v| v.is_finite()));
    assert_eq!(bag.dim(), 13);
}

//! Synthetic highlight benchmark.
//!
//! Each video has a latent binary track built from random non-overlapping
//! highlight segments. Both modalities carry the class through their own
//! fixed direction, `x = snr·(y − ½)·u + ε` with `ε ~ N(0, I)`, so the
//! class-mean separation along `u` equals the configured SNR. Training
//! labels are the latent track after [`inject_noise`]; test labels are clean.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use super::FeatureSequence;
use crate::autodiff::Tensor;
use crate::config::{KvFile, KvSource};
use crate::error::{ClcError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub train_videos: usize,
    pub test_videos: usize,
    /// Shots per video.
    pub shots: usize,
    pub d_visual: usize,
    pub d_audio: usize,
    /// Highlight segments per video.
    pub segments: usize,
    pub segment_min: usize,
    pub segment_max: usize,
    pub snr_visual: f64,
    pub snr_audio: f64,
    /// Symmetric per-shot flip probability `ρ`.
    pub flip_rate: f64,
    /// Shots added on each side of every positive segment.
    pub dilation: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_videos: 10,
            test_videos: 5,
            shots: 500,
            d_visual: 16,
            d_audio: 24,
            segments: 5,
            segment_min: 15,
            segment_max: 40,
            snr_visual: 1.0,
            snr_audio: 1.0,
            flip_rate: 0.2,
            dilation: 2,
            seed: 0,
        }
    }
}

/// `(key, default, description)` for every config key.
pub const SYNTH_KEYS: &[(&str, &str, &str)] = &[
    ("train_videos", "10", "number of training videos"),
    ("test_videos", "5", "number of test videos (clean labels)"),
    ("shots", "500", "shots per video"),
    ("d_visual", "16", "visual feature width"),
    ("d_audio", "24", "audio feature width"),
    ("segments", "5", "highlight segments per video"),
    ("segment_min", "15", "shortest segment, in shots"),
    ("segment_max", "40", "longest segment, in shots"),
    ("snr_visual", "1.0", "class-mean separation of the visual features"),
    ("snr_audio", "1.0", "class-mean separation of the audio features"),
    ("flip_rate", "0.2", "symmetric label flip probability, in [0, 0.5)"),
    ("dilation", "2", "shots added on each side of every positive segment"),
    ("seed", "0", "generator seed"),
];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_videos", self.train_videos),
            ("shots", self.shots),
            ("d_visual", self.d_visual),
            ("d_audio", self.d_audio),
            ("segments", self.segments),
            ("segment_min", self.segment_min),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ClcError::Config(format!("{name} must be positive")));
            }
        }
        if self.segment_max < self.segment_min {
            return Err(ClcError::Config("segment_max < segment_min".into()));
        }
        let worst = self.segments * self.segment_max + self.segments - 1;
        if worst > self.shots {
            return Err(ClcError::Config(format!(
                "{} segments of up to {} shots cannot fit in {} shots",
                self.segments, self.segment_max, self.shots
            )));
        }
        NoiseSpec {
            flip_rate: self.flip_rate,
            dilation: self.dilation,
        }
        .validate()?;
        if !(self.snr_visual >= 0.0 && self.snr_audio >= 0.0) {
            return Err(ClcError::Config("snr must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut cfg = Self::default();
        kv.reject_unknown(SYNTH_KEYS.iter().map(|k| k.0))?;
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, kv: &impl KvSource) -> Result<()> {
        kv.set_usize("train_videos", &mut self.train_videos)?;
        kv.set_usize("test_videos", &mut self.test_videos)?;
        kv.set_usize("shots", &mut self.shots)?;
        kv.set_usize("d_visual", &mut self.d_visual)?;
        kv.set_usize("d_audio", &mut self.d_audio)?;
        kv.set_usize("segments", &mut self.segments)?;
        kv.set_usize("segment_min", &mut self.segment_min)?;
        kv.set_usize("segment_max", &mut self.segment_max)?;
        kv.set_f64("snr_visual", &mut self.snr_visual)?;
        kv.set_f64("snr_audio", &mut self.snr_audio)?;
        kv.set_f64("flip_rate", &mut self.flip_rate)?;
        kv.set_usize("dilation", &mut self.dilation)?;
        kv.set_u64("seed", &mut self.seed)?;
        Ok(())
    }

    /// Canonical `key=value` rendering, one line per key.
    pub fn to_kv_string(&self) -> String {
        format!(
            "train_videos={}\ntest_videos={}\nshots={}\nd_visual={}\nd_audio={}\nsegments={}\n\
             segment_min={}\nsegment_max={}\nsnr_visual={}\nsnr_audio={}\nflip_rate={}\n\
             dilation={}\nseed={}\n",
            self.train_videos,
            self.test_videos,
            self.shots,
            self.d_visual,
            self.d_audio,
            self.segments,
            self.segment_min,
            self.segment_max,
            self.snr_visual,
            self.snr_audio,
            self.flip_rate,
            self.dilation,
            self.seed
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub flip_rate: f64,
    pub dilation: usize,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(ClcError::Config(format!(
                "flip_rate must lie in [0, 0.5), got {}",
                self.flip_rate
            )));
        }
        Ok(())
    }
}

/// Over-labels every positive run by `dilation` shots on each side, then
/// flips each label independently with probability `flip_rate`.
pub fn inject_noise(labels: &[u8], flip_rate: f64, dilation: usize, seed: u64) -> Result<Vec<u8>> {
    NoiseSpec { flip_rate, dilation }.validate()?;
    let t = labels.len();
    let mut out = vec![0u8; t];
    for (i, &g) in labels.iter().enumerate() {
        if g == 1 {
            let lo = i.saturating_sub(dilation);
            let hi = (i + dilation).min(t.saturating_sub(1));
            out[lo..=hi].fill(1);
        }
    }
    if flip_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coin = Bernoulli::new(flip_rate).expect("validated rate");
        for g in &mut out {
            if coin.sample(&mut rng) {
                *g ^= 1;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SynthData {
    /// Noisy training labels attached.
    pub train: Vec<FeatureSequence>,
    /// Clean labels attached.
    pub test: Vec<FeatureSequence>,
    /// Latent clean labels of the training videos.
    pub train_clean: Vec<Vec<u8>>,
}

const SALT_SEGMENTS: u64 = 0x5EC7_0000_0000_0001;
const SALT_FEATURES: u64 = 0xFEA7_0000_0000_0002;
const SALT_NOISE: u64 = 0x0015_E000_0000_0003;
const SALT_DIRECTIONS: u64 = 0xD1EC_0000_0000_0004;

/// SplitMix64 finalizer over `seed ⊕ salt ⊕ index`.
pub(crate) fn sub_seed(seed: u64, salt: u64, index: u64) -> u64 {
    let mut z = seed ^ salt ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn latent_track(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let lens: Vec<usize> = (0..cfg.segments)
        .map(|_| rng.random_range(cfg.segment_min..=cfg.segment_max))
        .collect();
    let covered: usize = lens.iter().sum::<usize>() + cfg.segments - 1;
    let free = cfg.shots - covered;
    let mut cuts: Vec<usize> = (0..cfg.segments).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut labels = vec![0u8; cfg.shots];
    let mut pos = 0;
    let mut prev_cut = 0;
    for (k, (&len, &cut)) in lens.iter().zip(&cuts).enumerate() {
        pos += cut - prev_cut + usize::from(k > 0);
        prev_cut = cut;
        labels[pos..pos + len].fill(1);
        pos += len;
    }
    labels
}

fn features(labels: &[u8], direction: &[f64], snr: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let d = direction.len();
    let mut data = Vec::with_capacity(labels.len() * d);
    for &g in labels {
        let shift = snr * (f64::from(g) - 0.5);
        for &u in direction {
            let noise: f64 = rng.sample(StandardNormal);
            // stored at f32 precision so files round-trip exactly
            data.push((shift * u + noise) as f32 as f64);
        }
    }
    Tensor::from_vec(labels.len(), d, data).expect("synthetic shape")
}

fn video(cfg: &SynthConfig, dirs: &(Vec<f64>, Vec<f64>), index: u64) -> (Vec<u8>, Tensor, Tensor) {
    let mut seg_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, SALT_SEGMENTS, index));
    let labels = latent_track(cfg, &mut seg_rng);
    let mut feat_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, SALT_FEATURES, index));
    let visual = features(&labels, &dirs.0, cfg.snr_visual, &mut feat_rng);
    let audio = features(&labels, &dirs.1, cfg.snr_audio, &mut feat_rng);
    (labels, visual, audio)
}

/// Generates the training set (noisy labels) and test set (clean labels).
/// Videos are independent given the seed and their index.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut dir_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, SALT_DIRECTIONS, 0));
    let dirs = (
        unit_direction(&mut dir_rng, cfg.d_visual),
        unit_direction(&mut dir_rng, cfg.d_audio),
    );

    let mut train = Vec::with_capacity(cfg.train_videos);
    let mut train_clean = Vec::with_capacity(cfg.train_videos);
    for i in 0..cfg.train_videos {
        let (clean, visual, audio) = video(cfg, &dirs, i as u64);
        let noisy = inject_noise(
            &clean,
            cfg.flip_rate,
            cfg.dilation,
            sub_seed(cfg.seed, SALT_NOISE, i as u64),
        )?;
        train.push(FeatureSequence::new(format!("train_{i:03}"), visual, audio, Some(noisy))?);
        train_clean.push(clean);
    }
    let mut test = Vec::with_capacity(cfg.test_videos);
    for i in 0..cfg.test_videos {
        let index = (cfg.train_videos + i) as u64;
        let (clean, visual, audio) = video(cfg, &dirs, index);
        test.push(FeatureSequence::new(format!("test_{i:03}"), visual, audio, Some(clean))?);
    }
    Ok(SynthData {
        train,
        test,
        train_clean,
    })
}

/// Seeded Fisher–Yates order of `0..n`.
pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_identity_without_corruption() {
        let labels = [0, 1, 1, 0, 0, 1, 0];
        assert_eq!(inject_noise(&labels, 0.0, 0, 9).unwrap(), labels);
    }

    #[test]
    fn dilation_interval_arithmetic() {
        let mut labels = vec![0u8; 50];
        labels[10..=20].fill(1);
        let out = inject_noise(&labels, 0.0, 2, 1).unwrap();
        let pos: Vec<usize> = (0..50).filter(|&i| out[i] == 1).collect();
        assert_eq!(pos, (8..=22).collect::<Vec<_>>());
    }

    #[test]
    fn dilation_clips_at_edges() {
        let out = inject_noise(&[1, 0, 0, 0, 1], 0.0, 1, 0).unwrap();
        assert_eq!(out, [1, 1, 0, 1, 1]);
    }

    #[test]
    fn flip_count_binomial() {
        let labels = vec![0u8; 1000];
        let out = inject_noise(&labels, 0.2, 0, 17).unwrap();
        let flips = out.iter().filter(|&&g| g == 1).count() as f64;
        let sd = (1000.0f64 * 0.2 * 0.8).sqrt();
        assert!((flips - 200.0).abs() <= 3.0 * sd, "{flips}");
    }

    #[test]
    fn noise_deterministic() {
        let labels: Vec<u8> = (0..300).map(|i| u8::from(i % 7 < 3)).collect();
        assert_eq!(
            inject_noise(&labels, 0.3, 1, 5).unwrap(),
            inject_noise(&labels, 0.3, 1, 5).unwrap()
        );
        assert!(inject_noise(&labels, 0.5, 0, 5).is_err());
    }

    #[test]
    fn clean_config_keeps_ground_truth() {
        let cfg = SynthConfig {
            flip_rate: 0.0,
            dilation: 0,
            train_videos: 3,
            test_videos: 1,
            shots: 240,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        for (s, clean) in data.train.iter().zip(&data.train_clean) {
            assert_eq!(s.labels.as_ref().unwrap(), clean);
        }
    }

    #[test]
    fn segment_counts_and_fit() {
        let cfg = SynthConfig {
            shots: 120,
            segments: 3,
            segment_min: 10,
            segment_max: 30,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        for clean in &data.train_clean {
            let runs = clean.windows(2).filter(|w| w == &[0, 1]).count() + usize::from(clean[0] == 1);
            assert_eq!(runs, 3);
        }
        let bad = SynthConfig {
            shots: 60,
            segments: 3,
            segment_min: 10,
            segment_max: 30,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad), Err(ClcError::Config(_))));
    }

    #[test]
    fn flip_rate_disagreement() {
        let cfg = SynthConfig {
            flip_rate: 0.4,
            dilation: 0,
            train_videos: 10,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let (mut diff, mut total) = (0usize, 0usize);
        for (s, clean) in data.train.iter().zip(&data.train_clean) {
            let noisy = s.labels.as_ref().unwrap();
            diff += noisy.iter().zip(clean).filter(|(a, b)| a != b).count();
            total += clean.len();
        }
        let rate = diff as f64 / total as f64;
        assert!((rate - 0.4).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn dilation_raises_train_prevalence() {
        let cfg = SynthConfig {
            flip_rate: 0.0,
            dilation: 3,
            train_videos: 6,
            test_videos: 6,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let prevalence = |v: &[FeatureSequence]| {
            let pos: usize = v.iter().map(|s| s.labels.as_ref().unwrap().iter().filter(|&&g| g == 1).count()).sum();
            pos as f64 / v.iter().map(|s| s.len()).sum::<usize>() as f64
        };
        assert!(prevalence(&data.train) > prevalence(&data.test));
    }

    #[test]
    fn class_mean_separation_matches_snr() {
        let cfg = SynthConfig {
            train_videos: 4,
            snr_visual: 1.5,
            snr_audio: 0.8,
            flip_rate: 0.0,
            dilation: 0,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let mut dir_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, SALT_DIRECTIONS, 0));
        let dirs = [
            unit_direction(&mut dir_rng, cfg.d_visual),
            unit_direction(&mut dir_rng, cfg.d_audio),
        ];
        for (m, (dir, snr)) in dirs.iter().zip([cfg.snr_visual, cfg.snr_audio]).enumerate() {
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
            for (s, clean) in data.train.iter().zip(&data.train_clean) {
                let x = if m == 0 { &s.visual } else { &s.audio };
                for (i, &g) in clean.iter().enumerate() {
                    let proj: f64 = x.row(i).iter().zip(dir).map(|(a, b)| a * b).sum();
                    if g == 1 {
                        s1 += proj;
                        n1 += 1;
                    } else {
                        s0 += proj;
                        n0 += 1;
                    }
                }
            }
            assert!(n0 + n1 >= 1000);
            let sep = s1 / n1 as f64 - s0 / n0 as f64;
            assert!((sep - snr).abs() <= 0.1 * snr, "modality {m}: {sep} vs {snr}");
        }
    }
}

//! Synthetic degradation generators and desk-scale corpora.
//!
//! A corpus is a set of (degraded, clean) patch pairs built either from PPM
//! images in a directory or, when none are given, from procedural base
//! images (smooth color fields plus soft-edged discs) so the whole pipeline
//! runs hermetically. Every random choice is derived from the corpus seed,
//! so the same spec always rebuilds the identical corpus.

pub mod ppm;

pub use ppm::{load_image, save_image};

use crate::error::{Error, Result};
use crate::init::stream_rng;
use crate::loss::psnr;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationKind {
    Haze,
    Rain,
    Noise,
}

impl DegradationKind {
    pub fn parse(s: &str) -> Result<DegradationKind> {
        match s {
            "haze" => Ok(DegradationKind::Haze),
            "rain" => Ok(DegradationKind::Rain),
            "noise" => Ok(DegradationKind::Noise),
            other => Err(Error::Config(format!("unknown degradation kind {other:?} (haze|rain|noise)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::Haze => "haze",
            DegradationKind::Rain => "rain",
            DegradationKind::Noise => "noise",
        }
    }
}

/// One training pair; both tensors are `[3, H, W]` in [0,1].
#[derive(Debug, Clone)]
pub struct Sample {
    pub degraded: Tensor,
    pub clean: Tensor,
    pub kind: DegradationKind,
    /// Seed the degradation was drawn from, for exact regeneration.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    /// Directory of `.ppm` base images; `None` selects procedural bases.
    pub base_dir: Option<PathBuf>,
    /// Square patch side, a power of two.
    pub patch: usize,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
    pub kind: DegradationKind,
    /// Degradation strength range; each sample draws uniformly from it.
    pub strength: (f64, f64),
    pub seed: u64,
    /// Number of procedural base images (ignored with a base directory).
    pub count: usize,
}

impl Default for CorpusSpec {
    fn default() -> CorpusSpec {
        CorpusSpec {
            base_dir: None,
            patch: 64,
            val_fraction: 0.125,
            kind: DegradationKind::Noise,
            strength: (25.0 / 255.0, 25.0 / 255.0),
            seed: 0,
            count: 32,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.patch.is_power_of_two() || self.patch < 8 {
            return bad(format!("patch must be a power of two >= 8, got {}", self.patch));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0,1), got {}", self.val_fraction));
        }
        if !(self.strength.0.is_finite() && self.strength.1.is_finite())
            || self.strength.0 < 0.0
            || self.strength.1 < self.strength.0
        {
            return bad(format!("bad strength range {:?}", self.strength));
        }
        if self.count == 0 && self.base_dir.is_none() {
            return bad("procedural corpus needs count >= 1".into());
        }
        Ok(())
    }
}

pub struct Corpus {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    /// One line per sample: "path, kind, seed, split".
    pub manifest: String,
    /// Mean PSNR of degraded vs clean over the whole corpus, the score a
    /// do-nothing restorer would achieve.
    pub baseline_psnr: f64,
}

impl Corpus {
    pub fn manifest_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.manifest.as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn expect_image(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidArg { op, msg: format!("expected [3,H,W], got {s:?}") });
    }
    Ok((s[1], s[2]))
}

/// Smooth random field in [0,1] from a few low-frequency cosine gratings;
/// both extremes are attained exactly after normalization.
fn smooth_field(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, &["haze_field"]);
    let gratings: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..2.5) / h.max(1) as f64,
                rng.gen_range(0.5..2.5) / w.max(1) as f64,
                rng.gen_range(0.0..TAU),
            )
        })
        .collect();
    let mut f = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            f[y * w + x] = gratings
                .iter()
                .map(|&(v, u, ph)| (TAU * (v * y as f64 + u * x as f64) + ph).cos())
                .sum();
        }
    }
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for v in &mut f {
        *v = (*v - lo) / span;
    }
    f
}

/// Atmospheric scattering: `degraded = clean*t + a*(1-t)` with the
/// transmission varying smoothly between `t` (densest haze, attained
/// somewhere) and 1 (clear, also attained).
pub fn degrade_haze(clean: &Tensor, t: f64, a: f64, seed: u64) -> Result<Tensor> {
    let (h, w) = expect_image(clean, "degrade_haze")?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArg { op: "degrade_haze", msg: format!("transmission must be in (0,1], got {t}") });
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidArg { op: "degrade_haze", msg: format!("airlight must be in [0,1], got {a}") });
    }
    let field = smooth_field(h, w, seed);
    let src = clean.data();
    let mut out = vec![0.0; src.len()];
    for c in 0..3 {
        for i in 0..h * w {
            let tf = 1.0 - (1.0 - t) * field[i];
            out[c * h * w + i] = src[c * h * w + i] * tf + a * (1.0 - tf);
        }
    }
    Ok(Tensor::from_vec(out, clean.shape()))
}

/// Additive bright streaks along `angle` (radians from vertical), shared
/// across channels, clamped to [0,1]. `density` is streaks per 1000 pixels.
pub fn degrade_rain(clean: &Tensor, density: f64, angle: f64, seed: u64) -> Result<Tensor> {
    let (h, w) = expect_image(clean, "degrade_rain")?;
    if !(density >= 0.0 && density.is_finite()) {
        return Err(Error::InvalidArg { op: "degrade_rain", msg: format!("density must be >= 0, got {density}") });
    }
    let mut rng = stream_rng(seed, &["rain"]);
    let n = (density * (h * w) as f64 / 1000.0).round() as usize;
    let mut layer = vec![0.0f64; h * w];
    for _ in 0..n {
        let y0 = rng.gen_range(0.0..h as f64);
        let x0 = rng.gen_range(0.0..w as f64);
        let len = rng.gen_range(h as f64 / 8.0..h as f64 / 3.0);
        let bright = rng.gen_range(0.15..0.45);
        let th = angle + rng.gen_range(-0.05..0.05);
        let (dy, dx) = (th.cos(), th.sin());
        for k in 0..len.ceil() as usize {
            let y = (y0 + dy * k as f64).round();
            let x = (x0 + dx * k as f64).round();
            if y >= 0.0 && x >= 0.0 && (y as usize) < h && (x as usize) < w {
                let i = y as usize * w + x as usize;
                layer[i] = layer[i].max(bright);
            }
        }
    }
    let src = clean.data();
    let mut out = vec![0.0; src.len()];
    for c in 0..3 {
        for i in 0..h * w {
            out[c * h * w + i] = (src[c * h * w + i] + layer[i]).clamp(0.0, 1.0);
        }
    }
    Ok(Tensor::from_vec(out, clean.shape()))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// I.i.d. Gaussian noise with standard deviation `sigma`, clamped to [0,1].
pub fn degrade_noise(clean: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    expect_image(clean, "degrade_noise")?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArg { op: "degrade_noise", msg: format!("sigma must be >= 0, got {sigma}") });
    }
    if sigma == 0.0 {
        return Ok(clean.detach());
    }
    let mut rng = stream_rng(seed, &["noise"]);
    let out = clean.data().iter().map(|v| (v + sigma * gaussian(&mut rng)).clamp(0.0, 1.0)).collect();
    Ok(Tensor::from_vec(out, clean.shape()))
}

/// Procedural base image: smooth per-channel background plus a few
/// soft-edged discs with shared geometry and per-channel colors.
fn procedural_patch(seed: u64, index: usize, p: usize) -> Tensor {
    let mut rng = stream_rng(seed, &["base", &index.to_string()]);
    let mut img = vec![0.0; 3 * p * p];
    for c in 0..3 {
        let base = rng.gen_range(0.2..0.8);
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.gen_range(0.05..0.2),
                    rng.gen_range(1.0..3.0) / p as f64,
                    rng.gen_range(1.0..3.0) / p as f64,
                    rng.gen_range(0.0..TAU),
                )
            })
            .collect();
        for y in 0..p {
            for x in 0..p {
                let mut v = base;
                for &(amp, u, vq, ph) in &waves {
                    v += amp * (TAU * (u * x as f64 + vq * y as f64) + ph).cos();
                }
                img[(c * p + y) * p + x] = v;
            }
        }
    }
    let shapes = rng.gen_range(2..=4);
    for _ in 0..shapes {
        let cy = rng.gen_range(0.0..p as f64);
        let cx = rng.gen_range(0.0..p as f64);
        let r = rng.gen_range(p as f64 / 8.0..p as f64 / 4.0);
        let color = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        for y in 0..p {
            for x in 0..p {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let wgt = ((r - d) / 1.5).clamp(0.0, 1.0);
                if wgt > 0.0 {
                    for c in 0..3 {
                        let i = (c * p + y) * p + x;
                        img[i] = img[i] * (1.0 - wgt) + color[c] * wgt;
                    }
                }
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_vec(img, &[3, p, p])
}

fn random_crop(img: &Tensor, p: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = img.shape();
    let (h, w) = (s[1], s[2]);
    let oy = rng.gen_range(0..=h - p);
    let ox = rng.gen_range(0..=w - p);
    let src = img.data();
    let mut out = vec![0.0; 3 * p * p];
    for c in 0..3 {
        for y in 0..p {
            for x in 0..p {
                out[(c * p + y) * p + x] = src[(c * h + oy + y) * w + ox + x];
            }
        }
    }
    Tensor::from_vec(out, &[3, p, p])
}

pub fn build_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut bases: Vec<(String, Tensor)> = Vec::new();
    match &spec.base_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
                .collect();
            paths.sort();
            for path in paths {
                let img = load_image(&path)?;
                let s = img.shape();
                if s[1] < spec.patch || s[2] < spec.patch {
                    continue; // too small to crop a patch from
                }
                bases.push((path.display().to_string(), img));
            }
        }
        None => {
            for i in 0..spec.count {
                bases.push((format!("proc:{i}"), procedural_patch(spec.seed, i, spec.patch)));
            }
        }
    }
    if bases.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut entries = Vec::with_capacity(bases.len());
    for (i, (path, img)) in bases.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, &["sample", &i.to_string()]);
        let clean = random_crop(img, spec.patch, &mut rng);
        let sample_seed: u64 = rng.gen();
        let strength = rng.gen_range(spec.strength.0..=spec.strength.1);
        let degraded = match spec.kind {
            DegradationKind::Haze => {
                let t = (1.0 - strength).clamp(0.05, 1.0);
                let a = rng.gen_range(0.7..=1.0);
                degrade_haze(&clean, t, a, sample_seed)?
            }
            DegradationKind::Rain => {
                let angle = rng.gen_range(-0.4..=0.4);
                degrade_rain(&clean, 4.0 * strength, angle, sample_seed)?
            }
            DegradationKind::Noise => degrade_noise(&clean, strength, sample_seed)?,
        };
        entries.push((path.clone(), Sample { degraded, clean, kind: spec.kind, seed: sample_seed }));
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut stream_rng(spec.seed, &["split"]));
    let n_val = (entries.len() as f64 * spec.val_fraction).floor() as usize;
    let val_set: HashSet<usize> = order[..n_val].iter().copied().collect();

    let mut manifest = String::new();
    let mut psnr_sum = 0.0;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, (path, sample)) in entries.into_iter().enumerate() {
        let split = if val_set.contains(&i) { "val" } else { "train" };
        manifest.push_str(&format!("{path}, {}, {}, {split}\n", sample.kind.name(), sample.seed));
        psnr_sum += psnr(&sample.degraded, &sample.clean, 1.0);
        if val_set.contains(&i) {
            val.push(sample);
        } else {
            train.push(sample);
        }
    }
    let baseline_psnr = psnr_sum / (train.len() + val.len()) as f64;
    Ok(Corpus { train, val, manifest, baseline_psnr })
}

/// Reverse the last axis; used for horizontal flips of `[3,H,W]` images.
pub fn hflip(t: &Tensor) -> Tensor {
    let s = t.shape().to_vec();
    let w = *s.last().unwrap();
    let src = t.data();
    let mut out = vec![0.0; t.numel()];
    for r in 0..t.numel() / w {
        for x in 0..w {
            out[r * w + x] = src[r * w + (w - 1 - x)];
        }
    }
    Tensor::from_vec(out, &s)
}

/// Deterministic permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &["epoch", &epoch.to_string()]));
    order
}

/// Shuffled, flip-augmented pass over the items for one epoch. Flips apply
/// to the degraded and clean image of a pair identically.
pub fn epoch_samples(items: &[Sample], seed: u64, epoch: u64) -> Vec<Sample> {
    let order = epoch_order(items.len(), seed, epoch);
    let mut rng = stream_rng(seed, &["flip", &epoch.to_string()]);
    order
        .into_iter()
        .map(|i| {
            let s = &items[i];
            if rng.gen::<bool>() {
                Sample { degraded: hflip(&s.degraded), clean: hflip(&s.clean), kind: s.kind, seed: s.seed }
            } else {
                s.clone()
            }
        })
        .collect()
}

/// Stack samples into a `([B,3,H,W] degraded, [B,3,H,W] clean)` batch pair.
pub fn stack_batch(samples: &[Sample]) -> Result<(Tensor, Tensor)> {
    if samples.is_empty() {
        return Err(Error::InvalidArg { op: "stack_batch", msg: "empty batch".into() });
    }
    let shape = samples[0].clean.shape().to_vec();
    let mut deg = Vec::with_capacity(samples.len() * samples[0].clean.numel());
    let mut clean = Vec::with_capacity(deg.capacity());
    for s in samples {
        if s.clean.shape() != shape || s.degraded.shape() != shape {
            return Err(Error::InvalidArg { op: "stack_batch", msg: "mixed sample shapes".into() });
        }
        deg.extend_from_slice(s.degraded.data());
        clean.extend_from_slice(s.clean.data());
    }
    let full = [&[samples.len()][..], &shape].concat();
    Ok((Tensor::from_vec(deg, &full), Tensor::from_vec(clean, &full)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_gray(v: f64, p: usize) -> Tensor {
        Tensor::full(&[3, p, p], v)
    }

    #[test]
    fn full_transmission_is_the_identity() {
        let clean = procedural_patch(1, 0, 16);
        let hazed = degrade_haze(&clean, 1.0, 0.8, 42).unwrap();
        assert_eq!(hazed.data(), clean.data());
    }

    #[test]
    fn haze_extremes_match_the_scattering_model() {
        // black image, full airlight: degraded = (1-t)*field, so the densest
        // point reads exactly 1-t and the clearest exactly 0
        let clean = flat_gray(0.0, 32);
        let hazed = degrade_haze(&clean, 0.5, 1.0, 7).unwrap();
        let hi = hazed.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = hazed.data().iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(hi, 0.5);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn haze_field_is_seed_deterministic() {
        let clean = procedural_patch(2, 0, 16);
        let a = degrade_haze(&clean, 0.4, 0.9, 5).unwrap();
        let b = degrade_haze(&clean, 0.4, 0.9, 5).unwrap();
        let c = degrade_haze(&clean, 0.4, 0.9, 6).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn haze_rejects_out_of_range_parameters() {
        let clean = flat_gray(0.5, 8);
        assert!(degrade_haze(&clean, 0.0, 0.5, 0).is_err());
        assert!(degrade_haze(&clean, 1.1, 0.5, 0).is_err());
        assert!(degrade_haze(&clean, 0.5, -0.1, 0).is_err());
        assert!(degrade_haze(&clean, 0.5, 1.5, 0).is_err());
    }

    #[test]
    fn zero_density_rain_is_the_identity() {
        let clean = procedural_patch(3, 0, 16);
        let rained = degrade_rain(&clean, 0.0, 0.2, 9).unwrap();
        assert_eq!(rained.data(), clean.data());
    }

    #[test]
    fn rain_only_brightens() {
        let clean = flat_gray(0.3, 32);
        let rained = degrade_rain(&clean, 4.0, 0.1, 11).unwrap();
        assert!(rained.data().iter().all(|&v| v >= 0.3));
        let brightened = rained.data().iter().filter(|&&v| v > 0.3).count();
        assert!(brightened > 0, "no streaks landed");
    }

    #[test]
    fn zero_sigma_noise_is_the_identity() {
        let clean = procedural_patch(4, 0, 16);
        let noised = degrade_noise(&clean, 0.0, 13).unwrap();
        assert_eq!(noised.data(), clean.data());
    }

    #[test]
    fn noise_std_tracks_sigma() {
        let sigma = 25.0 / 255.0;
        let clean = flat_gray(0.5, 64);
        let noised = degrade_noise(&clean, sigma, 17).unwrap();
        let n = noised.numel() as f64;
        let mean: f64 = noised.data().iter().zip(clean.data()).map(|(a, b)| a - b).sum::<f64>() / n;
        let var: f64 =
            noised.data().iter().zip(clean.data()).map(|(a, b)| (a - b - mean).powi(2)).sum::<f64>() / n;
        let rel = (var.sqrt() - sigma).abs() / sigma;
        assert!(rel < 0.05, "std off by {:.1}%", rel * 100.0);
    }

    #[test]
    fn procedural_corpus_is_reproducible_and_in_range() {
        let spec = CorpusSpec { count: 16, patch: 32, ..Default::default() };
        let a = build_corpus(&spec).unwrap();
        let b = build_corpus(&spec).unwrap();
        assert_eq!(a.manifest_hash(), b.manifest_hash());
        assert_eq!(a.train.len() + a.val.len(), 16);
        assert_eq!(a.val.len(), 2);
        for s in a.train.iter().chain(&a.val) {
            assert!(s.clean.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.degraded.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(a.baseline_psnr.is_finite() && a.baseline_psnr > 5.0, "baseline {}", a.baseline_psnr);
        let c = build_corpus(&CorpusSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.manifest_hash(), c.manifest_hash());
    }

    #[test]
    fn corpus_from_ppm_directory() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            save_image(&procedural_patch(20 + i, 0, 48), dir.path().join(format!("img{i}.ppm"))).unwrap();
        }
        let spec = CorpusSpec {
            base_dir: Some(dir.path().to_path_buf()),
            patch: 32,
            kind: DegradationKind::Haze,
            strength: (0.3, 0.6),
            ..Default::default()
        };
        let corpus = build_corpus(&spec).unwrap();
        assert_eq!(corpus.train.len() + corpus.val.len(), 3);
        assert!(corpus.manifest.contains("img0.ppm") && corpus.manifest.contains("haze"));
        for s in corpus.train.iter().chain(&corpus.val) {
            assert_eq!(s.clean.shape(), &[3, 32, 32]);
            assert!(s.degraded.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec { base_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        assert!(matches!(build_corpus(&spec), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn flip_is_an_involution_and_pairs_flip_together() {
        let spec = CorpusSpec { count: 8, patch: 16, ..Default::default() };
        let corpus = build_corpus(&spec).unwrap();
        let x = &corpus.train[0].clean;
        assert_eq!(hflip(&hflip(x)).data(), x.data());

        // find an epoch where some pair got flipped and check both halves
        let items = &corpus.train;
        let shuffled = epoch_samples(items, 3, 0);
        let originals: Vec<&Sample> = shuffled
            .iter()
            .map(|s| items.iter().find(|o| o.seed == s.seed).unwrap())
            .collect();
        let mut saw_flip = false;
        for (s, o) in shuffled.iter().zip(&originals) {
            if s.clean.data() != o.clean.data() {
                saw_flip = true;
                assert_eq!(hflip(&s.clean).data(), o.clean.data());
                assert_eq!(hflip(&s.degraded).data(), o.degraded.data());
            } else {
                assert_eq!(s.degraded.data(), o.degraded.data());
            }
        }
        assert!(saw_flip, "no flip in the first epoch; augmentation inert");
    }

    #[test]
    fn every_epoch_visits_every_item_once() {
        for epoch in 0..4 {
            let mut seen = epoch_order(13, 5, epoch);
            seen.sort_unstable();
            assert_eq!(seen, (0..13).collect::<Vec<_>>());
        }
        assert_ne!(epoch_order(13, 5, 0), epoch_order(13, 5, 1));
    }

    #[test]
    fn epoch_iteration_is_deterministic() {
        let spec = CorpusSpec { count: 8, patch: 16, ..Default::default() };
        let corpus = build_corpus(&spec).unwrap();
        let a = epoch_samples(&corpus.train, 9, 2);
        let b = epoch_samples(&corpus.train, 9, 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.degraded.data(), y.degraded.data());
        }
    }

    #[test]
    fn batches_stack_into_four_axis_pairs() {
        let spec = CorpusSpec { count: 5, patch: 16, val_fraction: 0.0, ..Default::default() };
        let corpus = build_corpus(&spec).unwrap();
        let (deg, clean) = stack_batch(&corpus.train[..4]).unwrap();
        assert_eq!(deg.shape(), &[4, 3, 16, 16]);
        assert_eq!(clean.shape(), &[4, 3, 16, 16]);
        assert_eq!(&clean.data()[..16 * 16 * 3], corpus.train[0].clean.data());
        assert!(stack_batch(&[]).is_err());
    }
}

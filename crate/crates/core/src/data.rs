//! Paired dataset loading, PNG I/O and synthetic dark/bright pairs.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub name: String,
    pub low: Image,
    pub high: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub split: String,
    pub pairs: Vec<Pair>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Decodes an 8- or 16-bit PNG into an RGB image in `[0, 1]`. Grayscale is
/// replicated over the three channels and alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    if !is_png(path) {
        return Err(Error::Image { path: path.into(), message: "only PNG files are supported".into() });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.into(), message: e.to_string() })?;
    Ok(from_dynamic(img))
}

fn from_dynamic(img: DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(img.color(), ColorType::L16 | ColorType::La16 | ColorType::Rgb16 | ColorType::Rgba16);
    let hwc: Vec<f64> = if wide {
        img.into_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    } else {
        img.into_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    };
    Tensor::from_hwc(h, w, 3, &hwc).expect("decoded buffer matches its dimensions")
}

/// Quantizes to 8 bits per channel.
pub fn to_rgb8(img: &Image) -> Result<RgbImage> {
    let (c, h, w) = img.chw();
    if c != 3 {
        return Err(Error::Shape(format!("PNG output needs 3 channels, got {c}")));
    }
    let raw = img.to_hwc().into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size"))
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let rgb = to_rgb8(img)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    rgb.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.into(), message: e.to_string() })
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads `root/<split>/{low,high}` when that directory exists, otherwise
/// `root/{low,high}`. Pairs are matched by file name and sorted.
pub fn load_pairs(root: &Path, split: &str) -> Result<PairedDataset> {
    let base = if root.join(split).join("low").is_dir() { root.join(split) } else { root.to_path_buf() };
    let (low_dir, high_dir) = (base.join("low"), base.join("high"));
    for d in [&low_dir, &high_dir] {
        if !d.is_dir() {
            return Err(Error::Dataset(format!("missing directory {}", d.display())));
        }
    }
    let low = list_dir(&low_dir)?;
    let high = list_dir(&high_dir)?;
    let name = |p: &PathBuf| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let low_names: Vec<String> = low.iter().map(name).collect();
    let high_names: Vec<String> = high.iter().map(name).collect();
    for (n, other, side) in low_names
        .iter()
        .map(|n| (n, &high_names, "high"))
        .chain(high_names.iter().map(|n| (n, &low_names, "low")))
    {
        if !other.contains(n) {
            return Err(Error::Dataset(format!("{n} has no counterpart in {side}/")));
        }
    }
    let mut pairs = Vec::with_capacity(low.len());
    for n in &low_names {
        let l = read_png(&low_dir.join(n))?;
        let h = read_png(&high_dir.join(n))?;
        if l.shape() != h.shape() {
            return Err(Error::Dataset(format!("{n}: low {:?} and high {:?} differ in shape", l.shape(), h.shape())));
        }
        let stem = Path::new(n).file_stem().and_then(|s| s.to_str()).unwrap_or(n).to_string();
        pairs.push(Pair { name: stem, low: l, high: h });
    }
    Ok(PairedDataset { split: split.to_string(), pairs })
}

/// Writes pairs as `root/{low,high}/<name>.png`.
pub fn write_pairs(root: &Path, pairs: &[Pair]) -> Result<()> {
    for p in pairs {
        write_png(&root.join("low").join(format!("{}.png", p.name)), &p.low)?;
        write_png(&root.join("high").join(format!("{}.png", p.name)), &p.high)?;
    }
    Ok(())
}

/// Ranges for synthetic darkening `clip(clean^gamma * s + noise, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub gamma: (f64, f64),
    pub scale: (f64, f64),
    pub noise: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { gamma: (2.0, 4.0), scale: (0.1, 0.5), noise: (0.0, 0.02), seed: 0 }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("gamma", self.gamma), ("scale", self.scale), ("noise", self.noise)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("synth {name} range ({lo}, {hi}) is not ordered")));
            }
        }
        if self.noise.0 < 0.0 {
            return Err(Error::Config("synth noise sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn pair_rng(spec: &SynthSpec, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed)
}

/// Darkens `clean`; `gamma`, `s` and `sigma` are drawn from `seed`.
pub fn synth_pair(clean: &Image, spec: &SynthSpec, seed: u64) -> (Image, Image) {
    let mut rng = pair_rng(spec, seed);
    let gamma = draw(&mut rng, spec.gamma);
    let s = draw(&mut rng, spec.scale);
    let sigma = draw(&mut rng, spec.noise);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dark = clean.map(|v| v.powf(gamma) * s);
    let dark = if sigma > 0.0 {
        let noise: Vec<f64> = (0..dark.len()).map(|_| sigma * normal.sample(&mut rng)).collect();
        let mut d = dark;
        d.data_mut().iter_mut().zip(noise).for_each(|(v, n)| *v += n);
        d
    } else {
        dark
    };
    (dark.clamp(0.0, 1.0), clean.clone())
}

/// A smooth colour gradient with a few flat ellipses and a faint sinusoidal
/// texture, in `[0, 1]`.
pub fn clean_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    let gy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    let mut img = Tensor::from_fn(3, h, w, |c, y, x| {
        base[c] + gx[c] * (x as f64 / w as f64 - 0.5) + gy[c] * (y as f64 / h as f64 - 0.5)
    });
    let n = rng.random_range(3..7);
    for _ in 0..n {
        let (cx, cy) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (rx, ry) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((x as f64 / w as f64 - cx) / rx, (y as f64 / h as f64 - cy) / ry);
                if u * u + v * v < 1.0 {
                    for (c, &cv) in col.iter().enumerate() {
                        img.set(c, y, x, cv);
                    }
                }
            }
        }
    }
    let freq = rng.random_range(2.0..8.0);
    let amp = rng.random_range(0.0..0.08);
    let (ca, sa) = (1f64.cos(), 1f64.sin());
    let tex = Tensor::from_fn(1, h, w, |_, y, x| {
        amp * (2.0 * std::f64::consts::PI * freq * (x as f64 / w as f64 * ca + y as f64 / h as f64 * sa)).sin()
    });
    for c in 0..3 {
        for (v, t) in img.plane_mut(c).iter_mut().zip(tex.plane(0)) {
            *v += t;
        }
    }
    img.clamp(0.0, 1.0)
}

/// `n` synthetic pairs named `synth_0000`, `synth_0001`, ...
pub fn synth_dataset(n: usize, h: usize, w: usize, spec: &SynthSpec, seed: u64) -> Vec<Pair> {
    (0..n)
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let clean = clean_image(s ^ spec.seed.rotate_left(17), h, w);
            let (low, high) = synth_pair(&clean, spec, s);
            Pair { name: format!("synth_{i:04}"), low, high }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_identity_settings() {
        let clean = clean_image(1, 16, 16);
        let spec = SynthSpec { gamma: (1.0, 1.0), scale: (1.0, 1.0), noise: (0.0, 0.0), seed: 3 };
        let (dark, c) = synth_pair(&clean, &spec, 9);
        assert_eq!(dark, clean);
        assert_eq!(c, clean);
    }

    #[test]
    fn synth_darkens_and_is_deterministic() {
        let spec = SynthSpec { noise: (0.0, 0.0), ..Default::default() };
        for seed in 0..8 {
            let clean = clean_image(seed, 24, 24);
            let (dark, _) = synth_pair(&clean, &spec, seed);
            assert!(dark.mean() < clean.mean());
        }
        let spec = SynthSpec::default();
        let clean = clean_image(5, 16, 16);
        assert_eq!(synth_pair(&clean, &spec, 4), synth_pair(&clean, &spec, 4));
        assert_ne!(synth_pair(&clean, &spec, 4).0, synth_pair(&clean, &spec, 5).0);
    }

    #[test]
    fn synth_spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        assert!(SynthSpec { gamma: (4.0, 2.0), ..Default::default() }.validate().is_err());
        assert!(SynthSpec { noise: (-0.1, 0.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn clean_images_stay_in_range() {
        let img = clean_image(11, 32, 48);
        assert_eq!(img.shape(), &[3, 32, 48]);
        assert!(img.min() >= 0.0 && img.max() <= 1.0);
        assert!(img.max() - img.min() > 0.05);
    }
}

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ftz::{label_map_pgm, load_tensor, save_tensor};
use crate::rng::RandomSource;
use crate::tensor::{ImageShape, ImageTensor, LabelMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Background is class 0; shapes take classes `1..num_classes`.
    pub num_classes: usize,
    pub shapes: Vec<ShapeKind>,
    pub texture_std: f64,
    /// Distance of each shape colour from the background grey.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        Self {
            count: 64,
            height: 32,
            width: 32,
            channels: 3,
            num_classes: 4,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Disk],
            texture_std: 0.05,
            contrast: 0.1,
            seed: 0,
        }
    }
}

const BACKGROUND: f64 = 0.5;
const PLACEMENT_RETRIES: usize = 64;

impl SynthDatasetSpec {
    fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidArgument("synthetic images must be at least 16x16".into()));
        }
        if self.num_classes < 2 || self.channels == 0 || self.shapes.is_empty() {
            return Err(Error::InvalidArgument(
                "need >= 2 classes, >= 1 channel and a nonempty shape palette".into(),
            ));
        }
        if !(self.texture_std >= 0.0) || !(0.0..=0.5).contains(&self.contrast) {
            return Err(Error::InvalidArgument("texture std must be >= 0 and contrast in [0, 0.5]".into()));
        }
        Ok(())
    }

    /// Colour of class `c`: the background grey pushed up or down along one
    /// channel, cycling through channels and signs.
    pub fn class_color(&self, class: usize) -> Vec<f64> {
        let mut color = vec![BACKGROUND; self.channels];
        if class > 0 {
            let i = class - 1;
            let sign = if (i / self.channels).is_multiple_of(2) { 1.0 } else { -1.0 };
            color[i % self.channels] += sign * self.contrast;
        }
        color
    }
}

/// Renders `count` images with 1–3 non-overlapping shapes each.
pub fn gen_synthetic_dataset(spec: &SynthDatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let root = RandomSource::new(spec.seed);
    Ok((0..spec.count)
        .map(|i| render(spec, &mut root.split(i as u64).rng()))
        .collect())
}

fn render<R: Rng>(spec: &SynthDatasetSpec, rng: &mut R) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u32; h * w];
    // occupied pixels grown by one so shapes never touch
    let mut blocked = vec![false; h * w];
    let wanted = rng.random_range(1..=3);
    for _ in 0..wanted {
        let class = rng.random_range(1..spec.num_classes) as u32;
        let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
        for _ in 0..PLACEMENT_RETRIES {
            let mask = random_mask(kind, h, w, rng);
            if mask.iter().any(|&p| blocked[p]) {
                continue;
            }
            for &p in &mask {
                labels[p] = class;
                let (i, j) = (p / w, p % w);
                for ni in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                    for nj in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                        blocked[ni * w + nj] = true;
                    }
                }
            }
            break;
        }
    }
    let colors: Vec<Vec<f64>> = (0..spec.num_classes).map(|c| spec.class_color(c)).collect();
    let mut data = Vec::with_capacity(h * w * spec.channels);
    for &l in &labels {
        for &base in &colors[l as usize] {
            let noise: f64 = if spec.texture_std > 0.0 {
                spec.texture_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            data.push((base + noise).clamp(0.0, 1.0) as f32);
        }
    }
    Sample {
        image: ImageTensor::new(ImageShape::new(h, w, spec.channels), data).expect("clamped"),
        labels: LabelMap::new(h, w, labels).expect("sized"),
    }
}

fn random_mask<R: Rng>(kind: ShapeKind, h: usize, w: usize, rng: &mut R) -> Vec<usize> {
    match kind {
        ShapeKind::Rectangle => {
            let rh = rng.random_range(4..=h / 2);
            let rw = rng.random_range(4..=w / 2);
            let top = rng.random_range(0..=h - rh);
            let left = rng.random_range(0..=w - rw);
            (top..top + rh)
                .flat_map(|i| (left..left + rw).map(move |j| i * w + j))
                .collect()
        }
        ShapeKind::Disk => {
            let r = rng.random_range(3..=h.min(w) / 4) as f64;
            let ci = rng.random_range(0.0..h as f64);
            let cj = rng.random_range(0.0..w as f64);
            (0..h * w)
                .filter(|&p| {
                    let di = (p / w) as f64 + 0.5 - ci;
                    let dj = (p % w) as f64 + 0.5 - cj;
                    di * di + dj * dj <= r * r
                })
                .collect()
        }
    }
}

/// Writes `img_NNNN.ftz`, `lbl_NNNN.ftz` and a PGM preview per sample.
pub fn save_dataset(dir: impl AsRef<Path>, samples: &[Sample], num_classes: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        save_tensor(dir.join(format!("img_{i:04}.ftz")), &s.image.to_raw()?)?;
        save_tensor(dir.join(format!("lbl_{i:04}.ftz")), &s.labels.to_raw()?)?;
        fs::write(dir.join(format!("lbl_{i:04}.pgm")), label_map_pgm(&s.labels, num_classes))?;
    }
    fs::write(dir.join("count.txt"), format!("{}\n", samples.len()))?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let count: usize = fs::read_to_string(dir.join("count.txt"))?
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad count.txt in {}", dir.display())))?;
    (0..count)
        .map(|i| {
            Ok(Sample {
                image: ImageTensor::from_raw(load_tensor(dir.join(format!("img_{i:04}.ftz")))?)?,
                labels: LabelMap::from_raw(load_tensor(dir.join(format!("lbl_{i:04}.ftz")))?)?,
            })
        })
        .collect()
}

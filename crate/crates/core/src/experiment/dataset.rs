//! Deterministic synthetic image corpora.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{load_png, save_png, RgbImage};
use crate::training::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    Gradients,
    Shapes,
    NoiseTextures,
    Mixed,
}

impl fmt::Display for ImageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageKind::Gradients => "gradients",
            ImageKind::Shapes => "shapes",
            ImageKind::NoiseTextures => "noise-textures",
            ImageKind::Mixed => "mixed",
        })
    }
}

impl FromStr for ImageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gradients" => Ok(ImageKind::Gradients),
            "shapes" => Ok(ImageKind::Shapes),
            "noise-textures" | "noise" => Ok(ImageKind::NoiseTextures),
            "mixed" => Ok(ImageKind::Mixed),
            other => Err(Error::validation(format!(
                "unknown image kind {other:?}; expected gradients, shapes, noise-textures or mixed"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: (usize, usize),
    pub kind: ImageKind,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 16,
            n_test: 5,
            resolution: (32, 32),
            kind: ImageKind::Mixed,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::validation("n_train and n_test must be >= 1"));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::validation("resolution must be non-zero"));
        }
        Ok(())
    }
}

/// Cover and hidden images of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub covers: Vec<RgbImage>,
    pub hiddens: Vec<RgbImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
}

// Each (split, role) draws from its own stream, so the splits never share
// random state.
const STREAM_TRAIN_COVER: u64 = 10;
const STREAM_TRAIN_HIDDEN: u64 = 11;
const STREAM_TEST_COVER: u64 = 12;
const STREAM_TEST_HIDDEN: u64 = 13;

pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let gen = |stream: u64, n: usize| -> Vec<RgbImage> {
        let mut rng = stream_rng(spec.seed, stream);
        (0..n).map(|_| gen_image(&mut rng, spec.kind, spec.resolution)).collect()
    };
    Ok(Dataset {
        train: Split {
            covers: gen(STREAM_TRAIN_COVER, spec.n_train),
            hiddens: gen(STREAM_TRAIN_HIDDEN, spec.n_train),
        },
        test: Split {
            covers: gen(STREAM_TEST_COVER, spec.n_test),
            hiddens: gen(STREAM_TEST_HIDDEN, spec.n_test),
        },
    })
}

fn gen_image(rng: &mut ChaCha8Rng, kind: ImageKind, (h, w): (usize, usize)) -> RgbImage {
    let kind = match kind {
        ImageKind::Mixed => [ImageKind::Gradients, ImageKind::Shapes, ImageKind::NoiseTextures][rng.random_range(0..3)],
        k => k,
    };
    match kind {
        ImageKind::Gradients => gradient(rng, h, w),
        ImageKind::Shapes => shapes(rng, h, w),
        _ => value_noise(rng, h, w),
    }
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    std::array::from_fn(|k| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * t).round().clamp(0.0, 255.0) as u8)
}

fn gradient(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    let (a, b): ([u8; 3], [u8; 3]) = (rng.random(), rng.random());
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let radial = rng.random_bool(0.3);
    let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut im = RgbImage::filled(h, w, a).expect("non-empty");
    for y in 0..h {
        for x in 0..w {
            let t = if radial {
                ((x as f64 - cx).hypot(y as f64 - cy) / diag).min(1.0)
            } else {
                let u = (x as f64 / w.max(2).saturating_sub(1) as f64 - 0.5) * dx
                    + (y as f64 / h.max(2).saturating_sub(1) as f64 - 0.5) * dy;
                (u / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0)
            };
            im.set_pixel(y, x, lerp(a, b, t));
        }
    }
    im
}

fn shapes(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    let mut im = RgbImage::filled(h, w, rng.random()).expect("non-empty");
    for _ in 0..rng.random_range(1..=4) {
        let color: [u8; 3] = rng.random();
        let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let r = rng.random_range(0.15..0.45) * h.min(w) as f64;
        let circle = rng.random_bool(0.5);
        let aspect = rng.random_range(0.5..2.0);
        for y in 0..h {
            for x in 0..w {
                let (ox, oy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if circle {
                    ox * ox + oy * oy <= r * r
                } else {
                    ox.abs() <= r * aspect && oy.abs() <= r / aspect
                };
                if inside {
                    im.set_pixel(y, x, color);
                }
            }
        }
    }
    im
}

/// Two octaves of bilinearly interpolated lattice noise per channel.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    let mut acc = vec![0.0f64; h * w * 3];
    for (cell, weight) in [(8usize, 0.7), (4usize, 0.3)] {
        let (gh, gw) = (h / cell + 2, w / cell + 2);
        let lattice: Vec<[f64; 3]> = (0..gh * gw).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (y as f64 / cell as f64, x as f64 / cell as f64);
                let (iy, ix) = (fy as usize, fx as usize);
                let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
                for k in 0..3 {
                    let at = |yy: usize, xx: usize| lattice[yy * gw + xx][k];
                    let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                    let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                    acc[(y * w + x) * 3 + k] += weight * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
    }
    let data = acc.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::new(h, w, data).expect("sized")
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Writes `train/{cover,hidden}/NNNN.png` and the same under `test/`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for (name, split) in [("train", &ds.train), ("test", &ds.test)] {
        for (role, imgs) in [("cover", &split.covers), ("hidden", &split.hiddens)] {
            let sub = dir.join(name).join(role);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(format!("creating {}", sub.display()), e))?;
            for (i, im) in imgs.iter().enumerate() {
                save_png(im, &sub.join(format!("{i:04}.png")))?;
            }
        }
    }
    Ok(())
}

fn load_sorted_pngs(dir: &Path, resolution: (usize, usize)) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_png(p)?.resize_nearest(resolution.0, resolution.1))
        .collect()
}

/// Loads a corpus laid out as [`write_dataset`] writes it, or a flat
/// directory of PNGs. A flat directory is split deterministically: sorted
/// files alternate cover/hidden, and the last `n_test` pairs form the test
/// split. Images are resized to `spec.resolution`.
pub fn import_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    if dir.join("train").join("cover").is_dir() {
        let load = |a: &str, b: &str| load_sorted_pngs(&dir.join(a).join(b), spec.resolution);
        let ds = Dataset {
            train: Split {
                covers: load("train", "cover")?,
                hiddens: load("train", "hidden")?,
            },
            test: Split {
                covers: load("test", "cover")?,
                hiddens: load("test", "hidden")?,
            },
        };
        for s in [&ds.train, &ds.test] {
            if s.covers.is_empty() || s.covers.len() != s.hiddens.len() {
                return Err(Error::validation(format!(
                    "{}: every split needs equally many cover and hidden images",
                    dir.display()
                )));
            }
        }
        return Ok(ds);
    }
    let all = load_sorted_pngs(dir, spec.resolution)?;
    let pairs = all.len() / 2;
    if pairs < spec.n_test + 1 {
        return Err(Error::validation(format!(
            "{} holds {} PNGs; need at least {} for n_test = {}",
            dir.display(),
            all.len(),
            2 * (spec.n_test + 1),
            spec.n_test
        )));
    }
    let covers: Vec<_> = all.iter().step_by(2).take(pairs).cloned().collect();
    let hiddens: Vec<_> = all.iter().skip(1).step_by(2).take(pairs).cloned().collect();
    let n_train = (pairs - spec.n_test).min(spec.n_train);
    Ok(Dataset {
        train: Split {
            covers: covers[..n_train].to_vec(),
            hiddens: hiddens[..n_train].to_vec(),
        },
        test: Split {
            covers: covers[pairs - spec.n_test..].to_vec(),
            hiddens: hiddens[pairs - spec.n_test..].to_vec(),
        },
    })
}

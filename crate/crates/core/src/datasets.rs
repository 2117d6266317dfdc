//! Traversal loading, ground truth, and a procedural synthetic dataset.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::image::{to_grayscale, GrayImage};
use crate::par::{self, Schedule};

/// Ordered frames of one route.
#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub images: Vec<GrayImage>,
    pub names: Vec<String>,
}

impl Traversal {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Paths of a reference/query pair plus its matching tolerance in frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub reference_dir: PathBuf,
    pub query_dir: PathBuf,
    #[serde(default)]
    pub tolerance: usize,
    #[serde(default)]
    pub gt_file: Option<PathBuf>,
}

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// First run of ASCII digits in the file stem.
fn frame_number(name: &str) -> Option<u64> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    let start = stem.find(|c: char| c.is_ascii_digit())?;
    let digits: String = stem[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Image files in `dir`, ordered by the number embedded in their names.
/// Files without a number sort last, by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", dir.display())));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image && path.is_file() {
            frames.push(path);
        }
    }
    if frames.is_empty() {
        return Err(Error::invalid(format!("no PNG or JPEG frames in {}", dir.display())));
    }
    frames.sort_by_cached_key(|p| {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        (frame_number(&name).unwrap_or(u64::MAX), name)
    });
    Ok(frames)
}

pub fn decode_rgb(path: &Path) -> Result<image::RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::format(format!("cannot decode {}: {e}", path.display())))
}

pub fn decode_gray(path: &Path) -> Result<GrayImage> {
    to_grayscale(&decode_rgb(path)?)
}

pub fn load_traversal(dir: impl AsRef<Path>) -> Result<Traversal> {
    load_traversal_with(dir.as_ref(), Schedule::default())
}

/// Decodes frames, possibly in parallel; output order is the sorted order.
pub fn load_traversal_with(dir: &Path, schedule: Schedule) -> Result<Traversal> {
    let frames = list_frames(dir)?;
    let images = par::map(schedule, &frames, |p| decode_gray(p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let names = frames
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    Ok(Traversal { images, names })
}

/// Identity mapping unless a CSV of `query_idx,ref_idx` rows is given. A
/// non-numeric first line is treated as a header.
pub fn load_ground_truth(spec: &DatasetSpec, n_query: usize, n_ref: usize) -> Result<GroundTruth> {
    let Some(path) = &spec.gt_file else {
        if n_query > n_ref {
            return Err(Error::invalid(format!(
                "{n_query} queries but only {n_ref} references; an identity ground truth needs n_query <= n_ref"
            )));
        }
        return Ok(GroundTruth::identity(n_query, spec.tolerance));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mapping = vec![None; n_query];
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once(',').and_then(|(q, r)| {
            Some((q.trim().parse::<usize>().ok()?, r.trim().parse::<usize>().ok()?))
        });
        let (q, r) = match parsed {
            Some(p) => p,
            None if line_no == 1 => continue,
            None => {
                return Err(Error::format(format!(
                    "{}:{line_no}: expected 'query_idx,ref_idx', got '{line}'",
                    path.display()
                )))
            }
        };
        if q >= n_query || r >= n_ref {
            return Err(Error::invalid(format!(
                "{}:{line_no}: pair ({q}, {r}) is out of range for {n_query} queries and {n_ref} references",
                path.display()
            )));
        }
        if mapping[q].replace(r).is_some() {
            return Err(Error::invalid(format!(
                "{}:{line_no}: query {q} is listed twice",
                path.display()
            )));
        }
    }
    let mapping = mapping
        .into_iter()
        .enumerate()
        .map(|(q, r)| r.ok_or_else(|| Error::invalid(format!("{}: query {q} has no entry", path.display()))))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth {
        mapping,
        tolerance: spec.tolerance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Perturbation {
    /// Added to every query pixel, in luma units.
    pub brightness_delta: f64,
    /// Horizontal camera offset of the query, in pixels.
    pub shift: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_places: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub perturbation: Perturbation,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_places: 100,
            width: 256,
            height: 128,
            seed: 0,
            perturbation: Perturbation::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_places < 2 {
            return Err(Error::invalid("a synthetic dataset needs at least two places"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("synthetic frames must be at least 8x8"));
        }
        let p = &self.perturbation;
        if !(p.brightness_delta >= 0.0 && p.noise_sigma >= 0.0) || !p.brightness_delta.is_finite() || !p.noise_sigma.is_finite() {
            return Err(Error::invalid("perturbation magnitudes must be finite and non-negative"));
        }
        Ok(())
    }
}

fn stream_seed(seed: u64, place: usize, stream: u64) -> u64 {
    let mut z = seed ^ (place as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug)]
enum Fill {
    Solid(f32),
    Stripes { a: f32, b: f32, period: f32, vertical: bool },
    Checker { a: f32, b: f32, cell: f32 },
}

impl Fill {
    fn at(&self, x: f32, y: f32) -> f32 {
        match *self {
            Fill::Solid(v) => v,
            Fill::Stripes { a, b, period, vertical } => {
                let t = if vertical { x } else { y };
                if (t / period).floor() as i64 % 2 == 0 { a } else { b }
            }
            Fill::Checker { a, b, cell } => {
                if ((x / cell).floor() as i64 + (y / cell).floor() as i64) % 2 == 0 { a } else { b }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32, fill: Fill },
    Disc { cx: f32, cy: f32, r: f32, fill: Fill },
}

impl Shape {
    fn sample(&self, x: f32, y: f32) -> Option<f32> {
        match *self {
            Shape::Rect { x0, y0, x1, y1, fill } => {
                (x >= x0 && x < x1 && y >= y0 && y < y1).then(|| fill.at(x - x0, y - y0))
            }
            Shape::Disc { cx, cy, r, fill } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * dx + dy * dy <= r * r).then(|| fill.at(x - cx, y - cy))
            }
        }
    }
}

/// Procedural scene over a world wider than one frame, so shifted views
/// reveal new content rather than repeated edges.
struct Scene {
    bg_lo: f32,
    bg_hi: f32,
    dir: (f32, f32),
    shapes: Vec<Shape>,
}

// Intensities stay inside this band so moderate brightness shifts do not
// saturate.
const LUMA_LO: f32 = 20.0;
const LUMA_HI: f32 = 210.0;

impl Scene {
    fn random(rng: &mut ChaCha8Rng, world_w: f32, h: f32) -> Self {
        let level = |rng: &mut ChaCha8Rng| rng.random_range(LUMA_LO..=LUMA_HI);
        let fill = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
            0 => Fill::Solid(level(rng)),
            1 => Fill::Stripes {
                a: level(rng),
                b: level(rng),
                period: rng.random_range(2.0..10.0),
                vertical: rng.random(),
            },
            _ => Fill::Checker {
                a: level(rng),
                b: level(rng),
                cell: rng.random_range(3.0..12.0),
            },
        };
        let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let bg_lo = rng.random_range(LUMA_LO..=LUMA_HI);
        let bg_hi = rng.random_range(LUMA_LO..=LUMA_HI);
        let mut shapes = Vec::new();
        for _ in 0..rng.random_range(10..18) {
            let w = rng.random_range(0.05..0.35) * world_w;
            let hh = rng.random_range(0.08..0.5) * h;
            let x0 = rng.random_range(-0.1 * world_w..world_w);
            let y0 = rng.random_range(-0.1 * h..h);
            let f = fill(rng);
            shapes.push(Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + hh, fill: f });
        }
        for _ in 0..rng.random_range(3..7) {
            let r = rng.random_range(0.04..0.2) * h.max(world_w / 2.0);
            let cx = rng.random_range(0.0..world_w);
            let cy = rng.random_range(0.0..h);
            let f = fill(rng);
            shapes.push(Shape::Disc { cx, cy, r, fill: f });
        }
        Scene {
            bg_lo,
            bg_hi,
            dir: (angle.cos(), angle.sin()),
            shapes,
        }
    }

    fn value(&self, x: f32, y: f32, world_w: f32, h: f32) -> f32 {
        let mut v = None;
        for s in self.shapes.iter().rev() {
            if let Some(s) = s.sample(x, y) {
                v = Some(s);
                break;
            }
        }
        v.unwrap_or_else(|| {
            let t = ((x / world_w) * self.dir.0 + (y / h) * self.dir.1) * 0.5 + 0.5;
            self.bg_lo + (self.bg_hi - self.bg_lo) * t.clamp(0.0, 1.0)
        })
    }
}

struct PlaceFrames {
    reference: GrayImage,
    query: GrayImage,
}

fn render_place(spec: &SynthSpec, place: usize) -> PlaceFrames {
    let (w, h) = (spec.width, spec.height);
    let p = spec.perturbation;
    let world_w = (w + w / 2) as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, place, 0));
    let scene = Scene::random(&mut rng, world_w, h as f32);

    let view = |offset: usize| -> Vec<f32> {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(scene.value((x + offset) as f32 + 0.5, y as f32 + 0.5, world_w, h as f32).round());
            }
        }
        out
    };
    let base = view(0);
    let reference = GrayImage::new(w, h, base.iter().map(|&v| v as u8).collect()).unwrap();

    let shifted = if p.shift == 0 { base } else { view(p.shift) };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, place, 1));
    let query = shifted
        .iter()
        .map(|&v| {
            let z: f64 = noise_rng.sample(StandardNormal);
            (v as f64 + p.brightness_delta + p.noise_sigma * z).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    PlaceFrames {
        reference,
        query: GrayImage::new(w, h, query).unwrap(),
    }
}

/// Reference and query traversals with an identity ground truth at
/// tolerance 0. Deterministic in the spec.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Traversal, Traversal, GroundTruth)> {
    spec.validate()?;
    let places: Vec<usize> = (0..spec.n_places).collect();
    let frames = par::map(Schedule::default(), &places, |&n| render_place(spec, n));
    let names: Vec<String> = places.iter().map(|n| format!("{n:05}.png")).collect();
    let (reference, query): (Vec<_>, Vec<_>) = frames.into_iter().map(|f| (f.reference, f.query)).unzip();
    Ok((
        Traversal {
            images: reference,
            names: names.clone(),
        },
        Traversal { images: query, names },
        GroundTruth::identity(spec.n_places, 0),
    ))
}

/// Writes `reference/`, `query/` and `gt.csv` under `out`.
pub fn write_synthetic(out: &Path, reference: &Traversal, query: &Traversal, gt: &GroundTruth) -> Result<()> {
    write_traversal(&out.join("reference"), reference)?;
    write_traversal(&out.join("query"), query)?;
    let mut csv = String::from("query_idx,ref_idx\n");
    for (q, r) in gt.mapping.iter().enumerate() {
        csv.push_str(&format!("{q},{r}\n"));
    }
    let path = out.join("gt.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(path, e))
}

pub fn write_traversal(dir: &Path, t: &Traversal) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (img, name) in t.images.iter().zip(&t.names) {
        let path = dir.join(name);
        img.to_image()
            .save(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    }
    Ok(())
}

/// Number of distinct rasters in a traversal.
pub fn distinct_images(t: &Traversal) -> usize {
    t.images.iter().map(|i| i.data()).collect::<HashSet<_>>().len()
}

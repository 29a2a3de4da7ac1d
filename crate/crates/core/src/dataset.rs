//! Synthetic Morse-code image dataset: glyph rendering, noise injection and
//! the on-disk dataset with its JSON manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::ImageBuffer;
use crate::morse::{self, MorseSequence, MorseSymbol};
use crate::{rng, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub max_rotation_deg: f64,
    pub max_translation_px: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter { max_rotation_deg: 0.0, max_translation_px: 0.0, scale_min: 1.0, scale_max: 1.0 };
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter { max_rotation_deg: 15.0, max_translation_px: 20.0, scale_min: 0.8, scale_max: 1.2 }
    }
}

/// Glyph geometry: dots are filled circles, dashes filled rectangles, laid
/// out left to right and centered on a square canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub canvas: usize,
    pub dot_radius: f64,
    pub dash_width: f64,
    pub dash_height: f64,
    pub symbol_gap: f64,
    pub foreground: f32,
    pub background: f32,
    pub jitter: Jitter,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            canvas: 512,
            dot_radius: 20.0,
            dash_width: 80.0,
            dash_height: 40.0,
            symbol_gap: 28.0,
            foreground: 0.0,
            background: 1.0,
            jitter: Jitter::default(),
        }
    }
}

impl RenderSpec {
    /// Default geometry scaled proportionally to a `canvas x canvas` image.
    pub fn for_canvas(canvas: usize) -> Self {
        let base = RenderSpec::default();
        let k = canvas as f64 / base.canvas as f64;
        RenderSpec {
            canvas,
            dot_radius: base.dot_radius * k,
            dash_width: base.dash_width * k,
            dash_height: base.dash_height * k,
            symbol_gap: base.symbol_gap * k,
            jitter: Jitter { max_translation_px: base.jitter.max_translation_px * k, ..base.jitter },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.canvas == 0 {
            return bad("canvas must be positive".into());
        }
        if !(self.dot_radius > 0.0 && self.dash_width > 0.0 && self.dash_height > 0.0 && self.symbol_gap >= 0.0) {
            return bad("glyph dimensions must be positive".into());
        }
        for v in [self.foreground, self.background] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("intensity {v} outside [0, 1]"));
            }
        }
        if self.foreground == self.background {
            return bad("foreground equals background".into());
        }
        let j = self.jitter;
        if !(j.max_rotation_deg >= 0.0
            && j.max_translation_px >= 0.0
            && j.scale_min > 0.0
            && j.scale_max >= j.scale_min)
        {
            return bad(format!("invalid jitter {j:?}"));
        }
        let widest = (4.0 * self.dash_width.max(2.0 * self.dot_radius) + 3.0 * self.symbol_gap) * j.scale_max;
        if widest > self.canvas as f64 {
            return Err(Error::SpecOverflow(format!(
                "a 4-symbol row at scale {} is {widest:.1} px wide, canvas is {}",
                j.scale_max, self.canvas
            )));
        }
        Ok(())
    }

    fn symbol_width(&self, s: MorseSymbol) -> f64 {
        match s {
            MorseSymbol::Dot => 2.0 * self.dot_radius,
            MorseSymbol::Dash => self.dash_width,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Rasterize one code with random rotation, translation and scale.
pub fn render<R: Rng + ?Sized>(seq: &MorseSequence, spec: &RenderSpec, rng: &mut R) -> Result<ImageBuffer> {
    spec.validate()?;
    let j = spec.jitter;
    let scale = uniform(rng, j.scale_min, j.scale_max);
    let angle = uniform(rng, -j.max_rotation_deg, j.max_rotation_deg).to_radians();
    let tx = uniform(rng, -j.max_translation_px, j.max_translation_px);
    let ty = uniform(rng, -j.max_translation_px, j.max_translation_px);

    // layout in unscaled glyph units, row centered on the origin
    let widths: Vec<f64> = seq.symbols().iter().map(|&s| spec.symbol_width(s)).collect();
    let row_w = widths.iter().sum::<f64>() + spec.symbol_gap * (widths.len().saturating_sub(1)) as f64;
    let row_h = spec.dash_height.max(2.0 * spec.dot_radius);
    let mut cursor = -row_w / 2.0;
    let shapes: Vec<(MorseSymbol, f64)> = seq
        .symbols()
        .iter()
        .zip(&widths)
        .map(|(&s, &w)| {
            let center = cursor + w / 2.0;
            cursor += w + spec.symbol_gap;
            (s, center)
        })
        .collect();

    let (sin, cos) = angle.sin_cos();
    let half_w = scale * (row_w / 2.0 * cos.abs() + row_h / 2.0 * sin.abs());
    let half_h = scale * (row_w / 2.0 * sin.abs() + row_h / 2.0 * cos.abs());
    let half_canvas = spec.canvas as f64 / 2.0;
    if tx.abs() + half_w > half_canvas || ty.abs() + half_h > half_canvas {
        return Err(Error::SpecOverflow(format!(
            "letter {} spans {:.1}x{:.1} px at offset ({tx:.1}, {ty:.1}) on a {} px canvas",
            seq.letter(),
            2.0 * half_w,
            2.0 * half_h,
            spec.canvas
        )));
    }

    let n = spec.canvas;
    let mut values = vec![spec.background; n * n];
    let (cx, cy) = (half_canvas + tx, half_canvas + ty);
    let y_range = ((cy - half_h).floor().max(0.0) as usize)..((cy + half_h).ceil() as usize).min(n);
    let x_range = ((cx - half_w).floor().max(0.0) as usize)..((cx + half_w).ceil() as usize).min(n);
    let r2 = spec.dot_radius * spec.dot_radius;
    for y in y_range {
        let py = y as f64 + 0.5 - cy;
        for x in x_range.clone() {
            let px = x as f64 + 0.5 - cx;
            // pixel center in glyph units
            let gx = (cos * px + sin * py) / scale;
            let gy = (-sin * px + cos * py) / scale;
            let inside = shapes.iter().any(|&(s, center)| match s {
                MorseSymbol::Dot => (gx - center).powi(2) + gy * gy <= r2,
                MorseSymbol::Dash => (gx - center).abs() <= spec.dash_width / 2.0 && gy.abs() <= spec.dash_height / 2.0,
            });
            if inside {
                values[y * n + x] = spec.foreground;
            }
        }
    }
    ImageBuffer::new(n, n, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Uniform,
    Gaussian,
    #[serde(rename = "saltpepper")]
    SaltPepper,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Clean, Condition::Uniform, Condition::Gaussian, Condition::SaltPepper];
    pub const NOISY: [Condition; 3] = [Condition::Uniform, Condition::Gaussian, Condition::SaltPepper];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Uniform => "uniform",
            Condition::Gaussian => "gaussian",
            Condition::SaltPepper => "saltpepper",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown condition {s:?}")))
    }
}

/// Corruption model. Parameters that do not belong to `kind` are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: Condition,
    /// Half-range of additive uniform noise.
    pub amplitude: f32,
    /// Standard deviation of additive Gaussian noise.
    pub sigma: f32,
    /// Per-pixel replacement probability of salt-and-pepper noise.
    pub p: f32,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        NoiseSpec { kind: Condition::Clean, amplitude: 0.0, sigma: 0.0, p: 0.0 }
    }

    pub fn uniform(amplitude: f32) -> Self {
        NoiseSpec { kind: Condition::Uniform, amplitude, ..Self::clean() }
    }

    pub fn gaussian(sigma: f32) -> Self {
        NoiseSpec { kind: Condition::Gaussian, sigma, ..Self::clean() }
    }

    pub fn salt_pepper(p: f32) -> Self {
        NoiseSpec { kind: Condition::SaltPepper, p, ..Self::clean() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.sigma >= 0.0 && (0.0..=1.0).contains(&self.p)) {
            return Err(Error::InvalidSpec(format!("invalid noise parameters {self:?}")));
        }
        Ok(())
    }

    /// Pre-clamp additive perturbation for `n` pixels; `None` for
    /// non-additive kinds.
    pub fn additive_deltas<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Option<Vec<f32>>> {
        self.validate()?;
        Ok(match self.kind {
            Condition::Uniform => {
                let a = self.amplitude;
                Some((0..n).map(|_| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 }).collect())
            }
            Condition::Gaussian => {
                let normal = Normal::new(0.0f32, self.sigma).expect("sigma validated");
                Some((0..n).map(|_| normal.sample(rng)).collect())
            }
            Condition::Clean | Condition::SaltPepper => None,
        })
    }
}

/// Per-condition noise settings of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSet {
    pub uniform: NoiseSpec,
    pub gaussian: NoiseSpec,
    pub saltpepper: NoiseSpec,
}

impl Default for NoiseSet {
    fn default() -> Self {
        NoiseSet {
            uniform: NoiseSpec::uniform(0.3),
            gaussian: NoiseSpec::gaussian(0.2),
            saltpepper: NoiseSpec::salt_pepper(0.1),
        }
    }
}

impl NoiseSet {
    pub fn get(&self, condition: Condition) -> NoiseSpec {
        match condition {
            Condition::Clean => NoiseSpec::clean(),
            Condition::Uniform => self.uniform,
            Condition::Gaussian => self.gaussian,
            Condition::SaltPepper => self.saltpepper,
        }
    }
}

/// Corrupt a copy of `img`; the input is never modified.
pub fn apply_noise<R: Rng + ?Sized>(img: &ImageBuffer, spec: &NoiseSpec, rng: &mut R) -> Result<ImageBuffer> {
    spec.validate()?;
    let (h, w) = (img.height(), img.width());
    match spec.kind {
        Condition::Clean => Ok(img.clone()),
        Condition::Uniform | Condition::Gaussian => {
            let deltas = spec.additive_deltas(h * w, rng)?.expect("additive kind");
            let values = img.values().iter().zip(deltas).map(|(&v, d)| v + d).collect();
            ImageBuffer::from_clamped(h, w, values)
        }
        Condition::SaltPepper => {
            let p = spec.p as f64;
            let values = img
                .values()
                .iter()
                .map(|&v| {
                    if rng.gen::<f64>() < p {
                        if rng.gen::<bool>() {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        v
                    }
                })
                .collect();
            ImageBuffer::new(h, w, values)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub letter: char,
    pub instance: usize,
    pub split: Split,
    pub condition: Condition,
    /// Relative to the dataset root.
    pub path: String,
}

impl ManifestItem {
    pub fn class(&self) -> usize {
        morse::letter_class(self.letter).expect("manifest letters are A-Z")
    }
}

/// Instances per letter and how many of them (the last ones) are held out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub per_letter: usize,
    pub test_per_letter: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { per_letter: 40, test_per_letter: 10 }
    }
}

impl SplitSpec {
    pub fn split_of(&self, instance: usize) -> Split {
        if instance + self.test_per_letter >= self.per_letter {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub render_spec: RenderSpec,
    pub noise_specs: NoiseSet,
    pub split: SplitSpec,
    pub items: Vec<ManifestItem>,
    /// Directory the manifest was loaded from; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(format!("{}: {e}", path.display())))?;
        manifest.root = root.to_path_buf();
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn path_of(&self, item: &ManifestItem) -> PathBuf {
        self.root.join(&item.path)
    }

    pub fn items(&self, split: Split, condition: Condition) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split && i.condition == condition)
    }

    /// Clean counterpart of a test item.
    pub fn clean_of(&self, item: &ManifestItem) -> Option<&ManifestItem> {
        self.items
            .iter()
            .find(|c| c.condition == Condition::Clean && c.letter == item.letter && c.instance == item.instance)
    }

    pub fn load_image(&self, item: &ManifestItem) -> Result<ImageBuffer> {
        ImageBuffer::read_png(&self.path_of(item))
    }

    /// Keep only the given items (e.g. a training subset), preserving order.
    pub fn filtered(&self, keep: impl Fn(&ManifestItem) -> bool) -> Self {
        DatasetManifest { items: self.items.iter().filter(|i| keep(i)).cloned().collect(), ..self.clone() }
    }
}

pub fn item_path(condition: Condition, letter: char, instance: usize) -> String {
    format!("{}/{letter}/{instance}.png", condition.name())
}

/// Seeded random stream of one `(letter, instance, condition)` image.
pub fn instance_stream(seed: u64, letter: char, instance: usize, condition: Condition) -> Result<ChaCha8Rng> {
    let class = morse::letter_class(letter).ok_or(Error::NonLetterInput(letter))?;
    Ok(rng::stream(seed, &[class as u64, instance as u64, condition.tag()]))
}

/// Render the clean image of one instance; a pure function of its arguments.
pub fn render_instance(spec: &RenderSpec, seed: u64, letter: char, instance: usize) -> Result<ImageBuffer> {
    let seq = morse::encode_letter(letter)?;
    render(&seq, spec, &mut instance_stream(seed, letter, instance, Condition::Clean)?)
}

/// Noisy variant of a clean instance image.
pub fn corrupt_instance(
    clean: &ImageBuffer,
    noise: &NoiseSpec,
    seed: u64,
    letter: char,
    instance: usize,
) -> Result<ImageBuffer> {
    apply_noise(clean, noise, &mut instance_stream(seed, letter, instance, noise.kind)?)
}

/// Write every clean instance, noisy variants of the held-out instances and
/// `manifest.json` under `out_dir`.
pub fn build_dataset(
    spec: &RenderSpec,
    noise: &NoiseSet,
    split: SplitSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    for c in Condition::NOISY {
        let n = noise.get(c);
        n.validate()?;
        if n.kind != c {
            return Err(Error::InvalidSpec(format!("{c} slot holds a {} spec", n.kind)));
        }
    }
    if split.per_letter == 0 || split.test_per_letter > split.per_letter {
        return Err(Error::InvalidConfig(format!("invalid split {split:?}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut items = Vec::new();
    for seq in morse::alphabet() {
        let letter = seq.letter();
        for instance in 0..split.per_letter {
            let clean = render_instance(spec, seed, letter, instance)?;
            let which = split.split_of(instance);
            let mut emit = |condition: Condition, img: &ImageBuffer| -> Result<()> {
                let path = item_path(condition, letter, instance);
                img.write_png(&out_dir.join(&path))?;
                items.push(ManifestItem { letter, instance, split: which, condition, path });
                Ok(())
            };
            emit(Condition::Clean, &clean)?;
            if which == Split::Test {
                for condition in Condition::NOISY {
                    let noisy = corrupt_instance(&clean, &noise.get(condition), seed, letter, instance)?;
                    emit(condition, &noisy)?;
                }
            }
        }
    }
    let manifest =
        DatasetManifest { seed, render_spec: *spec, noise_specs: *noise, split, items, root: out_dir.to_path_buf() };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

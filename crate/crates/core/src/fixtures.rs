//! Seeded synthetic slides, ground truth, and mock detector/classifier outputs.
//!
//! Everything here is deterministic in its seeds. Per-slide and per-tile
//! randomness comes from [`derive_seed`], which mixes a base seed with a stream
//! index, so results do not depend on scheduling or thread count.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{one_hot, HardClassifier};
use crate::category::{Category, HARD_CLASSES, NUM_CLASSES};
use crate::detection::{Detection, GroundTruthBox};
use crate::error::{check_range, Error, Result};
use crate::geometry::{BBox, Space};
use crate::pyramid::{TileGroundTruth, TileMeta};

/// Box counts per class in the tiled training corpus, used as class proportions.
pub const CORPUS_CLASS_COUNTS: [usize; NUM_CLASSES] = [
    21388, 19879, 13616, 9092, 16711, 20874, 2930, 18173, 9622, 6029,
];

const ROW_SUM_TOLERANCE: f64 = 1e-9;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

fn rng_for(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Splits `total` across classes in corpus proportions (largest remainder).
pub fn proportional_counts(total: usize) -> BTreeMap<Category, usize> {
    let sum: usize = CORPUS_CLASS_COUNTS.iter().sum();
    let exact: Vec<f64> = CORPUS_CLASS_COUNTS
        .iter()
        .map(|&c| c as f64 * total as f64 / sum as f64)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    Category::ALL.iter().copied().zip(counts).collect()
}

fn default_size_ranges() -> BTreeMap<Category, (f64, f64)> {
    use Category::*;
    BTreeMap::from([
        (Normal, (60.0, 200.0)),
        (Ascus, (50.0, 160.0)),
        (Asch, (30.0, 100.0)),
        (Lsil, (60.0, 180.0)),
        (Hsil, (30.0, 110.0)),
        (Agc, (40.0, 140.0)),
        (Ade, (40.0, 160.0)),
        (Vag, (20.0, 80.0)),
        (Mon, (10.0, 40.0)),
        (Dys, (40.0, 120.0)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub seed: u64,
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub counts: BTreeMap<Category, usize>,
    /// `(min, max)` long edge in pixels per class.
    pub size_ranges: BTreeMap<Category, (f64, f64)>,
    /// Placement attempts per cell before giving up.
    pub max_retries: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 0,
            image_id: "slide_000".into(),
            width: 4000,
            height: 3000,
            counts: proportional_counts(40),
            size_ranges: default_size_ranges(),
            max_retries: 500,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("slide size must be non-zero".into()));
        }
        for (&c, &(lo, hi)) in &self.size_ranges {
            if !(lo >= 1.0 && hi >= lo && hi <= self.width.min(self.height) as f64) {
                return Err(Error::Config(format!(
                    "size range ({lo}, {hi}) for {c} does not fit a {}x{} slide",
                    self.width, self.height
                )));
            }
        }
        for (&c, &n) in &self.counts {
            if n > 0 && !self.size_ranges.contains_key(&c) {
                return Err(Error::Config(format!("no size range for {c}")));
            }
        }
        Ok(())
    }
}

fn cell_color(c: Category) -> Rgb<u8> {
    let palette: [[u8; 3]; NUM_CLASSES] = [
        [196, 150, 190],
        [170, 120, 180],
        [150, 95, 170],
        [180, 135, 200],
        [130, 80, 160],
        [120, 160, 190],
        [95, 130, 175],
        [205, 175, 140],
        [160, 160, 120],
        [200, 120, 140],
    ];
    Rgb(palette[c.index()])
}

/// Renders a slide and its ground truth.
///
/// Cells are axis-aligned ellipses with a darker nucleus, placed without
/// overlap on a speckled background. Box corners land on whole pixels.
pub fn generate_slide(spec: &FixtureSpec) -> Result<(RgbImage, Vec<GroundTruthBox>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (sw, sh) = (spec.width as f64, spec.height as f64);
    let mut gts: Vec<GroundTruthBox> = Vec::new();

    for (&class, &n) in &spec.counts {
        let range = spec
            .size_ranges
            .get(&class)
            .copied()
            .unwrap_or((10.0, 10.0));
        for _ in 0..n {
            let mut placed = false;
            for _ in 0..spec.max_retries.max(1) {
                let long = sample_range(&mut rng, range).round();
                let aspect = rng.random_range(0.75..=1.0);
                let short = (long * aspect).round().max(range.0.min(long));
                let (w, h) = if rng.random_bool(0.5) {
                    (long, short)
                } else {
                    (short, long)
                };
                let x = rng.random_range(0.0..=(sw - w)).floor();
                let y = rng.random_range(0.0..=(sh - h)).floor();
                let bbox = BBox::slide(x, y, w, h)?;
                let clear = gts.iter().all(|g| {
                    let o = &g.bbox;
                    x + w + 2.0 <= o.x
                        || o.x2() + 2.0 <= x
                        || y + h + 2.0 <= o.y
                        || o.y2() + 2.0 <= y
                });
                if clear {
                    gts.push(GroundTruthBox::new(bbox, class, spec.image_id.clone()));
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Contract(format!(
                    "could not place a {class} cell on {} after {} attempts",
                    spec.image_id, spec.max_retries
                )));
            }
        }
    }

    let noise_seed = rng.random::<u64>();
    let width = spec.width;
    let row_bytes = width as usize * 3;
    let mut buf = vec![0u8; row_bytes * spec.height as usize];
    buf.par_chunks_mut(row_bytes)
        .enumerate()
        .for_each(|(y, row)| {
            let yc = y as f64 + 0.5;
            for x in 0..width as usize {
                let n = (splitmix64(noise_seed ^ ((y as u64) << 32 | x as u64)) & 0x0f) as u8;
                row[x * 3] = 228 + n;
                row[x * 3 + 1] = 214 + n;
                row[x * 3 + 2] = 222 + n;
            }
            for g in &gts {
                let b = &g.bbox;
                if yc < b.y || yc >= b.y2() {
                    continue;
                }
                let (cx, cy) = (b.x + b.w / 2.0, b.y + b.h / 2.0);
                let (rx, ry) = (b.w / 2.0, b.h / 2.0);
                let dy = (yc - cy) / ry;
                let cell = cell_color(g.category);
                for x in b.x as usize..(b.x2() as usize).min(width as usize) {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let r2 = dx * dx + dy * dy;
                    if r2 <= 1.0 {
                        let px = if r2 <= 0.09 { Rgb([60, 40, 90]) } else { cell };
                        row[x * 3..x * 3 + 3].copy_from_slice(&px.0);
                    }
                }
            }
        });
    let img = RgbImage::from_raw(spec.width, spec.height, buf).expect("buffer sized to dimensions");
    Ok((img, gts))
}

/// A batch of slides; every `negative_every`-th slide (index 0 included) gets
/// no precancerous or cancerous cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetSpec {
    pub slides: usize,
    pub negative_every: usize,
    pub slide: FixtureSpec,
}

impl Default for SetSpec {
    fn default() -> Self {
        SetSpec {
            slides: 20,
            negative_every: 4,
            slide: FixtureSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSlide {
    pub image_id: String,
    pub seed: u64,
    pub raster: RgbImage,
    pub gts: Vec<GroundTruthBox>,
}

impl SyntheticSlide {
    /// Whether any ground truth is of a precancerous or cancerous class.
    pub fn is_positive(&self) -> bool {
        self.gts.iter().any(|g| g.category.is_positive())
    }
}

impl SetSpec {
    pub fn slide_spec(&self, index: usize) -> FixtureSpec {
        let mut spec = self.slide.clone();
        spec.seed = derive_seed(self.slide.seed, index as u64);
        spec.image_id = format!("slide_{index:03}");
        if self.negative_every > 0 && index.is_multiple_of(self.negative_every) {
            for (c, n) in spec.counts.iter_mut() {
                if c.is_positive() {
                    *n = 0;
                }
            }
        }
        spec
    }
}

pub fn generate_set(spec: &SetSpec) -> Result<Vec<SyntheticSlide>> {
    (0..spec.slides)
        .into_par_iter()
        .map(|i| {
            let s = spec.slide_spec(i);
            let (raster, gts) = generate_slide(&s)?;
            Ok(SyntheticSlide {
                image_id: s.image_id,
                seed: s.seed,
                raster,
                gts,
            })
        })
        .collect()
}

/// Corruption model for the mock detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Standard deviation of the Gaussian jitter on x, y, w and h, in pixels.
    pub jitter_sigma: f64,
    pub miss_rate: f64,
    /// Expected spurious detections per image.
    pub false_positive_rate: f64,
    /// Row-stochastic `[truth][predicted]` class confusion.
    pub confusion: [[f64; NUM_CLASSES]; NUM_CLASSES],
    /// Pairs of classes whose confusion rows are exchanged, applied on top of `confusion`.
    pub swaps: Vec<(Category, Category)>,
    /// Objectness range for detections of real cells.
    pub matched_score: (f64, f64),
    /// Objectness range for spurious detections.
    pub spurious_score: (f64, f64),
}

fn identity10() -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
    let mut m = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            seed: 0,
            jitter_sigma: 2.0,
            miss_rate: 0.05,
            false_positive_rate: 1.0,
            confusion: identity10(),
            swaps: Vec::new(),
            matched_score: (0.6, 1.0),
            spurious_score: (0.05, 0.6),
        }
    }
}

impl NoiseSpec {
    /// A perfect detector: every cell found exactly, with score 1.
    pub fn zero() -> NoiseSpec {
        NoiseSpec {
            jitter_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            matched_score: (1.0, 1.0),
            ..NoiseSpec::default()
        }
    }

    /// The confusion matrix with `swaps` applied.
    pub fn effective_confusion(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut m = self.confusion;
        for &(a, b) in &self.swaps {
            m.swap(a.index(), b.index());
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        check_range("jitter_sigma", self.jitter_sigma, 0.0, f64::MAX)?;
        check_range("miss_rate", self.miss_rate, 0.0, 1.0)?;
        check_range("false_positive_rate", self.false_positive_rate, 0.0, 1e6)?;
        for (lo, hi) in [self.matched_score, self.spurious_score] {
            check_range("score range start", lo, 0.0, 1.0)?;
            check_range("score range end", hi, lo, 1.0)?;
        }
        check_stochastic(self.confusion.iter().map(|r| r.as_slice()))
    }
}

fn check_stochastic<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    for (i, row) in rows.enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| v.is_nan() || *v < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Config(format!(
                "confusion row {i} is not a probability distribution (sums to {sum})"
            )));
        }
    }
    Ok(())
}

fn sample_row(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Simulated detector output for the ground truth of one image (or tile).
///
/// `bounds` is the image extent and `space` the frame detections are tagged
/// with; `stream` selects the random sub-stream, typically a slide/tile key.
pub fn mock_detect(
    gts: &[GroundTruthBox],
    bounds: (f64, f64),
    space: Space,
    noise: &NoiseSpec,
    stream: u64,
) -> Result<Vec<Detection>> {
    let seen: Vec<(&GroundTruthBox, f64)> = gts.iter().map(|g| (g, 1.0)).collect();
    detect_visible(&seen, bounds, space, noise, stream)
}

/// [`mock_detect`] on a tile's projected ground truth. A cell cut by the tile
/// border is reported with its objectness scaled by the visible fraction, so
/// complete views outrank partial ones when layers are merged.
pub fn mock_detect_tile(
    gts: &[TileGroundTruth],
    meta: &TileMeta,
    noise: &NoiseSpec,
    stream: u64,
) -> Result<Vec<Detection>> {
    let seen: Vec<(&GroundTruthBox, f64)> =
        gts.iter().map(|t| (&t.gt, t.visible_fraction)).collect();
    let bounds = (meta.size.0 as f64, meta.size.1 as f64);
    detect_visible(&seen, bounds, meta.space(), noise, stream)
}

fn detect_visible(
    gts: &[(&GroundTruthBox, f64)],
    bounds: (f64, f64),
    space: Space,
    noise: &NoiseSpec,
    stream: u64,
) -> Result<Vec<Detection>> {
    noise.validate()?;
    let mut rng = rng_for(noise.seed, stream);
    let confusion = noise.effective_confusion();
    let jitter = Normal::new(0.0, noise.jitter_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (bw, bh) = bounds;
    let mut out = Vec::with_capacity(gts.len());

    for &(g, visible) in gts {
        let missed = rng.random::<f64>() < noise.miss_rate;
        let noise4: [f64; 4] = std::array::from_fn(|_| {
            if noise.jitter_sigma > 0.0 {
                jitter.sample(&mut rng)
            } else {
                0.0
            }
        });
        let class = Category::ALL[sample_row(&mut rng, &confusion[g.category.index()])];
        let objectness = sample_range(&mut rng, noise.matched_score) * visible.clamp(0.0, 1.0);
        if missed {
            continue;
        }
        let b = &g.bbox;
        let w = (b.w + noise4[2]).max(1.0).min(bw);
        let h = (b.h + noise4[3]).max(1.0).min(bh);
        let x = (b.x + noise4[0]).clamp(0.0, (bw - w).max(0.0));
        let y = (b.y + noise4[1]).clamp(0.0, (bh - h).max(0.0));
        out.push(Detection::certain(
            BBox::new(x, y, w, h, space)?,
            objectness,
            class,
        )?);
    }

    let whole = noise.false_positive_rate.floor();
    let extra =
        whole as usize + usize::from(rng.random::<f64>() < noise.false_positive_rate - whole);
    for _ in 0..extra {
        let class = Category::ALL[rng.random_range(0..NUM_CLASSES)];
        let w = rng.random_range(20.0..=120.0f64).min(bw);
        let h = rng.random_range(20.0..=120.0f64).min(bh);
        let x = rng.random_range(0.0..=(bw - w));
        let y = rng.random_range(0.0..=(bh - h));
        let objectness = sample_range(&mut rng, noise.spurious_score);
        out.push(Detection::certain(
            BBox::new(x, y, w, h, space)?,
            objectness,
            class,
        )?);
    }
    Ok(out)
}

/// Random sub-stream key for one tile of one image.
pub fn stream_key(image_id: &str, tile_id: u32) -> u64 {
    let base = image_id
        .bytes()
        .fold(0x00C0_FFEE_u64, |acc, b| splitmix64(acc ^ b as u64));
    derive_seed(base, tile_id as u64)
}

/// Mock hard-example classifier description, as stored in JSON or TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MockClassifierSpec {
    /// Always agrees with the incoming label.
    Identity,
    /// Always answers `class` with probability 1.
    Constant { class: Category },
    /// Row `i` is the output distribution for incoming hard class `i`
    /// (ASCUS, ASCH, LSIL, HSIL order).
    Confusion {
        matrix: [[f64; 4]; 4],
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct MockClassifier {
    matrix: [[f64; 4]; 4],
    seed: u64,
}

/// Builds the classifier described by `spec`.
pub fn mock_classify(spec: &MockClassifierSpec) -> Result<MockClassifier> {
    let (matrix, seed) = match spec {
        MockClassifierSpec::Identity => {
            let mut m = [[0.0; 4]; 4];
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            (m, 0)
        }
        MockClassifierSpec::Constant { class } => {
            let row = one_hot(*class).ok_or_else(|| {
                Error::Config(format!(
                    "constant classifier class {class} is not a hard class"
                ))
            })?;
            ([row; 4], 0)
        }
        MockClassifierSpec::Confusion { matrix, seed } => {
            check_stochastic(matrix.iter().map(|r| r.as_slice()))?;
            (*matrix, *seed)
        }
    };
    Ok(MockClassifier { matrix, seed })
}

impl MockClassifier {
    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.matrix
    }

    fn detection_key(det: &Detection) -> u64 {
        let b = &det.bbox;
        [b.x, b.y, b.w, b.h, det.objectness]
            .iter()
            .fold(det.category.index() as u64, |acc, v| {
                splitmix64(acc ^ v.to_bits())
            })
    }
}

impl HardClassifier for MockClassifier {
    fn classify(&self, _patch: &RgbImage, det: &Detection) -> [f64; 4] {
        let Some(incoming) = det.category.hard_index() else {
            return [0.25; 4];
        };
        let row = &self.matrix[incoming];
        let chosen = match row.iter().position(|&p| p == 1.0) {
            Some(i) => i,
            None => sample_row(&mut rng_for(self.seed, Self::detection_key(det)), row),
        };
        one_hot(HARD_CLASSES[chosen]).expect("hard class")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(total: usize) -> FixtureSpec {
        FixtureSpec {
            width: 800,
            height: 600,
            counts: proportional_counts(total),
            ..FixtureSpec::default()
        }
    }

    #[test]
    fn proportional_counts_sum() {
        for total in [0, 1, 10, 40, 137] {
            assert_eq!(proportional_counts(total).values().sum::<usize>(), total);
        }
        let c = proportional_counts(138314);
        assert_eq!(c[&Category::Normal], 21388);
        assert_eq!(c[&Category::Ade], 2930);
    }

    #[test]
    fn empty_slide_is_background() {
        let spec = FixtureSpec {
            counts: BTreeMap::new(),
            ..small_spec(0)
        };
        let (img, gts) = generate_slide(&spec).unwrap();
        assert!(gts.is_empty());
        assert_eq!(img.dimensions(), (800, 600));
        assert!(img.pixels().all(|p| p[0] >= 228 && p[1] >= 214));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(12);
        let (a, ga) = generate_slide(&spec).unwrap();
        let (b, gb) = generate_slide(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let other = FixtureSpec { seed: 1, ..spec };
        assert_ne!(generate_slide(&other).unwrap().1, ga);
    }

    #[test]
    fn exact_counts_in_bounds_and_disjoint() {
        let counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 5)).collect();
        let spec = FixtureSpec {
            counts,
            ..FixtureSpec::default()
        };
        let (_, gts) = generate_slide(&spec).unwrap();
        assert_eq!(gts.len(), 50);
        for c in Category::ALL {
            assert_eq!(gts.iter().filter(|g| g.category == c).count(), 5);
        }
        for (i, g) in gts.iter().enumerate() {
            let b = &g.bbox;
            assert!(b.x >= 0.0 && b.y >= 0.0 && b.x2() <= 4000.0 && b.y2() <= 3000.0);
            assert!(b.w >= 1.0 && b.h >= 1.0);
            for o in &gts[i + 1..] {
                assert_eq!(crate::geometry::iou(b, &o.bbox).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn crowded_slide_fails_with_class() {
        let spec = FixtureSpec {
            width: 100,
            height: 100,
            counts: BTreeMap::from([(Category::Lsil, 50)]),
            size_ranges: BTreeMap::from([(Category::Lsil, (60.0, 60.0))]),
            max_retries: 20,
            ..FixtureSpec::default()
        };
        let err = generate_slide(&spec).unwrap_err();
        assert!(err.to_string().contains("lsil"), "{err}");
    }

    fn some_gts() -> Vec<GroundTruthBox> {
        let spec = small_spec(20);
        generate_slide(&spec).unwrap().1
    }

    #[test]
    fn zero_noise_echoes_ground_truth() {
        let gts = some_gts();
        let dets = mock_detect(&gts, (800.0, 600.0), Space::Slide, &NoiseSpec::zero(), 7).unwrap();
        assert_eq!(dets.len(), gts.len());
        for (d, g) in dets.iter().zip(&gts) {
            assert_eq!(d.bbox, g.bbox);
            assert_eq!(d.category, g.category);
            assert_eq!(d.final_score, 1.0);
        }
    }

    #[test]
    fn full_miss_rate_empties_output() {
        let noise = NoiseSpec {
            miss_rate: 1.0,
            ..NoiseSpec::zero()
        };
        let dets = mock_detect(&some_gts(), (800.0, 600.0), Space::Slide, &noise, 7).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn swap_confusion_is_exact() {
        let noise = NoiseSpec {
            swaps: vec![(Category::Asch, Category::Hsil)],
            ..NoiseSpec::zero()
        };
        let gts = some_gts();
        let dets = mock_detect(&gts, (800.0, 600.0), Space::Slide, &noise, 3).unwrap();
        for (d, g) in dets.iter().zip(&gts) {
            let want = match g.category {
                Category::Asch => Category::Hsil,
                Category::Hsil => Category::Asch,
                c => c,
            };
            assert_eq!(d.category, want);
        }
    }

    #[test]
    fn noisy_detector_is_deterministic_per_stream() {
        let gts = some_gts();
        let noise = NoiseSpec::default();
        let a = mock_detect(&gts, (800.0, 600.0), Space::Slide, &noise, 11).unwrap();
        let b = mock_detect(&gts, (800.0, 600.0), Space::Slide, &noise, 11).unwrap();
        assert_eq!(a, b);
        for d in &a {
            assert!(d.bbox.x >= 0.0 && d.bbox.x2() <= 800.0 + 1e-9);
        }
    }

    #[test]
    fn invalid_noise_rejected() {
        let mut noise = NoiseSpec::zero();
        noise.confusion[0][1] = 0.5;
        assert!(mock_detect(&[], (10.0, 10.0), Space::Slide, &noise, 0).is_err());
        let noise = NoiseSpec {
            miss_rate: 1.5,
            ..NoiseSpec::zero()
        };
        assert!(noise.validate().is_err());
    }

    fn hard_det(cat: Category, x: f64) -> Detection {
        Detection::certain(BBox::slide(x, 0.0, 10.0, 10.0).unwrap(), 0.8, cat).unwrap()
    }

    #[test]
    fn classifier_specs() {
        let blank = RgbImage::new(1, 1);
        let id = mock_classify(&MockClassifierSpec::Identity).unwrap();
        for c in HARD_CLASSES {
            assert_eq!(id.classify(&blank, &hard_det(c, 0.0)), one_hot(c).unwrap());
        }
        let perm = MockClassifierSpec::Confusion {
            matrix: [
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
            ],
            seed: 0,
        };
        let p = mock_classify(&perm).unwrap();
        assert_eq!(
            p.classify(&blank, &hard_det(Category::Ascus, 0.0)),
            one_hot(Category::Lsil).unwrap()
        );
        assert_eq!(
            p.classify(&blank, &hard_det(Category::Hsil, 0.0)),
            one_hot(Category::Asch).unwrap()
        );

        let bad = MockClassifierSpec::Confusion {
            matrix: [[0.5; 4]; 4],
            seed: 0,
        };
        assert!(mock_classify(&bad).is_err());
        assert!(mock_classify(&MockClassifierSpec::Constant {
            class: Category::Agc
        })
        .is_err());
    }

    #[test]
    fn classifier_spec_json() {
        let s: MockClassifierSpec = serde_json::from_str(r#"{"type":"identity"}"#).unwrap();
        assert_eq!(s, MockClassifierSpec::Identity);
        let s: MockClassifierSpec =
            serde_json::from_str(r#"{"type":"constant","class":"hsil"}"#).unwrap();
        assert_eq!(
            s,
            MockClassifierSpec::Constant {
                class: Category::Hsil
            }
        );
        let s: MockClassifierSpec = serde_json::from_str(
            r#"{"type":"confusion","matrix":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#,
        )
        .unwrap();
        assert!(matches!(s, MockClassifierSpec::Confusion { seed: 0, .. }));
    }

    #[test]
    fn stochastic_classifier_frequencies() {
        let row = [0.1, 0.2, 0.3, 0.4];
        let clf = mock_classify(&MockClassifierSpec::Confusion {
            matrix: [row; 4],
            seed: 42,
        })
        .unwrap();
        let blank = RgbImage::new(1, 1);
        let trials = 10_000;
        let mut counts = [0usize; 4];
        for t in 0..trials {
            let out = clf.classify(&blank, &hard_det(Category::Lsil, t as f64));
            counts[out.iter().position(|&p| p == 1.0).unwrap()] += 1;
        }
        for (n, p) in counts.iter().zip(row) {
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*n as f64 - trials as f64 * p).abs() <= 3.0 * sigma,
                "{counts:?}"
            );
        }
    }
}

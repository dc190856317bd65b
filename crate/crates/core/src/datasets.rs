//! Evaluation sample discovery and image loading.
//!
//! Two on-disk conventions are supported:
//!
//! * MVTec-AD: `<root>/<category>/test/<defect_type>/<image>`, with
//!   `good` marking normal samples. `train/` and `ground_truth/` are ignored.
//! * VisA: a split table with columns `object`, `split`, `label`, `image`
//!   (paths relative to the root). Only `split == test` rows are used.
//!
//! [`generate_synthetic`] writes a small MVTec-style tree for hermetic runs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, CategoryId, ImageBuffer, Label};

pub const GOOD: &str = "good";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Path relative to the dataset root, `/`-separated.
    pub sample_id: String,
    pub category: CategoryId,
    pub label: Label,
    pub image_path: PathBuf,
    pub defect_type: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MvtecAd,
    Visa,
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvtec" | "mvtec-ad" => Ok(DatasetKind::MvtecAd),
            "visa" => Ok(DatasetKind::Visa),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub samples: Vec<SampleRecord>,
    pub categories: Vec<CategoryId>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Keeps only samples of the named categories.
    pub fn filtered(&self, categories: &[String]) -> Self {
        let keep = |c: &CategoryId| categories.iter().any(|n| n == c.name());
        Self {
            kind: self.kind,
            root: self.root.clone(),
            samples: self.samples.iter().filter(|s| keep(&s.category)).cloned().collect(),
            categories: self.categories.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }

    fn from_samples(kind: DatasetKind, root: &Path, samples: Vec<SampleRecord>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset(root.to_owned()));
        }
        let mut ids = BTreeSet::new();
        for s in &samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::Schema(format!("duplicate sample {}", s.sample_id)));
            }
        }
        let categories: BTreeSet<CategoryId> = samples.iter().map(|s| s.category.clone()).collect();
        Ok(Self {
            kind,
            root: root.to_owned(),
            categories: categories.into_iter().collect(),
            samples,
        })
    }
}

fn is_hidden(name: &str) -> bool {
    name.starts_with('.')
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Sorted `(name, path)` entries of `dir`, skipping hidden ones.
fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if is_hidden(&name) {
            log::debug!("skipping hidden entry {}", entry.path().display());
            continue;
        }
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

fn passes(filter: Option<&[String]>, name: &str) -> bool {
    filter.is_none_or(|f| f.iter().any(|c| c == name))
}

pub fn discover_mvtec(root: &Path, categories: Option<&[String]>) -> Result<DatasetManifest> {
    discover_mvtec_as(DatasetKind::MvtecAd, root, categories)
}

fn discover_mvtec_as(kind: DatasetKind, root: &Path, categories: Option<&[String]>) -> Result<DatasetManifest> {
    let mut samples = Vec::new();
    for (cat_name, cat_dir) in sorted_entries(root)? {
        let test_dir = cat_dir.join("test");
        if !cat_dir.is_dir() || !test_dir.is_dir() || !passes(categories, &cat_name) {
            continue;
        }
        let category = CategoryId::new(&cat_name)?;
        for (defect, defect_dir) in sorted_entries(&test_dir)? {
            if !defect_dir.is_dir() {
                continue;
            }
            let label = if defect == GOOD { Label::Normal } else { Label::Anomaly };
            for (file, path) in sorted_entries(&defect_dir)? {
                if !path.is_file() || !has_image_extension(&path) {
                    log::debug!("skipping non-image {}", path.display());
                    continue;
                }
                samples.push(SampleRecord {
                    sample_id: format!("{cat_name}/test/{defect}/{file}"),
                    category: category.clone(),
                    label,
                    image_path: path,
                    defect_type: defect.clone(),
                });
            }
        }
    }
    DatasetManifest::from_samples(kind, root, samples)
}

pub fn discover_visa(root: &Path, split_file: &Path, categories: Option<&[String]>) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(split_file)
        .map_err(|e| csv_error(split_file, e))?;
    let headers = reader.headers().map_err(|e| csv_error(split_file, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name:?}", split_file.display())))
    };
    let (c_object, c_split, c_label, c_image) = (column("object")?, column("split")?, column("label")?, column("image")?);

    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(split_file, e))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        if field(c_split) != "test" || !passes(categories, field(c_object)) {
            continue;
        }
        let (label, defect_type) = match field(c_label) {
            "normal" => (Label::Normal, GOOD),
            "anomaly" => (Label::Anomaly, "anomaly"),
            other => {
                return Err(Error::Schema(format!(
                    "{} row {}: unknown label {other:?}",
                    split_file.display(),
                    row + 2
                )))
            }
        };
        let rel = field(c_image);
        let image_path = root.join(rel);
        if !image_path.is_file() {
            return Err(Error::io(
                &image_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "listed in split table but missing"),
            ));
        }
        samples.push(SampleRecord {
            sample_id: rel.to_owned(),
            category: CategoryId::new(field(c_object))?,
            label,
            image_path,
            defect_type: defect_type.to_owned(),
        });
    }
    DatasetManifest::from_samples(DatasetKind::Visa, root, samples)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Schema(format!("{}: {e}", path.display()))
    }
}

/// Decodes a PNG or JPEG into an 8-bit buffer with 1 or 3 channels.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    use image::ColorType;
    let (w, h) = (decoded.width(), decoded.height());
    match decoded.color() {
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
            ImageBuffer::new(h, w, 1, decoded.into_luma8().into_raw())
        }
        _ => ImageBuffer::new(h, w, 3, decoded.into_rgb8().into_raw()),
    }
}

pub fn save_png(image: &ImageBuffer, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let color = if image.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(path, image.data(), image.width(), image.height(), color, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_owned(),
                message: other.to_string(),
            },
        })
}

/// Parameters of the synthetic fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub categories: usize,
    pub normals_per_category: usize,
    pub anomalies_per_category: usize,
    pub size: u32,
    /// Fraction of the frame covered by the object disc.
    pub object_fraction: f64,
    pub marker_size: u32,
    /// Scatter saturated patches over the background.
    pub clutter: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            categories: 8,
            normals_per_category: 4,
            anomalies_per_category: 4,
            size: 64,
            object_fraction: 0.10,
            marker_size: 6,
            clutter: false,
        }
    }
}

/// Pixel value of the anomaly marker.
pub const MARKER_RGB: [u8; 3] = [255, 0, 255];
const CLUTTER_RGB: [[u8; 3]; 2] = [[255, 255, 0], [0, 255, 255]];
pub const DEFECT_TYPE_MARKER: &str = "marker";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

const CATEGORY_NAMES: [&str; 12] = [
    "bottle", "cable", "capsule", "hazelnut", "metal_nut", "pill", "screw", "transistor", "zipper", "grid",
    "tile", "wood",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub sample_id: String,
    pub object_box: BoundingBox,
    pub marker_box: Option<BoundingBox>,
    /// Hex SHA-256 of the decoded image ([`ImageBuffer::content_hash`]).
    pub image_sha256: String,
}

#[derive(Clone, Debug)]
pub struct SyntheticFixture {
    pub manifest: DatasetManifest,
    pub truth: Vec<SyntheticTruth>,
}

fn category_name(i: usize) -> String {
    let base = CATEGORY_NAMES[i % CATEGORY_NAMES.len()];
    match i / CATEGORY_NAMES.len() {
        0 => base.to_owned(),
        k => format!("{base}_{k}"),
    }
}

fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"synthetic\0");
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

struct Canvas {
    size: u32,
    data: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.size as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn fill_rect(&mut self, b: &BoundingBox, rgb: [u8; 3]) {
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                self.put(x, y, rgb);
            }
        }
    }
}

fn overlaps(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h
}

/// Base image of one pair plus its object box and a marker location inside the object.
fn render_base(spec: &SyntheticSpec, category: usize, pair: usize) -> (Canvas, BoundingBox, BoundingBox) {
    let size = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[category as u64, pair as u64]));
    let mut cat_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[category as u64, u64::MAX]));
    let bg: [u8; 3] = [cat_rng.random_range(40..80), cat_rng.random_range(40..80), cat_rng.random_range(40..80)];
    let fg: [u8; 3] = [cat_rng.random_range(100..200), cat_rng.random_range(100..200), cat_rng.random_range(100..200)];

    let mut canvas = Canvas {
        size,
        data: vec![0; (size * size * 3) as usize],
    };
    for y in 0..size {
        for x in 0..size {
            let jitter = |c: u8, rng: &mut ChaCha8Rng| c.saturating_add(rng.random_range(0..8));
            canvas.put(x, y, [jitter(bg[0], &mut rng), jitter(bg[1], &mut rng), jitter(bg[2], &mut rng)]);
        }
    }

    let area = spec.object_fraction * (size * size) as f64;
    let radius = ((area / std::f64::consts::PI).sqrt().round() as u32).clamp(2, size / 2 - 1);
    let cx = rng.random_range(radius..size - radius);
    let cy = rng.random_range(radius..size - radius);
    let object_box = BoundingBox::new(cx - radius, cy - radius, 2 * radius + 1, 2 * radius + 1);
    let r2 = (radius * radius) as i64;
    for y in object_box.y..object_box.y + object_box.h {
        for x in object_box.x..object_box.x + object_box.w {
            let (dx, dy) = (x as i64 - cx as i64, y as i64 - cy as i64);
            if dx * dx + dy * dy <= r2 {
                canvas.put(x, y, fg);
            }
        }
    }

    if spec.clutter {
        let patches = rng.random_range(0..=5);
        let mut placed = 0;
        let mut tries = 0;
        while placed < patches && tries < 200 {
            tries += 1;
            let w = rng.random_range(3..=8);
            let h = rng.random_range(3..=8);
            let b = BoundingBox::new(rng.random_range(0..size - w), rng.random_range(0..size - h), w, h);
            if overlaps(&b, &object_box) {
                continue;
            }
            canvas.fill_rect(&b, CLUTTER_RGB[placed % CLUTTER_RGB.len()]);
            placed += 1;
        }
    }

    // marker inside the square inscribed in the disc
    let m = spec.marker_size.min(radius);
    let half = ((radius as f64) / std::f64::consts::SQRT_2).floor() as u32;
    let lo_x = cx - half;
    let lo_y = cy - half;
    let span = (2 * half + 1).saturating_sub(m);
    let marker = BoundingBox::new(
        lo_x + rng.random_range(0..=span),
        lo_y + rng.random_range(0..=span),
        m,
        m,
    );
    (canvas, object_box, marker)
}

/// Writes the fixture under `root` in MVTec layout (`good` and `marker`
/// defect folders) plus a [`GROUND_TRUTH_FILE`] with object boxes.
///
/// Anomaly `i` is normal `i` with the marker painted in.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path) -> Result<SyntheticFixture> {
    if spec.size < 16 || spec.marker_size == 0 || !(0.0..0.5).contains(&spec.object_fraction) {
        return Err(Error::Config(format!("unusable synthetic spec {spec:?}")));
    }
    let mut truth = Vec::new();
    for c in 0..spec.categories {
        let name = category_name(c);
        let pairs = spec.normals_per_category.max(spec.anomalies_per_category);
        for pair in 0..pairs {
            let (mut canvas, object_box, marker) = render_base(spec, c, pair);
            let mut emit = |canvas: &Canvas, defect: &str, marker_box: Option<BoundingBox>| -> Result<()> {
                let image = ImageBuffer::new(spec.size, spec.size, 3, canvas.data.clone())?;
                let sample_id = format!("{name}/test/{defect}/{pair:03}.png");
                save_png(&image, &root.join(&sample_id))?;
                truth.push(SyntheticTruth {
                    sample_id,
                    object_box,
                    marker_box,
                    image_sha256: hex::encode(image.content_hash()),
                });
                Ok(())
            };
            if pair < spec.normals_per_category {
                emit(&canvas, GOOD, None)?;
            }
            if pair < spec.anomalies_per_category {
                canvas.fill_rect(&marker, MARKER_RGB);
                emit(&canvas, DEFECT_TYPE_MARKER, Some(marker))?;
            }
        }
    }
    truth.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut lines = String::new();
    for t in &truth {
        lines.push_str(&serde_json::to_string(t).expect("truth serializes"));
        lines.push('\n');
    }
    let gt_path = root.join(GROUND_TRUTH_FILE);
    fs::write(&gt_path, lines).map_err(|e| Error::io(&gt_path, e))?;
    let manifest = discover_mvtec_as(DatasetKind::Synthetic, root, None)?;
    Ok(SyntheticFixture { manifest, truth })
}

/// Reads a [`GROUND_TRUTH_FILE`].
pub fn load_synthetic_truth(path: &Path) -> Result<Vec<SyntheticTruth>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Schema(format!("{}: {e}", path.display()))))
        .collect()
}

/// Re-reads a synthetic tree written by [`generate_synthetic`].
pub fn discover_synthetic(root: &Path, categories: Option<&[String]>) -> Result<DatasetManifest> {
    discover_mvtec_as(DatasetKind::Synthetic, root, categories)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        let img = ImageBuffer::filled(2, 2, &[1, 2, 3]).unwrap();
        save_png(&img, &p).unwrap();
    }

    #[test]
    fn mvtec_layout() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "bottle/test/good/000.png");
        touch(dir.path(), "bottle/test/broken_large/000.png");
        touch(dir.path(), "bottle/train/good/000.png");
        touch(dir.path(), "bottle/ground_truth/broken_large/000_mask.png");
        touch(dir.path(), "cable/test/good/000.png");
        fs::write(dir.path().join("bottle/test/good/.DS_Store"), b"x").unwrap();
        fs::write(dir.path().join("bottle/test/good/notes.txt"), b"x").unwrap();
        fs::write(dir.path().join("license.txt"), b"x").unwrap();

        let m = discover_mvtec(dir.path(), None).unwrap();
        let ids: Vec<_> = m.samples.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(ids, ["bottle/test/broken_large/000.png", "bottle/test/good/000.png", "cable/test/good/000.png"]);
        assert_eq!(m.samples[0].label, Label::Anomaly);
        assert_eq!(m.samples[1].label, Label::Normal);
        assert_eq!(m.categories.len(), 2);
        for s in &m.samples {
            assert_eq!(s.label == Label::Normal, s.defect_type == GOOD);
        }

        let only = discover_mvtec(dir.path(), Some(&["bottle".to_owned()])).unwrap();
        assert_eq!(only.len(), 2);
        assert!(only.samples.iter().all(|s| s.category.name() == "bottle"));
        assert_eq!(discover_mvtec(dir.path(), None).unwrap(), m);
    }

    #[test]
    fn mvtec_train_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "bottle/train/good/000.png");
        assert!(matches!(discover_mvtec(dir.path(), None), Err(Error::EmptyDataset(_))));
        assert!(matches!(discover_mvtec(&dir.path().join("missing"), None), Err(Error::Io { .. })));
    }

    #[test]
    fn visa_split_table() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "candle/Data/Images/Normal/0000.JPG");
        touch(dir.path(), "candle/Data/Images/Anomaly/0001.JPG");
        touch(dir.path(), "candle/Data/Images/Normal/0002.JPG");
        let split = dir.path().join("split.csv");
        fs::write(
            &split,
            "object,split,label,image,mask\n\
             candle,test,normal,candle/Data/Images/Normal/0000.JPG,\n\
             candle,test,anomaly,candle/Data/Images/Anomaly/0001.JPG,m.png\n\
             candle,train,normal,candle/Data/Images/Normal/0002.JPG,\n",
        )
        .unwrap();
        let m = discover_visa(dir.path(), &split, None).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.samples[0].defect_type, GOOD);
        assert_eq!(m.samples[1].label, Label::Anomaly);
        assert_eq!(m.kind, DatasetKind::Visa);

        assert!(matches!(
            discover_visa(dir.path(), &split, Some(&["pcb1".to_owned()])),
            Err(Error::EmptyDataset(_))
        ));

        fs::write(&split, "object,split,label,image\ncandle,test,weird,candle/Data/Images/Normal/0000.JPG\n").unwrap();
        assert!(matches!(discover_visa(dir.path(), &split, None), Err(Error::Schema(_))));
        fs::write(&split, "object,split,image\ncandle,test,x\n").unwrap();
        assert!(matches!(discover_visa(dir.path(), &split, None), Err(Error::Schema(_))));
        assert!(matches!(
            discover_visa(dir.path(), &dir.path().join("none.csv"), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn load_image_round_trips_png() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = ImageBuffer::new(2, 2, 3, (0..12).collect()).unwrap();
        let p = dir.path().join("rgb.png");
        save_png(&rgb, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), rgb);

        let gray = ImageBuffer::new(2, 2, 1, vec![0, 50, 100, 250]).unwrap();
        let g = dir.path().join("gray.png");
        save_png(&gray, &g).unwrap();
        let loaded = load_image(&g).unwrap();
        assert_eq!(loaded.channels(), 1);
        assert_eq!(loaded, gray);

        let bytes = fs::read(&p).unwrap();
        let t = dir.path().join("truncated.png");
        fs::write(&t, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&t), Err(Error::Decode { .. })));
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            categories: 1,
            ..SyntheticSpec::default()
        };
        let fa = generate_synthetic(&spec, a.path()).unwrap();
        let fb = generate_synthetic(&spec, b.path()).unwrap();
        assert_eq!(fa.manifest.len(), 8);
        let anomalies = fa.manifest.samples.iter().filter(|s| s.label.is_anomaly()).count();
        assert_eq!(anomalies, 4);
        assert_eq!(fa.truth, fb.truth);
        for s in &fa.manifest.samples {
            let x = fs::read(a.path().join(&s.sample_id)).unwrap();
            let y = fs::read(b.path().join(&s.sample_id)).unwrap();
            assert_eq!(x, y, "{}", s.sample_id);
        }
        assert_eq!(
            load_synthetic_truth(&a.path().join(GROUND_TRUTH_FILE)).unwrap(),
            fa.truth
        );
        let other = tempfile::tempdir().unwrap();
        let fc = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }, other.path()).unwrap();
        assert_ne!(fc.truth, fa.truth);
    }

    #[test]
    fn anomalies_differ_only_inside_marker() {
        let dir = tempfile::tempdir().unwrap();
        for clutter in [false, true] {
            let spec = SyntheticSpec {
                categories: 3,
                clutter,
                ..SyntheticSpec::default()
            };
            let f = generate_synthetic(&spec, dir.path()).unwrap();
            for t in f.truth.iter().filter(|t| t.marker_box.is_some()) {
                let marker = t.marker_box.unwrap();
                let normal_id = t.sample_id.replace("/marker/", "/good/");
                let anomaly = load_image(&dir.path().join(&t.sample_id)).unwrap();
                let normal = load_image(&dir.path().join(&normal_id)).unwrap();
                let inside = |x: u32, y: u32| x >= marker.x && x < marker.x + marker.w && y >= marker.y && y < marker.y + marker.h;
                let mut changed = 0;
                for y in 0..spec.size {
                    for x in 0..spec.size {
                        let differs = anomaly.pixel(y, x) != normal.pixel(y, x);
                        if inside(x, y) {
                            assert_eq!(anomaly.pixel(y, x), MARKER_RGB);
                            changed += differs as usize;
                        } else {
                            assert!(!differs, "{} differs at ({x}, {y})", t.sample_id);
                        }
                    }
                }
                assert_eq!(changed, (marker.w * marker.h) as usize);
                // marker lies within the object box
                let o = t.object_box;
                assert!(marker.x >= o.x && marker.x + marker.w <= o.x + o.w);
                assert!(marker.y >= o.y && marker.y + marker.h <= o.y + o.h);
            }
        }
    }
}

//! Deterministic synthetic corpus with disjoint detector-training (D), attack-training (A),
//! evaluation and large-image probe splits.

mod png_io;
mod synth;

pub use png_io::{
    decode_png, dequantize, dequantize_bytes, encode_png, load_png, quantize, quantize_tensor, read_png_bytes,
    save_png, write_png_bytes,
};
pub use synth::{synth_fake, synth_real, upsample_nearest, ImageSample, Source, SENSOR_NOISE_SIGMA};

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Label;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed from the master seed, the split and a global sample index.
pub fn sample_seed(master: u64, split: SplitName, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(split as u64 + 1)) ^ index)
}

/// Independent stream seed for a named purpose (training shuffles, crops, ...).
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    purpose.bytes().fold(mix64(master ^ 0xA5A5_A5A5), |acc, b| mix64(acc ^ b as u64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    DSet,
    ASet,
    EvalSet,
    ProbeSet,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::DSet, SplitName::ASet, SplitName::EvalSet, SplitName::ProbeSet];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::DSet => "d_set",
            SplitName::ASet => "a_set",
            SplitName::EvalSet => "eval_set",
            SplitName::ProbeSet => "probe_set",
        }
    }
}

/// Sizes of every split. Index ranges are laid out back to back unless `offsets` pins them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub master_seed: u64,
    pub image_size: usize,
    pub d_real: usize,
    pub d_fake: usize,
    pub a_fake: usize,
    pub eval_real: usize,
    pub eval_fake: usize,
    pub probe_fake: usize,
    pub probe_size: usize,
    /// Optional explicit start index for each part, in [`CorpusSpec::parts`] order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<u64>>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            master_seed: 20_210_614,
            image_size: 64,
            d_real: 4000,
            d_fake: 4000,
            a_fake: 4000,
            eval_real: 500,
            eval_fake: 500,
            probe_fake: 200,
            probe_size: 128,
            offsets: None,
        }
    }
}

/// One contiguous run of global indices belonging to a split and class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitPart {
    pub split: SplitName,
    pub label: Label,
    pub start: u64,
    pub count: usize,
    pub size: usize,
}

impl CorpusSpec {
    pub fn parts(&self) -> Result<Vec<SplitPart>> {
        let plan = [
            (SplitName::DSet, Label::Real, self.d_real, self.image_size),
            (SplitName::DSet, Label::Fake, self.d_fake, self.image_size),
            (SplitName::ASet, Label::Fake, self.a_fake, self.image_size),
            (SplitName::EvalSet, Label::Real, self.eval_real, self.image_size),
            (SplitName::EvalSet, Label::Fake, self.eval_fake, self.image_size),
            (SplitName::ProbeSet, Label::Fake, self.probe_fake, self.probe_size),
        ];
        if let Some(off) = &self.offsets {
            if off.len() != plan.len() {
                return Err(Error::Config(format!("offsets needs {} entries, got {}", plan.len(), off.len())));
            }
        }
        let mut next = 0u64;
        let parts: Vec<SplitPart> = plan
            .iter()
            .enumerate()
            .map(|(i, &(split, label, count, size))| {
                let start = self.offsets.as_ref().map_or(next, |o| o[i]);
                next = start + count as u64;
                SplitPart { split, label, start, count, size }
            })
            .collect();
        for (i, a) in parts.iter().enumerate() {
            for b in &parts[i + 1..] {
                let overlap = a.count > 0
                    && b.count > 0
                    && a.start < b.start + b.count as u64
                    && b.start < a.start + a.count as u64;
                if overlap {
                    return Err(Error::Config(format!(
                        "index ranges of {}/{} and {}/{} overlap",
                        a.split.as_str(),
                        a.label,
                        b.split.as_str(),
                        b.label
                    )));
                }
            }
        }
        Ok(parts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 2 != 0 {
            return Err(Error::Config(format!("image_size must be even and positive, got {}", self.image_size)));
        }
        if self.probe_fake > 0 && (self.probe_size % 2 != 0 || self.probe_size == 0) {
            return Err(Error::Config(format!("probe_size must be even and positive, got {}", self.probe_size)));
        }
        self.parts().map(|_| ())
    }
}

/// Metadata of one stored sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub index: u64,
    pub label: Label,
    pub source: Source,
    pub seed: u64,
    pub path: String,
}

/// Equally sized 8-bit images held in memory, planar `[3, H, W]` per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    pub rows: Vec<ManifestRow>,
    bytes: Vec<u8>,
}

impl ImageSet {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, rows: Vec::new(), bytes: Vec::new() }
    }

    pub fn image_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: ManifestRow, planar: &[u8]) -> Result<()> {
        if planar.len() != self.image_len() {
            return Err(Error::shape(
                "image_set",
                format!("image has {} bytes, set expects 3x{}x{}", planar.len(), self.height, self.width),
            ));
        }
        self.rows.push(row);
        self.bytes.extend_from_slice(planar);
        Ok(())
    }

    pub fn bytes(&self, i: usize) -> &[u8] {
        &self.bytes[i * self.image_len()..(i + 1) * self.image_len()]
    }

    pub fn image<T: Scalar>(&self, i: usize) -> Tensor<T> {
        dequantize_bytes([3, self.height, self.width], self.bytes(i)).expect("consistent extents")
    }

    /// Stacks the selected images into `[n, 3, H, W]`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.bytes(i).iter().map(|&b| dequantize::<T>(b)));
        }
        Tensor::new([indices.len(), 3, self.height, self.width], data).expect("consistent extents")
    }

    /// Like [`ImageSet::batch`] but takes one uniformly placed `size x size` crop per image.
    pub fn cropped_batch<T: Scalar, R: Rng>(&self, indices: &[usize], size: usize, rng: &mut R) -> Result<Tensor<T>> {
        if size == self.height && size == self.width {
            return Ok(self.batch(indices));
        }
        let mut data = Vec::with_capacity(indices.len() * 3 * size * size);
        for &i in indices {
            let crop = random_crop::<T, R>(&self.image(i), size, rng)?;
            data.extend_from_slice(crop.pixels.data());
        }
        Tensor::new([indices.len(), 3, size, size], data)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Subset of the rows carrying `label`.
    pub fn filter_label(&self, label: Label) -> ImageSet {
        let mut out = ImageSet::new(self.height, self.width);
        for (i, row) in self.rows.iter().enumerate() {
            if row.label == label {
                out.push(row.clone(), self.bytes(i)).expect("same extents");
            }
        }
        out
    }

    /// First `n` images.
    pub fn take(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        ImageSet {
            height: self.height,
            width: self.width,
            rows: self.rows[..n].to_vec(),
            bytes: self.bytes[..n * self.image_len()].to_vec(),
        }
    }

    /// Loads every PNG referenced by a manifest CSV (paths relative to `root`).
    pub fn load_manifest(manifest: &Path, root: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(manifest)?;
        let mut set: Option<ImageSet> = None;
        for row in reader.deserialize() {
            let row: ManifestRow = row?;
            let (planar, h, w) = read_png_bytes(&root.join(&row.path))?;
            let s = set.get_or_insert_with(|| ImageSet::new(h, w));
            s.push(row, &planar)?;
        }
        set.ok_or_else(|| Error::Config(format!("manifest {} lists no images", manifest.display())))
    }

    /// Writes every image as PNG under `root/dir` and the manifest CSV at `manifest`.
    pub fn write(&self, root: &Path, dir: &str, manifest: &Path) -> Result<()> {
        let img_dir = root.join(dir);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut w = csv::Writer::from_path(manifest)?;
        for (i, row) in self.rows.iter().enumerate() {
            write_png_bytes(self.bytes(i), self.height, self.width, &root.join(&row.path))?;
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(manifest, e))?;
        Ok(())
    }
}

/// All splits of one corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub d_set: ImageSet,
    pub a_set: ImageSet,
    pub eval_set: ImageSet,
    pub probe_set: ImageSet,
}

/// Renders one quantised sample.
pub fn render_sample(label: Label, seed: u64, size: usize) -> Result<Vec<u8>> {
    let sample: ImageSample<f64> = match label {
        Label::Real => synth_real(seed, size, size),
        Label::Fake => synth_fake(seed, size, size)?,
    };
    Ok(quantize_tensor(&sample.pixels))
}

pub fn build_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let size = spec.image_size;
    let mut sets = [
        ImageSet::new(size, size),
        ImageSet::new(size, size),
        ImageSet::new(size, size),
        ImageSet::new(spec.probe_size, spec.probe_size),
    ];
    for part in spec.parts()? {
        let slot = SplitName::ALL.iter().position(|&s| s == part.split).expect("known split");
        for k in 0..part.count as u64 {
            let index = part.start + k;
            let seed = sample_seed(spec.master_seed, part.split, index);
            let planar = render_sample(part.label, seed, part.size)?;
            let source = match part.label {
                Label::Real => Source::Native,
                Label::Fake => Source::Upsampled,
            };
            let row = ManifestRow {
                index,
                label: part.label,
                source,
                seed,
                path: format!("{}/{:06}.png", part.split.as_str(), index),
            };
            sets[slot].push(row, &planar)?;
        }
    }
    let [d_set, a_set, eval_set, probe_set] = sets;
    Ok(Corpus { spec: spec.clone(), d_set, a_set, eval_set, probe_set })
}

impl Corpus {
    pub fn split(&self, name: SplitName) -> &ImageSet {
        match name {
            SplitName::DSet => &self.d_set,
            SplitName::ASet => &self.a_set,
            SplitName::EvalSet => &self.eval_set,
            SplitName::ProbeSet => &self.probe_set,
        }
    }

    pub fn manifest_path(root: &Path, name: SplitName) -> PathBuf {
        root.join(format!("{}.csv", name.as_str()))
    }

    /// Writes `corpus.json`, one manifest CSV per split and every PNG.
    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let spec_path = root.join("corpus.json");
        let json = serde_json::to_string_pretty(&self.spec)?;
        fs::write(&spec_path, json + "\n").map_err(|e| Error::io(&spec_path, e))?;
        for name in SplitName::ALL {
            self.split(name).write(root, name.as_str(), &Self::manifest_path(root, name))?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let spec_path = root.join("corpus.json");
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: CorpusSpec = serde_json::from_str(&text)?;
        let load = |name: SplitName, size: usize| -> Result<ImageSet> {
            let path = Self::manifest_path(root, name);
            match ImageSet::load_manifest(&path, root) {
                Ok(set) => Ok(set),
                Err(Error::Config(_)) => Ok(ImageSet::new(size, size)),
                Err(e) => Err(e),
            }
        };
        Ok(Self {
            d_set: load(SplitName::DSet, spec.image_size)?,
            a_set: load(SplitName::ASet, spec.image_size)?,
            eval_set: load(SplitName::EvalSet, spec.image_size)?,
            probe_set: load(SplitName::ProbeSet, spec.probe_size)?,
            spec,
        })
    }
}

/// Square crop and where it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop<T> {
    pub pixels: Tensor<T>,
    pub top: usize,
    pub left: usize,
}

/// Axis-aligned `size x size` window at a uniformly random position of a `[3, H, W]` image.
pub fn random_crop<T: Scalar, R: Rng + ?Sized>(image: &Tensor<T>, size: usize, rng: &mut R) -> Result<Crop<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape("random_crop", format!("expected [C, H, W], got {:?}", image.shape())));
    };
    if size == 0 || size > h || size > w {
        return Err(Error::invalid(format!("crop {size} does not fit a {h}x{w} image")));
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    Ok(Crop { pixels: crop_at(image, c, h, w, top, left, size), top, left })
}

/// Window `[top, top+size) x [left, left+size)` of a `[C, H, W]` image.
pub fn crop_window<T: Scalar>(image: &Tensor<T>, top: usize, left: usize, size: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape("crop_window", format!("expected [C, H, W], got {:?}", image.shape())));
    };
    if top + size > h || left + size > w {
        return Err(Error::invalid(format!("window at ({top}, {left}) of size {size} leaves a {h}x{w} image")));
    }
    Ok(crop_at(image, c, h, w, top, left, size))
}

fn crop_at<T: Scalar>(image: &Tensor<T>, c: usize, h: usize, w: usize, top: usize, left: usize, size: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for i in top..top + size {
            let row = (ch * h + i) * w;
            data.extend_from_slice(&image.data()[row + left..row + left + size]);
        }
    }
    Tensor::new([c, size, size], data).expect("crop extents")
}

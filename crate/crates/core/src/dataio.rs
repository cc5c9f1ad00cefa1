//! Dataset loading and the on-disk file formats.
//!
//! Dataset layout: `<root>/image/<id>.<ext>` with a matching
//! `<root>/groundtruth/<id>.<ext>`; masks are single-channel images where
//! pixel values above 127 mark crack.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "UHDN" | version u32
//! in_channels u32 | base_channels u32 | rate_count u32 | rates u32…
//! with_mdm u8 | with_hf u8 | seed u64
//! entry_count u32
//! per entry: name_len u32 | name utf-8 | rank u32 | dims u32… | f32 data…
//! ```
//!
//! Probability maps are grayscale Portable FloatMaps (`Pf`, negative scale =
//! little-endian, rows stored bottom to top).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::{Mask, ProbMap};
use crate::net::{NetworkConfig, NetworkParams, SPATIAL_MULTIPLE};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::training::TrainingPair;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UHDN";
pub const CHECKPOINT_VERSION: u32 = 1;

const IMAGE_EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "pgm", "ppm", "pnm", "pbm"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Cfd,
    AigleRn,
    Generic,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cfd" => Ok(Layout::Cfd),
            "aiglern" | "aigle-rn" | "aigle_rn" => Ok(Layout::AigleRn),
            "generic" => Ok(Layout::Generic),
            other => Err(Error::Config(format!("unknown layout '{other}' (expected cfd, aiglern or generic)"))),
        }
    }
}

impl Layout {
    /// Input channels for the layout; `None` means detect from the images.
    pub fn channels(self) -> Option<usize> {
        match self {
            Layout::Cfd => Some(3),
            Layout::AigleRn => Some(1),
            Layout::Generic => None,
        }
    }

    /// `(train, test)` counts of the published splits.
    pub fn published_split(self) -> Option<(usize, usize)> {
        match self {
            Layout::Cfd => Some((72, 46)),
            Layout::AigleRn => Some((24, 14)),
            Layout::Generic => None,
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            Layout::Cfd | Layout::Generic => 4,
            Layout::AigleRn => 1,
        }
    }
}

/// One image with its ground truth, padded to a multiple of 8.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Tensor4<f32>,
    pub mask: Tensor4<f32>,
    /// Zero columns added on the right and rows added at the bottom.
    pub pad: (usize, usize),
}

impl Sample {
    pub fn original_size(&self) -> (usize, usize) {
        (self.image.h() - self.pad.1, self.image.w() - self.pad.0)
    }

    /// Ground truth cropped back to the source size.
    pub fn ground_truth(&self) -> Mask {
        let (h, w) = self.original_size();
        Mask::from_tensor(&self.mask, 0).crop(h, w)
    }

    pub fn training_pair<T: Scalar>(&self) -> TrainingPair<T> {
        TrainingPair {
            image: self.image.cast(),
            mask: self.mask.cast(),
        }
    }
}

/// Train/test ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Zero-pads right and bottom up to the next multiple of `m`.
pub fn pad_to_multiple<T: Scalar>(t: &Tensor4<T>, m: usize) -> (Tensor4<T>, (usize, usize)) {
    let m = m.max(1);
    let [n, c, h, w] = t.shape();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (hp, wp) == (h, w) {
        return (t.clone(), (0, 0));
    }
    let out = Tensor4::from_fn([n, c, hp, wp], |ni, ci, y, x| {
        if y < h && x < w {
            t.at(ni, ci, y, x)
        } else {
            T::zero()
        }
    });
    (out, (wp - w, hp - h))
}

/// Removes a `(right, bottom)` pad.
pub fn crop_pad<T: Scalar>(t: &Tensor4<T>, pad: (usize, usize)) -> Tensor4<T> {
    let [n, c, h, w] = t.shape();
    let (h2, w2) = (h - pad.1, w - pad.0);
    Tensor4::from_fn([n, c, h2, w2], |ni, ci, y, x| t.at(ni, ci, y, x))
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Decodes an image to `(1, channels, h, w)` scaled to [0, 1].
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor4<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.to_luma8();
            Tensor4::new([1, 1, h, w], g.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
        }
        3 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            Ok(Tensor4::from_fn([1, 3, h, w], |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0))
        }
        other => Err(Error::Config(format!("images can be loaded with 1 or 3 channels, not {other}"))),
    }
}

/// Reads a mask image, binarized at pixel value > 127.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let g = img.to_luma8();
    Mask::new(
        g.height() as usize,
        g.width() as usize,
        g.as_raw().iter().map(|&v| (v > 127) as u8).collect(),
    )
}

fn detect_channels(path: &Path) -> Result<usize> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(if img.color().has_color() { 3 } else { 1 })
}

/// Loads every image/ground-truth pair under `root`, sorted by id and padded
/// to multiples of 8. An empty or missing `image/` directory yields an empty
/// list with a warning.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<Sample>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let images = list_images(&root.join("image"))?;
    if images.is_empty() {
        log::warn!("no images found under {}", root.join("image").display());
        return Ok(Vec::new());
    }
    let masks = list_images(&root.join("groundtruth"))?;
    let channels = match layout.channels() {
        Some(c) => c,
        None => detect_channels(&images[0])?,
    };
    let mut samples = Vec::with_capacity(images.len());
    for path in &images {
        let id = stem(path);
        let mask_path = masks
            .iter()
            .find(|m| stem(m) == id)
            .ok_or_else(|| Error::MissingMask { stem: id.clone() })?;
        let image = load_image(path, channels)?;
        let mask = load_mask(mask_path)?;
        if (mask.height(), mask.width()) != (image.h(), image.w()) {
            return Err(Error::Format {
                path: mask_path.clone(),
                reason: format!(
                    "mask is {}x{} but image is {}x{}",
                    mask.height(),
                    mask.width(),
                    image.h(),
                    image.w()
                ),
            });
        }
        let (image, pad) = pad_to_multiple(&image, SPATIAL_MULTIPLE);
        let (mask, _) = pad_to_multiple(&mask.to_tensor::<f32>(), SPATIAL_MULTIPLE);
        samples.push(Sample { id, image, mask, pad });
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

/// Seeded shuffle, then the first `k` ids train. Published counts are used
/// when the sample count matches the layout, otherwise a 0.62/0.38 ratio.
pub fn split(samples: &[Sample], layout: Layout, seed: u64) -> DatasetSplit {
    let mut ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    let n = ids.len();
    let train_count = match layout.published_split() {
        Some((train, test)) if train + test == n => train,
        _ => {
            let k = (n as f64 * 0.62).round() as usize;
            if n >= 2 {
                k.clamp(1, n - 1)
            } else {
                n
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(train_count);
    DatasetSplit { train: ids, test, seed }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn u32_le(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serializes parameters (as `f32`) and their configuration.
pub fn checkpoint_bytes<T: Scalar>(params: &NetworkParams<T>, config: &NetworkConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    u32_le(&mut buf, config.in_channels);
    u32_le(&mut buf, config.base_channels);
    u32_le(&mut buf, config.dilation_rates.len());
    for &r in &config.dilation_rates {
        u32_le(&mut buf, r);
    }
    buf.push(config.with_mdm as u8);
    buf.push(config.with_hf as u8);
    buf.extend_from_slice(&config.seed.to_le_bytes());
    u32_le(&mut buf, params.len());
    for (name, t) in params.iter() {
        u32_le(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        let dims: Vec<usize> = if name.ends_with(".bias") {
            vec![t.n()]
        } else {
            t.shape().to_vec()
        };
        u32_le(&mut buf, dims.len());
        for d in dims {
            u32_le(&mut buf, d);
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint<T: Scalar>(params: &NetworkParams<T>, config: &NetworkConfig, path: &Path) -> Result<()> {
    write_file(path, &checkpoint_bytes(params, config))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated { what });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses checkpoint bytes and validates the parameter set against the
/// embedded configuration.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(NetworkParams<f32>, NetworkConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    r.pos = 4;
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let in_channels = r.u32("config")?;
    let base_channels = r.u32("config")?;
    let rate_count = r.u32("config")?;
    let mut dilation_rates = Vec::with_capacity(rate_count.min(64));
    for _ in 0..rate_count {
        dilation_rates.push(r.u32("config")?);
    }
    let with_mdm = r.u8("config")? != 0;
    let with_hf = r.u8("config")? != 0;
    let seed = u64::from_le_bytes(r.take(8, "config")?.try_into().unwrap());
    let config = NetworkConfig {
        in_channels,
        base_channels,
        dilation_rates,
        with_mdm,
        with_hf,
        seed,
    };
    config.validate()?;

    let count = r.u32("entry count")?;
    let mut params = NetworkParams::new();
    for _ in 0..count {
        let len = r.u32("entry name")?;
        let name = std::str::from_utf8(r.take(len, "entry name")?)
            .map_err(|_| Error::Config("checkpoint entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("entry rank")?;
        if rank == 0 || rank > 4 {
            return Err(Error::Config(format!("entry {name} has unsupported rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("entry dims")?);
        }
        let mut shape = [1usize; 4];
        shape[..rank].copy_from_slice(&dims);
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or(Error::Truncated { what: "entry data" })?, "entry data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor4::new(shape, data)?);
    }
    params.check_against(&config)?;
    Ok((params, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams<f32>, NetworkConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads a checkpoint and additionally requires it to fit `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &NetworkConfig) -> Result<NetworkParams<f32>> {
    let (params, _) = load_checkpoint(path)?;
    params.check_against(expected)?;
    Ok(params)
}

pub fn pfm_bytes(map: &ProbMap) -> Vec<u8> {
    let (h, w) = (map.height(), map.width());
    let mut buf = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            buf.extend_from_slice(&map.get(y, x).to_le_bytes());
        }
    }
    buf
}

/// Writes a probability map as PFM after cropping the `(right, bottom)` pad.
pub fn save_probmap(map: &ProbMap, pad: (usize, usize), path: &Path) -> Result<()> {
    let cropped = map.crop(map.height() - pad.1, map.width() - pad.0);
    write_file(path, &pfm_bytes(&cropped))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok().filter(|s| !s.is_empty())
}

pub fn parse_pfm(bytes: &[u8], path: &Path) -> Result<ProbMap> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    match next_token(bytes, &mut pos) {
        Some("Pf") => {}
        Some("PF") => return Err(bad("colour PFM not supported; expected grayscale 'Pf'")),
        _ => return Err(bad("missing 'Pf' header")),
    }
    let w: usize = next_token(bytes, &mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad width"))?;
    let h: usize = next_token(bytes, &mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad height"))?;
    let scale: f64 = next_token(bytes, &mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad scale"))?;
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * 4;
    if bytes.len() < pos + need {
        return Err(bad("raster truncated"));
    }
    let little = scale < 0.0;
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0f32; w * h];
    for (i, c) in raster.chunks_exact(4).enumerate() {
        let arr: [u8; 4] = c.try_into().unwrap();
        let v = if little { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        let (row_from_bottom, x) = (i / w, i % w);
        data[(h - 1 - row_from_bottom) * w + x] = v;
    }
    ProbMap::new(h, w, data)
}

pub fn load_probmap(path: &Path) -> Result<ProbMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes, path)
}

/// Writes a binary mask as an 8-bit PNG (0 / 255) after cropping the pad.
pub fn save_mask_png(mask: &Mask, pad: (usize, usize), path: &Path) -> Result<()> {
    let m = mask.crop(mask.height() - pad.1, mask.width() - pad.0);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let buf = image::GrayImage::from_raw(
        m.width() as u32,
        m.height() as u32,
        m.data().iter().map(|&v| v * 255).collect(),
    )
    .expect("mask buffer matches dimensions");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an image tensor `(1, c, h, w)` in [0,1] as 8-bit PNG.
pub fn save_image_png(image: &Tensor4<f32>, path: &Path) -> Result<()> {
    let (h, w) = (image.h(), image.w());
    let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let res = match image.c() {
        1 => image::GrayImage::from_raw(w as u32, h as u32, image.plane(0, 0).iter().map(|&v| to8(v)).collect())
            .expect("dims")
            .save(path),
        3 => {
            let mut raw = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        raw.push(to8(image.at(0, c, y, x)));
                    }
                }
            }
            image::RgbImage::from_raw(w as u32, h as u32, raw).expect("dims").save(path)
        }
        c => return Err(Error::Config(format!("cannot write a {c}-channel PNG"))),
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a dataset directory in the documented layout.
pub fn write_dataset(root: &Path, items: &[(String, Tensor4<f32>, Mask)]) -> Result<()> {
    for sub in ["image", "groundtruth"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (id, image, mask) in items {
        save_image_png(image, &root.join("image").join(format!("{id}.png")))?;
        save_mask_png(mask, (0, 0), &root.join("groundtruth").join(format!("{id}.png")))?;
    }
    Ok(())
}

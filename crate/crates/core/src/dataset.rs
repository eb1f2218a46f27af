//! Dataset containers and file formats.
//!
//! Pixel bytes map linearly onto `[-1, 1]` via `2 * v / 255 - 1`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;
pub const MCDS_MAGIC: &[u8; 5] = b"MCDS1";
/// Largest class count [`synthetic_shapes`] can render.
pub const SHAPE_CLASSES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("wrong magic number {found}, expected {expected}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated data at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("sample {index} has label {label}, but there are {class_count} classes")]
    BadLabel {
        index: usize,
        label: usize,
        class_count: usize,
    },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("image {index} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("target {target_h}x{target_w} is smaller than the source {height}x{width}")]
    CanvasTooSmall {
        target_h: usize,
        target_w: usize,
        height: usize,
        width: usize,
    },
    #[error("bad portable map: {0}")]
    Pnm(String),
    #[error("invalid dataset request: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn byte_to_unit(v: u8) -> f64 {
    2.0 * (v as f64 / 255.0) - 1.0
}

/// Inverse of [`byte_to_unit`], clamped and rounded.
pub fn unit_to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        images: Vec<Tensor>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DatasetError> {
        let ds = Self {
            name: name.into(),
            images,
            labels,
            class_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.images.len() != self.labels.len() {
            return Err(DatasetError::CountMismatch {
                images: self.images.len(),
                labels: self.labels.len(),
            });
        }
        if let Some((index, &label)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.class_count)
        {
            return Err(DatasetError::BadLabel {
                index,
                label,
                class_count: self.class_count,
            });
        }
        if let Some(first) = self.images.first() {
            for (index, img) in self.images.iter().enumerate() {
                if img.shape() != first.shape() {
                    return Err(DatasetError::ShapeMismatch {
                        index,
                        expected: first.shape().to_vec(),
                        found: img.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `[maps, height, width]` of the images, if any.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        match *self.images.first()?.shape() {
            [m, h, w] => Some([m, h, w]),
            _ => None,
        }
    }

    /// Samples `range`, keeping class count and name.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self, DatasetError> {
        if range.start > range.end || range.end > self.len() {
            return Err(DatasetError::Invalid(format!(
                "range {}..{} outside 0..{}",
                range.start,
                range.end,
                self.len()
            )));
        }
        Ok(Self {
            name: self.name.clone(),
            images: self.images[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
            class_count: self.class_count,
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, DatasetError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DatasetError::Truncated {
            offset: bytes.len(),
        })
}

/// Parses an IDX image file (magic 2051) and label file (magic 2049).
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    class_count: usize,
) -> Result<Dataset, DatasetError> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::WrongMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::WrongMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let label_count = be_u32(labels, 4)? as usize;
    if count != label_count {
        return Err(DatasetError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixels = rows * cols;
    let need = 16 + count * pixels;
    if images.len() < need {
        return Err(DatasetError::Truncated {
            offset: images.len(),
        });
    }
    if images.len() > need {
        return Err(DatasetError::TrailingBytes(images.len() - need));
    }
    if labels.len() < 8 + count {
        return Err(DatasetError::Truncated {
            offset: labels.len(),
        });
    }
    if labels.len() > 8 + count {
        return Err(DatasetError::TrailingBytes(labels.len() - 8 - count));
    }
    let imgs = images[16..]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|px| {
            Tensor::from_vec(
                &[1, rows, cols],
                px.iter().map(|&v| byte_to_unit(v)).collect(),
            )
            .expect("extent matches")
        })
        .collect();
    let labs = labels[8..].iter().map(|&l| l as usize).collect();
    Dataset::new("idx", imgs, labs, class_count)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DatasetError> {
    let ib = fs::read(images).map_err(io_err(images))?;
    let lb = fs::read(labels).map_err(io_err(labels))?;
    let mut ds = parse_idx(&ib, &lb, 10)?;
    ds.name = images
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(ds)
}

/// Parses CIFAR-10 binary records: a label byte followed by the red, green
/// and blue 32x32 planes.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(DatasetError::Truncated {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (index, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(DatasetError::BadLabel {
                index,
                label,
                class_count: CIFAR_CLASSES,
            });
        }
        labels.push(label);
        images.push(
            Tensor::from_vec(
                &[3, 32, 32],
                rec[1..].iter().map(|&v| byte_to_unit(v)).collect(),
            )
            .expect("extent matches"),
        );
    }
    Dataset::new("cifar10", images, labels, CIFAR_CLASSES)
}

/// Concatenates CIFAR-10 batch files in the given order.
pub fn load_cifar10(paths: &[PathBuf]) -> Result<Dataset, DatasetError> {
    let mut all = Dataset::new("cifar10", vec![], vec![], CIFAR_CLASSES)?;
    for p in paths {
        let ds = parse_cifar10(&fs::read(p).map_err(io_err(p))?)?;
        all.images.extend(ds.images);
        all.labels.extend(ds.labels);
    }
    Ok(all)
}

// ---------------------------------------------------------------------------
// portable maps

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String, DatasetError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&c| c != b'\n') {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(DatasetError::Pnm("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decodes a binary P5 (gray) or P6 (RGB) map with maxval 255.
pub fn parse_pnm(bytes: &[u8]) -> Result<Tensor, DatasetError> {
    let mut pos = 0;
    let maps = match pnm_token(bytes, &mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(DatasetError::Pnm(format!("unsupported type {other}"))),
    };
    let mut num = || -> Result<usize, DatasetError> {
        let t = pnm_token(bytes, &mut pos)?;
        t.parse()
            .map_err(|_| DatasetError::Pnm(format!("bad number {t}")))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(DatasetError::Pnm(format!("maxval {maxval} unsupported")));
    }
    pos += 1;
    let n = w * h;
    let body = bytes
        .get(pos..pos + maps * n)
        .ok_or(DatasetError::Truncated {
            offset: bytes.len(),
        })?;
    let mut data = vec![0.0; maps * n];
    for (i, px) in body.chunks_exact(maps).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * n + i] = byte_to_unit(v);
        }
    }
    Tensor::from_vec(&[maps, h, w], data).map_err(|e| DatasetError::Pnm(e.to_string()))
}

/// Encodes a 1-map image as P5 and a 3-map image as P6.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>, DatasetError> {
    let (maps, h, w) = match *image.shape() {
        [m @ (1 | 3), h, w] => (m, h, w),
        ref s => return Err(DatasetError::Pnm(format!("cannot encode shape {s:?}"))),
    };
    let mut out = format!("{}\n{w} {h}\n255\n", if maps == 1 { "P5" } else { "P6" }).into_bytes();
    let n = w * h;
    let d = image.data();
    for i in 0..n {
        for c in 0..maps {
            out.push(unit_to_byte(d[c * n + i]));
        }
    }
    Ok(out)
}

/// Loads `root/<class>/<image>.pgm|ppm`; classes are the subdirectories in
/// name order, images within a class are read in name order.
pub fn load_ppm_dir(root: &Path) -> Result<Dataset, DatasetError> {
    let sorted_entries = |dir: &Path| -> Result<Vec<PathBuf>, DatasetError> {
        let mut v = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
            .collect::<Result<Vec<_>, _>>()?;
        v.sort();
        Ok(v)
    };
    let classes: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        for file in sorted_entries(dir)? {
            let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !matches!(ext, "pgm" | "ppm" | "pnm") {
                continue;
            }
            images.push(parse_pnm(&fs::read(&file).map_err(io_err(&file))?)?);
            labels.push(label);
        }
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pnm".into());
    Dataset::new(name, images, labels, classes.len())
}

// ---------------------------------------------------------------------------
// derived-dataset container

/// `"MCDS1"`, then u32 class count, count, maps, height, width, then the
/// pixels as f64 and the labels as u32, all little-endian.
pub fn encode_mcds(ds: &Dataset) -> Result<Vec<u8>, DatasetError> {
    ds.validate()?;
    let [m, h, w] = ds.image_shape().unwrap_or([0, 0, 0]);
    let mut out = Vec::with_capacity(25 + ds.len() * (8 * m * h * w + 4));
    out.extend_from_slice(MCDS_MAGIC);
    for v in [ds.class_count, ds.len(), m, h, w] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for img in &ds.images {
        for v in img.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &l in &ds.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_mcds(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    if bytes.len() < 5 || &bytes[..5] != MCDS_MAGIC {
        let found = bytes
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .unwrap_or(0);
        return Err(DatasetError::WrongMagic {
            expected: u32::from_le_bytes(*b"MCDS"),
            found,
        });
    }
    let header = |i: usize| -> Result<usize, DatasetError> {
        let at = 5 + 4 * i;
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or(DatasetError::Truncated {
                offset: bytes.len(),
            })
    };
    let (classes, count, m, h, w) = (header(0)?, header(1)?, header(2)?, header(3)?, header(4)?);
    let per = m * h * w;
    let need = 25 + count * (8 * per + 4);
    if bytes.len() < need {
        return Err(DatasetError::Truncated {
            offset: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(DatasetError::TrailingBytes(bytes.len() - need));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let base = 25 + i * 8 * per;
        let data = (0..per).map(|j| f64_at(base + 8 * j)).collect();
        images.push(
            Tensor::from_vec(&[m, h, w], data).map_err(|e| DatasetError::Invalid(e.to_string()))?,
        );
    }
    let lbase = 25 + count * 8 * per;
    let labels = (0..count)
        .map(|i| {
            u32::from_le_bytes(
                bytes[lbase + 4 * i..lbase + 4 * i + 4]
                    .try_into()
                    .expect("4 bytes"),
            ) as usize
        })
        .collect();
    Dataset::new("mcds", images, labels, classes)
}

pub fn save_mcds(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, encode_mcds(ds)?).map_err(io_err(path))
}

pub fn load_mcds(path: &Path) -> Result<Dataset, DatasetError> {
    let mut ds = decode_mcds(&fs::read(path).map_err(io_err(path))?)?;
    if let Some(stem) = path.file_stem() {
        ds.name = stem.to_string_lossy().into_owned();
    }
    Ok(ds)
}

/// Loads a dataset by file type: `.mcds` containers, IDX image files (labels
/// found by replacing `images` with `labels`, and `idx3` with `idx1` if
/// needed, in the file name), CIFAR-10
/// `.bin` batches, or a directory of portable maps.
pub fn load_any(path: &Path) -> Result<Dataset, DatasetError> {
    if path.is_dir() {
        return load_ppm_dir(path);
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    if name.ends_with(".mcds") {
        return load_mcds(path);
    }
    if name.ends_with(".bin") {
        return load_cifar10(&[path.to_path_buf()]);
    }
    if name.contains("images") {
        let mut labels = path.with_file_name(name.replace("images", "labels"));
        if !labels.exists() {
            // MNIST names: train-images-idx3-ubyte / train-labels-idx1-ubyte
            labels = path.with_file_name(name.replace("images", "labels").replace("idx3", "idx1"));
        }
        return load_idx(path, &labels);
    }
    Err(DatasetError::Invalid(format!(
        "cannot tell the format of {}",
        path.display()
    )))
}

// ---------------------------------------------------------------------------
// synthetic data

/// Centers every image on a `-1` canvas using floor offsets.
pub fn pad_canvas(ds: &Dataset, target_h: usize, target_w: usize) -> Result<Dataset, DatasetError> {
    let mut images = Vec::with_capacity(ds.len());
    for img in &ds.images {
        let [m, h, w] = match *img.shape() {
            [m, h, w] => [m, h, w],
            ref s => return Err(DatasetError::Invalid(format!("image shape {s:?}"))),
        };
        if target_h < h || target_w < w {
            return Err(DatasetError::CanvasTooSmall {
                target_h,
                target_w,
                height: h,
                width: w,
            });
        }
        let (oy, ox) = ((target_h - h) / 2, (target_w - w) / 2);
        let mut out = Tensor::new(&[m, target_h, target_w], -1.0).expect("positive extents");
        let dst = out.data_mut();
        for c in 0..m {
            for y in 0..h {
                let src = &img.data()[(c * h + y) * w..][..w];
                dst[(c * target_h + oy + y) * target_w + ox..][..w].copy_from_slice(src);
            }
        }
        images.push(out);
    }
    Dataset::new(ds.name.clone(), images, ds.labels.clone(), ds.class_count)
}

/// Renders `n` single-map images of simple shapes; sample `i` has class
/// `i % class_count`. Shapes: filled square, disk, plus sign, diagonal
/// stripes, ring, horizontal bar, vertical bar, X.
pub fn synthetic_shapes(
    rng: &mut Rng,
    n: usize,
    class_count: usize,
    extent: usize,
) -> Result<Dataset, DatasetError> {
    if !(2..=SHAPE_CLASSES).contains(&class_count) {
        return Err(DatasetError::Invalid(format!(
            "class count {class_count} outside 2..={SHAPE_CLASSES}"
        )));
    }
    if n < class_count || extent < 8 {
        return Err(DatasetError::Invalid(
            "need n >= class count and extent >= 8".into(),
        ));
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let half = extent as f64 / 2.0;
    let jitter = extent as f64 / 8.0;
    for i in 0..n {
        let class = i % class_count;
        let cx = half - 0.5 + rng.symmetric(jitter);
        let cy = half - 0.5 + rng.symmetric(jitter);
        let r = extent as f64 * (0.25 + 0.05 * rng.next_f64());
        let mut data = Vec::with_capacity(extent * extent);
        for y in 0..extent {
            for x in 0..extent {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let d = (dx * dx + dy * dy).sqrt();
                let inside_box = dx.abs() <= r && dy.abs() <= r;
                let thick = r / 3.0;
                let on = match class {
                    0 => inside_box,
                    1 => d <= r,
                    2 => inside_box && (dx.abs() <= thick / 2.0 || dy.abs() <= thick / 2.0),
                    3 => inside_box && ((x + y) / 2) % 2 == 0,
                    4 => d <= r && d >= r * 0.55,
                    5 => dx.abs() <= r && dy.abs() <= thick / 2.0,
                    6 => dy.abs() <= r && dx.abs() <= thick / 2.0,
                    _ => {
                        inside_box
                            && ((dx - dy).abs() <= thick / 2.0 || (dx + dy).abs() <= thick / 2.0)
                    }
                };
                data.push(if on { 1.0 } else { -1.0 });
            }
        }
        images.push(Tensor::from_vec(&[1, extent, extent], data).expect("positive extent"));
        labels.push(class);
    }
    Dataset::new("shapes", images, labels, class_count)
}

/// Smooth scene with gradients, blobs and fine noise: a stand-in for a
/// natural photograph whose intensity histogram has no dominant bin.
pub fn natural_scene(rng: &mut Rng, height: usize, width: usize) -> Tensor {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.next_f64(),
                rng.next_f64(),
                rng.uniform(0.05, 0.2),
                rng.symmetric(0.6),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64 / height as f64, x as f64 / width as f64);
            let mut v = 0.5 * fx - 0.3 * fy + 0.2 * (7.0 * fx).sin() * (5.0 * fy).cos();
            for &(bx, by, s, a) in &blobs {
                v += a * (-((fx - bx).powi(2) + (fy - by).powi(2)) / (2.0 * s * s)).exp();
            }
            v += rng.symmetric(0.3);
            data.push((1.6 * v).tanh());
        }
    }
    Tensor::from_vec(&[1, height, width], data).expect("positive extents")
}

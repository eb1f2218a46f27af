//! Input preprocessors applied to whole datasets before training and to raw
//! images before prediction.
//!
//! Images live in `[-1, 1]`. The intensity normalizations work on unit
//! intensities `(v + 1) / 2`; on 3-map (RGB) images they act on the CIE L*
//! channel only, via an sRGB/D65 Lab round trip. Conorm filters every map
//! independently.

use std::fmt;
use std::str::FromStr;

use crate::augment::{self, bilinear, filter_renormalized, Background};
use crate::tensor::Tensor;

pub const HIST_BINS: usize = 256;
/// Fraction of pixels saturated at each end by [`imadjust`].
pub const IMADJUST_TAIL: f64 = 0.01;
/// Foreground threshold of [`width_normalize`], relative to the brightest pixel.
pub const FOREGROUND_THRESHOLD: f64 = 0.1;
pub const DOG_SIGMAS: (f64, f64) = (1.0, 2.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("image has no foreground above the threshold")]
    BlankImage,
    #[error("expected a [maps, height, width] image, got shape {0:?}")]
    NotAnImage(Vec<usize>),
    #[error("expected {expected} channel(s), got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("tile {tile_h}x{tile_w} does not divide image {height}x{width}")]
    TileNotDivisible {
        tile_h: usize,
        tile_w: usize,
        height: usize,
        width: usize,
    },
    #[error("filter size {0} must be odd and at least 3")]
    BadFilterSize(usize),
    #[error("inner extent {inner} exceeds outer extent {outer}")]
    InnerExceedsOuter { inner: usize, outer: usize },
    #[error("target width {target} does not fit a canvas {width} pixels wide")]
    TargetTooWide { target: usize, width: usize },
    #[error("invalid preprocessor `{0}`")]
    Parse(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

fn dims(image: &Tensor) -> Result<(usize, usize, usize), PreprocessError> {
    match *image.shape() {
        [m, h, w] => Ok((m, h, w)),
        ref other => Err(PreprocessError::NotAnImage(other.to_vec())),
    }
}

fn to_unit(v: f64) -> f64 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

fn from_unit(u: f64) -> f64 {
    2.0 * u - 1.0
}

// ---------------------------------------------------------------------------
// intensity planes (unit range)

/// Linear stretch that saturates `tail` of the pixels at each end.
///
/// With `k = round(tail * n)` and sorted values `s`, the low and high anchors
/// are `s[k-1]` and `s[n-k]`; for distinct values exactly `k` pixels end up
/// at 0 and `k` at 1. Degenerate planes map to 0.5.
pub fn imadjust_plane(plane: &[f64], tail: f64) -> Vec<f64> {
    let n = plane.len();
    let mut sorted = plane.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((tail * n as f64).round() as usize).min(n / 2);
    let (lo, hi) = if k == 0 {
        (sorted[0], sorted[n - 1])
    } else {
        (sorted[k - 1], sorted[n - k])
    };
    if !(hi > lo) {
        return vec![0.5; n];
    }
    plane
        .iter()
        .map(|&u| ((u - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

fn bin_of(u: f64) -> usize {
    ((u * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Normalized cumulative histogram over [`HIST_BINS`] bins.
pub fn cumulative_histogram(plane: &[f64]) -> [f64; HIST_BINS] {
    let mut counts = [0usize; HIST_BINS];
    for &u in plane {
        counts[bin_of(u)] += 1;
    }
    let mut cdf = [0.0; HIST_BINS];
    let mut acc = 0usize;
    for (c, n) in cdf.iter_mut().zip(counts) {
        acc += n;
        *c = acc as f64 / plane.len() as f64;
    }
    cdf
}

/// Maps every pixel through the image's cumulative histogram.
pub fn histeq_plane(plane: &[f64]) -> Vec<f64> {
    let cdf = cumulative_histogram(plane);
    plane.iter().map(|&u| cdf[bin_of(u)]).collect()
}

/// Per-tile histogram equalization, bilinearly blended between the mappings
/// of the four nearest tile centers so that tile seams stay continuous.
pub fn adapthisteq_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    tile_h: usize,
    tile_w: usize,
) -> Result<Vec<f64>, PreprocessError> {
    if tile_h == 0 || tile_w == 0 || !height.is_multiple_of(tile_h) || !width.is_multiple_of(tile_w)
    {
        return Err(PreprocessError::TileNotDivisible {
            tile_h,
            tile_w,
            height,
            width,
        });
    }
    let (ty, tx) = (height / tile_h, width / tile_w);
    let mut maps = Vec::with_capacity(ty * tx);
    for r in 0..ty {
        for c in 0..tx {
            let mut tile = Vec::with_capacity(tile_h * tile_w);
            for y in r * tile_h..(r + 1) * tile_h {
                tile.extend_from_slice(
                    &plane[y * width + c * tile_w..y * width + (c + 1) * tile_w],
                );
            }
            maps.push(cumulative_histogram(&tile));
        }
    }
    let neighbours = |pos: usize, tile: usize, count: usize| -> (usize, usize, f64) {
        let f = (pos as f64 + 0.5) / tile as f64 - 0.5;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = f.floor() as usize;
        if i0 + 1 >= count {
            return (count - 1, count - 1, 0.0);
        }
        (i0, i0 + 1, f - i0 as f64)
    };
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..height {
        let (r0, r1, wy) = neighbours(y, tile_h, ty);
        for x in 0..width {
            let (c0, c1, wx) = neighbours(x, tile_w, tx);
            let b = bin_of(plane[y * width + x]);
            let along_x = |r: usize| {
                let a = maps[r * tx + c0][b];
                if c0 == c1 {
                    a
                } else {
                    a + (maps[r * tx + c1][b] - a) * wx
                }
            };
            let top = along_x(r0);
            out.push(if r0 == r1 {
                top
            } else {
                top + (along_x(r1) - top) * wy
            });
        }
    }
    Ok(out)
}

/// Difference-of-Gaussians kernel of odd side `size`: a normalized Gaussian
/// of the first sigma minus a normalized Gaussian of the second.
pub fn dog_kernel(size: usize, sigmas: (f64, f64)) -> Result<Vec<f64>, PreprocessError> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(PreprocessError::BadFilterSize(size));
    }
    let r = size / 2;
    let g1 = augment::gaussian_kernel_2d(r, sigmas.0);
    let g2 = augment::gaussian_kernel_2d(r, sigmas.1);
    Ok(g1.iter().zip(&g2).map(|(a, b)| a - b).collect())
}

// ---------------------------------------------------------------------------
// color

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn xyz_to_rgb_matrix() -> [[f64; 3]; 3] {
    let m = RGB_TO_XYZ;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

/// D65 white point of the sRGB primaries (row sums of the RGB to XYZ matrix).
fn white() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(l: f64) -> f64 {
    if l <= 0.04045 / 12.92 {
        l * 12.92
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    if f > DELTA {
        f * f * f
    } else {
        3.0 * DELTA * DELTA * (f - 4.0 / 29.0)
    }
}

/// Converts one sRGB pixel with unit channels to `(L*, a*, b*)`.
pub fn rgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [f64; 3] = RGB_TO_XYZ.map(|row| row.iter().zip(&lin).map(|(m, c)| m * c).sum());
    let wp = white();
    let f = [
        lab_f(xyz[0] / wp[0]),
        lab_f(xyz[1] / wp[1]),
        lab_f(xyz[2] / wp[2]),
    ];
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let wp = white();
    let xyz = [
        wp[0] * lab_f_inv(fx),
        wp[1] * lab_f_inv(fy),
        wp[2] * lab_f_inv(fz),
    ];
    let inv = xyz_to_rgb_matrix();
    let lin: [f64; 3] = inv.map(|row| row.iter().zip(&xyz).map(|(m, c)| m * c).sum());
    lin.map(linear_to_srgb)
}

fn expect_rgb(image: &Tensor) -> Result<(usize, usize), PreprocessError> {
    let (m, h, w) = dims(image)?;
    if m != 3 {
        return Err(PreprocessError::ChannelCount {
            expected: 3,
            actual: m,
        });
    }
    Ok((h, w))
}

/// `[3, h, w]` image in `[-1, 1]` to `[3, h, w]` planes of L*, a*, b*.
pub fn rgb_to_lab(image: &Tensor) -> Result<Tensor, PreprocessError> {
    let (h, w) = expect_rgb(image)?;
    let n = h * w;
    let d = image.data();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let lab = rgb_pixel_to_lab([to_unit(d[i]), to_unit(d[n + i]), to_unit(d[2 * n + i])]);
        for c in 0..3 {
            out[c * n + i] = lab[c];
        }
    }
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

/// Inverse of [`rgb_to_lab`]; out-of-gamut values are not clamped.
pub fn lab_to_rgb(image: &Tensor) -> Result<Tensor, PreprocessError> {
    let (h, w) = expect_rgb(image)?;
    let n = h * w;
    let d = image.data();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let rgb = lab_pixel_to_rgb([d[i], d[n + i], d[2 * n + i]]);
        for c in 0..3 {
            out[c * n + i] = from_unit(rgb[c]);
        }
    }
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

/// Applies a unit-intensity plane operation to the L* channel of a Lab image,
/// leaving a* and b* untouched.
pub fn map_lightness(
    lab: &Tensor,
    op: impl Fn(&[f64]) -> Result<Vec<f64>, PreprocessError>,
) -> Result<Tensor, PreprocessError> {
    let (h, w) = expect_rgb(lab)?;
    let n = h * w;
    let mut out = lab.clone();
    let lightness: Vec<f64> = lab.data()[..n]
        .iter()
        .map(|l| (l / 100.0).clamp(0.0, 1.0))
        .collect();
    let mapped = op(&lightness)?;
    for (dst, u) in out.data_mut()[..n].iter_mut().zip(mapped) {
        *dst = u * 100.0;
    }
    Ok(out)
}

/// Runs an intensity operation on every map of a gray/stereo image, or on the
/// lightness of an RGB image.
fn intensity_op(
    image: &Tensor,
    op: impl Fn(&[f64]) -> Result<Vec<f64>, PreprocessError>,
) -> Result<Tensor, PreprocessError> {
    let (m, h, w) = dims(image)?;
    if m == 3 {
        let lab = rgb_to_lab(image)?;
        let mapped = map_lightness(&lab, op)?;
        let rgb = lab_to_rgb(&mapped)?;
        return Ok(rgb.map(|v| v.clamp(-1.0, 1.0)));
    }
    let mut out = Vec::with_capacity(image.len());
    for map in image.data().chunks_exact(h * w) {
        let unit: Vec<f64> = map.iter().map(|&v| to_unit(v)).collect();
        out.extend(op(&unit)?.into_iter().map(from_unit));
    }
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

pub fn imadjust(image: &Tensor) -> Result<Tensor, PreprocessError> {
    intensity_op(image, |p| Ok(imadjust_plane(p, IMADJUST_TAIL)))
}

pub fn histeq(image: &Tensor) -> Result<Tensor, PreprocessError> {
    intensity_op(image, |p| Ok(histeq_plane(p)))
}

pub fn adapthisteq(
    image: &Tensor,
    tile_h: usize,
    tile_w: usize,
) -> Result<Tensor, PreprocessError> {
    let (_, h, w) = dims(image)?;
    intensity_op(image, |p| adapthisteq_plane(p, h, w, tile_h, tile_w))
}

/// Difference-of-Gaussians edge enhancement; the response of every map is
/// divided by its largest magnitude so the result spans `[-1, 1]`.
pub fn conorm(image: &Tensor, filter_size: usize) -> Result<Tensor, PreprocessError> {
    let (_, h, w) = dims(image)?;
    dog_kernel(filter_size, DOG_SIGMAS)?;
    let r = filter_size / 2;
    let g1 = augment::gaussian_kernel_2d(r, DOG_SIGMAS.0);
    let g2 = augment::gaussian_kernel_2d(r, DOG_SIGMAS.1);
    let mut out = Vec::with_capacity(image.len());
    for map in image.data().chunks_exact(h * w) {
        let a = filter_renormalized(map, h, w, &g1, r);
        let b = filter_renormalized(map, h, w, &g2, r);
        let resp: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let peak = resp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak < 1e-12 {
            out.extend(std::iter::repeat_n(0.0, resp.len()));
        } else {
            out.extend(resp.into_iter().map(|v| v / peak));
        }
    }
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

// ---------------------------------------------------------------------------
// geometry

/// Rescales the foreground bounding box horizontally to `target` pixels,
/// keeps its height, and centers it (floor offsets) on a canvas of the input
/// extents.
pub fn width_normalize(image: &Tensor, target: usize) -> Result<Tensor, PreprocessError> {
    let (m, h, w) = dims(image)?;
    if m != 1 {
        return Err(PreprocessError::ChannelCount {
            expected: 1,
            actual: m,
        });
    }
    if target == 0 || target > w {
        return Err(PreprocessError::TargetTooWide { target, width: w });
    }
    let data = image.data();
    let peak = data.iter().map(|&v| to_unit(v)).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(PreprocessError::BlankImage);
    }
    let threshold = FOREGROUND_THRESHOLD * peak;
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if to_unit(data[y * w + x]) > threshold {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(PreprocessError::BlankImage);
    }
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let (ox, oy) = ((w - target) / 2, (h - bh) / 2);
    let scale = bw as f64 / target as f64;
    let mut out = vec![-1.0; h * w];
    for r in 0..bh {
        for j in 0..target {
            let sx = x0 as f64 + (j as f64 + 0.5) * scale - 0.5;
            out[(oy + r) * w + ox + j] =
                bilinear(data, h, w, sx, (y0 + r) as f64, Background::Constant(-1.0));
        }
    }
    Ok(Tensor::from_vec(&[1, h, w], out).expect("same extents"))
}

/// Width of the foreground bounding box, using the same threshold rule as
/// [`width_normalize`].
pub fn foreground_width(image: &Tensor) -> Option<usize> {
    let (_, h, w) = dims(image).ok()?;
    let data = &image.data()[..h * w];
    let peak = data.iter().map(|&v| to_unit(v)).fold(0.0, f64::max);
    if peak <= 0.0 {
        return None;
    }
    let cols: Vec<usize> = (0..w)
        .filter(|&x| (0..h).any(|y| to_unit(data[y * w + x]) > FOREGROUND_THRESHOLD * peak))
        .collect();
    Some(cols.last()? - cols.first()? + 1)
}

/// Bilinear resize of every map to `height` x `width` (pixel-center aligned,
/// edge-clamped).
pub fn resize(image: &Tensor, height: usize, width: usize) -> Result<Tensor, PreprocessError> {
    let (m, h, w) = dims(image)?;
    if height == 0 || width == 0 {
        return Err(PreprocessError::InvalidParam(
            "resize to zero extent".into(),
        ));
    }
    let (ry, rx) = (h as f64 / height as f64, w as f64 / width as f64);
    let mut out = Vec::with_capacity(m * height * width);
    for map in image.data().chunks_exact(h * w) {
        for y in 0..height {
            let sy = (y as f64 + 0.5) * ry - 0.5;
            for x in 0..width {
                let sx = (x as f64 + 0.5) * rx - 0.5;
                out.push(bilinear(map, h, w, sx, sy, Background::Clamp));
            }
        }
    }
    Ok(Tensor::from_vec(&[m, height, width], out).expect("positive extents"))
}

/// Resizes to `inner` x `inner` and pastes the result in the middle of an
/// `outer` x `outer` background canvas.
pub fn resize_center(
    image: &Tensor,
    inner: usize,
    outer: usize,
) -> Result<Tensor, PreprocessError> {
    let (m, _, _) = dims(image)?;
    if inner > outer {
        return Err(PreprocessError::InnerExceedsOuter { inner, outer });
    }
    let small = resize(image, inner, inner)?;
    let off = (outer - inner) / 2;
    let mut out = Tensor::new(&[m, outer, outer], -1.0).expect("positive extents");
    let src = small.data();
    let dst = out.data_mut();
    for c in 0..m {
        for y in 0..inner {
            let s = &src[(c * inner + y) * inner..][..inner];
            dst[(c * outer + off + y) * outer + off..][..inner].copy_from_slice(s);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// tags

/// One P block. Textual form (case-insensitive), chained with `+`:
/// `original`, `w<N>`, `imadjust`, `histeq`, `adapthisteq[:HxW]`,
/// `conorm[:N]`, `resize:<inner>:<outer>`, `blur:<radius>:<sigma>`.
#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessor {
    Original,
    WidthNorm(usize),
    Imadjust,
    Histeq,
    Adapthisteq { tile_h: usize, tile_w: usize },
    Conorm { filter_size: usize },
    ResizeCenter { inner: usize, outer: usize },
    Blur { radius: usize, sigma: f64 },
    Compose(Vec<Preprocessor>),
}

impl Preprocessor {
    pub fn compose(chain: Vec<Preprocessor>) -> Result<Self, PreprocessError> {
        if chain.is_empty() {
            return Err(PreprocessError::Parse("empty preprocessor chain".into()));
        }
        Ok(Preprocessor::Compose(chain))
    }

    pub fn apply(&self, image: &Tensor) -> Result<Tensor, PreprocessError> {
        match self {
            Preprocessor::Original => Ok(image.clone()),
            Preprocessor::WidthNorm(t) => width_normalize(image, *t),
            Preprocessor::Imadjust => imadjust(image),
            Preprocessor::Histeq => histeq(image),
            Preprocessor::Adapthisteq { tile_h, tile_w } => adapthisteq(image, *tile_h, *tile_w),
            Preprocessor::Conorm { filter_size } => conorm(image, *filter_size),
            Preprocessor::ResizeCenter { inner, outer } => resize_center(image, *inner, *outer),
            Preprocessor::Blur { radius, sigma } => augment::gaussian_blur(image, *radius, *sigma)
                .map_err(|e| PreprocessError::InvalidParam(e.to_string())),
            Preprocessor::Compose(chain) => {
                let (first, rest) = chain
                    .split_first()
                    .ok_or_else(|| PreprocessError::Parse("empty preprocessor chain".into()))?;
                let mut out = first.apply(image)?;
                for p in rest {
                    out = p.apply(&out)?;
                }
                Ok(out)
            }
        }
    }

    /// Output extents for an input of the given extents.
    pub fn output_extent(&self, height: usize, width: usize) -> (usize, usize) {
        match self {
            Preprocessor::ResizeCenter { outer, .. } => (*outer, *outer),
            Preprocessor::Compose(chain) => chain
                .iter()
                .fold((height, width), |(h, w), p| p.output_extent(h, w)),
            _ => (height, width),
        }
    }

    fn parse_one(s: &str) -> Result<Self, PreprocessError> {
        let err = || PreprocessError::Parse(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |t: &str| t.parse::<usize>().map_err(|_| err());
        let p = match (head, args.as_slice()) {
            ("original", []) => Preprocessor::Original,
            ("imadjust", []) => Preprocessor::Imadjust,
            ("histeq", []) => Preprocessor::Histeq,
            ("adapthisteq", []) => Preprocessor::Adapthisteq {
                tile_h: 6,
                tile_w: 6,
            },
            ("adapthisteq", [t]) => {
                let (a, b) = t.split_once('x').ok_or_else(err)?;
                Preprocessor::Adapthisteq {
                    tile_h: num(a)?,
                    tile_w: num(b)?,
                }
            }
            ("conorm", []) => Preprocessor::Conorm { filter_size: 5 },
            ("conorm", [n]) => Preprocessor::Conorm {
                filter_size: num(n)?,
            },
            ("resize", [i, o]) => Preprocessor::ResizeCenter {
                inner: num(i)?,
                outer: num(o)?,
            },
            ("blur", [r, sg]) => Preprocessor::Blur {
                radius: num(r)?,
                sigma: sg.parse().map_err(|_| err())?,
            },
            (h, []) if h.len() > 1 && h.starts_with('w') => Preprocessor::WidthNorm(num(&h[1..])?),
            _ => return Err(err()),
        };
        p.validate().map(|_| p)
    }

    fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: &str| Err(PreprocessError::InvalidParam(m.to_string()));
        match self {
            Preprocessor::WidthNorm(0) => bad("width target must be >= 1"),
            Preprocessor::Conorm { filter_size } if filter_size % 2 == 0 || *filter_size < 3 => {
                Err(PreprocessError::BadFilterSize(*filter_size))
            }
            Preprocessor::Adapthisteq { tile_h, tile_w } if *tile_h == 0 || *tile_w == 0 => {
                bad("tile extents must be >= 1")
            }
            Preprocessor::ResizeCenter { inner, outer } if *inner == 0 || inner > outer => {
                Err(PreprocessError::InnerExceedsOuter {
                    inner: *inner,
                    outer: *outer,
                })
            }
            Preprocessor::Blur { radius, sigma } if *radius == 0 || !(*sigma > 0.0) => {
                bad("blur radius must be >= 1 and sigma > 0")
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Preprocessor {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('+').collect();
        if parts.iter().any(|p| p.trim().is_empty()) {
            return Err(PreprocessError::Parse(s.to_string()));
        }
        if parts.len() == 1 {
            return Self::parse_one(parts[0]);
        }
        Self::compose(
            parts
                .into_iter()
                .map(Self::parse_one)
                .collect::<Result<_, _>>()?,
        )
    }
}

impl fmt::Display for Preprocessor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preprocessor::Original => f.write_str("original"),
            Preprocessor::WidthNorm(t) => write!(f, "w{t}"),
            Preprocessor::Imadjust => f.write_str("imadjust"),
            Preprocessor::Histeq => f.write_str("histeq"),
            Preprocessor::Adapthisteq { tile_h, tile_w } => {
                write!(f, "adapthisteq:{tile_h}x{tile_w}")
            }
            Preprocessor::Conorm { filter_size } => write!(f, "conorm:{filter_size}"),
            Preprocessor::ResizeCenter { inner, outer } => write!(f, "resize:{inner}:{outer}"),
            Preprocessor::Blur { radius, sigma } => write!(f, "blur:{radius}:{sigma}"),
            Preprocessor::Compose(chain) => {
                for (i, p) in chain.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Tensor::from_vec(&[1, h, w], data).unwrap()
    }

    fn natural(h: usize, w: usize) -> Tensor {
        crate::dataset::natural_scene(&mut Rng::new(11), h, w)
    }

    #[test]
    fn imadjust_saturates_tails_exactly() {
        let n = 100 * 100;
        let ramp = gray(100, 100, |y, x| {
            -1.0 + 2.0 * (y * 100 + x) as f64 / (n - 1) as f64
        });
        let out = imadjust(&ramp).unwrap();
        let low = out.data().iter().filter(|&&v| v == -1.0).count();
        let high = out.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(low, 100);
        assert_eq!(high, 100);
    }

    #[test]
    fn imadjust_near_identity_on_full_range() {
        let n = 64 * 64;
        let ramp = gray(64, 64, |y, x| {
            -1.0 + 2.0 * (y * 64 + x) as f64 / (n - 1) as f64
        });
        // direct percentile computation on the unit values
        let unit: Vec<f64> = ramp.data().iter().map(|v| (v + 1.0) / 2.0).collect();
        let mut sorted = unit.clone();
        sorted.sort_by(f64::total_cmp);
        let k = (0.01 * n as f64).round() as usize;
        let (lo, hi) = (sorted[k - 1], sorted[n - k]);
        let out = imadjust(&ramp).unwrap();
        for (u, o) in unit.iter().zip(out.data()) {
            let expected = 2.0 * ((u - lo) / (hi - lo)).clamp(0.0, 1.0) - 1.0;
            assert!((expected - o).abs() < 1e-12);
            assert!((o - (2.0 * u - 1.0)).abs() < 0.03);
        }
    }

    #[test]
    fn imadjust_two_values_and_constant() {
        let img = gray(10, 10, |y, _| if y < 5 { 0.2 } else { 0.8 });
        let out = imadjust(&img).unwrap();
        assert!(out.data().iter().all(|&v| v == -1.0 || v == 1.0));
        let c = Tensor::new(&[1, 8, 8], 0.3).unwrap();
        assert!(imadjust(&c).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histeq_constant_and_uniform() {
        let c = Tensor::new(&[1, 8, 8], -0.4).unwrap();
        let out = histeq(&c).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| v == first));

        // exactly one pixel per bin center: output within one bin of input
        let img = gray(16, 16, |y, x| {
            let b = (y * 16 + x) as f64;
            2.0 * ((b + 0.5) / 256.0) - 1.0
        });
        let out = histeq(&img).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!(((a + 1.0) / 2.0 - (b + 1.0) / 2.0).abs() <= 1.0 / 256.0 + 1e-12);
        }
    }

    #[test]
    fn histeq_flattens_histogram() {
        let img = natural(64, 64);
        let out = histeq(&img).unwrap();
        let mut counts = [0usize; HIST_BINS];
        for &v in out.data() {
            counts[bin_of(to_unit(v))] += 1;
        }
        let mean = out.len() as f64 / HIST_BINS as f64;
        let max = *counts.iter().max().unwrap() as f64;
        assert!(max <= 3.0 * mean, "max bin {max} vs mean {mean}");

        // the output distribution is uniform up to the largest input bin mass
        let n = img.len() as f64;
        let heaviest =
            cumulative_histogram(&img.data().iter().map(|&v| to_unit(v)).collect::<Vec<_>>())
                .iter()
                .scan(0.0, |prev, &c| {
                    let d = c - *prev;
                    *prev = c;
                    Some(d)
                })
                .fold(0.0, f64::max);
        let mut unit: Vec<f64> = out.data().iter().map(|&v| to_unit(v)).collect();
        unit.sort_by(f64::total_cmp);
        for (i, u) in unit.iter().enumerate() {
            let rank = (i + 1) as f64 / n;
            assert!((rank - u).abs() <= heaviest + 1e-9, "{rank} vs {u}");
        }
    }

    #[test]
    fn adapthisteq_single_tile_equals_histeq() {
        let img = natural(24, 24);
        assert_eq!(adapthisteq(&img, 24, 24).unwrap(), histeq(&img).unwrap());
        let c = Tensor::new(&[1, 12, 12], 0.1).unwrap();
        let out = adapthisteq(&c, 6, 6).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| v == first));
        assert!(matches!(
            adapthisteq(&img, 5, 5),
            Err(PreprocessError::TileNotDivisible { .. })
        ));
    }

    #[test]
    fn adapthisteq_expands_local_contrast() {
        // left half dark with faint texture, right half bright with faint texture
        let img = gray(24, 24, |y, x| {
            let tex = 0.02 * (((x * 7 + y * 3) % 5) as f64 - 2.0);
            if x < 12 {
                -0.6 + tex
            } else {
                0.6 + tex
            }
        });
        let global = histeq(&img).unwrap();
        let local = adapthisteq(&img, 6, 6).unwrap();
        let tile_var = |t: &Tensor, ty: usize, tx: usize| {
            let vals: Vec<f64> = (ty * 6..ty * 6 + 6)
                .flat_map(|y| (tx * 6..tx * 6 + 6).map(move |x| (y, x)))
                .map(|(y, x)| t.get(&[0, y, x]).unwrap())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
        };
        for (ty, tx) in [(0, 0), (3, 3), (1, 0), (2, 3)] {
            assert!(tile_var(&local, ty, tx) > tile_var(&global, ty, tx));
        }
    }

    #[test]
    fn dog_kernel_is_dc_free() {
        let k = dog_kernel(5, DOG_SIGMAS).unwrap();
        assert_eq!(k.len(), 25);
        assert!(k.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(
            dog_kernel(4, DOG_SIGMAS),
            Err(PreprocessError::BadFilterSize(4))
        );
    }

    #[test]
    fn conorm_constant_and_edge() {
        let c = Tensor::new(&[1, 10, 10], 0.7).unwrap();
        assert!(conorm(&c, 5).unwrap().data().iter().all(|&v| v == 0.0));

        let step = gray(16, 16, |_, x| if x < 8 { -1.0 } else { 1.0 });
        let out = conorm(&step, 5).unwrap();
        // direct convolution oracle on an interior row
        let k = dog_kernel(5, DOG_SIGMAS).unwrap();
        let y = 8;
        let mut direct = vec![0.0; 16];
        for (x, d) in direct.iter_mut().enumerate().take(14).skip(2) {
            for u in 0..5 {
                for v in 0..5 {
                    *d += k[u * 5 + v] * step.get(&[0, y + u - 2, x + v - 2]).unwrap();
                }
            }
        }
        let argmax = |row: &[f64]| {
            (2..14)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()))
                .unwrap()
        };
        let row: Vec<f64> = (0..16).map(|x| out.get(&[0, y, x]).unwrap()).collect();
        let peak = argmax(&row);
        assert_eq!(peak, argmax(&direct));
        assert!((5..=10).contains(&peak), "{peak}");
        assert!(conorm(&c, 6).is_err());
    }

    #[test]
    fn lab_white_gray_and_round_trip() {
        let white = rgb_pixel_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-9);
        assert!(white[1].abs() < 0.01 && white[2].abs() < 0.01);
        for g in [0.0, 0.1, 0.5, 0.9] {
            let lab = rgb_pixel_to_lab([g, g, g]);
            assert!(lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9);
        }
        let mut rng = Rng::new(4);
        let mut img = Tensor::zeros(&[3, 16, 16]).unwrap();
        img.fill_uniform(&mut rng, -1.0, 1.0).unwrap();
        let back = lab_to_rgb(&rgb_to_lab(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(matches!(
            rgb_to_lab(&Tensor::zeros(&[1, 4, 4]).unwrap()),
            Err(PreprocessError::ChannelCount {
                expected: 3,
                actual: 1
            })
        ));
    }

    #[test]
    fn lightness_ops_leave_chroma() {
        let mut rng = Rng::new(5);
        let mut img = Tensor::zeros(&[3, 12, 12]).unwrap();
        img.fill_uniform(&mut rng, -1.0, 1.0).unwrap();
        let lab = rgb_to_lab(&img).unwrap();
        let n = 144;
        for op in [
            &(|p: &[f64]| Ok(imadjust_plane(p, IMADJUST_TAIL)))
                as &dyn Fn(&[f64]) -> Result<Vec<f64>, PreprocessError>,
            &|p: &[f64]| Ok(histeq_plane(p)),
            &|p: &[f64]| adapthisteq_plane(p, 12, 12, 6, 6),
        ] {
            let out = map_lightness(&lab, op).unwrap();
            assert_eq!(&out.data()[n..], &lab.data()[n..]);
            assert_ne!(&out.data()[..n], &lab.data()[..n]);
        }
        let rgb_out = histeq(&img).unwrap();
        assert_eq!(rgb_out.shape(), img.shape());
    }

    fn digit(h: usize, w: usize, x0: usize, bw: usize, y0: usize, bh: usize) -> Tensor {
        gray(h, w, |y, x| {
            if (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y) {
                if (x + y) % 3 == 0 {
                    1.0
                } else {
                    0.5
                }
            } else {
                -1.0
            }
        })
    }

    #[test]
    fn width_normalize_identity_and_halving() {
        // width 20 centered with floor offsets on 29x29
        let img = digit(29, 29, 4, 20, 4, 20);
        assert_eq!(width_normalize(&img, 20).unwrap(), img);
        let half = width_normalize(&img, 10).unwrap();
        let bw = foreground_width(&half).unwrap();
        assert!((9..=11).contains(&bw), "{bw}");
        assert_eq!(half.shape(), &[1, 29, 29]);
    }

    #[test]
    fn width_normalize_errors() {
        let blank = Tensor::new(&[1, 29, 29], -1.0).unwrap();
        assert_eq!(
            width_normalize(&blank, 10),
            Err(PreprocessError::BlankImage)
        );
        let img = digit(29, 29, 4, 20, 4, 20);
        assert!(width_normalize(&img, 30).is_err());
    }

    #[test]
    fn resize_center_margins() {
        let img = Tensor::new(&[1, 40, 40], 0.5).unwrap();
        let out = resize_center(&img, 40, 48).unwrap();
        assert_eq!(out.shape(), &[1, 48, 48]);
        for y in 0..48 {
            for x in 0..48 {
                let inside = (4..44).contains(&y) && (4..44).contains(&x);
                let v = out.get(&[0, y, x]).unwrap();
                assert_eq!(v, if inside { 0.5 } else { -1.0 });
            }
        }
        let scene = natural(20, 20);
        assert_eq!(resize_center(&scene, 20, 20).unwrap(), scene);
        assert!(matches!(
            resize_center(&scene, 30, 20),
            Err(PreprocessError::InnerExceedsOuter { .. })
        ));
    }

    #[test]
    fn tags_parse_and_print() {
        for s in [
            "original",
            "w10",
            "imadjust",
            "histeq",
            "adapthisteq:6x6",
            "conorm:5",
            "resize:40:48",
            "blur:1:0.75",
            "resize:40:48+blur:1:0.75+imadjust",
        ] {
            let p: Preprocessor = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert_eq!(
            "W12".parse::<Preprocessor>().unwrap(),
            Preprocessor::WidthNorm(12)
        );
        assert!("".parse::<Preprocessor>().is_err());
        assert!("histeq+".parse::<Preprocessor>().is_err());
        assert!("conorm:4".parse::<Preprocessor>().is_err());
        assert!("sharpen".parse::<Preprocessor>().is_err());
        assert!(Preprocessor::compose(vec![]).is_err());
    }

    #[test]
    fn compose_of_one_equals_member() {
        let img = natural(12, 12);
        let single = Preprocessor::compose(vec![Preprocessor::Histeq]).unwrap();
        assert_eq!(
            single.apply(&img).unwrap(),
            Preprocessor::Histeq.apply(&img).unwrap()
        );
    }

    #[test]
    fn preprocessors_keep_extents_and_are_deterministic() {
        let img = natural(24, 24);
        for p in [
            Preprocessor::Original,
            Preprocessor::Imadjust,
            Preprocessor::Histeq,
            Preprocessor::Adapthisteq {
                tile_h: 6,
                tile_w: 6,
            },
            Preprocessor::Conorm { filter_size: 5 },
            Preprocessor::Blur {
                radius: 1,
                sigma: 0.75,
            },
        ] {
            let a = p.apply(&img).unwrap();
            assert_eq!(a.shape(), img.shape());
            assert_eq!(a, p.apply(&img).unwrap());
            assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

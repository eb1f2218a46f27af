//! Per-epoch image distortions: random affine maps, elastic displacement
//! fields and Gaussian blur.
//!
//! Images are `[maps, height, width]` tensors; every map of an image is
//! warped with the same transform. Coordinates are `(x, y) = (column, row)`.

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("transform is not invertible (determinant {0})")]
    Singular(f64),
    #[error("invalid distortion parameter: {0}")]
    InvalidParam(String),
    #[error("expected a [maps, height, width] image, got shape {0:?}")]
    NotAnImage(Vec<usize>),
}

/// Value used for samples that fall outside the source image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    Constant(f64),
    /// Repeat the nearest edge pixel.
    Clamp,
}

impl Default for Background {
    fn default() -> Self {
        Background::Constant(-1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    pub sigma: f64,
    pub alpha: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            sigma: 6.0,
            alpha: 36.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurParams {
    pub radius: usize,
    pub sigma: f64,
}

/// Bounds of the random distortion applied to every training image at the
/// start of each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionParams {
    /// Maximum shift as a fraction of the image extent along each axis.
    pub max_translate: f64,
    /// Maximum rotation in degrees.
    pub max_rotate: f64,
    /// Scale factors are drawn from `[1 - max_scale, 1 + max_scale]` per axis.
    pub max_scale: f64,
    pub elastic: Option<ElasticParams>,
    pub blur: Option<BlurParams>,
    pub background: Background,
}

impl Default for DistortionParams {
    fn default() -> Self {
        Self::none()
    }
}

impl DistortionParams {
    pub fn none() -> Self {
        Self {
            max_translate: 0.0,
            max_rotate: 0.0,
            max_scale: 0.0,
            elastic: None,
            blur: None,
            background: Background::default(),
        }
    }

    /// Default affine bounds for handwritten digits.
    pub fn mnist() -> Self {
        Self {
            max_translate: 0.075,
            max_rotate: 7.5,
            max_scale: 0.075,
            ..Self::none()
        }
    }

    pub fn cifar10() -> Self {
        Self {
            max_translate: 0.15,
            max_rotate: 5.0,
            max_scale: 0.15,
            background: Background::Clamp,
            ..Self::none()
        }
    }

    pub fn norb() -> Self {
        Self {
            max_translate: 0.15,
            max_rotate: 15.0,
            max_scale: 0.15,
            background: Background::Clamp,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |what: &str| Err(AugmentError::InvalidParam(what.to_string()));
        for (name, v) in [
            ("max_translate", self.max_translate),
            ("max_rotate", self.max_rotate),
            ("max_scale", self.max_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.max_scale >= 1.0 {
            return bad("max_scale must be below 1");
        }
        if let Some(e) = self.elastic {
            if !(e.sigma > 0.0) || !(e.alpha >= 0.0) {
                return bad("elastic sigma must be > 0 and alpha >= 0");
            }
        }
        if let Some(b) = self.blur {
            if b.radius == 0 || !(b.sigma > 0.0) {
                return bad("blur radius must be >= 1 and sigma > 0");
            }
        }
        Ok(())
    }

    /// True when [`distort`] is the identity for these parameters.
    pub fn is_identity(&self) -> bool {
        self.max_translate == 0.0
            && self.max_rotate == 0.0
            && self.max_scale == 0.0
            && self.elastic.is_none_or(|e| e.alpha == 0.0)
            && self.blur.is_none()
    }
}

/// Maps output pixel coordinates to source coordinates:
/// `src = [a b; c d] * (x, y) + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn inverse(&self) -> Result<Self, AugmentError> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(AugmentError::Singular(det));
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// Image-space warp `p -> R(theta) S (p - c) + c + t`, expressed as the
    /// output-to-source map this type stores.
    pub fn from_parts(
        theta_deg: f64,
        scale_x: f64,
        scale_y: f64,
        shift_x: f64,
        shift_y: f64,
        center: (f64, f64),
    ) -> Result<Self, AugmentError> {
        if theta_deg == 0.0 && scale_x == 1.0 && scale_y == 1.0 {
            // exact inverse for the pure-translation case
            return Ok(Self {
                m: [[1.0, 0.0, -shift_x], [0.0, 1.0, -shift_y]],
            });
        }
        let (s, c) = theta_deg.to_radians().sin_cos();
        let (a, b, cc, d) = (c * scale_x, -s * scale_y, s * scale_x, c * scale_y);
        let (cx, cy) = center;
        let forward = Self {
            m: [
                [a, b, cx + shift_x - (a * cx + b * cy)],
                [cc, d, cy + shift_y - (cc * cx + d * cy)],
            ],
        };
        forward.inverse()
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize), AugmentError> {
    match *image.shape() {
        [m, h, w] => Ok((m, h, w)),
        ref other => Err(AugmentError::NotAnImage(other.to_vec())),
    }
}

/// Draws rotation, per-axis scale and per-axis translation (in that order)
/// within the configured bounds.
pub fn sample_affine(
    rng: &mut Rng,
    params: &DistortionParams,
    height: usize,
    width: usize,
) -> AffineTransform {
    let theta = rng.symmetric(params.max_rotate);
    let sx = 1.0 + rng.symmetric(params.max_scale);
    let sy = 1.0 + rng.symmetric(params.max_scale);
    let tx = rng.symmetric(params.max_translate * width as f64);
    let ty = rng.symmetric(params.max_translate * height as f64);
    let center = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    AffineTransform::from_parts(theta, sx, sy, tx, ty, center)
        .expect("scale bounds below 1 keep the transform invertible")
}

fn pixel(map: &[f64], h: usize, w: usize, x: isize, y: isize, bg: Background) -> f64 {
    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        return map[y as usize * w + x as usize];
    }
    match bg {
        Background::Constant(v) => v,
        Background::Clamp => {
            let cx = x.clamp(0, w as isize - 1) as usize;
            let cy = y.clamp(0, h as isize - 1) as usize;
            map[cy * w + cx]
        }
    }
}

/// Bilinear sample of one map at a real-valued position.
pub fn bilinear(map: &[f64], h: usize, w: usize, x: f64, y: f64, bg: Background) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    if fx == 0.0 && fy == 0.0 {
        return pixel(map, h, w, xi, yi, bg);
    }
    let p00 = pixel(map, h, w, xi, yi, bg);
    let p01 = pixel(map, h, w, xi + 1, yi, bg);
    let p10 = pixel(map, h, w, xi, yi + 1, bg);
    let p11 = pixel(map, h, w, xi + 1, yi + 1, bg);
    let top = p00 + (p01 - p00) * fx;
    let bottom = p10 + (p11 - p10) * fx;
    top + (bottom - top) * fy
}

/// Resamples every map of `image` through `t` (output to source coordinates).
pub fn apply_affine(
    image: &Tensor,
    t: &AffineTransform,
    background: Background,
) -> Result<Tensor, AugmentError> {
    let (m, h, w) = image_dims(image)?;
    let det = t.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(AugmentError::Singular(det));
    }
    if *t == AffineTransform::identity() {
        return Ok(image.clone());
    }
    let mut out = Vec::with_capacity(image.len());
    for map in image.data().chunks_exact(h * w) {
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = t.apply(x as f64, y as f64);
                out.push(bilinear(map, h, w, sx, sy, background));
            }
        }
    }
    debug_assert_eq!(out.len(), m * h * w);
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

/// Normalized `(2r+1)`-tap Gaussian.
pub fn gaussian_kernel_1d(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Normalized `(2r+1)x(2r+1)` Gaussian, row-major.
pub fn gaussian_kernel_2d(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    let mut k = Vec::new();
    for u in -r..=r {
        for v in -r..=r {
            k.push((-((u * u + v * v) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// 2-D correlation of one map with a square kernel; near the border the
/// kernel is renormalized over its in-bounds taps.
pub(crate) fn filter_renormalized(
    map: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    radius: usize,
) -> Vec<f64> {
    let side = 2 * radius + 1;
    let r = radius as isize;
    let total: f64 = kernel.iter().sum();
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for u in -r..=r {
                let yy = y + u;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for v in -r..=r {
                    let xx = x + v;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let k = kernel[(u + r) as usize * side + (v + r) as usize];
                    acc += k * map[yy as usize * w + xx as usize];
                    mass += k;
                }
            }
            out[y as usize * w + x as usize] = if mass == total {
                acc
            } else {
                acc * total / mass
            };
        }
    }
    out
}

/// Convolves every map with a normalized Gaussian of the given window radius.
pub fn gaussian_blur(image: &Tensor, radius: usize, sigma: f64) -> Result<Tensor, AugmentError> {
    let (_, h, w) = image_dims(image)?;
    if radius == 0 || !(sigma > 0.0) {
        return Err(AugmentError::InvalidParam(
            "blur radius must be >= 1 and sigma > 0".into(),
        ));
    }
    let kernel = gaussian_kernel_2d(radius, sigma);
    let mut out = Vec::with_capacity(image.len());
    for map in image.data().chunks_exact(h * w) {
        out.extend(filter_renormalized(map, h, w, &kernel, radius));
    }
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

/// Separable Gaussian smoothing with border renormalization.
fn smooth(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let k = gaussian_kernel_1d(radius, sigma);
    let r = radius as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut acc, mut mass) = (0.0, 0.0);
                for i in -r..=r {
                    let (xx, yy) = if horizontal { (x + i, y) } else { (x, y + i) };
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let kv = k[(i + r) as usize];
                    acc += kv * src[yy as usize * w + xx as usize];
                    mass += kv;
                }
                dst[y as usize * w + x as usize] = acc / mass;
            }
        }
        dst
    };
    pass(&pass(field, true), false)
}

/// One smoothed displacement component: U[-1,1] noise per pixel convolved
/// with a Gaussian of standard deviation `sigma`.
pub fn displacement_field(rng: &mut Rng, height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..height * width).map(|_| rng.symmetric(1.0)).collect();
    smooth(&noise, height, width, sigma)
}

/// Elastic distortion: pixel `(x, y)` samples the source at
/// `(x + alpha * dx, y + alpha * dy)`.
pub fn elastic_distort(
    rng: &mut Rng,
    image: &Tensor,
    sigma: f64,
    alpha: f64,
    background: Background,
) -> Result<Tensor, AugmentError> {
    let (_, h, w) = image_dims(image)?;
    if !(sigma > 0.0) {
        return Err(AugmentError::InvalidParam(
            "elastic sigma must be > 0".into(),
        ));
    }
    let dx = displacement_field(rng, h, w, sigma);
    let dy = displacement_field(rng, h, w, sigma);
    if alpha == 0.0 {
        return Ok(image.clone());
    }
    let mut out = Vec::with_capacity(image.len());
    for map in image.data().chunks_exact(h * w) {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                out.push(bilinear(
                    map,
                    h,
                    w,
                    x as f64 + alpha * dx[i],
                    y as f64 + alpha * dy[i],
                    background,
                ));
            }
        }
    }
    Ok(Tensor::from_vec(image.shape(), out).expect("same extents"))
}

/// The full per-image distortion: affine, then elastic, then blur.
pub fn distort(
    rng: &mut Rng,
    image: &Tensor,
    params: &DistortionParams,
) -> Result<Tensor, AugmentError> {
    let (_, h, w) = image_dims(image)?;
    let t = sample_affine(rng, params, h, w);
    let mut out = apply_affine(image, &t, params.background)?;
    if let Some(e) = params.elastic {
        out = elastic_distort(rng, &out, e.sigma, e.alpha, params.background)?;
    }
    if let Some(b) = params.blur {
        out = gaussian_blur(&out, b.radius, b.sigma)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize) -> Tensor {
        let data = (0..h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        Tensor::from_vec(&[1, h, w], data).unwrap()
    }

    #[test]
    fn zero_params_give_identity() {
        let mut rng = Rng::new(1);
        let t = sample_affine(&mut rng, &DistortionParams::none(), 29, 29);
        assert_eq!(t, AffineTransform::identity());
        let img = pattern(29, 29);
        let out = distort(&mut rng, &img, &DistortionParams::none()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn translation_only_has_identity_linear_part() {
        let params = DistortionParams {
            max_translate: 0.2,
            ..DistortionParams::none()
        };
        let t = sample_affine(&mut Rng::new(5), &params, 20, 20);
        assert_eq!(
            [t.m[0][0], t.m[0][1], t.m[1][0], t.m[1][1]],
            [1.0, 0.0, 0.0, 1.0]
        );
        assert!(t.m[0][2] != 0.0 || t.m[1][2] != 0.0);
    }

    #[test]
    fn sampled_parameters_respect_bounds() {
        for params in [
            DistortionParams::mnist(),
            DistortionParams::cifar10(),
            DistortionParams::norb(),
        ] {
            let mut rng = Rng::new(99);
            for _ in 0..10_000 {
                let theta = rng.symmetric(params.max_rotate);
                assert!(theta.abs() <= params.max_rotate);
                let s = 1.0 + rng.symmetric(params.max_scale);
                assert!((1.0 - params.max_scale..=1.0 + params.max_scale).contains(&s));
            }
            // every sampled transform's linear part is a rotation times a bounded scale
            let mut rng = Rng::new(7);
            for _ in 0..10_000 {
                let t = sample_affine(&mut rng, &params, 32, 32);
                let det = t.determinant().abs();
                let lo = 1.0 / (1.0 + params.max_scale).powi(2);
                let hi = 1.0 / (1.0 - params.max_scale).powi(2);
                assert!(det >= lo - 1e-12 && det <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn rotation_samples_within_five_degrees() {
        let params = DistortionParams {
            max_rotate: 5.0,
            ..DistortionParams::none()
        };
        let mut rng = Rng::new(31);
        for _ in 0..10_000 {
            let t = sample_affine(&mut rng, &params, 32, 32);
            // pure rotation: m = R(-theta)
            let theta = t.m[1][0].atan2(t.m[0][0]).to_degrees().abs();
            assert!(theta <= 5.0 + 1e-9, "{theta}");
        }
    }

    #[test]
    fn integer_shift_moves_impulse() {
        let mut img = Tensor::new(&[1, 7, 7], 0.0).unwrap();
        img.set(&[0, 3, 3], 1.0).unwrap();
        // output (x, y) samples source (x - 1, y): content moves one pixel right
        let t = AffineTransform::from_parts(0.0, 1.0, 1.0, 1.0, 0.0, (3.0, 3.0)).unwrap();
        let out = apply_affine(&img, &t, Background::Constant(0.0)).unwrap();
        assert_eq!(out.get(&[0, 3, 4]).unwrap(), 1.0);
        assert_eq!(out.sum(), 1.0);
    }

    #[test]
    fn quarter_turn_matches_hand_rotation() {
        // asymmetric 5x5 pattern
        let src: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64).collect();
        let img = Tensor::from_vec(&[1, 5, 5], src.clone()).unwrap();
        let t = AffineTransform::from_parts(90.0, 1.0, 1.0, 0.0, 0.0, (2.0, 2.0)).unwrap();
        let out = apply_affine(&img, &t, Background::Constant(0.0)).unwrap();
        // forward map with y pointing down: (x, y) -> (c - (y - c), c + (x - c)) rotated
        // by +90 degrees, i.e. src(x, y) lands at (4 - y, x)
        for y in 0..5 {
            for x in 0..5 {
                let expected = src[y * 5 + x];
                let got = out.get(&[0, x, 4 - y]).unwrap();
                assert!(
                    (got - expected).abs() < 1e-12,
                    "({x},{y}) {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn singular_transform_rejected() {
        let t = AffineTransform {
            m: [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]],
        };
        assert!(matches!(
            apply_affine(&pattern(4, 4), &t, Background::Clamp),
            Err(AugmentError::Singular(_))
        ));
    }

    #[test]
    fn affine_inverse_round_trip() {
        let t = AffineTransform::from_parts(13.0, 1.1, 0.9, 2.0, -1.5, (10.0, 12.0)).unwrap();
        let inv = t.inverse().unwrap();
        let (x, y) = inv.apply(3.0, 4.0);
        let (bx, by) = t.apply(x, y);
        assert!((bx - 3.0).abs() < 1e-12 && (by - 4.0).abs() < 1e-12);
    }

    #[test]
    fn elastic_zero_alpha_is_identity_and_bounded() {
        let img = pattern(16, 16);
        let out = elastic_distort(&mut Rng::new(3), &img, 4.0, 0.0, Background::Clamp).unwrap();
        assert_eq!(out, img);
        let out = elastic_distort(&mut Rng::new(3), &img, 4.0, 8.0, Background::Clamp).unwrap();
        assert!(out.min() >= img.min() - 1e-12 && out.max() <= img.max() + 1e-12);
        assert_ne!(out, img);
    }

    fn lag_correlation(f: &[f64], w: usize, lag: usize) -> f64 {
        let h = f.len() / w;
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
        let mut acc = 0.0;
        let mut n = 0;
        for y in 0..h {
            for x in 0..w - lag {
                acc += (f[y * w + x] - mean) * (f[y * w + x + lag] - mean);
                n += 1;
            }
        }
        acc / n as f64 / var
    }

    #[test]
    fn displacement_correlation_grows_with_sigma() {
        let narrow = displacement_field(&mut Rng::new(8), 100, 100, 1.0);
        let wide = displacement_field(&mut Rng::new(8), 100, 100, 6.0);
        for lag in [1, 3, 6] {
            assert!(lag_correlation(&wide, 100, lag) > lag_correlation(&narrow, 100, lag));
        }
        assert!(lag_correlation(&wide, 100, 3) > 0.5);
    }

    #[test]
    fn blur_kernel_and_response() {
        let k = gaussian_kernel_2d(1, 0.75);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let raw_center = 1.0;
        let raw_sum: f64 = (-1i32..=1)
            .flat_map(|u| {
                (-1i32..=1).map(move |v| (-((u * u + v * v) as f64) / (2.0 * 0.5625)).exp())
            })
            .sum();
        assert!((k[4] - raw_center / raw_sum).abs() < 1e-15);

        let c = Tensor::new(&[2, 6, 5], 0.4).unwrap();
        let out = gaussian_blur(&c, 1, 0.75).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.4).abs() < 1e-12));

        let mut imp = Tensor::zeros(&[1, 7, 7]).unwrap();
        imp.set(&[0, 3, 3], 1.0).unwrap();
        let out = gaussian_blur(&imp, 1, 0.75).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert!((out.get(&[0, 2 + u, 2 + v]).unwrap() - k[u * 3 + v]).abs() < 1e-15);
            }
        }
        assert!(gaussian_blur(&c, 0, 0.75).is_err());
    }

    #[test]
    fn distortion_preserves_shape() {
        let img = pattern(29, 29);
        let params = DistortionParams {
            elastic: Some(ElasticParams::default()),
            blur: Some(BlurParams {
                radius: 1,
                sigma: 0.75,
            }),
            ..DistortionParams::mnist()
        };
        let out = distort(&mut Rng::new(2), &img, &params).unwrap();
        assert_eq!(out.shape(), img.shape());
    }

    #[test]
    fn validation() {
        assert!(DistortionParams::mnist().validate().is_ok());
        let bad = DistortionParams {
            max_rotate: -1.0,
            ..DistortionParams::none()
        };
        assert!(bad.validate().is_err());
        let bad = DistortionParams {
            elastic: Some(ElasticParams {
                sigma: 0.0,
                alpha: 1.0,
            }),
            ..DistortionParams::none()
        };
        assert!(bad.validate().is_err());
    }
}

//! Pixel-space color math.
//!
//! Images are stored channel-last with `f32` samples in `[0, 1]`; 8-bit data
//! is converted only at the I/O boundary. Lab conversions use the sRGB
//! transfer curve and a D65 white point derived from the RGB→XYZ matrix, so
//! neutral RGB values map to `a = b = 0`.
//!
//! Grayscale is defined as the sRGB-encoded relative luminance (BT.709
//! primaries on linear light). That makes the gray value a function of the
//! Lab `L` channel alone, so replacing `L` and converting back to gray is a
//! round trip.

use std::path::Path;
use std::sync::LazyLock;

use crate::error::{shape_mismatch, Error, Result};

/// Relative luminance weights (BT.709 primaries, linear light).
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

const RGB_TO_XYZ: [[f64; 3]; 3] = [[0.4124, 0.3576, 0.1805], LUMA_WEIGHTS, [0.0193, 0.1192, 0.9505]];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let mut w = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        w[i] = row.iter().sum();
    }
    w
});

const LAB_EPS: f64 = 6.0 / 29.0;

/// Smallest spatial size accepted by the diffusion pipeline.
pub const MIN_PIPELINE_SIZE: usize = 8;

/// An RGB image, `height × width × 3`, channel-last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// A single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Planar CIE-Lab image. `l` is in `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn check_samples(data: &[f32], expected: usize, width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("empty image {width}x{height}")));
    }
    if data.len() != expected {
        return Err(shape_mismatch(expected, data.len()));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample at index {pos}")));
    }
    if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!(
            "sample {} at index {pos} outside [0, 1]",
            data[pos]
        )));
    }
    Ok(())
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_samples(&data, width * height * 3, width, height)?;
        Ok(Self { width, height, data })
    }

    /// Builds an image from arbitrary finite samples, clamping into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite sample".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    pub fn constant(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Rejects images too small for the diffusion pipeline.
    pub fn ensure_pipeline_size(&self) -> Result<()> {
        ensure_min_size(self.width, self.height)
    }

    pub fn to_gray(&self) -> GrayImage {
        to_grayscale(self)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_samples(&data, width * height, width, height)?;
        Ok(Self { width, height, data })
    }

    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite sample".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ensure_pipeline_size(&self) -> Result<()> {
        ensure_min_size(self.width, self.height)
    }

    /// Replicates the gray channel into R, G and B.
    pub fn to_rgb(&self) -> RgbImage {
        let data = self.data.iter().flat_map(|&g| [g, g, g]).collect();
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

fn ensure_min_size(width: usize, height: usize) -> Result<()> {
    if width < MIN_PIPELINE_SIZE || height < MIN_PIPELINE_SIZE {
        return Err(Error::InvalidInput(format!(
            "image {width}x{height} is smaller than {MIN_PIPELINE_SIZE}x{MIN_PIPELINE_SIZE}"
        )));
    }
    Ok(())
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            // cofactor of (c, r) for the adjugate
            let (r0, r1) = match c {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match r {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            inv[r][c] = sign * minor / det;
        }
    }
    inv
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * LAB_EPS * LAB_EPS) + 4.0 / 29.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    if f > LAB_EPS {
        f.powi(3)
    } else {
        3.0 * LAB_EPS * LAB_EPS * (f - 4.0 / 29.0)
    }
}

/// Relative luminance of an sRGB-encoded pixel.
pub fn luminance(rgb: [f64; 3]) -> f64 {
    LUMA_WEIGHTS.iter().zip(rgb).map(|(w, c)| w * srgb_to_linear(c)).sum()
}

/// Lab lightness of a neutral pixel with sRGB-encoded value `g`.
pub fn gray_lightness(g: f64) -> f64 {
    116.0 * lab_f(srgb_to_linear(g)) - 16.0
}

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let white = *WHITE;
    let mut xyz = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        xyz[i] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn lab_to_linear(lab: [f64; 3]) -> [f64; 3] {
    let white = *WHITE;
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * white[0],
        lab_f_inv(fy) * white[1],
        lab_f_inv(fz) * white[2],
    ];
    let inv = &*XYZ_TO_RGB;
    let mut lin = [0.0; 3];
    for (i, row) in inv.iter().enumerate() {
        lin[i] = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
    }
    lin
}

/// Lab to sRGB without any gamut handling; results may leave `[0, 1]`.
pub fn lab_to_rgb_unclamped(lab: [f64; 3]) -> [f64; 3] {
    lab_to_linear(lab).map(linear_to_srgb)
}

const GAMUT_EPS: f64 = 1e-9;
/// Bisection steps on the chroma factor; 2^-32 is far below 8-bit precision.
const GAMUT_STEPS: usize = 32;

/// The transfer function maps `[0, 1]` onto itself monotonically, so gamut
/// membership can be decided on linear values.
fn in_gamut(lin: &[f64; 3]) -> bool {
    lin.iter().all(|&c| (-GAMUT_EPS..=1.0 + GAMUT_EPS).contains(&c))
}

/// Lab to sRGB keeping `L` and hue: out-of-gamut colors are pulled toward the
/// neutral axis by bisection on the chroma until they fit.
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let direct = lab_to_linear(lab);
    let lin = if in_gamut(&direct) {
        direct
    } else {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..GAMUT_STEPS {
            let mid = 0.5 * (lo + hi);
            if in_gamut(&lab_to_linear([lab[0], lab[1] * mid, lab[2] * mid])) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lab_to_linear([lab[0], lab[1] * lo, lab[2] * lo])
    };
    lin.map(|c| linear_to_srgb(c.clamp(0.0, 1.0)))
}

pub fn to_lab(img: &RgbImage) -> LabImage {
    let n = img.width * img.height;
    let mut out = LabImage {
        width: img.width,
        height: img.height,
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for p in img.pixels() {
        let lab = rgb_to_lab(p.map(f64::from));
        out.l.push(lab[0]);
        out.a.push(lab[1]);
        out.b.push(lab[2]);
    }
    out
}

impl LabImage {
    pub fn to_rgb(&self) -> RgbImage {
        let mut data = Vec::with_capacity(self.l.len() * 3);
        for i in 0..self.l.len() {
            let rgb = lab_to_rgb([self.l[i], self.a[i], self.b[i]]);
            data.extend(rgb.map(|c| c as f32));
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Multiplies both chroma channels by `factor`.
    pub fn scale_ab(&mut self, factor: f64) {
        for v in self.a.iter_mut().chain(self.b.iter_mut()) {
            *v *= factor;
        }
    }
}

/// Luma projection: sRGB-encoded relative luminance per pixel.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .pixels()
        .map(|p| linear_to_srgb(luminance(p.map(f64::from))).clamp(0.0, 1.0) as f32)
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Validates and converts, rejecting non-finite inputs.
pub fn to_grayscale_checked(img: &RgbImage) -> Result<GrayImage> {
    check_samples(&img.data, img.data.len(), img.width, img.height)?;
    Ok(to_grayscale(img))
}

/// Substitutes the Lab lightness of `colorized` with that of `source`,
/// keeping the chroma of `colorized` (reduced only when needed to stay in
/// gamut).
pub fn replace_luma(colorized: &RgbImage, source: &GrayImage) -> Result<RgbImage> {
    if colorized.dims() != source.dims() {
        return Err(shape_mismatch(source.dims(), colorized.dims()));
    }
    let mut data = Vec::with_capacity(colorized.data.len());
    for (p, &g) in colorized.pixels().zip(source.data.iter()) {
        let lab = rgb_to_lab(p.map(f64::from));
        let rgb = lab_to_rgb([gray_lightness(f64::from(g)), lab[1], lab[2]]);
        data.extend(rgb.map(|c| c as f32));
    }
    Ok(RgbImage {
        width: colorized.width,
        height: colorized.height,
        data,
    })
}

/// Blends every pixel toward its gray value: `s·x + (1 − s)·x'`, clamped.
pub fn scale_chroma(img: &RgbImage, s: f64) -> Result<RgbImage> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("chroma scale {s} is not finite")));
    }
    let gray = to_grayscale(img);
    let mut data = Vec::with_capacity(img.data.len());
    for (p, &g) in img.pixels().zip(gray.data.iter()) {
        for c in p {
            let v = s * f64::from(c) + (1.0 - s) * f64::from(g);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(RgbImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Hasler–Süsstrunk colorfulness of channel-last RGB samples in `[0, 1]`,
/// reported on the conventional 8-bit scale. Samples are not clamped, so it
/// also measures raw decoder output.
pub fn colorfulness_of_samples(data: &[f32]) -> f64 {
    let n = (data.len() / 3) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (mut s_rg, mut s_yb, mut ss_rg, mut ss_yb) = (0.0, 0.0, 0.0, 0.0);
    for p in data.chunks_exact(3) {
        let (r, g, b) = (
            255.0 * f64::from(p[0]),
            255.0 * f64::from(p[1]),
            255.0 * f64::from(p[2]),
        );
        let rg = r - g;
        let yb = 0.5 * (r + g) - b;
        s_rg += rg;
        s_yb += yb;
        ss_rg += rg * rg;
        ss_yb += yb * yb;
    }
    let (m_rg, m_yb) = (s_rg / n, s_yb / n);
    let var_rg = (ss_rg / n - m_rg * m_rg).max(0.0);
    let var_yb = (ss_yb / n - m_yb * m_yb).max(0.0);
    (var_rg + var_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt()
}

pub fn colorfulness(img: &RgbImage) -> f64 {
    colorfulness_of_samples(&img.data)
}

pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max <= 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn mean_saturation(img: &RgbImage) -> f64 {
    let n = (img.width * img.height) as f64;
    img.pixels().map(|p| rgb_to_hsv(p.map(f64::from))[1]).sum::<f64>() / n
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl RgbImage {
    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer length matches dimensions")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_dynamic(&image::open(path)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_dynamic(&image::load_from_memory(bytes)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

impl GrayImage {
    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self> {
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        let data = luma.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?;
        Ok(gray_of_dynamic(&img))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(gray_of_dynamic(&image::load_from_memory(bytes)?))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Gray view of a decoded file: single-channel files are taken as-is, color
/// files go through [`to_grayscale`].
pub fn gray_of_dynamic(img: &image::DynamicImage) -> GrayImage {
    use image::ColorType;
    match img.color() {
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
            GrayImage::from_dynamic(img).expect("8-bit samples are in range")
        }
        _ => to_grayscale(&RgbImage::from_dynamic(img).expect("8-bit samples are in range")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| {
            let fx = x as f32 / 15.0;
            let fy = y as f32 / 15.0;
            [fx, 1.0 - fy, 0.5 * (fx + fy)]
        })
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_and_out_of_range() {
        let mut data = vec![0.5; 8 * 8 * 3];
        data[5] = f32::NAN;
        assert!(RgbImage::new(8, 8, data.clone()).is_err());
        data[5] = 1.5;
        assert!(RgbImage::new(8, 8, data).is_err());
        assert!(RgbImage::new(8, 8, vec![0.5; 10]).is_err());
    }

    #[test]
    fn white_and_black_gray() {
        let white = RgbImage::constant(8, 8, [1.0; 3]).unwrap();
        assert!(to_grayscale(&white).data().iter().all(|&v| v == 1.0));
        let black = RgbImage::constant(8, 8, [0.0; 3]).unwrap();
        assert!(to_grayscale(&black).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_red_gray_matches_pinned_value() {
        // 1.055 * 0.2126^(1/2.4) - 0.055, evaluated offline.
        let red = RgbImage::constant(8, 8, [1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&red);
        for &v in g.data() {
            assert!((f64::from(v) - 0.498_439_923_592).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn grayscale_idempotent_on_replicated_gray() {
        let g = to_grayscale(&card());
        let again = to_grayscale(&g.to_rgb());
        assert_eq!(g, again);
    }

    #[test]
    fn neutral_pixels_have_zero_chroma() {
        for g in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let lab = rgb_to_lab([g, g, g]);
            assert!(lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9, "{lab:?}");
            assert!((lab[0] - gray_lightness(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn lab_round_trip() {
        for p in card().pixels() {
            let rgb = p.map(f64::from);
            let back = lab_to_rgb(rgb_to_lab(rgb));
            for c in 0..3 {
                assert!((rgb[c] - back[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn replace_luma_with_own_gray_is_fixed_point() {
        let img = card();
        let out = replace_luma(&img, &to_grayscale(&img)).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn replace_luma_on_gray_colorized_gives_source() {
        let colorized = RgbImage::constant(8, 8, [0.3, 0.3, 0.3]).unwrap();
        let src = GrayImage::new(8, 8, (0..64).map(|i| i as f32 / 63.0).collect()).unwrap();
        let out = replace_luma(&colorized, &src).unwrap();
        for (p, &g) in out.pixels().zip(src.data()) {
            for c in p {
                assert!((c - g).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn replace_luma_dimension_mismatch() {
        let c = RgbImage::constant(8, 8, [0.3; 3]).unwrap();
        let g = GrayImage::new(8, 9, vec![0.5; 72]).unwrap();
        assert!(matches!(replace_luma(&c, &g), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn out_of_gamut_luma_keeps_lightness() {
        // Saturated blue chroma forced onto a very bright L.
        let colorized = RgbImage::constant(8, 8, [0.0, 0.0, 1.0]).unwrap();
        let src = GrayImage::new(8, 8, vec![0.95; 64]).unwrap();
        let out = replace_luma(&colorized, &src).unwrap();
        let lab = rgb_to_lab(out.pixel(0, 0).map(f64::from));
        assert!((lab[0] - gray_lightness(0.95)).abs() / 100.0 < 1e-5);
        assert!(lab[2] < -1.0, "some blue survives: {lab:?}");
    }

    #[test]
    fn scale_chroma_endpoints() {
        let img = card();
        assert_eq!(scale_chroma(&img, 1.0).unwrap(), img);
        let zero = scale_chroma(&img, 0.0).unwrap();
        assert_eq!(zero, to_grayscale(&img).to_rgb());
        assert_eq!(colorfulness(&zero), 0.0);
        assert!(scale_chroma(&img, f64::NAN).is_err());
    }

    #[test]
    fn halving_chroma_reduces_colorfulness() {
        let img = card();
        let half = scale_chroma(&img, 0.5).unwrap();
        assert!(colorfulness(&half) < colorfulness(&img));
    }

    #[test]
    fn colorfulness_two_point_distribution() {
        // rg = ±255, yb = 127.5 on both halves: σ = 255, μ = 127.5.
        let img = RgbImage::from_fn(8, 8, |x, _| if x < 4 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] }).unwrap();
        assert!((colorfulness(&img) - 293.25).abs() < 1e-9);
    }

    #[test]
    fn gray_colorfulness_is_zero() {
        let g = GrayImage::new(8, 8, (0..64).map(|i| (i % 7) as f32 / 6.0).collect()).unwrap();
        assert_eq!(colorfulness(&g.to_rgb()), 0.0);
    }

    #[test]
    fn hsv_round_trip() {
        for p in card().pixels() {
            let rgb = p.map(f64::from);
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((rgb[c] - back[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let img = RgbImage::from_fn(8, 8, |x, y| [x as f32 / 255.0, y as f32 / 255.0, 1.0]).unwrap();
        let back = RgbImage::decode(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(img.to_rgb8(), back.to_rgb8());
    }
}

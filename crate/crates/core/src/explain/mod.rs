//! Attention visualisation: jet-colormapped overlays, temporal swatches,
//! PPM export and a contact sheet with the swatch strip above the frames.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Blue → cyan (1/3) → yellow (2/3) → red, piecewise linear per channel,
/// scaled to 0–255 and rounded half away from zero. Input is clamped to
/// `[0, 1]`; NaN maps to the blue end.
pub fn colormap_jet(v: f64) -> Rgb {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let (r, g, b) = if v <= 1.0 / 3.0 {
        (0.0, 3.0 * v, 1.0)
    } else if v <= 2.0 / 3.0 {
        (3.0 * v - 1.0, 1.0, 2.0 - 3.0 * v)
    } else {
        (1.0, 3.0 - 3.0 * v, 0.0)
    };
    let q = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Bilinear resize of a row-major `h × w` map with half-pixel centres
/// (corners not aligned). Each output is a convex combination of inputs.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(map.len(), h * w, "map size");
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Raster {
            width,
            height,
            rgb: color.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    fn blit(&mut self, src: &Raster, x0: usize, y0: usize) {
        for y in 0..src.height {
            let d = 3 * ((y0 + y) * self.width + x0);
            let s = 3 * y * src.width;
            self.rgb[d..d + 3 * src.width].copy_from_slice(&src.rgb[s..s + 3 * src.width]);
        }
    }
}

/// One overlay frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFrame {
    pub frame: usize,
    pub alpha: f64,
    pub raster: Raster,
}

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Overlays each frame's spatial attention on the grayscale video.
///
/// `video` is one `[C, T, H, W]` clip in `[0, 1]` (channels are averaged to
/// gray); `spatial` holds `T` maps of `map_h × map_w`.
pub fn render_spatial(
    video: &[f32],
    video_shape: [usize; 4],
    spatial: &[f64],
    map_size: [usize; 2],
    alpha: f64,
) -> Result<Vec<HeatmapFrame>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let [c, t, h, w] = video_shape;
    let [mh, mw] = map_size;
    if video.len() != c * t * h * w || c == 0 {
        return Err(Error::Input(format!(
            "video has {} values, shape {video_shape:?} needs {}",
            video.len(),
            c * t * h * w
        )));
    }
    if spatial.len() != t * mh * mw || mh == 0 || mw == 0 {
        return Err(Error::Input(format!(
            "spatial attention has {} values, expected {t} frames of {mh}×{mw}",
            spatial.len()
        )));
    }
    let plane = h * w;
    (0..t)
        .map(|f| {
            let up = upsample_bilinear(&spatial[f * mh * mw..(f + 1) * mh * mw], mh, mw, h, w);
            let mut rgb = Vec::with_capacity(3 * plane);
            for (p, &m) in up.iter().enumerate() {
                let gray = (0..c).map(|ch| video[(ch * t + f) * plane + p] as f64).sum::<f64>() / c as f64;
                let gray = (gray.clamp(0.0, 1.0) * 255.0).round();
                for channel in colormap_jet(m) {
                    rgb.push(((1.0 - alpha) * gray + alpha * channel as f64).round() as u8);
                }
            }
            Ok(HeatmapFrame {
                frame: f,
                alpha,
                raster: Raster { width: w, height: h, rgb },
            })
        })
        .collect()
}

/// Per-frame colour swatches for temporal attention plus its CSV listing.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBar {
    pub swatches: Vec<Rgb>,
    pub csv: String,
}

pub fn render_temporal(temporal: &[f64]) -> TemporalBar {
    let mut csv = String::from("frame,weight\n");
    for (f, v) in temporal.iter().enumerate() {
        let _ = writeln!(csv, "{f},{v:.6}");
    }
    TemporalBar {
        swatches: temporal.iter().map(|&v| colormap_jet(v)).collect(),
        csv,
    }
}

/// Frames side by side, each with its temporal swatch in a strip above.
pub fn contact_sheet(frames: &[HeatmapFrame], swatches: &[Rgb], strip_height: usize) -> Result<Raster> {
    let Some(first) = frames.first() else {
        return Err(Error::Input("contact sheet needs at least one frame".into()));
    };
    if swatches.len() != frames.len() {
        return Err(Error::Input(format!(
            "{} swatches for {} frames",
            swatches.len(),
            frames.len()
        )));
    }
    let (fw, fh) = (first.raster.width, first.raster.height);
    if frames.iter().any(|f| f.raster.width != fw || f.raster.height != fh) {
        return Err(Error::Input("contact-sheet frames differ in size".into()));
    }
    let mut sheet = Raster::filled(fw * frames.len(), fh + strip_height, [0, 0, 0]);
    for (i, (frame, &swatch)) in frames.iter().zip(swatches).enumerate() {
        sheet.blit(&Raster::filled(fw, strip_height, swatch), i * fw, 0);
        sheet.blit(&frame.raster, i * fw, strip_height);
    }
    Ok(sheet)
}

/// Binary P6: `P6\n<w> <h>\n255\n` then RGB bytes row-major.
pub fn encode_ppm(raster: &Raster) -> Result<Vec<u8>> {
    if raster.width == 0 || raster.height == 0 {
        return Err(Error::Input(format!(
            "cannot encode a {}×{} image",
            raster.width, raster.height
        )));
    }
    if raster.rgb.len() != 3 * raster.width * raster.height {
        return Err(Error::Input(format!(
            "raster holds {} bytes, {}×{} needs {}",
            raster.rgb.len(),
            raster.width,
            raster.height,
            3 * raster.width * raster.height
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.rgb);
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(raster)?).map_err(|e| Error::io(path, e))
}

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};

/// Grayscale image with row-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(QipfError::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(QipfError::invalid(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(QipfError::invalid(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(QipfError::invalid("ragged image rows"));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.pixels.chunks(self.width).map(<[f64]>::to_vec).collect()
    }

    // Zero outside the image.
    fn at(&self, row: i64, col: i64) -> f64 {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            0.0
        } else {
            self.pixels[row as usize * self.width + col as usize]
        }
    }

    fn bilinear(&self, y: f64, x: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (c, r) = (x0 as i64, y0 as i64);
        let top = self.at(r, c) * (1.0 - fx) + self.at(r, c + 1) * fx;
        let bottom = self.at(r + 1, c) * (1.0 - fx) + self.at(r + 1, c + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples through an inverse map taking output offsets from the
    /// center `(du, dv)` (column, row) to source offsets.
    fn warp(&self, inverse: [[f64; 2]; 2]) -> Self {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for r in 0..self.height {
            for c in 0..self.width {
                let du = c as f64 - cx;
                let dv = r as f64 - cy;
                let sx = inverse[0][0] * du + inverse[0][1] * dv + cx;
                let sy = inverse[1][0] * du + inverse[1][1] * dv + cy;
                pixels.push(self.bilinear(sy, sx).clamp(0.0, 1.0));
            }
        }
        Self {
            height: self.height,
            width: self.width,
            pixels,
        }
    }

    /// Reads the flat CSV layout: an optional `height,width` header line, a
    /// line with the two dimensions, then one line per pixel row. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map_or(true, |s| {
                let t = s.trim();
                !t.is_empty() && !t.starts_with('#')
            })
        });
        let parse_err = |line: usize, message: String| QipfError::Parse {
            location: format!("image line {}", line + 1),
            message,
        };
        let (mut i, mut dims) = lines.next().ok_or_else(|| parse_err(0, "empty file".into()))?;
        if dims.as_ref().is_ok_and(|d| d.trim() == "height,width") {
            (i, dims) = lines
                .next()
                .ok_or_else(|| parse_err(i + 1, "missing dimensions".into()))?;
        }
        let dims: Vec<usize> = dims?
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i, format!("bad dimensions: {e}")))?;
        let [height, width] = dims[..] else {
            return Err(parse_err(i, "expected two dimensions".into()));
        };
        let mut pixels = Vec::with_capacity(height.saturating_mul(width).min(1 << 24));
        for (i, line) in lines {
            let line = line?;
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(i, format!("bad pixel: {e}")))?;
            if row.len() != width {
                return Err(parse_err(i, format!("expected {width} pixels, got {}", row.len())));
            }
            pixels.extend(row);
        }
        Self::new(height, width, pixels)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "height,width")?;
        writeln!(w, "{},{}", self.height, self.width)?;
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Writes an 8-bit binary PGM (P5).
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        self.write_pgm_with_comment(w, None)
    }

    /// Writes an 8-bit binary PGM (P5) with an optional `#` comment line
    /// after the magic number.
    pub fn write_pgm_with_comment<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        writeln!(w, "P5")?;
        if let Some(c) = comment {
            let c = c.trim_start_matches('#').trim();
            writeln!(w, "# {c}")?;
        }
        write!(w, "{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Reads an 8-bit binary PGM (P5).
    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let err = |m: &str| QipfError::Parse {
            location: "pgm header".into(),
            message: m.into(),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(err("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(err("not a binary PGM"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad number"));
        let (width, height, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max == 0 || max > 255 {
            return Err(err("only 8-bit PGM is supported"));
        }
        let data = bytes.get(pos..pos + width * height).ok_or_else(|| err("truncated pixels"))?;
        let pixels = data.iter().map(|&b| f64::from(b) / max as f64).collect();
        Self::new(height, width, pixels)
    }
}

/// Corruption families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Rotation,
    Brightness,
    Shear,
    Zoom,
    Shift,
}

impl CorruptionKind {
    pub const ALL: [Self; 5] = [
        Self::Rotation,
        Self::Brightness,
        Self::Shear,
        Self::Zoom,
        Self::Shift,
    ];
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Rotation => "rotation",
            Self::Brightness => "brightness",
            Self::Shear => "shear",
            Self::Zoom => "zoom",
            Self::Shift => "shift",
        };
        f.write_str(s)
    }
}

impl FromStr for CorruptionKind {
    type Err = QipfError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| QipfError::invalid(format!("unknown corruption `{s}`")))
    }
}

/// A corruption with its intensity in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    /// Counter-clockwise rotation about the center, in degrees.
    Rotation { degrees: f64 },
    /// Additive change, clamped to `[0, 1]`; `delta` in `[-1, 1]`.
    Brightness { delta: f64 },
    /// Horizontal shear `x' = x + factor * y` about the center; `|factor| <= 10`.
    Shear { factor: f64 },
    /// Scaling about the center; `scale > 0`.
    Zoom { scale: f64 },
    /// Translation by whole pixels (right, down).
    Shift { dx: i64, dy: i64 },
}

impl Corruption {
    pub const IDENTITY: [Self; 5] = [
        Self::Rotation { degrees: 0.0 },
        Self::Brightness { delta: 0.0 },
        Self::Shear { factor: 0.0 },
        Self::Zoom { scale: 1.0 },
        Self::Shift { dx: 0, dy: 0 },
    ];

    pub fn kind(&self) -> CorruptionKind {
        match self {
            Self::Rotation { .. } => CorruptionKind::Rotation,
            Self::Brightness { .. } => CorruptionKind::Brightness,
            Self::Shear { .. } => CorruptionKind::Shear,
            Self::Zoom { .. } => CorruptionKind::Zoom,
            Self::Shift { .. } => CorruptionKind::Shift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Rotation { degrees } => degrees.is_finite(),
            Self::Brightness { delta } => (-1.0..=1.0).contains(&delta),
            Self::Shear { factor } => factor.is_finite() && factor.abs() <= 10.0,
            Self::Zoom { scale } => scale.is_finite() && scale > 0.0,
            Self::Shift { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(QipfError::invalid(format!("intensity out of range for {self:?}")))
        }
    }
}

/// Cosine and sine of an angle in degrees, exact at multiples of 90.
fn cos_sin_degrees(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    if d == 0.0 {
        (1.0, 0.0)
    } else if d == 90.0 {
        (0.0, 1.0)
    } else if d == 180.0 {
        (-1.0, 0.0)
    } else if d == 270.0 {
        (0.0, -1.0)
    } else {
        let r = d.to_radians();
        (r.cos(), r.sin())
    }
}

/// Applies one corruption. Geometric kinds resample bilinearly about the
/// image center with zero fill; brightness clamps to `[0, 1]`.
pub fn corrupt(image: &RasterImage, corruption: Corruption) -> Result<RasterImage> {
    corruption.validate()?;
    Ok(match corruption {
        Corruption::Rotation { degrees } => {
            let (c, s) = cos_sin_degrees(degrees);
            // Rows grow downwards, so a visual counter-clockwise turn samples
            // the source at R(-theta) in (column, row) offsets.
            image.warp([[c, -s], [s, c]])
        }
        Corruption::Shear { factor } => image.warp([[1.0, -factor], [0.0, 1.0]]),
        Corruption::Zoom { scale } => image.warp([[1.0 / scale, 0.0], [0.0, 1.0 / scale]]),
        Corruption::Brightness { delta } => RasterImage {
            height: image.height,
            width: image.width,
            pixels: image.pixels.iter().map(|p| (p + delta).clamp(0.0, 1.0)).collect(),
        },
        Corruption::Shift { dx, dy } => {
            let mut pixels = Vec::with_capacity(image.pixels.len());
            for r in 0..image.height as i64 {
                for c in 0..image.width as i64 {
                    pixels.push(image.at(r - dy, c - dx));
                }
            }
            RasterImage {
                height: image.height,
                width: image.width,
                pixels,
            }
        }
    })
}

/// [`corrupt`] over a batch, one image per task.
pub fn corrupt_batch(images: &[RasterImage], corruption: Corruption) -> Result<Vec<RasterImage>> {
    use rayon::prelude::*;
    images.par_iter().map(|img| corrupt(img, corruption)).collect()
}

/// Maps a 0-100 % severity onto physical units: rotation up to 360 degrees,
/// brightness up to +1, shear up to 1, zoom up to 2x, and horizontal shift up
/// to half the image width.
pub fn severity_to_corruption(kind: CorruptionKind, severity_percent: f64, width: usize) -> Result<Corruption> {
    if !(0.0..=100.0).contains(&severity_percent) {
        return Err(QipfError::invalid(format!(
            "severity {severity_percent} outside [0, 100]"
        )));
    }
    let s = severity_percent / 100.0;
    Ok(match kind {
        CorruptionKind::Rotation => Corruption::Rotation { degrees: 360.0 * s },
        CorruptionKind::Brightness => Corruption::Brightness { delta: s },
        CorruptionKind::Shear => Corruption::Shear { factor: s },
        CorruptionKind::Zoom => Corruption::Zoom { scale: 1.0 + s },
        CorruptionKind::Shift => Corruption::Shift {
            dx: (s * width as f64 / 2.0).round() as i64,
            dy: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> RasterImage {
        RasterImage::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap()
    }

    #[test]
    fn identity_parameters() {
        let img = RasterImage::new(3, 4, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        for c in Corruption::IDENTITY {
            assert_eq!(corrupt(&img, c).unwrap(), img, "{c:?}");
        }
    }

    #[test]
    fn half_turn_is_exact() {
        let out = corrupt(&square(), Corruption::Rotation { degrees: 180.0 }).unwrap();
        assert_eq!(out.rows(), vec![vec![0.4, 0.3], vec![0.2, 0.1]]);
        let full = corrupt(&square(), Corruption::Rotation { degrees: -360.0 }).unwrap();
        assert_eq!(full, square());
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let out = corrupt(&square(), Corruption::Rotation { degrees: 90.0 }).unwrap();
        assert_eq!(out.rows(), vec![vec![0.2, 0.4], vec![0.1, 0.3]]);
    }

    #[test]
    fn brightness_clamps() {
        let img = RasterImage::from_rows(&[vec![0.9, 0.1]]).unwrap();
        let up = corrupt(&img, Corruption::Brightness { delta: 0.3 }).unwrap();
        assert_eq!(up.pixels()[0], 1.0);
        let down = corrupt(&img, Corruption::Brightness { delta: -0.3 }).unwrap();
        assert_eq!(down.pixels()[1], 0.0);
    }

    #[test]
    fn shift_fills_with_zero() {
        let out = corrupt(&square(), Corruption::Shift { dx: 1, dy: 0 }).unwrap();
        assert_eq!(out.rows(), vec![vec![0.0, 0.1], vec![0.0, 0.3]]);
        let down = corrupt(&square(), Corruption::Shift { dx: 0, dy: 1 }).unwrap();
        assert_eq!(down.rows(), vec![vec![0.0, 0.0], vec![0.1, 0.2]]);
    }

    #[test]
    fn zoom_out_shrinks_support() {
        let img = RasterImage::new(5, 5, vec![1.0; 25]).unwrap();
        let out = corrupt(&img, Corruption::Zoom { scale: 0.5 }).unwrap();
        assert_eq!(out.get(2, 2), 1.0);
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn out_of_range_intensities() {
        let img = square();
        assert!(corrupt(&img, Corruption::Brightness { delta: 1.5 }).is_err());
        assert!(corrupt(&img, Corruption::Zoom { scale: 0.0 }).is_err());
        assert!(corrupt(&img, Corruption::Rotation { degrees: f64::NAN }).is_err());
        assert!(corrupt(&img, Corruption::Shear { factor: 20.0 }).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let img = square();
        let mut buf = Vec::new();
        img.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"height,width\n2,2\n"));
        assert_eq!(RasterImage::read_csv(buf.as_slice()).unwrap(), img);
        assert!(RasterImage::read_csv("height,width\n1,2\n0.5\n".as_bytes()).is_err());
        let bare = RasterImage::read_csv("# manifest_sha256=ab\n2,2\n0.1,0.2\n0.3,0.4\n".as_bytes()).unwrap();
        assert_eq!(bare, img);
    }

    #[test]
    fn pgm_round_trip_quantizes() {
        let img = RasterImage::from_rows(&[vec![0.0, 1.0, 0.5]]).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 1\n255\n"));
        let back = RasterImage::read_pgm(buf.as_slice()).unwrap();
        let mut tagged = Vec::new();
        img.write_pgm_with_comment(&mut tagged, Some("# manifest_sha256=ab")).unwrap();
        assert!(tagged.starts_with(b"P5\n# manifest_sha256=ab\n3 1\n"));
        assert_eq!(RasterImage::read_pgm(tagged.as_slice()).unwrap(), back);
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn severity_table() {
        assert_eq!(
            severity_to_corruption(CorruptionKind::Rotation, 75.0, 28).unwrap(),
            Corruption::Rotation { degrees: 270.0 }
        );
        assert_eq!(
            severity_to_corruption(CorruptionKind::Shift, 50.0, 28).unwrap(),
            Corruption::Shift { dx: 7, dy: 0 }
        );
        assert!(severity_to_corruption(CorruptionKind::Zoom, 120.0, 28).is_err());
        for k in CorruptionKind::ALL {
            let c = severity_to_corruption(k, 0.0, 28).unwrap();
            assert!(Corruption::IDENTITY.contains(&c), "{c:?}");
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.to_string().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!("blur".parse::<CorruptionKind>().is_err());
    }
}

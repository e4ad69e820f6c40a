//! Field input and output: PNG images, CSV grids, region labels and heatmaps.
//!
//! Files store the top row first; fields store the bottom row first, so every
//! reader and writer flips rows.

use crate::error::{Error, Result};
use crate::field::Field;
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn flip_rows<T: Clone>(values: &[T], nx: usize) -> Vec<T> {
    values.chunks(nx).rev().flat_map(|r| r.iter().cloned()).collect()
}

/// Reads a PNG into one field per band, scaled to `[0, 1]`. Grayscale images
/// give one band named `gray`; colour images give `r`, `g` and `b`. Alpha is
/// ignored.
pub fn read_image(path: &Path) -> Result<Vec<Field>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bands: Vec<(&str, Vec<f64>)> = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            vec![("gray", g.pixels().map(|p| p[0] as f64 / 255.0).collect())]
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma16();
            vec![("gray", g.pixels().map(|p| p[0] as f64 / 65535.0).collect())]
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let c = img.to_rgb16();
            (0..3)
                .map(|k| (["r", "g", "b"][k], c.pixels().map(|p| p[k] as f64 / 65535.0).collect()))
                .collect()
        }
        _ => {
            let c = img.to_rgb8();
            (0..3)
                .map(|k| (["r", "g", "b"][k], c.pixels().map(|p| p[k] as f64 / 255.0).collect()))
                .collect()
        }
    };
    bands
        .into_iter()
        .map(|(name, v)| Ok(Field::new(w, h, flip_rows(&v, w))?.with_band(name)))
        .collect()
}

/// Writes a grayscale PNG of `values` (bottom row first), clamped to `[0, 1]`.
pub fn write_png(path: &Path, values: &[f64], nx: usize, ny: usize, bits: u8) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::DimensionMismatch {
            expected: nx * ny,
            got: values.len(),
        });
    }
    let top = flip_rows(values, nx);
    let clamp = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    match bits {
        8 => {
            let raw: Vec<u8> = top.iter().map(|&v| (clamp(v) * 255.0).round() as u8).collect();
            let img = GrayImage::from_raw(nx as u32, ny as u32, raw).expect("buffer size checked");
            img.save(path)?;
        }
        16 => {
            let raw: Vec<u16> = top.iter().map(|&v| (clamp(v) * 65535.0).round() as u16).collect();
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(nx as u32, ny as u32, raw).expect("buffer size checked");
            img.save(path)?;
        }
        other => return Err(Error::InvalidInput(format!("bit depth must be 8 or 16, got {other}"))),
    }
    Ok(())
}

pub fn write_field_png(path: &Path, field: &Field, bits: u8) -> Result<()> {
    write_png(path, field.values(), field.nx(), field.ny(), bits)
}

/// Writes one band as grayscale or three bands as RGB, clamped to `[0, 1]`.
pub fn write_bands_png(path: &Path, bands: &[&[f64]], nx: usize, ny: usize, bits: u8) -> Result<()> {
    match bands.len() {
        1 => write_png(path, bands[0], nx, ny, bits),
        3 => {
            if bands.iter().any(|b| b.len() != nx * ny) {
                return Err(Error::DimensionMismatch {
                    expected: nx * ny,
                    got: bands.iter().map(|b| b.len()).find(|&l| l != nx * ny).unwrap_or(0),
                });
            }
            let clamp = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            let top: Vec<Vec<f64>> = bands.iter().map(|b| flip_rows(b, nx)).collect();
            let interleaved = (0..nx * ny).flat_map(|k| (0..3).map(move |c| (k, c)));
            match bits {
                8 => {
                    let raw: Vec<u8> = interleaved.map(|(k, c)| (clamp(top[c][k]) * 255.0).round() as u8).collect();
                    RgbImage::from_raw(nx as u32, ny as u32, raw).expect("buffer size checked").save(path)?;
                }
                16 => {
                    let raw: Vec<u16> = interleaved
                        .map(|(k, c)| (clamp(top[c][k]) * 65535.0).round() as u16)
                        .collect();
                    let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
                        ImageBuffer::from_raw(nx as u32, ny as u32, raw).expect("buffer size checked");
                    img.save(path)?;
                }
                other => return Err(Error::InvalidInput(format!("bit depth must be 8 or 16, got {other}"))),
            }
            Ok(())
        }
        k => Err(Error::InvalidInput(format!("cannot write {k} bands as PNG"))),
    }
}

/// Reads a CSV grid (top row first). Empty, `nan` or `NA` cells are masked.
pub fn read_field_csv(path: &Path) -> Result<Field> {
    let text = fs::read_to_string(path)?;
    parse_field_csv(&text)
}

pub fn parse_field_csv(text: &str) -> Result<Field> {
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| {
                let c = c.trim();
                if c.is_empty() || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("na") {
                    Ok(None)
                } else {
                    c.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Parse(format!("line {}: bad number '{c}'", i + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ny = rows.len();
    if ny == 0 {
        return Err(Error::Parse("empty CSV grid".into()));
    }
    let nx = rows[0].len();
    if rows.iter().any(|r| r.len() != nx) {
        return Err(Error::Parse("CSV rows have different lengths".into()));
    }
    let cells: Vec<Option<f64>> = rows.into_iter().rev().flatten().collect();
    let mask: Vec<bool> = cells.iter().map(|c| c.is_some()).collect();
    let values: Vec<f64> = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
    Field::masked(nx, ny, values, mask)
}

/// CSV grid, top row first; masked cells are left empty.
pub fn field_to_csv(field: &Field) -> String {
    let nx = field.nx();
    let mut out = String::new();
    for iy in (0..field.ny()).rev() {
        let row: Vec<String> = (0..nx)
            .map(|ix| {
                if field.is_observed(ix, iy) {
                    format!("{}", field.get(ix, iy))
                } else {
                    String::new()
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_field_csv(path: &Path, field: &Field) -> Result<()> {
    fs::write(path, field_to_csv(field))?;
    Ok(())
}

/// Reads fields from a PNG (one per band) or a CSV grid (one field).
pub fn read_fields(path: &Path) -> Result<Vec<Field>> {
    match extension(path).as_str() {
        "csv" | "txt" => Ok(vec![read_field_csv(path)?]),
        _ => read_image(path),
    }
}

/// Observation mask from a PNG or CSV: nonzero means observed.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let f = read_fields(path)?.into_iter().next().expect("at least one band");
    let mask = f.values().iter().zip(f.mask()).map(|(&v, &m)| m && v != 0.0).collect();
    Ok((f.nx(), f.ny(), mask))
}

/// Region labels from a CSV of non-negative integers or a PNG whose distinct
/// gray levels become labels `0, 1, ...` in increasing order of level.
pub fn read_labels(path: &Path) -> Result<(usize, usize, Vec<usize>)> {
    if matches!(extension(path).as_str(), "csv" | "txt") {
        let f = read_field_csv(path)?;
        let labels = f
            .values()
            .iter()
            .zip(f.mask())
            .map(|(&v, &m)| {
                if m && v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Parse(format!("labels must be non-negative integers, got {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((f.nx(), f.ny(), labels));
    }
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u16> = flip_rows(&img.pixels().map(|p| p[0]).collect::<Vec<_>>(), w);
    let levels: Vec<u16> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = raw.iter().map(|v| levels.binary_search(v).expect("level present")).collect();
    Ok((w, h, labels))
}

/// Viridis-like ramp sampled at five stops.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (RAMP.len() - 1) as f64;
    let k = (s.floor() as usize).min(RAMP.len() - 2);
    let f = s - k as f64;
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (RAMP[k][c] + f * (RAMP[k + 1][c] - RAMP[k][c])).round() as u8;
    }
    px
}

/// Colour heatmap of `values` (bottom row first) over `[lo, hi]`.
pub fn write_heatmap_png(path: &Path, values: &[f64], nx: usize, ny: usize, lo: f64, hi: f64) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::DimensionMismatch {
            expected: nx * ny,
            got: values.len(),
        });
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let top = flip_rows(values, nx);
    let mut img = RgbImage::new(nx as u32, ny as u32);
    for (k, v) in top.iter().enumerate() {
        img.put_pixel((k % nx) as u32, (k / nx) as u32, Rgb(ramp((v - lo) / span)));
    }
    img.save(path)?;
    Ok(())
}

/// Plain CSV matrix, top row first.
pub fn matrix_to_csv(values: &[f64], nx: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(nx).rev() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_field(nx: usize, ny: usize) -> Field {
        Field::new(nx, ny, (0..nx * ny).map(|k| k as f64 / (nx * ny - 1) as f64).collect()).unwrap()
    }

    #[test]
    fn png_round_trip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let f = ramp_field(7, 5);
        write_field_png(&p, &f, 16).unwrap();
        let g = read_image(&p).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].band.as_deref(), Some("gray"));
        assert_eq!((g[0].nx(), g[0].ny()), (7, 5));
        for (a, b) in f.values().iter().zip(g[0].values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn png_rows_are_flipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        // bottom row black, top row white
        write_png(&p, &[0.0, 0.0, 1.0, 1.0], 2, 2, 8).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.get_pixel(0, 0)[0], 255);
        assert_eq!(img.get_pixel(0, 1)[0], 0);
    }

    #[test]
    fn png_write_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_png(&p, &[-1.0, 2.0, f64::NAN, 0.5], 2, 2, 8).unwrap();
        let v = read_image(&p).unwrap()[0].values().to_vec();
        assert_eq!(&v[..2], &[0.0, 1.0]);
        assert_eq!(v[2], 0.0);
        assert!((v[3] - 128.0 / 255.0).abs() < 1e-12);
        assert!(write_png(&p, &[0.0; 4], 2, 2, 12).is_err());
    }

    #[test]
    fn rgb_splits_into_bands() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([255, 0, 51]));
        img.save(&p).unwrap();
        let bands = read_image(&p).unwrap();
        let names: Vec<_> = bands.iter().map(|b| b.band.clone().unwrap()).collect();
        assert_eq!(names, ["r", "g", "b"]);
        assert_eq!(bands[0].values()[0], 1.0);
        assert_eq!(bands[1].values()[0], 0.0);
        assert!((bands[2].values()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let r = [0.0, 1.0, 0.5, 0.25];
        let g = [1.0, 0.0, 0.5, 0.75];
        let b = [0.2, 0.4, 0.6, 0.8];
        write_bands_png(&p, &[&r, &g, &b], 2, 2, 16).unwrap();
        let back = read_image(&p).unwrap();
        for (orig, band) in [r, g, b].iter().zip(&back) {
            for (x, y) in orig.iter().zip(band.values()) {
                assert!((x - y).abs() < 1e-4);
            }
        }
        assert!(write_bands_png(&p, &[&r, &g], 2, 2, 8).is_err());
    }

    #[test]
    fn csv_round_trip_with_mask() {
        let f = Field::masked(3, 2, vec![1.0, 2.0, 0.0, 4.5, -1.0, 6.0], vec![true, true, false, true, true, true])
            .unwrap();
        let text = field_to_csv(&f);
        assert_eq!(text, "4.5,-1,6\n1,2,\n");
        let g = parse_field_csv(&text).unwrap();
        assert_eq!(g.mask(), f.mask());
        assert_eq!(g.values(), f.values());
        assert!(parse_field_csv("1,2\n3\n").is_err());
        assert!(parse_field_csv("1,x\n").is_err());
    }

    #[test]
    fn labels_from_png_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        write_png(&p, &[0.2, 0.2, 0.9, 0.5], 2, 2, 8).unwrap();
        let (nx, ny, labels) = read_labels(&p).unwrap();
        assert_eq!((nx, ny), (2, 2));
        assert_eq!(labels, [0, 0, 2, 1]);
        let c = dir.path().join("l.csv");
        fs::write(&c, "1,1\n0,2\n").unwrap();
        assert_eq!(read_labels(&c).unwrap().2, [0, 2, 1, 1]);
        fs::write(&c, "1,0.5\n").unwrap();
        assert!(read_labels(&c).is_err());
    }

    #[test]
    fn heatmap_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        write_heatmap_png(&p, &[0.0, 1.0], 2, 1, 0.0, 1.0).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [68, 1, 84]);
        assert_eq!(img.get_pixel(1, 0).0, [253, 231, 37]);
    }
}

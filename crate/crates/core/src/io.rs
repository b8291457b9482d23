//! PFM depth maps, PPM/PGM/PNG images and ASCII PLY point clouds.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{MvsError, Result};
use crate::fusion::PointCloud;
use crate::grid::ImageGrid;

fn io_err(path: &Path, error: std::io::Error) -> MvsError {
    MvsError::Io {
        path: path.to_path_buf(),
        error,
    }
}

fn fmt_err(path: &Path, message: impl Into<String>) -> MvsError {
    MvsError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Whitespace-separated header tokens of a Netpbm/PFM file, with `#`
/// comments skipped. Returns the tokens and the offset of the byte after
/// the single whitespace that ends the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return None;
    }
    Some((tokens, i + 1))
}

/// PFM (`Pf` gray or `PF` colour), little-endian (scale -1), rows bottom to top.
pub fn write_pfm(path: &Path, grid: &ImageGrid) -> Result<()> {
    let channels = grid.channels();
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        _ => return Err(MvsError::arg(format!("PFM holds 1 or 3 channels, not {channels}"))),
    };
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * channels * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..channels {
                out.extend_from_slice(&(grid.get(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    write_bytes(path, &out)
}

pub fn read_pfm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (tok, start) = header_tokens(&bytes, 4).ok_or_else(|| fmt_err(path, "truncated PFM header"))?;
    let channels = match tok[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(fmt_err(path, format!("not a PFM file (magic {m:?})"))),
    };
    let w: usize = tok[1].parse().map_err(|_| fmt_err(path, "bad PFM width"))?;
    let h: usize = tok[2].parse().map_err(|_| fmt_err(path, "bad PFM height"))?;
    let scale: f64 = tok[3].parse().map_err(|_| fmt_err(path, "bad PFM scale"))?;
    if w == 0 || h == 0 || scale == 0.0 {
        return Err(fmt_err(path, "PFM with zero size or scale"));
    }
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    let body = &bytes[start..];
    if body.len() != need {
        return Err(fmt_err(path, format!("expected {need} bytes of samples, found {}", body.len())));
    }
    let mut data = vec![0.0; w * h * channels];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let px = i / channels;
        let (x, row) = (px % w, px / w);
        let y = h - 1 - row;
        data[(y * w + x) * channels + i % channels] = v as f64;
    }
    ImageGrid::from_vec(w, h, channels, data).map_err(|e| fmt_err(path, e.to_string()))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255) for 3 channels, PGM (P5) for 1.
pub fn write_ppm(path: &Path, img: &ImageGrid) -> Result<()> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(MvsError::arg(format!("PPM/PGM hold 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    write_bytes(path, &out)
}

fn read_netpbm(path: &Path, bytes: &[u8]) -> Result<ImageGrid> {
    let (tok, start) = header_tokens(bytes, 4).ok_or_else(|| fmt_err(path, "truncated PPM header"))?;
    let channels = match tok[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(fmt_err(path, format!("unsupported Netpbm magic {m:?}"))),
    };
    let w: usize = tok[1].parse().map_err(|_| fmt_err(path, "bad width"))?;
    let h: usize = tok[2].parse().map_err(|_| fmt_err(path, "bad height"))?;
    let max: usize = tok[3].parse().map_err(|_| fmt_err(path, "bad maxval"))?;
    if max != 255 {
        return Err(fmt_err(path, format!("only maxval 255 is supported, got {max}")));
    }
    let body = &bytes[start..];
    if body.len() != w * h * channels {
        return Err(fmt_err(
            path,
            format!("expected {} bytes of pixels, found {}", w * h * channels, body.len()),
        ));
    }
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    ImageGrid::from_vec(w, h, channels, data).map_err(|e| fmt_err(path, e.to_string()))
}

/// Reads PPM/PGM, or PNG (8-bit gray or RGB, alpha dropped).
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| fmt_err(path, e.to_string()))?;
        let gray = matches!(img.color(), image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16);
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = if gray {
            (1, img.into_luma8().into_raw())
        } else {
            (3, img.into_rgb8().into_raw())
        };
        let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
        return ImageGrid::from_vec(w, h, channels, data).map_err(|e| fmt_err(path, e.to_string()));
    }
    read_netpbm(path, &bytes)
}

/// ASCII PLY with `x y z` floats and, when present, `red green blue` uchars.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::new();
    let colored = cloud.colors.is_some();
    let mut header = format!("ply\nformat ascii 1.0\nelement vertex {}\n", cloud.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if colored {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.points.iter().enumerate() {
        write!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).expect("vec write");
        if let Some(c) = &cloud.colors {
            let c = c[i];
            write!(out, " {} {} {}", quantize(c[0]), quantize(c[1]), quantize(c[2])).expect("vec write");
        }
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(fmt_err(path, "missing 'ply' magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let Some(line) = lines.next() else {
            return Err(fmt_err(path, "missing end_header"));
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "ascii", _] => {}
            ["format", f, ..] => return Err(fmt_err(path, format!("unsupported PLY format {f}"))),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| fmt_err(path, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(fmt_err(path, format!("unexpected header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| fmt_err(path, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(xi), Some(yi), Some(zi)) = (col("x"), col("y"), col("z")) else {
        return Err(fmt_err(path, "vertex element lacks x/y/z"));
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(if rgb.is_some() { count } else { 0 });
    for n in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| fmt_err(path, format!("expected {count} vertices, found {n}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fmt_err(path, format!("bad number in vertex {n}")))?;
        if vals.len() != props.len() {
            return Err(fmt_err(path, format!("vertex {n} has {} values, expected {}", vals.len(), props.len())));
        }
        points.push(Vector3::new(vals[xi], vals[yi], vals[zi]));
        if let Some([r, g, b]) = rgb {
            colors.push([vals[r] / 255.0, vals[g] / 255.0, vals[b] / 255.0]);
        }
    }
    PointCloud::new(points, rgb.map(|_| colors)).map_err(|e| fmt_err(path, e.to_string()))
}

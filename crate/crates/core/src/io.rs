//! PFM (lossless float) and binary PPM (8-bit viewable) codecs.
//!
//! PFM rows are stored bottom-to-top, little-endian, scale `-1.0`. Frames
//! with 1 channel use `Pf`, 3 channels `PF`. Two-channel data (displacement
//! fields) is stored as `PF` with a zero third channel. Arbitrary channel
//! counts are stored as a `Pf` image whose planes are stacked vertically.

use std::fs;
use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Frame;
use crate::motion::{FieldBundle, Flow};
use crate::Scalar;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn pfm_bytes(tag: &str, width: usize, height: usize, rows_top_down: &[f32]) -> Vec<u8> {
    let per_row = rows_top_down.len() / height;
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(rows_top_down.len() * 4);
    for y in (0..height).rev() {
        for v in &rows_top_down[y * per_row..(y + 1) * per_row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Encodes a 1-, 2- or 3-channel frame.
pub fn encode_pfm<T: Scalar>(frame: &Frame<T>) -> Result<Vec<u8>> {
    let (h, w, c) = frame.dims();
    let data: Vec<f32> = match c {
        1 | 3 => frame.data().iter().map(|v| v.to_f32_lossy()).collect(),
        2 => frame
            .data()
            .chunks_exact(2)
            .flat_map(|p| [p[0].to_f32_lossy(), p[1].to_f32_lossy(), 0.0])
            .collect(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "PFM stores 1, 2 or 3 channels, got {c}; use encode_planar_pfm"
            )))
        }
    };
    let tag = if c == 1 { "Pf" } else { "PF" };
    Ok(pfm_bytes(tag, w, h, &data))
}

struct RawPfm {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

fn read_token(reader: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            break;
        }
        let b = byte[0];
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        if b == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            reader.read_until(b'\n', &mut skip)?;
            continue;
        }
        tok.push(b);
    }
    if tok.is_empty() {
        return format_err("unexpected end of header");
    }
    String::from_utf8(tok).map_err(|_| Error::Format("non-ascii header".into()))
}

fn parse_usize(tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Format(format!("invalid {what}: {tok}")))
}

fn decode_raw_pfm(bytes: &[u8]) -> Result<RawPfm> {
    let mut r = Cursor::new(bytes);
    let channels = match read_token(&mut r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return format_err(format!("not a PFM header: {other}")),
    };
    let width = parse_usize(&read_token(&mut r)?, "width")?;
    let height = parse_usize(&read_token(&mut r)?, "height")?;
    let scale: f32 = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::Format("invalid PFM scale".into()))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return format_err("degenerate PFM header");
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated PFM payload".into()))?;
    let vals: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let per_row = width * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..height).rev() {
        data.extend_from_slice(&vals[y * per_row..(y + 1) * per_row]);
    }
    Ok(RawPfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Frame<f32>> {
    let raw = decode_raw_pfm(bytes)?;
    Frame::new(raw.height, raw.width, raw.channels, raw.data)
}

/// Decodes a `PF` file written from two-channel data, dropping the third channel.
pub fn decode_pfm_two_channel(bytes: &[u8]) -> Result<Frame<f32>> {
    let raw = decode_raw_pfm(bytes)?;
    if raw.channels != 3 {
        return format_err("two-channel data must be stored as PF");
    }
    let data = raw.data.chunks_exact(3).flat_map(|p| [p[0], p[1]]).collect();
    Frame::new(raw.height, raw.width, 2, data)
}

/// Stacks `planes` (each `height × width`) vertically into one `Pf` image.
pub fn encode_planar_pfm<T: Scalar>(width: usize, height: usize, planes: &[T]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || planes.is_empty() || planes.len() % (width * height) != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values are not whole {width}x{height} planes",
            planes.len()
        )));
    }
    let count = planes.len() / (width * height);
    let data: Vec<f32> = planes.iter().map(|v| v.to_f32_lossy()).collect();
    Ok(pfm_bytes("Pf", width, height * count, &data))
}

/// Inverse of [`encode_planar_pfm`]: returns `(planes, plane_count)`.
pub fn decode_planar_pfm(bytes: &[u8], width: usize, height: usize) -> Result<(Vec<f32>, usize)> {
    let raw = decode_raw_pfm(bytes)?;
    if raw.channels != 1 || raw.width != width || height == 0 || raw.height % height != 0 {
        return format_err(format!(
            "planar PFM {}x{}x{} does not hold {width}x{height} planes",
            raw.width, raw.height, raw.channels
        ));
    }
    Ok((raw.data, raw.height / height))
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary P6. Values are clamped to [0,1] and scaled by 255; single-channel
/// frames are replicated to gray RGB.
pub fn encode_ppm<T: Scalar>(frame: &Frame<T>) -> Result<Vec<u8>> {
    let (h, w, c) = frame.dims();
    if c != 1 && c != 3 {
        return Err(Error::InvalidArgument(format!(
            "PPM export needs 1 or 3 channels, got {c}"
        )));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in frame.data().chunks_exact(c) {
        if c == 1 {
            let g = to_u8(px[0].to_f64_lossy());
            out.extend_from_slice(&[g, g, g]);
        } else {
            out.extend(px.iter().map(|v| to_u8(v.to_f64_lossy())));
        }
    }
    Ok(out)
}

/// Reads binary P6 (3 channels) or P5 (1 channel) with maxval ≤ 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Frame<f32>> {
    let mut r = Cursor::new(bytes);
    let channels = match read_token(&mut r)?.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return format_err(format!("unsupported PNM magic {other}")),
    };
    let width = parse_usize(&read_token(&mut r)?, "width")?;
    let height = parse_usize(&read_token(&mut r)?, "height")?;
    let maxval = parse_usize(&read_token(&mut r)?, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return format_err(format!("unsupported maxval {maxval}"));
    }
    let mut raw = vec![0u8; width * height * channels];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated PPM payload".into()))?;
    let scale = maxval as f32;
    Frame::new(
        height,
        width,
        channels,
        raw.into_iter().map(|b| b as f32 / scale).collect(),
    )
}

pub fn write_pfm<T: Scalar>(path: impl AsRef<Path>, frame: &Frame<T>) -> Result<()> {
    fs::write(path, encode_pfm(frame)?)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Frame<f32>> {
    decode_pfm(&fs::read(path)?)
}

pub fn write_ppm<T: Scalar>(path: impl AsRef<Path>, frame: &Frame<T>) -> Result<()> {
    fs::write(path, encode_ppm(frame)?)?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame<f32>> {
    decode_ppm(&fs::read(path)?)
}

/// Reads a frame by extension: `.pfm` or `.ppm`/`.pgm`.
pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame<f32>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm(path),
        Some("ppm") | Some("pgm") => read_ppm(path),
        _ => format_err(format!("unknown image extension: {}", path.display())),
    }
}

/// JSON sidecar stored next to a bundle or flow PFM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub kind: String,
    pub m: usize,
    pub height: usize,
    pub width: usize,
    pub layout: String,
    pub modulation: String,
}

pub const BUNDLE_LAYOUT: &str =
    "Pf planes stacked top to bottom: u_0, v_0, ..., u_{M-1}, v_{M-1}, w_0, ..., w_{M-1}";
pub const FLOW_LAYOUT: &str = "PF with channels (u, v, 0)";
pub const MODULATION: &str = "effective field i = w_i * (u_i, v_i)";

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Writes `path` (planar PFM) and its `.json` sidecar.
pub fn write_bundle<T: Scalar>(path: impl AsRef<Path>, bundle: &FieldBundle<T>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (bundle.height(), bundle.width());
    fs::write(path, encode_planar_pfm(w, h, &bundle.to_planes())?)?;
    let meta = FieldSidecar {
        kind: "bundle".into(),
        m: bundle.m(),
        height: h,
        width: w,
        layout: BUNDLE_LAYOUT.into(),
        modulation: MODULATION.into(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<FieldBundle<f32>> {
    let path = path.as_ref();
    let meta: FieldSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if meta.kind != "bundle" {
        return format_err(format!("sidecar describes a {}, not a bundle", meta.kind));
    }
    let (planes, count) = decode_planar_pfm(&fs::read(path)?, meta.width, meta.height)?;
    if count != 3 * meta.m {
        return format_err(format!("{count} planes for an M = {} bundle", meta.m));
    }
    FieldBundle::from_planes(meta.m, meta.height, meta.width, planes)
}

/// Writes a displacement field as two-channel PFM plus sidecar.
pub fn write_flow<T: Scalar>(path: impl AsRef<Path>, flow: &Flow<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(&flow.to_frame())?)?;
    let meta = FieldSidecar {
        kind: "flow".into(),
        m: 1,
        height: flow.height(),
        width: flow.width(),
        layout: FLOW_LAYOUT.into(),
        modulation: "none".into(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Reads a two-channel PFM field; the sidecar is optional.
pub fn read_flow(path: impl AsRef<Path>) -> Result<Flow<f32>> {
    Flow::from_frame(&decode_pfm_two_channel(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ppm_scales_and_clamps() {
        let f = Frame::<f64>::new(1, 3, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        let bytes = encode_ppm(&f).unwrap();
        let header = b"P6\n3 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 0, 0, 128, 128, 128, 255, 255, 255]);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.dims(), (1, 3, 3));
        assert_eq!(back.get(0, 2, 1), 1.0);
    }

    #[test]
    fn pfm_header_and_row_order() {
        let f = Frame::<f32>::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&f).unwrap();
        let header = b"Pf\n1 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        // bottom row first
        assert_eq!(&bytes[header.len()..header.len() + 4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn two_channel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Frame::<f32>::from_fn(4, 5, 2, |_, _, _| rng.gen_range(-3.0..3.0));
        let bytes = encode_pfm(&f).unwrap();
        assert!(bytes.starts_with(b"PF\n"));
        assert_eq!(decode_pfm_two_channel(&bytes).unwrap(), f);
    }

    #[test]
    fn planar_round_trip() {
        let planes: Vec<f32> = (0..3 * 4 * 5).map(|i| i as f32 * 0.5).collect();
        let bytes = encode_planar_pfm(5, 4, &planes).unwrap();
        let (back, n) = decode_planar_pfm(&bytes, 5, 4).unwrap();
        assert_eq!(n, 3);
        assert_eq!(back, planes);
        assert!(decode_planar_pfm(&bytes, 5, 5).is_err());
    }

    #[test]
    fn bundle_and_flow_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = FieldBundle::<f32>::from_parts(
            2,
            3,
            4,
            (0..2 * 2 * 12).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..2 * 12).map(|_| rng.gen_range(0.0..2.0)).collect(),
        )
        .unwrap();
        let p = dir.path().join("b.pfm");
        write_bundle(&p, &b).unwrap();
        assert_eq!(read_bundle(&p).unwrap(), b);
        let meta: FieldSidecar =
            serde_json::from_slice(&fs::read(dir.path().join("b.json")).unwrap()).unwrap();
        assert_eq!((meta.m, meta.height, meta.width), (2, 3, 4));
        let f = b.raw_field(1);
        let q = dir.path().join("f.pfm");
        write_flow(&q, &f).unwrap();
        assert_eq!(read_flow(&q).unwrap(), f);
        assert!(read_bundle(&q).is_err());
    }

    #[test]
    fn malformed_inputs_fail() {
        assert!(decode_pfm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pfm(b"PF\n2 2\n-1.0\n\0\0").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        let f = Frame::<f32>::zeros(2, 2, 4);
        assert!(encode_pfm(&f).is_err());
        assert!(encode_ppm(&f).is_err());
    }

    #[test]
    fn big_endian_pfm_is_accepted() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.75f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data(), &[0.75]);
    }

    proptest::proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(seed in 0u64..10_000, h in 1usize..9, w in 1usize..9, rgb in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = if rgb { 3 } else { 1 };
            let f = Frame::<f32>::from_fn(h, w, c, |_, _, _| rng.gen_range(-1e3f32..1e3));
            let back = decode_pfm(&encode_pfm(&f).unwrap()).unwrap();
            let bits = |fr: &Frame<f32>| fr.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            proptest::prop_assert_eq!(bits(&back), bits(&f));
        }
    }
}

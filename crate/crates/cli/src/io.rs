//! Bit-exact file formats: PNG images, the `.nwf` tensor container, raw key
//! files, operator export, mask design JSON, and the height-map CSV.

use crate::error::{CliError, Result};
use nowa_core::image::Image;
use nowa_core::key::{SecretKey, KEY_LEN};
use nowa_core::operator::{Band, Otf};
use nowa_core::optics::{Psf, ZernikeCoeffs};
use nowa_core::num_complex::Complex64;
use nowa_core::zernike::MAX_NOLL;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const NWF_MAGIC: &[u8; 4] = b"NWF1";

/// PNG load: 8/16-bit grayscale or RGB, scaled to [0,1]. Alpha and palette
/// images are rejected.
pub fn load_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| CliError::png(path, e))?;
    let info = reader.info();
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(CliError::Format(format!(
                "{}: unsupported PNG color type {other:?} (grayscale or RGB, no alpha)",
                path.display()
            )))
        }
    };
    let depth = info.bit_depth;
    let (height, width) = (info.height as usize, info.width as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::png(path, e))?;
    let bytes = &buf[..frame.buffer_size()];

    let mut data = vec![0.0f64; channels * height * width];
    match depth {
        png::BitDepth::Eight => {
            for (i, px) in bytes.chunks_exact(channels).enumerate() {
                for (c, &v) in px.iter().enumerate() {
                    data[c * height * width + i] = v as f64 / 255.0;
                }
            }
        }
        png::BitDepth::Sixteen => {
            for (i, px) in bytes.chunks_exact(2 * channels).enumerate() {
                for c in 0..channels {
                    let v = u16::from_be_bytes([px[2 * c], px[2 * c + 1]]);
                    data[c * height * width + i] = v as f64 / 65535.0;
                }
            }
        }
        other => {
            return Err(CliError::Format(format!(
                "{}: unsupported PNG bit depth {other:?} (8 or 16)",
                path.display()
            )))
        }
    }
    Image::from_planar(channels, height, width, data).map_err(CliError::Core)
}

/// PNG save at the requested bit depth; values are clamped then quantized
/// with round-to-nearest.
pub fn save_png(img: &Image, path: &Path, bit_depth: u8) -> Result<()> {
    if bit_depth != 8 && bit_depth != 16 {
        return Err(CliError::Format(format!(
            "bit depth must be 8 or 16, got {bit_depth}"
        )));
    }
    let img = img.clamped();
    let (channels, height, width) = img.shape();
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(if channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(if bit_depth == 8 {
        png::BitDepth::Eight
    } else {
        png::BitDepth::Sixteen
    });
    let mut writer = encoder.write_header().map_err(|e| CliError::png(path, e))?;

    let n = height * width;
    let mut bytes = Vec::with_capacity(n * channels * (bit_depth as usize / 8));
    if bit_depth == 8 {
        for i in 0..n {
            for c in 0..channels {
                bytes.push((img.data()[c * n + i] * 255.0).round() as u8);
            }
        }
    } else {
        for i in 0..n {
            for c in 0..channels {
                let v = (img.data()[c * n + i] * 65535.0).round() as u16;
                bytes.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| CliError::png(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "c64")]
    C64,
}

impl Dtype {
    fn bytes_per_value(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::C64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NwfHeader {
    dtype: Dtype,
    shape: [u64; 3],
    meta: BTreeMap<String, serde_json::Value>,
}

/// In-memory `.nwf` tensor: header plus a raw little-endian f32 stream
/// (complex values stored as (re, im) pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dtype: Dtype,
    pub shape: [usize; 3],
    pub meta: BTreeMap<String, serde_json::Value>,
    pub values: Vec<f32>,
}

impl TensorFile {
    pub fn new_f32(shape: [usize; 3], values: Vec<f32>) -> Result<Self> {
        let t = Self {
            dtype: Dtype::F32,
            shape,
            meta: BTreeMap::new(),
            values,
        };
        t.check_len()?;
        Ok(t)
    }

    pub fn new_c64(shape: [usize; 3], values: Vec<f32>) -> Result<Self> {
        let t = Self {
            dtype: Dtype::C64,
            shape,
            meta: BTreeMap::new(),
            values,
        };
        t.check_len()?;
        Ok(t)
    }

    pub fn element_count(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    fn check_len(&self) -> Result<()> {
        let scalars = match self.dtype {
            Dtype::F32 => self.element_count(),
            Dtype::C64 => 2 * self.element_count(),
        };
        if self.values.len() != scalars {
            return Err(CliError::Format(format!(
                "tensor payload holds {} scalars, shape {:?} ({:?}) needs {scalars}",
                self.values.len(),
                self.shape,
                self.dtype
            )));
        }
        Ok(())
    }
}

pub fn write_tensor(t: &TensorFile, path: &Path) -> Result<()> {
    t.check_len()?;
    let header = NwfHeader {
        dtype: t.dtype,
        shape: [t.shape[0] as u64, t.shape[1] as u64, t.shape[2] as u64],
        meta: t.meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| CliError::io(path, e));
    emit(NWF_MAGIC)?;
    emit(&(header_bytes.len() as u64).to_le_bytes())?;
    emit(&header_bytes)?;
    for v in &t.values {
        emit(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| CliError::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != NWF_MAGIC {
        return Err(CliError::Format(format!(
            "{}: bad magic (not an .nwf tensor)",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(CliError::Format(format!(
            "{}: truncated header ({} bytes declared)",
            path.display(),
            header_len
        )));
    }
    let header: NwfHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| CliError::Format(format!("{}: header JSON: {e}", path.display())))?;
    let shape = [
        header.shape[0] as usize,
        header.shape[1] as usize,
        header.shape[2] as usize,
    ];
    let elements = shape[0]
        .checked_mul(shape[1])
        .and_then(|v| v.checked_mul(shape[2]))
        .ok_or_else(|| CliError::Format(format!("{}: shape overflow", path.display())))?;
    let expected = elements * header.dtype.bytes_per_value();
    let payload = &bytes[12 + header_len..];
    if payload.len() != expected {
        return Err(CliError::Format(format!(
            "{}: payload is {} bytes, shape {:?} ({:?}) needs exactly {expected}",
            path.display(),
            payload.len(),
            shape,
            header.dtype
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TensorFile {
        dtype: header.dtype,
        shape,
        meta: header.meta,
        values,
    })
}

/// `.key` file: exactly 32 raw bytes.
pub fn load_key(path: &Path) -> Result<SecretKey> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != KEY_LEN {
        return Err(CliError::Format(format!(
            "{}: key file must be exactly {KEY_LEN} bytes, got {}",
            path.display(),
            bytes.len()
        )));
    }
    SecretKey::from_bytes(&bytes).map_err(CliError::Core)
}

pub fn save_key(key: &SecretKey, path: &Path) -> Result<()> {
    fs::write(path, key.seed()).map_err(|e| CliError::io(path, e))
}

/// PSF export: `.nwf` f32 [C,k,k] with the sample pitch in metadata.
pub fn write_psf(psf: &Psf, path: &Path) -> Result<()> {
    let c = psf.channels();
    let k = psf.kernel_size();
    let mut t = TensorFile::new_f32(
        [c, k, k],
        psf.data().iter().map(|&v| v as f32).collect(),
    )?;
    t.meta.insert(
        "sample_pitch_m".into(),
        serde_json::json!(psf.sample_pitch),
    );
    t.meta.insert("kind".into(), serde_json::json!("psf"));
    write_tensor(&t, path)
}

/// Measured-PSF ingestion: validates shape/dtype, clamps tiny negatives,
/// renormalizes channels (all inside `Psf::from_raw`).
pub fn read_psf(path: &Path) -> Result<Psf> {
    let t = read_tensor(path)?;
    if t.dtype != Dtype::F32 {
        return Err(CliError::Format(format!(
            "{}: PSF tensors are f32, got {:?}",
            path.display(),
            t.dtype
        )));
    }
    if t.shape[1] != t.shape[2] {
        return Err(CliError::Format(format!(
            "{}: PSF kernels must be square, got {:?}",
            path.display(),
            t.shape
        )));
    }
    let pitch = t
        .meta
        .get("sample_pitch_m")
        .and_then(|v| v.as_f64())
        .unwrap_or(0.0);
    Psf::from_raw(
        t.shape[0],
        t.shape[1],
        t.values.iter().map(|&v| v as f64).collect(),
        pitch,
    )
    .map_err(CliError::Core)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSidecar {
    pub tau_rel: f64,
    pub band: Option<[f64; 2]>,
    pub fingerprint: String,
}

/// Operator export: `.nwf` c64 [C,H,W] raw spectrum plus a JSON sidecar at
/// `<path>.json` carrying {tau_rel, band, fingerprint}.
pub fn write_operator(otf: &Otf, path: &Path) -> Result<()> {
    let mut values = Vec::with_capacity(2 * otf.spectrum().len());
    for v in otf.spectrum() {
        values.push(v.re as f32);
        values.push(v.im as f32);
    }
    let mut t = TensorFile::new_c64([otf.channels(), otf.height(), otf.width()], values)?;
    t.meta.insert("kind".into(), serde_json::json!("otf"));
    write_tensor(&t, path)?;
    let sidecar = OperatorSidecar {
        tau_rel: otf.tau_rel(),
        band: otf.band().map(|b| [b.lo, b.hi]),
        fingerprint: otf.fingerprint().to_string(),
    };
    let sidecar_path = sidecar_path(path);
    fs::write(
        &sidecar_path,
        serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| CliError::io(&sidecar_path, e))?;
    Ok(())
}

/// Operator import: rebuilds masks from the stored spectrum with the
/// sidecar's threshold and band. Returns the operator and the sidecar as
/// written (the rebuilt fingerprint reflects the f32-quantized spectrum).
pub fn read_operator(path: &Path) -> Result<(Otf, OperatorSidecar)> {
    let t = read_tensor(path)?;
    if t.dtype != Dtype::C64 {
        return Err(CliError::Format(format!(
            "{}: operator tensors are c64, got {:?}",
            path.display(),
            t.dtype
        )));
    }
    let sidecar_path = sidecar_path(path);
    let sidecar: OperatorSidecar = serde_json::from_slice(
        &fs::read(&sidecar_path).map_err(|e| CliError::io(&sidecar_path, e))?,
    )
    .map_err(|e| CliError::Format(format!("{}: sidecar: {e}", sidecar_path.display())))?;
    let spectrum: Vec<Complex64> = t
        .values
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
        .collect();
    let band = sidecar.band.map(|[lo, hi]| Band { lo, hi });
    let otf = Otf::from_spectrum(t.shape[0], t.shape[1], t.shape[2], spectrum, sidecar.tau_rel, band)
        .map_err(CliError::Core)?;
    Ok((otf, sidecar))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Mask design JSON: an object mapping Noll indices to coefficients in
/// meters, e.g. {"4": 1.2e-8, "11": 2.64e-7}.
pub fn load_mask_json(path: &Path) -> Result<ZernikeCoeffs> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let raw: BTreeMap<String, f64> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Format(format!("{}: mask JSON: {e}", path.display())))?;
    mask_from_entries(&raw).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn mask_from_entries(entries: &BTreeMap<String, f64>) -> std::result::Result<ZernikeCoeffs, String> {
    let mut parsed = Vec::new();
    for (k, &v) in entries {
        let j: usize = k
            .parse()
            .map_err(|_| format!("mask key {k:?} is not a Noll index"))?;
        if j == 0 || j > MAX_NOLL {
            return Err(format!("Noll index {j} out of range 1..={MAX_NOLL}"));
        }
        parsed.push((j, v));
    }
    let k_max = parsed.iter().map(|(j, _)| *j).max().unwrap_or(1);
    let mut values = vec![0.0; k_max];
    for (j, v) in parsed {
        values[j - 1] = v;
    }
    ZernikeCoeffs::new(values).map_err(|e| e.to_string())
}

pub fn save_mask_json(coeffs: &ZernikeCoeffs, path: &Path) -> Result<()> {
    let mut map = BTreeMap::new();
    for (i, &v) in coeffs.values().iter().enumerate() {
        if v != 0.0 {
            map.insert(format!("{}", i + 1), v);
        }
    }
    let json = serde_json::to_vec_pretty(&map).expect("mask serializes");
    fs::write(path, json).map_err(|e| CliError::io(path, e))
}

/// Height map CSV: row-major meters, 9 significant digits.
pub fn write_height_csv(heights: &[f64], n: usize, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in 0..n {
        let mut line = String::new();
        for col in 0..n {
            if col > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:.8e}", heights[row * n + col]));
        }
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Authenticity map PNG: scores in [-1,1] mapped affinely to [0,255].
pub fn save_map_png(scores: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    let data: Vec<f64> = scores.iter().map(|&m| (m + 1.0) / 2.0).collect();
    let img = Image::from_planar(1, height, width, data).map_err(CliError::Core)?;
    save_png(&img, path, 8)
}

/// Binary mask PNG (tampered = white).
pub fn save_mask_png(mask: &[bool], height: usize, width: usize, path: &Path) -> Result<()> {
    let data: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let img = Image::from_planar(1, height, width, data).map_err(CliError::Core)?;
    save_png(&img, path, 8)
}

/// Ground-truth mask from a PNG: any value above half-scale is tampered.
pub fn load_mask_png(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let img = load_png(path)?;
    let (_, h, w) = img.shape();
    let mask = img.channel(0).iter().map(|&v| v > 0.5).collect();
    Ok((mask, h, w))
}

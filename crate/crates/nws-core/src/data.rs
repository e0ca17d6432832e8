//! Dataset ingestion: IDX-style binary files, directories of class folders
//! holding raw image blobs, and the seeded synthetic generator used by the
//! desk benchmark.

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NwsError, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone)]
pub struct Dataset {
    pub images: Vec<Float>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Deterministic permutation of sample indices for the given seed.
    pub fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }

    /// Gathers the given samples into an NCHW tensor plus labels.
    pub fn batch(&self, sample_indices: &[usize]) -> (Tensor, Vec<usize>) {
        let il = self.image_len();
        let mut data = Vec::with_capacity(sample_indices.len() * il);
        let mut labels = Vec::with_capacity(sample_indices.len());
        for &i in sample_indices {
            data.extend_from_slice(&self.images[i * il..(i + 1) * il]);
            labels.push(self.labels[i]);
        }
        let batch = Tensor::new(
            vec![sample_indices.len(), self.channels, self.height, self.width],
            data,
            false,
        )
        .unwrap();
        (batch, labels)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let max = self.labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut hist = vec![0usize; max];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Keeps only the listed classes and remaps their labels to 0..len.
    pub fn subset_with_remap(&self, classes: &[usize]) -> Dataset {
        let il = self.image_len();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if let Some(new) = classes.iter().position(|&c| c == l) {
                images.extend_from_slice(&self.images[i * il..(i + 1) * il]);
                labels.push(new);
            }
        }
        Dataset {
            images,
            labels,
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}

/// Seeded synthetic image set: each class is a fixed oriented sinusoid
/// template plus Gaussian noise. Classes share the low-frequency structure,
/// which is what makes inherited temporary-kernel initialization pay off.
pub fn synthetic_dataset(
    classes: usize,
    per_class: usize,
    channels: usize,
    height: usize,
    width: usize,
    noise_std: Float,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, noise_std as f64).unwrap();
    let il = channels * height * width;
    let mut templates = Vec::with_capacity(classes);
    for k in 0..classes {
        let theta = std::f64::consts::PI * (k as f64 + 0.35) / classes as f64;
        let freq = 2.0 * std::f64::consts::PI * (1.0 + (k % 3) as f64 * 0.5) / height as f64;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut tpl = vec![0.0 as Float; il];
        for ch in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let u = (x as f64) * theta.cos() + (y as f64) * theta.sin();
                    let v = (freq * u + phase + ch as f64 * 0.7).sin();
                    tpl[(ch * height + y) * width + x] = v as Float;
                }
            }
        }
        templates.push(tpl);
    }
    let mut images = Vec::with_capacity(classes * per_class * il);
    let mut labels = Vec::with_capacity(classes * per_class);
    for k in 0..classes {
        for _ in 0..per_class {
            for j in 0..il {
                images.push(templates[k][j] + noise.sample(&mut rng) as Float);
            }
            labels.push(k);
        }
    }
    Dataset {
        images,
        labels,
        channels,
        height,
        width,
    }
}

fn ingestion(offset: u64, message: impl Into<String>) -> NwsError {
    NwsError::Ingestion {
        offset,
        message: message.into(),
    }
}

fn read_idx_dims(bytes: &[u8], path: &str) -> Result<(usize, Vec<usize>)> {
    if bytes.len() < 4 {
        return Err(ingestion(0, format!("{}: truncated IDX header", path)));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(ingestion(0, format!("{}: bad IDX magic", path)));
    }
    if bytes[2] != 0x08 {
        return Err(ingestion(2, format!("{}: only u8 IDX payloads are supported", path)));
    }
    let ndims = bytes[3] as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(ingestion(4, format!("{}: truncated IDX dimension list", path)));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    if bytes.len() != header_len + expected {
        return Err(ingestion(
            header_len as u64,
            format!(
                "{}: payload is {} bytes, dimensions {:?} require {}",
                path,
                bytes.len() - header_len,
                dims,
                expected
            ),
        ));
    }
    Ok((header_len, dims))
}

fn u8_to_float(v: u8) -> Float {
    (v as Float / 255.0 - 0.5) * 2.0
}

/// Loads an IDX-format pair from a directory containing `images.idx`
/// (3-d grayscale [n,h,w] or 4-d [n,c,h,w]) and `labels.idx` (1-d).
pub fn load_idx_dir(dir: &Path) -> Result<Dataset> {
    let images_path = dir.join("images.idx");
    let labels_path = dir.join("labels.idx");
    let ibytes = fs::read(&images_path)?;
    let lbytes = fs::read(&labels_path)?;
    let (ioff, idims) = read_idx_dims(&ibytes, &images_path.to_string_lossy())?;
    let (loff, ldims) = read_idx_dims(&lbytes, &labels_path.to_string_lossy())?;
    let (n, c, h, w) = match idims.as_slice() {
        [n, h, w] => (*n, 1usize, *h, *w),
        [n, c, h, w] => (*n, *c, *h, *w),
        _ => {
            return Err(ingestion(
                3,
                format!("{}: expected 3-d or 4-d image tensor", images_path.to_string_lossy()),
            ))
        }
    };
    if ldims.len() != 1 || ldims[0] != n {
        return Err(ingestion(
            3,
            format!(
                "{}: {} labels for {} images",
                labels_path.to_string_lossy(),
                ldims.first().copied().unwrap_or(0),
                n
            ),
        ));
    }
    let images = ibytes[ioff..].iter().map(|&b| u8_to_float(b)).collect();
    let labels = lbytes[loff..].iter().map(|&b| b as usize).collect();
    Ok(Dataset {
        images,
        labels,
        channels: c,
        height: h,
        width: w,
    })
}

/// Raw image blob: magic "NWSB", channels u8, height u16 LE, width u16 LE,
/// then row-major u8 pixels per channel.
pub const BLOB_MAGIC: &[u8; 4] = b"NWSB";

fn read_blob(path: &Path) -> Result<(usize, usize, usize, Vec<Float>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let name = path.to_string_lossy();
    if bytes.len() < 9 {
        return Err(ingestion(0, format!("{}: truncated blob header", name)));
    }
    if &bytes[0..4] != BLOB_MAGIC {
        return Err(ingestion(0, format!("{}: bad blob magic", name)));
    }
    let c = bytes[4] as usize;
    let h = LittleEndian::read_u16(&bytes[5..7]) as usize;
    let w = LittleEndian::read_u16(&bytes[7..9]) as usize;
    let expected = c * h * w;
    if bytes.len() != 9 + expected {
        return Err(ingestion(
            9,
            format!("{}: {} pixel bytes, header requires {}", name, bytes.len() - 9, expected),
        ));
    }
    Ok((c, h, w, bytes[9..].iter().map(|&b| u8_to_float(b)).collect()))
}

/// Loads a directory of class folders, each holding raw blobs. Class labels
/// follow the lexicographic order of the folder names.
pub fn load_class_folders(dir: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(NwsError::InvalidInput(format!(
            "{}: no class folders",
            dir.to_string_lossy()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<(usize, usize, usize)> = None;
    for (label, class_dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(class_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let (c, h, w, pixels) = read_blob(&file)?;
            match shape {
                None => shape = Some((c, h, w)),
                Some(s) if s != (c, h, w) => {
                    return Err(NwsError::InvalidInput(format!(
                        "{}: blob shape {:?} differs from {:?}",
                        file.to_string_lossy(),
                        (c, h, w),
                        s
                    )))
                }
                _ => {}
            }
            images.extend(pixels);
            labels.push(label);
        }
    }
    let (c, h, w) = shape.ok_or_else(|| {
        NwsError::InvalidInput(format!("{}: class folders are empty", dir.to_string_lossy()))
    })?;
    Ok(Dataset {
        images,
        labels,
        channels: c,
        height: h,
        width: w,
    })
}

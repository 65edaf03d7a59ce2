//! Volume ingestion, preprocessing into 5-channel slice datasets, phantom
//! generation, and the dataset container format.
//!
//! Channel order everywhere: T1, T1Gd, T2, FLAIR, annotation. Annotation
//! values after remapping: 0 (background), 51 (ED), 102 (NCR/NET),
//! 204 (ET).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed::derive_seed;

/// Annotation values in ascending order; index in this array is the class
/// index used by the segmenter.
pub const LABEL_VALUES: [u8; 4] = [0, 51, 102, 204];

/// Foreground annotation values keyed by meaning.
pub const LABEL_ED: u8 = 51;
pub const LABEL_NCR_NET: u8 = 102;
pub const LABEL_ET: u8 = 204;

pub const N_CHANNELS: usize = 5;
pub const N_MODALITIES: usize = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("nifti: header truncated at byte {0}, need 348 bytes")]
    HeaderTooShort(usize),
    #[error("nifti: sizeof_hdr at byte 0 is {0}, expected 348")]
    BadSizeofHdr(i32),
    #[error("nifti: bad magic at byte 344: {0:?}, expected [110, 43, 49, 0] (\"n+1\\0\")")]
    BadMagic([u8; 4]),
    #[error("nifti: dim[0] at byte 40 is {0}, expected 3 (or higher with trailing dims of 1)")]
    BadRank(i16),
    #[error("nifti: non-positive extent {extent} in dim[{axis}]")]
    BadExtent { axis: usize, extent: i16 },
    #[error("nifti: unsupported datatype code {0} at byte 70 (supported: 2=uint8, 4=int16, 16=float32)")]
    UnsupportedDtype(i16),
    #[error("nifti: vox_offset {0} at byte 108 precedes the 348-byte header")]
    BadVoxOffset(f32),
    #[error("nifti: payload truncated: need {expected} bytes from offset {offset}, file holds {actual}")]
    Truncated { offset: usize, expected: usize, actual: usize },
    #[error("label volume holds unexpected value {value} at voxel {index} (allowed: 0, 1, 2, 4)")]
    UnexpectedLabel { value: f32, index: usize },
    #[error("pad_slice: input {input}x{input} exceeds target {target}x{target}")]
    PadTooLarge { input: usize, target: usize },
    #[error("split_validation: no samples to split")]
    EmptySplit,
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset container: bad magic")]
    ContainerBadMagic,
    #[error("dataset container: unsupported version {0}")]
    ContainerBadVersion(u8),
    #[error("dataset container corrupt: {0}")]
    ContainerCorrupt(String),
    #[error("dataset container: manifest json: {0}")]
    ContainerManifest(String),
    #[error("annotation value {value} at pixel {index} is not one of 0/51/102/204")]
    BadAnnotation { value: f32, index: usize },
}

/// Voxel dtype as stored in the source file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DtypeTag {
    U8,
    I16,
    F32,
}

/// A single scalar volume, x-fastest memory order.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: (usize, usize, usize),
    pub data: Vec<f32>,
    pub dtype: DtypeTag,
    pub source: String,
}

impl Volume {
    pub fn new(dims: (usize, usize, usize), data: Vec<f32>, dtype: DtypeTag, source: &str) -> Self {
        assert_eq!(
            dims.0 * dims.1 * dims.2,
            data.len(),
            "Volume: dims {dims:?} disagree with {} voxels",
            data.len()
        );
        Self { dims, data, dtype, source: source.to_string() }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        let (xs, ys, _) = self.dims;
        self.data[(z * ys + y) * xs + x]
    }

    /// Borrow the z-th plane (y-major, x-fastest).
    pub fn plane(&self, z: usize) -> &[f32] {
        let (xs, ys, _) = self.dims;
        &self.data[z * xs * ys..(z + 1) * xs * ys]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One subject: four modalities plus a label volume, all of equal dims.
#[derive(Clone, Debug)]
pub struct Subject5C {
    pub id: String,
    pub modalities: [Volume; 4],
    pub labels: Volume,
    pub split: Split,
}

impl Subject5C {
    pub fn new(id: &str, modalities: [Volume; 4], labels: Volume, split: Split) -> Self {
        for m in &modalities {
            assert_eq!(m.dims, labels.dims, "Subject {id}: modality dims {:?} vs label dims {:?}", m.dims, labels.dims);
        }
        Self { id: id.to_string(), modalities, labels, split }
    }
}

/// One preprocessed 5-channel square slice. The last channel is the
/// annotation; image channels live in [0, 255].
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample {
    pub subject: String,
    pub z: usize,
    pub resolution: usize,
    /// `5 * resolution * resolution` values, channel-major.
    pub channels: Vec<f32>,
}

impl SliceSample {
    pub fn channel(&self, c: usize) -> &[f32] {
        let r2 = self.resolution * self.resolution;
        &self.channels[c * r2..(c + 1) * r2]
    }

    pub fn annotation(&self) -> &[f32] {
        self.channel(N_CHANNELS - 1)
    }
}

/// Which (subject, z) pairs made it into each split, and under what
/// parameters. Serialized as JSON next to the binary container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: Vec<(String, usize)>,
    pub test: Vec<(String, usize)>,
    pub filter_fraction: f64,
    pub filter_threshold: f64,
    pub reference_channel: usize,
    pub rescale: String,
    pub resolution: usize,
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
}

/// Manifest plus the samples it describes, train block first.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SliceSample>,
}

impl Dataset {
    pub fn train_samples(&self) -> &[SliceSample] {
        &self.samples[..self.manifest.train_count]
    }

    pub fn test_samples(&self) -> &[SliceSample] {
        &self.samples[self.manifest.train_count..]
    }
}

// ----- NIfTI-1 parsing -----

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

/// Parse a single-file ("n+1"), uncompressed, little-endian NIfTI-1 volume
/// with dtype uint8, int16 or float32. Orientation metadata is ignored.
pub fn parse_nifti(bytes: &[u8], source: &str) -> Result<Volume, DataError> {
    if bytes.len() < 348 {
        return Err(DataError::HeaderTooShort(bytes.len()));
    }
    let sizeof_hdr = le_i32(bytes, 0);
    if sizeof_hdr != 348 {
        return Err(DataError::BadSizeofHdr(sizeof_hdr));
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(DataError::BadMagic(magic));
    }
    let rank = le_i16(bytes, 40);
    if !(3..=7).contains(&rank) {
        return Err(DataError::BadRank(rank));
    }
    let mut dims = [0usize; 3];
    for axis in 0..3 {
        let extent = le_i16(bytes, 40 + 2 * (axis + 1));
        if extent <= 0 {
            return Err(DataError::BadExtent { axis, extent });
        }
        dims[axis] = extent as usize;
    }
    for axis in 3..rank as usize {
        let extent = le_i16(bytes, 40 + 2 * (axis + 1));
        if extent > 1 {
            return Err(DataError::BadRank(rank));
        }
    }
    let datatype = le_i16(bytes, 70);
    let (dtype, voxel_bytes) = match datatype {
        2 => (DtypeTag::U8, 1),
        4 => (DtypeTag::I16, 2),
        16 => (DtypeTag::F32, 4),
        other => return Err(DataError::UnsupportedDtype(other)),
    };
    let vox_offset = le_f32(bytes, 108);
    if vox_offset < 348.0 || vox_offset.fract() != 0.0 {
        return Err(DataError::BadVoxOffset(vox_offset));
    }
    let offset = vox_offset as usize;
    let n_vox = dims[0] * dims[1] * dims[2];
    let expected = n_vox * voxel_bytes;
    if bytes.len() < offset + expected {
        return Err(DataError::Truncated {
            offset,
            expected,
            actual: bytes.len().saturating_sub(offset),
        });
    }
    let payload = &bytes[offset..offset + expected];
    let data: Vec<f32> = match dtype {
        DtypeTag::U8 => payload.iter().map(|&b| f32::from(b)).collect(),
        DtypeTag::I16 => payload
            .chunks_exact(2)
            .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        DtypeTag::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Volume::new((dims[0], dims[1], dims[2]), data, dtype, source))
}

// ----- preprocessing -----

/// Per-volume min-max rescale onto [0, 255]; constant volumes map to all
/// zeros.
pub fn rescale_intensity(volume: &Volume) -> Volume {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in &volume.data {
        min = min.min(v);
        max = max.max(v);
    }
    let data = if max > min {
        let scale = 255.0 / (max - min);
        volume.data.iter().map(|&v| (v - min) * scale).collect()
    } else {
        vec![0.0; volume.data.len()]
    };
    Volume { dims: volume.dims, data, dtype: volume.dtype, source: volume.source.clone() }
}

/// Map raw BraTS label values 0/1/2/4 to 0/51/102/204.
pub fn remap_labels(labels: &Volume) -> Result<Volume, DataError> {
    let mut data = Vec::with_capacity(labels.data.len());
    for (index, &v) in labels.data.iter().enumerate() {
        let mapped = match v {
            v if v == 0.0 => 0.0,
            v if v == 1.0 => f32::from(LABEL_ED),
            v if v == 2.0 => f32::from(LABEL_NCR_NET),
            v if v == 4.0 => f32::from(LABEL_ET),
            value => return Err(DataError::UnexpectedLabel { value, index }),
        };
        data.push(mapped);
    }
    Ok(Volume { dims: labels.dims, data, dtype: labels.dtype, source: labels.source.clone() })
}

/// Smallest power of two that holds both extents; the square padded size
/// slices are emitted at (240 -> 256, 64 -> 64).
pub fn pad_target(x: usize, y: usize) -> usize {
    let m = x.max(y).max(1);
    m.next_power_of_two()
}

/// Center a `5 x side x side` slice inside `target x target` zeros. All
/// channels are padded identically; an odd margin puts the extra pixel on
/// the bottom/right.
pub fn pad_slice(channels: &[f32], side: usize, target: usize) -> Result<Vec<f32>, DataError> {
    assert_eq!(channels.len(), N_CHANNELS * side * side, "pad_slice: channel buffer size");
    if side > target {
        return Err(DataError::PadTooLarge { input: side, target });
    }
    if side == target {
        return Ok(channels.to_vec());
    }
    let off = (target - side) / 2;
    let mut out = vec![0.0f32; N_CHANNELS * target * target];
    for c in 0..N_CHANNELS {
        let src = &channels[c * side * side..(c + 1) * side * side];
        let dst = &mut out[c * target * target..(c + 1) * target * target];
        for y in 0..side {
            let drow = (y + off) * target + off;
            dst[drow..drow + side].copy_from_slice(&src[y * side..(y + 1) * side]);
        }
    }
    Ok(out)
}

/// Number of reference-channel pixels that must exceed the intensity
/// threshold for a slice to be kept: a ceiling of `fraction * total` with a
/// small guard against binary representation slack (so 15% of 57600 is
/// exactly 8640).
fn required_count(fraction: f64, total: usize) -> usize {
    (fraction * total as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Keep each z-slice iff enough reference-channel pixels exceed the
/// intensity threshold, then emit kept slices (ascending z) padded to the
/// square power-of-two target. Expects rescaled modalities and remapped
/// labels.
pub fn filter_and_slice(
    subject: &Subject5C,
    fraction: f64,
    threshold: f64,
    reference_channel: usize,
) -> Vec<SliceSample> {
    assert!(reference_channel < N_MODALITIES, "filter_and_slice: reference channel {reference_channel}");
    let (xs, ys, zs) = subject.labels.dims;
    let need = required_count(fraction, xs * ys);
    let target = pad_target(xs, ys);
    let mut out = Vec::new();
    for z in 0..zs {
        let plane = subject.modalities[reference_channel].plane(z);
        let count = plane.iter().filter(|&&v| f64::from(v) > threshold).count();
        if count < need {
            continue;
        }
        let mut channels = Vec::with_capacity(N_CHANNELS * xs * ys);
        for m in &subject.modalities {
            channels.extend_from_slice(m.plane(z));
        }
        channels.extend_from_slice(subject.labels.plane(z));
        let padded = if xs == ys {
            pad_slice(&channels, xs, target).expect("pad target covers input")
        } else {
            let square = embed_rect(&channels, xs, ys);
            pad_slice(&square, xs.max(ys), target).expect("pad target covers input")
        };
        out.push(SliceSample { subject: subject.id.clone(), z, resolution: target, channels: padded });
    }
    out
}

/// Center a `5 x ys x xs` rectangle inside a square of the larger extent.
fn embed_rect(channels: &[f32], xs: usize, ys: usize) -> Vec<f32> {
    let side = xs.max(ys);
    let (ox, oy) = ((side - xs) / 2, (side - ys) / 2);
    let mut out = vec![0.0f32; N_CHANNELS * side * side];
    for c in 0..N_CHANNELS {
        for y in 0..ys {
            let src = &channels[(c * ys + y) * xs..(c * ys + y + 1) * xs];
            let drow = (c * side + y + oy) * side + ox;
            out[drow..drow + xs].copy_from_slice(src);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    PerSubject,
    PerImage,
}

/// Deterministic seeded train/validation partition, returned as index lists
/// into `samples` (original order preserved within each side).
pub fn split_validation(
    samples: &[SliceSample],
    fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    assert!(fraction > 0.0 && fraction < 1.0, "split_validation: fraction {fraction}");
    if samples.is_empty() {
        return Err(DataError::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let val_set: HashSet<usize> = match mode {
        SplitMode::PerImage => {
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            idx.shuffle(&mut rng);
            let n_val = ((fraction * samples.len() as f64).round() as usize)
                .clamp(1, samples.len() - 1);
            idx.into_iter().take(n_val).collect()
        }
        SplitMode::PerSubject => {
            let mut subjects: Vec<&str> = Vec::new();
            for s in samples {
                if !subjects.contains(&s.subject.as_str()) {
                    subjects.push(&s.subject);
                }
            }
            let mut order: Vec<usize> = (0..subjects.len()).collect();
            order.shuffle(&mut rng);
            let n_val = ((fraction * subjects.len() as f64).round() as usize)
                .clamp(1, subjects.len().saturating_sub(1).max(1));
            let val_subjects: HashSet<&str> =
                order.into_iter().take(n_val).map(|i| subjects[i]).collect();
            (0..samples.len())
                .filter(|&i| val_subjects.contains(samples[i].subject.as_str()))
                .collect()
        }
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    for i in 0..samples.len() {
        if val_set.contains(&i) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, val))
}

// ----- phantom generation -----

/// Procedural stand-in subjects: an elliptical head per modality with
/// smooth base intensity and texture noise, plus one tumor of nested
/// regions (NCR/NET core 102, ET rim 204, ED surround 51). Bit-identical
/// for a given seed.
pub fn generate_phantom(seed: u64, n_subjects: usize, dims: (usize, usize, usize)) -> Vec<Subject5C> {
    let (xs, ys, zs) = dims;
    for (axis, d) in [xs, ys, zs].into_iter().enumerate() {
        assert!(d >= 16 && d % 2 == 0, "generate_phantom: dim[{axis}] = {d}, need even and >= 16");
    }
    (0..n_subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
            phantom_subject(&mut rng, s, dims)
        })
        .collect()
}

fn phantom_subject(rng: &mut ChaCha8Rng, index: usize, dims: (usize, usize, usize)) -> Subject5C {
    let (xs, ys, zs) = dims;
    let (fx, fy, fz) = (xs as f64, ys as f64, zs as f64);
    let center = (fx / 2.0, fy / 2.0, fz / 2.0);
    let semi = (
        fx * rng.gen_range(0.40..0.45),
        fy * rng.gen_range(0.42..0.47),
        fz * rng.gen_range(0.40..0.46),
    );
    // Base intensity and smooth gradient per modality.
    let bases = [
        rng.gen_range(110.0..130.0),
        rng.gen_range(100.0..120.0),
        rng.gen_range(130.0..150.0),
        rng.gen_range(95.0..115.0),
    ];
    let grads: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0)))
        .collect();

    // Tumor center snapped to a voxel so the core always holds a voxel.
    let unit = xs.min(ys).min(zs) as f64 / 32.0;
    let tc = (
        (center.0 + fx * rng.gen_range(-0.25..0.25)).round(),
        (center.1 + fy * rng.gen_range(-0.25..0.25)).round(),
        (center.2 + fz * rng.gen_range(-0.12..0.12)).round(),
    );
    let mut r_core = rng.gen_range(1.2..2.0) * unit;
    let mut r_rim = r_core + rng.gen_range(1.2..2.0) * unit;
    let mut r_edema = r_rim + rng.gen_range(2.0..3.2) * unit;
    // Per-axis stretch for mild anisotropy.
    let stretch = (
        rng.gen_range(0.85..1.2),
        rng.gen_range(0.85..1.2),
        rng.gen_range(0.85..1.2),
    );

    let mut labels = vec![0.0f32; xs * ys * zs];
    for attempt in 0..10 {
        rasterize_tumor(&mut labels, dims, tc, stretch, (r_core, r_rim, r_edema), center, semi);
        let mut counts = [0usize; 3];
        for &v in &labels {
            match v as u8 {
                LABEL_NCR_NET => counts[0] += 1,
                LABEL_ET => counts[1] += 1,
                LABEL_ED => counts[2] += 1,
                _ => {}
            }
        }
        if counts.iter().all(|&c| c > 0) {
            break;
        }
        assert!(attempt < 9, "phantom subject {index}: tumor stayed degenerate after retries");
        r_core += 0.4;
        r_rim += 0.8;
        r_edema += 1.2;
    }

    // Modality-dependent contrast offsets per label region, mimicking
    // T1 (core dark), T1Gd (rim bright), T2/FLAIR (edema bright).
    let offsets: [[f64; 3]; 4] = [
        [-35.0, 15.0, -10.0],
        [-20.0, 80.0, 5.0],
        [30.0, 10.0, 50.0],
        [10.0, 5.0, 70.0],
    ];

    let noise = Normal::new(0.0f64, 4.0).unwrap();
    let mut modalities = Vec::with_capacity(4);
    for m in 0..4 {
        let mut data = vec![0.0f32; xs * ys * zs];
        for z in 0..zs {
            for y in 0..ys {
                for x in 0..xs {
                    let i = (z * ys + y) * xs + x;
                    let hd = ellipse_dist((x, y, z), center, semi);
                    if hd > 1.0 {
                        continue;
                    }
                    let mut v = bases[m]
                        + grads[m].0 * (x as f64 / fx - 0.5)
                        + grads[m].1 * (y as f64 / fy - 0.5)
                        - 25.0 * hd * hd;
                    v += match labels[i] as u8 {
                        LABEL_NCR_NET => offsets[m][0],
                        LABEL_ET => offsets[m][1],
                        LABEL_ED => offsets[m][2],
                        _ => 0.0,
                    };
                    v += noise.sample(rng);
                    data[i] = v.clamp(0.0, 255.0) as f32;
                }
            }
        }
        modalities.push(Volume::new(dims, data, DtypeTag::F32, &format!("phantom-{index}-m{m}")));
    }

    let label_volume = Volume::new(dims, labels, DtypeTag::U8, &format!("phantom-{index}-seg"));
    let m: [Volume; 4] = modalities.try_into().unwrap();
    Subject5C::new(&format!("phantom-{index:03}"), m, label_volume, Split::Train)
}

fn ellipse_dist(p: (usize, usize, usize), c: (f64, f64, f64), semi: (f64, f64, f64)) -> f64 {
    let dx = (p.0 as f64 - c.0) / semi.0;
    let dy = (p.1 as f64 - c.1) / semi.1;
    let dz = (p.2 as f64 - c.2) / semi.2;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn rasterize_tumor(
    labels: &mut [f32],
    dims: (usize, usize, usize),
    tc: (f64, f64, f64),
    stretch: (f64, f64, f64),
    radii: (f64, f64, f64),
    head_center: (f64, f64, f64),
    head_semi: (f64, f64, f64),
) {
    let (xs, ys, zs) = dims;
    let (r_core, r_rim, r_edema) = radii;
    for l in labels.iter_mut() {
        *l = 0.0;
    }
    for z in 0..zs {
        for y in 0..ys {
            for x in 0..xs {
                if ellipse_dist((x, y, z), head_center, head_semi) > 0.92 {
                    continue;
                }
                let dx = (x as f64 - tc.0) * stretch.0;
                let dy = (y as f64 - tc.1) * stretch.1;
                let dz = (z as f64 - tc.2) * stretch.2;
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                let i = (z * ys + y) * xs + x;
                labels[i] = if d <= r_core {
                    f32::from(LABEL_NCR_NET)
                } else if d <= r_rim {
                    f32::from(LABEL_ET)
                } else if d <= r_edema {
                    f32::from(LABEL_ED)
                } else {
                    0.0
                };
            }
        }
    }
}

// ----- dataset pipeline -----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub filter_fraction: f64,
    pub filter_threshold: f64,
    pub reference_channel: usize,
    /// Min-max rescale each modality volume (off for phantom data, which is
    /// generated in [0, 255]).
    pub rescale: bool,
    /// Remap raw 0/1/2/4 labels (off for phantom data, generated remapped).
    pub remap: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            filter_fraction: 0.15,
            filter_threshold: 50.0,
            reference_channel: 0,
            rescale: true,
            remap: true,
        }
    }
}

/// Full preprocessing: optional rescale and remap, slice filtering and
/// padding, manifest assembly. Pure in (subjects, config, seed).
pub fn build_dataset(
    subjects: &[Subject5C],
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Dataset, DataError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut resolution = 0;
    for subject in subjects {
        let prepared;
        let subject = if cfg.rescale || cfg.remap {
            let modalities = if cfg.rescale {
                [
                    rescale_intensity(&subject.modalities[0]),
                    rescale_intensity(&subject.modalities[1]),
                    rescale_intensity(&subject.modalities[2]),
                    rescale_intensity(&subject.modalities[3]),
                ]
            } else {
                subject.modalities.clone()
            };
            let labels = if cfg.remap { remap_labels(&subject.labels)? } else { subject.labels.clone() };
            prepared = Subject5C { id: subject.id.clone(), modalities, labels, split: subject.split };
            &prepared
        } else {
            subject
        };
        let slices = filter_and_slice(
            subject,
            cfg.filter_fraction,
            cfg.filter_threshold,
            cfg.reference_channel,
        );
        for s in &slices {
            resolution = resolution.max(s.resolution);
            for (index, &v) in s.annotation().iter().enumerate() {
                if !LABEL_VALUES.iter().any(|&l| f32::from(l) == v) {
                    return Err(DataError::BadAnnotation { value: v, index });
                }
            }
        }
        match subject.split {
            Split::Train => train.extend(slices),
            Split::Test => test.extend(slices),
        }
    }
    let manifest = DatasetManifest {
        train: train.iter().map(|s| (s.subject.clone(), s.z)).collect(),
        test: test.iter().map(|s| (s.subject.clone(), s.z)).collect(),
        filter_fraction: cfg.filter_fraction,
        filter_threshold: cfg.filter_threshold,
        reference_channel: cfg.reference_channel,
        rescale: if cfg.rescale { "per-volume-minmax".into() } else { "none".into() },
        resolution,
        seed,
        train_count: train.len(),
        test_count: test.len(),
    };
    let mut samples = train;
    samples.extend(test);
    Ok(Dataset { manifest, samples })
}

// ----- container format -----

const DS_MAGIC: &[u8; 4] = b"GSDS";
const DS_VERSION: u8 = 1;

/// Serialize a dataset: magic, version, manifest JSON, raw sample payloads
/// (image channels float32, annotation uint8), sha256 trailer.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(DS_MAGIC);
    out.push(DS_VERSION);
    let manifest = serde_json::to_vec(&dataset.manifest)
        .map_err(|e| DataError::ContainerManifest(e.to_string()))?;
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(dataset.samples.len() as u32).to_le_bytes());
    for s in &dataset.samples {
        let name = s.subject.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(s.z as u64).to_le_bytes());
        out.extend_from_slice(&(s.resolution as u32).to_le_bytes());
        let r2 = s.resolution * s.resolution;
        for c in 0..N_MODALITIES {
            for &v in s.channel(c) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (index, &v) in s.annotation().iter().enumerate() {
            if !LABEL_VALUES.iter().any(|&l| f32::from(l) == v) {
                return Err(DataError::BadAnnotation { value: v, index });
            }
            out.push(v as u8);
        }
        debug_assert_eq!(s.channels.len(), N_CHANNELS * r2);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 + 1 + 4 + 4 + 32 {
        return Err(DataError::ContainerCorrupt("shorter than the fixed header".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if digest != Sha256::digest(body).as_slice() {
        return Err(DataError::ContainerCorrupt("sha256 digest mismatch".into()));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], DataError> {
        if *pos + n > body.len() {
            return Err(DataError::ContainerCorrupt(format!("truncated at byte {pos}", pos = *pos)));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != DS_MAGIC.as_slice() {
        return Err(DataError::ContainerBadMagic);
    }
    let version = take(&mut pos, 1)?[0];
    if version != DS_VERSION {
        return Err(DataError::ContainerBadVersion(version));
    }
    let mlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let manifest: DatasetManifest = serde_json::from_slice(take(&mut pos, mlen)?)
        .map_err(|e| DataError::ContainerManifest(e.to_string()))?;
    let n_samples = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let subject = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| DataError::ContainerCorrupt("non-utf8 subject id".into()))?
            .to_string();
        let z = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let resolution = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let r2 = resolution * resolution;
        let mut channels = Vec::with_capacity(N_CHANNELS * r2);
        let raw = take(&mut pos, N_MODALITIES * r2 * 4)?;
        channels.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        let anno = take(&mut pos, r2)?;
        for (index, &b) in anno.iter().enumerate() {
            if !LABEL_VALUES.contains(&b) {
                return Err(DataError::BadAnnotation { value: f32::from(b), index });
            }
            channels.push(f32::from(b));
        }
        samples.push(SliceSample { subject, z, resolution, channels });
    }
    if pos != body.len() {
        return Err(DataError::ContainerCorrupt(format!(
            "{} trailing bytes after the last sample",
            body.len() - pos
        )));
    }
    if samples.len() != manifest.train_count + manifest.test_count {
        return Err(DataError::ContainerCorrupt(format!(
            "manifest promises {} samples, container holds {}",
            manifest.train_count + manifest.test_count,
            samples.len()
        )));
    }
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent fixture writer: assembles header bytes field by field.
    fn nifti_fixture(dims: (usize, usize, usize), datatype: i16, payload: &[u8]) -> Vec<u8> {
        let mut h = vec![0u8; 348];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        h[40..42].copy_from_slice(&3i16.to_le_bytes());
        h[42..44].copy_from_slice(&(dims.0 as i16).to_le_bytes());
        h[44..46].copy_from_slice(&(dims.1 as i16).to_le_bytes());
        h[46..48].copy_from_slice(&(dims.2 as i16).to_le_bytes());
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        let bitpix: i16 = match datatype {
            2 => 8,
            4 => 16,
            16 => 32,
            _ => 0,
        };
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&[0u8; 4]);
        h.extend_from_slice(payload);
        h
    }

    #[test]
    fn nifti_parses_f32_fixture_exactly() {
        let values: Vec<f32> = (0..32).map(|i| i as f32 * 0.5 - 3.0).collect();
        let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = nifti_fixture((4, 4, 2), 16, &payload);
        let vol = parse_nifti(&bytes, "fixture").unwrap();
        assert_eq!(vol.dims, (4, 4, 2));
        assert_eq!(vol.dtype, DtypeTag::F32);
        assert_eq!(vol.data, values);
        assert_eq!(vol.at(1, 0, 0), -2.5);
        assert_eq!(vol.at(0, 1, 1), values[4 * 4 + 4]);
    }

    #[test]
    fn nifti_decodes_u8_and_i16() {
        let bytes = nifti_fixture((2, 2, 4), 2, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
        let vol = parse_nifti(&bytes, "u8").unwrap();
        assert_eq!(vol.data[5], 5.0);

        let payload: Vec<u8> = [-5i16, 300, 0, 7].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = nifti_fixture((2, 2, 1), 4, &payload);
        let vol = parse_nifti(&bytes, "i16").unwrap();
        assert_eq!(vol.data, vec![-5.0, 300.0, 0.0, 7.0]);
    }

    #[test]
    fn nifti_error_cases_are_distinct() {
        let good = nifti_fixture((2, 2, 2), 16, &[0u8; 32]);

        let mut bad = good.clone();
        bad[0..4].copy_from_slice(&347i32.to_le_bytes());
        assert!(matches!(parse_nifti(&bad, "x"), Err(DataError::BadSizeofHdr(347))));

        let mut bad = good.clone();
        bad[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_nifti(&bad, "x"), Err(DataError::BadMagic(_))));

        let mut bad = good.clone();
        bad[70..72].copy_from_slice(&8i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bad, "x"), Err(DataError::UnsupportedDtype(8))));

        let truncated = &good[..good.len() - 10];
        match parse_nifti(truncated, "x") {
            Err(DataError::Truncated { offset: 352, expected: 32, actual: 22 }) => {}
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(parse_nifti(&good[..100], "x"), Err(DataError::HeaderTooShort(100))));
    }

    #[test]
    fn rescale_examples() {
        let vol = Volume::new((2, 1, 1), vec![0.0, 1000.0], DtypeTag::F32, "r");
        let half = Volume::new((3, 1, 1), vec![0.0, 500.0, 1000.0], DtypeTag::F32, "r");
        assert_eq!(rescale_intensity(&vol).data, vec![0.0, 255.0]);
        assert_eq!(rescale_intensity(&half).data[1], 127.5);

        let constant = Volume::new((2, 2, 1), vec![9.0; 4], DtypeTag::F32, "c");
        assert_eq!(rescale_intensity(&constant).data, vec![0.0; 4]);

        let ident = Volume::new((2, 1, 1), vec![0.0, 255.0], DtypeTag::F32, "i");
        for (a, b) in rescale_intensity(&ident).data.iter().zip(&ident.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn remap_examples() {
        let vol = Volume::new((4, 1, 1), vec![0.0, 1.0, 2.0, 4.0], DtypeTag::U8, "l");
        let out = remap_labels(&vol).unwrap();
        assert_eq!(out.data, vec![0.0, 51.0, 102.0, 204.0]);

        let bad = Volume::new((3, 1, 1), vec![0.0, 3.0, 4.0], DtypeTag::U8, "l");
        match remap_labels(&bad) {
            Err(DataError::UnexpectedLabel { value, index }) => {
                assert_eq!(value, 3.0);
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    /// A 240x240xZ subject whose T1 plane z has `counts[z]` pixels over the
    /// intensity threshold.
    fn counting_subject(counts: &[usize]) -> Subject5C {
        let (xs, ys, zs) = (240, 240, counts.len());
        let mut t1 = vec![0.0f32; xs * ys * zs];
        for (z, &n) in counts.iter().enumerate() {
            for i in 0..n {
                t1[z * xs * ys + i] = 51.0;
            }
        }
        let dims = (xs, ys, zs);
        let zeros = || Volume::new(dims, vec![0.0; xs * ys * zs], DtypeTag::F32, "m");
        Subject5C::new(
            "counting",
            [Volume::new(dims, t1, DtypeTag::F32, "t1"), zeros(), zeros(), zeros()],
            Volume::new(dims, vec![0.0; xs * ys * zs], DtypeTag::U8, "seg"),
            Split::Train,
        )
    }

    #[test]
    fn filter_boundary_at_fifteen_percent() {
        // 0.15 * 57600 = 8640: kept at exactly 8640, dropped at 8639.
        let subject = counting_subject(&[8640, 8639, 0]);
        let slices = filter_and_slice(&subject, 0.15, 50.0, 0);
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].z, 0);
        assert_eq!(slices[0].resolution, 256);
    }

    #[test]
    fn filter_threshold_is_strict() {
        // Pixels exactly at the threshold do not count.
        let (xs, ys) = (240, 240);
        let mut t1 = vec![50.0f32; xs * ys];
        t1[0] = 51.0;
        let dims = (xs, ys, 1);
        let zeros = || Volume::new(dims, vec![0.0; xs * ys], DtypeTag::F32, "m");
        let subject = Subject5C::new(
            "strict",
            [Volume::new(dims, t1, DtypeTag::F32, "t1"), zeros(), zeros(), zeros()],
            Volume::new(dims, vec![0.0; xs * ys], DtypeTag::U8, "seg"),
            Split::Train,
        );
        assert!(filter_and_slice(&subject, 0.15, 50.0, 0).is_empty());
    }

    #[test]
    fn filter_monotone_in_fraction() {
        let subject = counting_subject(&[100, 5000, 8640, 20000, 57600]);
        let strict = filter_and_slice(&subject, 0.15, 50.0, 0);
        let loose = filter_and_slice(&subject, 0.01, 50.0, 0);
        let strict_z: Vec<usize> = strict.iter().map(|s| s.z).collect();
        let loose_z: Vec<usize> = loose.iter().map(|s| s.z).collect();
        for z in &strict_z {
            assert!(loose_z.contains(z));
        }
        let mut sorted = loose_z.clone();
        sorted.sort_unstable();
        assert_eq!(loose_z, sorted, "slices must come out in ascending z");
    }

    #[test]
    fn padding_places_240_at_offset_8() {
        let side = 240;
        let mut channels = vec![0.0f32; N_CHANNELS * side * side];
        for c in 0..N_CHANNELS {
            for i in 0..side * side {
                channels[c * side * side + i] = 1.0;
            }
        }
        channels[0] = 42.0;
        let padded = pad_slice(&channels, side, 256).unwrap();
        assert_eq!(padded.len(), N_CHANNELS * 256 * 256);
        assert_eq!(padded[8 * 256 + 8], 42.0);
        for c in 0..N_CHANNELS {
            let plane = &padded[c * 256 * 256..(c + 1) * 256 * 256];
            for y in 0..256 {
                for x in 0..256 {
                    let border = y < 8 || y >= 248 || x < 8 || x >= 248;
                    if border {
                        assert_eq!(plane[y * 256 + x], 0.0, "border must stay zero");
                    } else if !(c == 0 && y == 8 && x == 8) {
                        assert_eq!(plane[y * 256 + x], 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn padding_identity_at_target() {
        let channels: Vec<f32> = (0..N_CHANNELS * 16).map(|i| i as f32).collect();
        let out = pad_slice(&channels, 4, 4).unwrap();
        assert_eq!(out, channels);
    }

    #[test]
    fn padding_rejects_oversize() {
        let channels = vec![0.0f32; N_CHANNELS * 300 * 300];
        assert!(matches!(
            pad_slice(&channels, 300, 256),
            Err(DataError::PadTooLarge { input: 300, target: 256 })
        ));
    }

    #[test]
    fn pad_target_rule() {
        assert_eq!(pad_target(240, 240), 256);
        assert_eq!(pad_target(64, 64), 64);
        assert_eq!(pad_target(33, 20), 64);
    }

    fn tiny_samples(n: usize, subjects: usize) -> Vec<SliceSample> {
        (0..n)
            .map(|i| SliceSample {
                subject: format!("s{:02}", i % subjects),
                z: i,
                resolution: 4,
                channels: vec![0.0; N_CHANNELS * 16],
            })
            .collect()
    }

    #[test]
    fn split_per_image_partitions() {
        let samples = tiny_samples(100, 10);
        let (train, val) = split_validation(&samples, 0.2, 99, SplitMode::PerImage).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let (t2, v2) = split_validation(&samples, 0.2, 99, SplitMode::PerImage).unwrap();
        assert_eq!(train, t2);
        assert_eq!(val, v2);
        let (t3, _) = split_validation(&samples, 0.2, 100, SplitMode::PerImage).unwrap();
        assert_ne!(train, t3, "different seeds should shuffle differently");
    }

    #[test]
    fn split_per_subject_keeps_subjects_whole() {
        let samples = tiny_samples(100, 10);
        let (train, val) = split_validation(&samples, 0.2, 7, SplitMode::PerSubject).unwrap();
        let train_subjects: HashSet<&str> =
            train.iter().map(|&i| samples[i].subject.as_str()).collect();
        let val_subjects: HashSet<&str> =
            val.iter().map(|&i| samples[i].subject.as_str()).collect();
        assert!(train_subjects.is_disjoint(&val_subjects));
        assert_eq!(val_subjects.len(), 2);
        assert_eq!(train.len() + val.len(), 100);
    }

    #[test]
    fn split_empty_errors() {
        assert!(matches!(
            split_validation(&[], 0.2, 0, SplitMode::PerImage),
            Err(DataError::EmptySplit)
        ));
    }

    #[test]
    fn phantom_is_deterministic_and_well_labeled() {
        let a = generate_phantom(7, 2, (32, 32, 16));
        let b = generate_phantom(7, 2, (32, 32, 16));
        assert_eq!(a.len(), 2);
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.id, sb.id);
            assert_eq!(sa.labels.data, sb.labels.data);
            for (ma, mb) in sa.modalities.iter().zip(&sb.modalities) {
                let bits_a: Vec<u32> = ma.data.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = mb.data.iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
        }
        let c = generate_phantom(8, 1, (32, 32, 16));
        assert_ne!(a[0].labels.data, c[0].labels.data);

        for s in &a {
            let allowed: HashSet<u32> =
                LABEL_VALUES.iter().map(|&l| f32::from(l).to_bits()).collect();
            for &v in &s.labels.data {
                assert!(allowed.contains(&v.to_bits()), "label {v}");
            }
            for m in &s.modalities {
                for &v in &m.data {
                    assert!((0.0..=255.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn phantom_tumor_regions_nested_and_adjacent() {
        for s in generate_phantom(21, 3, (64, 64, 32)) {
            let (xs, ys, zs) = s.labels.dims;
            let count = |label: u8| s.labels.data.iter().filter(|&&v| v == f32::from(label)).count();
            assert!(count(LABEL_NCR_NET) > 0, "{}: empty core", s.id);
            assert!(count(LABEL_ET) > 0, "{}: empty rim", s.id);
            assert!(count(LABEL_ED) > 0, "{}: empty edema", s.id);

            // Rim adjacency: some ET voxel touches an NCR voxel face-on.
            let mut adjacent = false;
            'outer: for z in 0..zs {
                for y in 0..ys {
                    for x in 0..xs {
                        if s.labels.at(x, y, z) != f32::from(LABEL_ET) {
                            continue;
                        }
                        let neighbors = [
                            (x.wrapping_sub(1), y, z),
                            (x + 1, y, z),
                            (x, y.wrapping_sub(1), z),
                            (x, y + 1, z),
                            (x, y, z.wrapping_sub(1)),
                            (x, y, z + 1),
                        ];
                        for (nx, ny, nz) in neighbors {
                            if nx < xs
                                && ny < ys
                                && nz < zs
                                && s.labels.at(nx, ny, nz) == f32::from(LABEL_NCR_NET)
                            {
                                adjacent = true;
                                break 'outer;
                            }
                        }
                    }
                }
            }
            assert!(adjacent, "{}: ET not adjacent to NCR", s.id);
        }
    }

    #[test]
    fn phantom_pipeline_yields_filtered_dataset() {
        let subjects = generate_phantom(3, 2, (32, 32, 16));
        let cfg = PreprocessConfig { rescale: false, remap: false, ..Default::default() };
        let ds = build_dataset(&subjects, &cfg, 3).unwrap();
        assert!(!ds.samples.is_empty());
        assert!(ds.manifest.train_count > 0);
        assert_eq!(ds.manifest.resolution, 32);
        assert_eq!(ds.manifest.train.len(), ds.manifest.train_count);
        // Central slices pass the 15% filter, extreme slices are dropped.
        let kept: usize = ds.manifest.train.len();
        assert!(kept < 2 * 16, "some boundary slices should fail the filter");
        let again = build_dataset(&subjects, &cfg, 3).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn container_round_trips_bit_exactly() {
        let subjects = generate_phantom(5, 1, (32, 32, 16));
        let cfg = PreprocessConfig { rescale: false, remap: false, ..Default::default() };
        let mut ds = build_dataset(&subjects, &cfg, 5).unwrap();
        ds.samples.truncate(10);
        ds.manifest.train.truncate(10);
        ds.manifest.train_count = ds.samples.len();
        ds.manifest.test.clear();
        ds.manifest.test_count = 0;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.z, b.z);
            let bits_a: Vec<u32> = a.channels.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.channels.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn container_detects_corruption_and_empty_ok() {
        let subjects = generate_phantom(6, 1, (32, 32, 16));
        let cfg = PreprocessConfig { rescale: false, remap: false, ..Default::default() };
        let ds = build_dataset(&subjects, &cfg, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(DataError::ContainerCorrupt(_))));

        let empty = Dataset {
            manifest: DatasetManifest {
                train: vec![],
                test: vec![],
                filter_fraction: 0.15,
                filter_threshold: 50.0,
                reference_channel: 0,
                rescale: "none".into(),
                resolution: 0,
                seed: 0,
                train_count: 0,
                test_count: 0,
            },
            samples: vec![],
        };
        let path = dir.path().join("empty.bin");
        write_dataset(&empty, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert!(back.samples.is_empty());
    }

    #[test]
    fn required_count_boundary() {
        assert_eq!(required_count(0.15, 57600), 8640);
        assert_eq!(required_count(0.15, 4096), 615); // 614.4 rounds up
        assert_eq!(required_count(0.5, 10), 5);
        assert_eq!(required_count(0.0, 100), 0);
    }
}

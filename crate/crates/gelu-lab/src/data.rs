//! Dataset ingestion: CIFAR-10/100 and STL-10 binary formats plus a
//! deterministic synthetic dataset for tests and offline runs.
//!
//! Pixels are scaled to [0,1] and standardized per channel with statistics
//! computed from the training split only.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A loaded dataset, already standardized.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub name: String,
    pub num_classes: usize,
    pub train_images: Tensor<T>,
    pub train_labels: Vec<usize>,
    pub test_images: Tensor<T>,
    pub test_labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

fn channel_stats<T: Scalar>(images: &Tensor<T>) -> ChannelStats {
    let n = images.shape()[0];
    let spatial: usize = images.shape()[2..].iter().product();
    let mut mean = [0.0f64; 3];
    let mut std = [1.0f64; 3];
    let per_channel = (n * spatial) as f64;
    for c in 0..3 {
        let mut s = 0.0f64;
        for img in 0..n {
            let base = (img * 3 + c) * spatial;
            for i in 0..spatial {
                s += images.data()[base + i].to_f64();
            }
        }
        let mu = s / per_channel;
        let mut v = 0.0f64;
        for img in 0..n {
            let base = (img * 3 + c) * spatial;
            for i in 0..spatial {
                let d = images.data()[base + i].to_f64() - mu;
                v += d * d;
            }
        }
        mean[c] = mu;
        std[c] = (v / per_channel).sqrt().max(1e-8);
    }
    ChannelStats { mean, std }
}

fn standardize<T: Scalar>(images: &mut Tensor<T>, stats: &ChannelStats) {
    let n = images.shape()[0];
    let spatial: usize = images.shape()[2..].iter().product();
    for img in 0..n {
        for c in 0..3 {
            let mu = T::from_f64(stats.mean[c]);
            let inv = T::from_f64(1.0 / stats.std[c]);
            let base = (img * 3 + c) * spatial;
            for i in 0..spatial {
                let v = images.data()[base + i];
                images.data_mut()[base + i] = (v - mu) * inv;
            }
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Ingestion {
                path: path.to_path_buf(),
                reason: "missing file".into(),
                offset: 0,
            }
        } else {
            Error::io(path, e)
        }
    })
}

/// Resolve `root` or the conventional subdirectory the archives unpack to.
fn resolve_root(root: &Path, subdir: &str, probe: &str) -> PathBuf {
    if root.join(probe).exists() {
        return root.to_path_buf();
    }
    let nested = root.join(subdir);
    if nested.join(probe).exists() {
        return nested;
    }
    root.to_path_buf()
}

// ---------------------------------------------------------------------------
// CIFAR-10 / CIFAR-100
// ---------------------------------------------------------------------------

const CIFAR_PIXELS: usize = 3072;

/// Parse records of `1 + label_bytes + 3072` layout; returns [0,1] images.
fn parse_cifar_file<T: Scalar>(
    path: &Path,
    label_bytes: usize,
    label_index: usize,
    num_classes: usize,
    images: &mut Vec<T>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let bytes = read_file(path)?;
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!(
                "truncated: {} bytes is not a multiple of the {}-byte record",
                bytes.len(),
                record
            ),
            offset: (bytes.len() - bytes.len() % record) as u64,
        });
    }
    for (rec, chunk) in bytes.chunks_exact(record).enumerate() {
        let label = chunk[label_index] as usize;
        if label >= num_classes {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "label {label} out of range [0, {num_classes}) in record {rec}"
                ),
            });
        }
        labels.push(label);
        images.extend(
            chunk[label_bytes..]
                .iter()
                .map(|&b| T::from_f64(b as f64 / 255.0)),
        );
    }
    Ok(())
}

fn cifar10_raw<T: Scalar>(root: &Path, split: Split) -> Result<(Tensor<T>, Vec<usize>)> {
    let root = resolve_root(root, "cifar-10-batches-bin", "test_batch.bin");
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| root.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![root.join("test_batch.bin")],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        parse_cifar_file(f, 1, 0, 10, &mut images, &mut labels)?;
    }
    let n = labels.len();
    Ok((Tensor::new(vec![n, 3, 32, 32], images)?, labels))
}

fn cifar100_raw<T: Scalar>(root: &Path, split: Split) -> Result<(Tensor<T>, Vec<usize>)> {
    let root = resolve_root(root, "cifar-100-binary", "train.bin");
    let file = match split {
        Split::Train => root.join("train.bin"),
        Split::Test => root.join("test.bin"),
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    // per record: coarse label byte, fine label byte, 3072 pixels; fine kept
    parse_cifar_file(&file, 2, 1, 100, &mut images, &mut labels)?;
    let n = labels.len();
    Ok((Tensor::new(vec![n, 3, 32, 32], images)?, labels))
}

// ---------------------------------------------------------------------------
// STL-10
// ---------------------------------------------------------------------------

const STL_SIDE: usize = 96;
const STL_IMAGE_BYTES: usize = 3 * STL_SIDE * STL_SIDE;

fn stl10_raw<T: Scalar>(root: &Path, split: Split) -> Result<(Tensor<T>, Vec<usize>)> {
    let root = resolve_root(root, "stl10_binary", "train_X.bin");
    let (x_name, y_name) = match split {
        Split::Train => ("train_X.bin", "train_y.bin"),
        Split::Test => ("test_X.bin", "test_y.bin"),
    };
    let x_path = root.join(x_name);
    let y_path = root.join(y_name);
    let xs = read_file(&x_path)?;
    let ys = read_file(&y_path)?;
    if xs.is_empty() || xs.len() % STL_IMAGE_BYTES != 0 {
        return Err(Error::Ingestion {
            path: x_path,
            reason: format!("truncated: {} bytes", xs.len()),
            offset: (xs.len() - xs.len() % STL_IMAGE_BYTES) as u64,
        });
    }
    let n = xs.len() / STL_IMAGE_BYTES;
    if ys.len() != n {
        return Err(Error::Format {
            path: y_path,
            reason: format!("{} labels for {} images", ys.len(), n),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for (i, &y) in ys.iter().enumerate() {
        if !(1..=10).contains(&y) {
            return Err(Error::Format {
                path: y_path.clone(),
                reason: format!("label {y} out of range 1..=10 in record {i}"),
            });
        }
        labels.push((y - 1) as usize); // remap 1..10 -> 0..9
    }
    // images are stored column-major per channel; transpose to row-major
    let mut images = vec![T::ZERO; n * STL_IMAGE_BYTES];
    for img in 0..n {
        let src = &xs[img * STL_IMAGE_BYTES..(img + 1) * STL_IMAGE_BYTES];
        for c in 0..3 {
            let plane = &src[c * STL_SIDE * STL_SIDE..(c + 1) * STL_SIDE * STL_SIDE];
            let dst_base = (img * 3 + c) * STL_SIDE * STL_SIDE;
            for row in 0..STL_SIDE {
                for col in 0..STL_SIDE {
                    images[dst_base + row * STL_SIDE + col] =
                        T::from_f64(plane[col * STL_SIDE + row] as f64 / 255.0);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, 3, STL_SIDE, STL_SIDE], images)?, labels))
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian class blobs rendered as images
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_n: usize,
    pub test_n: usize,
    pub height: usize,
    pub width: usize,
    /// Amplitude of the class prototype added to unit Gaussian pixel noise.
    pub signal: f64,
    /// Flip the prototype's sign per sample. Class means become zero, so the
    /// task stops being linearly separable and rewards depth.
    pub antipodal: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_n: 1024,
            test_n: 256,
            height: 16,
            width: 16,
            signal: 0.5,
            antipodal: false,
            seed: 7,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn synthetic_split<T: Scalar>(
    spec: &SyntheticSpec,
    prototypes: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Vec<usize>) {
    let dim = 3 * spec.height * spec.width;
    let mut images = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes; // balanced round-robin
        labels.push(class);
        let proto = &prototypes[class * dim..(class + 1) * dim];
        let sign = if spec.antipodal && rng.random::<bool>() {
            -1.0
        } else {
            1.0
        };
        for p in proto {
            images.push(T::from_f64(sign * spec.signal * p + normal(rng)));
        }
    }
    (
        Tensor::new(vec![n, 3, spec.height, spec.width], images).expect("sized above"),
        labels,
    )
}

impl<T: Scalar> Dataset<T> {
    pub fn cifar10(root: &Path) -> Result<Self> {
        let (mut train_images, train_labels) = cifar10_raw::<T>(root, Split::Train)?;
        let (mut test_images, test_labels) = cifar10_raw::<T>(root, Split::Test)?;
        let stats = channel_stats(&train_images);
        standardize(&mut train_images, &stats);
        standardize(&mut test_images, &stats);
        Ok(Dataset {
            name: "cifar10".into(),
            num_classes: 10,
            train_images,
            train_labels,
            test_images,
            test_labels,
        })
    }

    pub fn cifar100(root: &Path) -> Result<Self> {
        let (mut train_images, train_labels) = cifar100_raw::<T>(root, Split::Train)?;
        let (mut test_images, test_labels) = cifar100_raw::<T>(root, Split::Test)?;
        let stats = channel_stats(&train_images);
        standardize(&mut train_images, &stats);
        standardize(&mut test_images, &stats);
        Ok(Dataset {
            name: "cifar100".into(),
            num_classes: 100,
            train_images,
            train_labels,
            test_images,
            test_labels,
        })
    }

    pub fn stl10(root: &Path) -> Result<Self> {
        let (mut train_images, train_labels) = stl10_raw::<T>(root, Split::Train)?;
        let (mut test_images, test_labels) = stl10_raw::<T>(root, Split::Test)?;
        let stats = channel_stats(&train_images);
        standardize(&mut train_images, &stats);
        standardize(&mut test_images, &stats);
        Ok(Dataset {
            name: "stl10".into(),
            num_classes: 10,
            train_images,
            train_labels,
            test_images,
            test_labels,
        })
    }

    /// Deterministic Gaussian class blobs; no files involved.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        if spec.classes == 0 || spec.train_n == 0 || spec.test_n == 0 {
            return Err(Error::Config("synthetic dataset with zero size".into()));
        }
        let dim = 3 * spec.height * spec.width;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let prototypes: Vec<f64> = (0..spec.classes * dim).map(|_| normal(&mut rng)).collect();
        let (mut train_images, train_labels) =
            synthetic_split::<T>(spec, &prototypes, spec.train_n, &mut rng);
        let (mut test_images, test_labels) =
            synthetic_split::<T>(spec, &prototypes, spec.test_n, &mut rng);
        let stats = channel_stats(&train_images);
        standardize(&mut train_images, &stats);
        standardize(&mut test_images, &stats);
        Ok(Dataset {
            name: "synthetic".into(),
            num_classes: spec.classes,
            train_images,
            train_labels,
            test_images,
            test_labels,
        })
    }

    /// Deterministic subset of the training split (seeded shuffle, then take).
    pub fn subset(&mut self, train_n: Option<usize>, test_n: Option<usize>, seed: u64) {
        if let Some(n) = train_n {
            let (imgs, labels) = take_subset(&self.train_images, &self.train_labels, n, seed);
            self.train_images = imgs;
            self.train_labels = labels;
        }
        if let Some(n) = test_n {
            let (imgs, labels) =
                take_subset(&self.test_images, &self.test_labels, n, seed.wrapping_add(1));
            self.test_images = imgs;
            self.test_labels = labels;
        }
    }

    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }
}

fn take_subset<T: Scalar>(
    images: &Tensor<T>,
    labels: &[usize],
    n: usize,
    seed: u64,
) -> (Tensor<T>, Vec<usize>) {
    let total = labels.len();
    let n = n.min(total);
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..total).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    indices.truncate(n);
    let dim: usize = images.shape()[1..].iter().product();
    let mut out = Vec::with_capacity(n * dim);
    let mut out_labels = Vec::with_capacity(n);
    for &idx in &indices {
        out.extend_from_slice(&images.data()[idx * dim..(idx + 1) * dim]);
        out_labels.push(labels[idx]);
    }
    let mut shape = images.shape().to_vec();
    shape[0] = n;
    (
        Tensor::new(shape, out).expect("sized above"),
        out_labels,
    )
}

/// CIFAR-10 binary loader per the published layout; images standardized with
/// training-split statistics regardless of the requested split.
pub fn load_cifar10<T: Scalar>(root: &Path, split: Split) -> Result<(Tensor<T>, Vec<usize>)> {
    let ds = Dataset::<T>::cifar10(root)?;
    Ok(match split {
        Split::Train => (ds.train_images, ds.train_labels),
        Split::Test => (ds.test_images, ds.test_labels),
    })
}

/// CIFAR-100 loader; returns fine labels (100 classes).
pub fn load_cifar100<T: Scalar>(root: &Path, split: Split) -> Result<(Tensor<T>, Vec<usize>)> {
    let ds = Dataset::<T>::cifar100(root)?;
    Ok(match split {
        Split::Train => (ds.train_images, ds.train_labels),
        Split::Test => (ds.test_images, ds.test_labels),
    })
}

/// STL-10 loader; labels remapped to 0..=9, images transposed to row-major.
pub fn load_stl10<T: Scalar>(root: &Path, split: Split) -> Result<(Tensor<T>, Vec<usize>)> {
    let ds = Dataset::<T>::stl10(root)?;
    Ok(match split {
        Split::Train => (ds.train_images, ds.train_labels),
        Split::Test => (ds.test_images, ds.test_labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cifar10_tree(dir: &Path, records_per_file: usize) {
        let d = dir.join("cifar-10-batches-bin");
        std::fs::create_dir_all(&d).unwrap();
        let mut byte = 0u8;
        for f in (1..=5)
            .map(|i| format!("data_batch_{i}.bin"))
            .chain(["test_batch.bin".to_string()])
        {
            let mut file = std::fs::File::create(d.join(f)).unwrap();
            for rec in 0..records_per_file {
                file.write_all(&[(rec % 10) as u8]).unwrap();
                let pixels: Vec<u8> = (0..3072)
                    .map(|_| {
                        byte = byte.wrapping_add(7);
                        byte
                    })
                    .collect();
                file.write_all(&pixels).unwrap();
            }
        }
    }

    #[test]
    fn cifar10_round_trip_from_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test_batch.bin");
        let mut bytes = vec![3u8]; // label
        bytes.extend((0..3072).map(|i| (i % 251) as u8));
        bytes.push(9); // second record
        bytes.extend((0..3072).map(|i| (i % 13) as u8));
        std::fs::write(&path, &bytes).unwrap();

        let (imgs, labels) = cifar10_raw::<f64>(dir.path(), Split::Test).unwrap();
        assert_eq!(imgs.shape(), &[2, 3, 32, 32]);
        assert_eq!(labels, vec![3, 9]);
        // pixel-exact round trip at the [0,1] scale
        for i in 0..3072 {
            assert_eq!(imgs.data()[i], (i % 251) as f64 / 255.0);
            assert_eq!(imgs.data()[3072 + i], (i % 13) as f64 / 255.0);
        }
    }

    #[test]
    fn cifar10_full_tree_loads_and_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        write_cifar10_tree(dir.path(), 4);
        let ds = Dataset::<f32>::cifar10(dir.path()).unwrap();
        assert_eq!(ds.train_len(), 20); // 5 files x 4 records
        assert_eq!(ds.test_len(), 4);
        assert!(ds.train_labels.iter().all(|l| *l < 10));
        // training statistics standardized: near-zero channel means
        let stats = channel_stats(&ds.train_images);
        for c in 0..3 {
            assert!(stats.mean[c].abs() < 1e-6);
            assert!((stats.std[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cifar10_truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("test_batch.bin"), vec![0u8; 3073 + 100]).unwrap();
        let err = cifar10_raw::<f64>(dir.path(), Split::Test).unwrap_err();
        match err {
            Error::Ingestion { offset, .. } => assert_eq!(offset, 3073),
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn cifar10_missing_file_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            cifar10_raw::<f64>(dir.path(), Split::Train),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn cifar10_bad_label_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![10u8]; // label out of range
        bytes.extend(vec![0u8; 3072]);
        std::fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        assert!(matches!(
            cifar10_raw::<f64>(dir.path(), Split::Test),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn cifar100_fine_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for (coarse, fine) in [(2u8, 37u8), (11, 99)] {
            bytes.push(coarse);
            bytes.push(fine);
            bytes.extend(vec![128u8; 3072]);
        }
        std::fs::write(dir.path().join("train.bin"), &bytes).unwrap();
        std::fs::write(dir.path().join("test.bin"), &bytes).unwrap();
        let (imgs, labels) = cifar100_raw::<f64>(dir.path(), Split::Train).unwrap();
        assert_eq!(labels, vec![37, 99]); // fine labels kept
        assert_eq!(imgs.shape(), &[2, 3, 32, 32]);
    }

    #[test]
    fn stl10_transposes_column_major_planes() {
        let dir = tempfile::tempdir().unwrap();
        // one image; channel 0 holds pixel value = column index (column-major)
        let mut xs = vec![0u8; STL_IMAGE_BYTES];
        for col in 0..STL_SIDE {
            for row in 0..STL_SIDE {
                xs[col * STL_SIDE + row] = col as u8;
            }
        }
        std::fs::write(dir.path().join("train_X.bin"), &xs).unwrap();
        std::fs::write(dir.path().join("train_y.bin"), [5u8]).unwrap();
        let (imgs, labels) = stl10_raw::<f64>(dir.path(), Split::Train).unwrap();
        assert_eq!(imgs.shape(), &[1, 3, 96, 96]);
        assert_eq!(labels, vec![4]); // 1-based 5 -> 0-based 4
        // row-major now: position (row, col) must hold col/255
        for row in 0..STL_SIDE {
            for col in 0..STL_SIDE {
                assert_eq!(imgs.data()[row * STL_SIDE + col], col as f64 / 255.0);
            }
        }
    }

    #[test]
    fn stl10_size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train_X.bin"), vec![0u8; STL_IMAGE_BYTES]).unwrap();
        std::fs::write(dir.path().join("train_y.bin"), [1u8, 2]).unwrap();
        assert!(matches!(
            stl10_raw::<f64>(dir.path(), Split::Train),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = SyntheticSpec {
            classes: 4,
            train_n: 40,
            test_n: 12,
            height: 8,
            width: 8,
            signal: 0.5,
            antipodal: false,
            seed: 3,
        };
        let a = Dataset::<f32>::synthetic(&spec).unwrap();
        let b = Dataset::<f32>::synthetic(&spec).unwrap();
        assert_eq!(a.train_images.data(), b.train_images.data());
        assert_eq!(a.train_labels, b.train_labels);
        for class in 0..4 {
            assert_eq!(a.train_labels.iter().filter(|l| **l == class).count(), 10);
        }
    }

    #[test]
    fn test_split_uses_train_statistics_only() {
        // brighter test pixels stay brighter after standardization: the test
        // split must be standardized with the train split's statistics
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![1u8];
        rec.extend(vec![100u8; 3072]);
        for f in (1..=5).map(|i| format!("data_batch_{i}.bin")) {
            std::fs::write(dir.path().join(f), &rec).unwrap();
        }
        let mut test_rec = vec![2u8];
        test_rec.extend(vec![200u8; 3072]);
        std::fs::write(dir.path().join("test_batch.bin"), &test_rec).unwrap();
        let ds = Dataset::<f64>::cifar10(dir.path()).unwrap();
        // constant train channel: std clamps to 1e-8; the tiny accumulated
        // mean error is magnified by 1e8, so allow a loose band around 0
        for v in ds.train_images.data() {
            assert!(v.abs() < 1e-3, "{v}");
        }
        // test pixels sit far above the train mean
        for v in ds.test_images.data() {
            assert!(*v > 1.0);
        }
    }

    #[test]
    fn subset_is_seeded_and_sized() {
        let spec = SyntheticSpec {
            train_n: 64,
            test_n: 32,
            ..Default::default()
        };
        let mut a = Dataset::<f32>::synthetic(&spec).unwrap();
        let mut b = Dataset::<f32>::synthetic(&spec).unwrap();
        a.subset(Some(16), Some(8), 5);
        b.subset(Some(16), Some(8), 5);
        assert_eq!(a.train_len(), 16);
        assert_eq!(a.test_len(), 8);
        assert_eq!(a.train_labels, b.train_labels);
        assert_eq!(a.train_images.data(), b.train_images.data());
    }
}

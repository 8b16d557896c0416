use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_CLASSES: usize = 10;

/// Inputs and targets with matching row counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Samples {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::CountMismatch {
                images: inputs.rows(),
                labels: targets.rows(),
            });
        }
        Ok(Samples { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Samples {
        let idx: Vec<usize> = (start..end).collect();
        Samples {
            inputs: self.inputs.select_rows(&idx),
            targets: self.targets.select_rows(&idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Samples,
    pub validation: Samples,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.train.targets.cols()
    }

    /// First `train_size` rows for training, the next `val_size` for validation.
    pub fn split(samples: &Samples, train_size: usize, val_size: usize) -> Result<Dataset> {
        if train_size == 0 || train_size + val_size > samples.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot take {train_size} training and {val_size} validation rows from {}",
                samples.len()
            )));
        }
        Ok(Dataset {
            train: samples.slice(0, train_size),
            validation: samples.slice(train_size, train_size + val_size),
        })
    }
}

/// All `2^bits` binary patterns with the XOR of their bits as a single-column target.
/// Training and validation are the full truth table. `_rng` is accepted for signature
/// symmetry with other generators; rows come out in counting order.
pub fn gen_parity(bits: usize, _rng: &mut Rng) -> Result<Dataset> {
    if !(2..=10).contains(&bits) {
        return Err(Error::InvalidConfig(format!(
            "parity bits must be in 2..=10, got {bits}"
        )));
    }
    let rows = 1usize << bits;
    let mut inputs = Matrix::zeros(rows, bits);
    let mut targets = Matrix::zeros(rows, 1);
    for pattern in 0..rows {
        for b in 0..bits {
            // Most significant bit first.
            let bit = (pattern >> (bits - 1 - b)) & 1;
            inputs.set(pattern, b, bit as f64);
        }
        targets.set(pattern, 0, (pattern.count_ones() % 2) as f64);
    }
    let all = Samples { inputs, targets };
    Ok(Dataset {
        train: all.clone(),
        validation: all,
    })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = BufReader::new(file);
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("decompressing {}", path.display()), e))?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: (offset + 4) as u64,
            found: bytes.len() as u64,
        })
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Reads an IDX image/label pair (plain or gzip-compressed). Pixels are scaled to
/// `[0, 1]` and labels become one-hot rows over [`IDX_CLASSES`] classes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Samples> {
    let images = read_all(images_path)?;
    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixels = rows * cols;
    check_len(&images, 16 + count * pixels, images_path)?;

    let labels = read_all(labels_path)?;
    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    check_len(&labels, 8 + label_count, labels_path)?;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let inputs: Vec<f64> = images[16..16 + count * pixels]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let mut targets = Matrix::zeros(count, IDX_CLASSES);
    for (i, &label) in labels[8..8 + count].iter().enumerate() {
        if usize::from(label) >= IDX_CLASSES {
            return Err(Error::LabelOutOfRange {
                path: labels_path.to_path_buf(),
                index: i,
                label,
                classes: IDX_CLASSES,
            });
        }
        targets.set(i, usize::from(label), 1.0);
    }
    Samples::new(Matrix::from_vec(count, pixels, inputs)?, targets)
}

/// Serializes images (`count × rows·cols`, values in `[0, 255]`) and labels as IDX.
pub fn encode_idx(images: &[u8], count: usize, rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(images);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn xor_truth_table() {
        let d = gen_parity(2, &mut Rng::new(0)).unwrap();
        assert_eq!(
            d.train.inputs,
            Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]])
        );
        assert_eq!(d.train.targets.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(d.train, d.validation);
    }

    #[test]
    fn four_bit_parity_counts() {
        let d = gen_parity(4, &mut Rng::new(0)).unwrap();
        assert_eq!(d.train.len(), 16);
        assert_eq!(d.train.targets.sum(), 8.0);
        let row = (0..16)
            .find(|&r| d.train.inputs.row(r) == [1.0, 1.0, 1.0, 0.0])
            .unwrap();
        assert_eq!(d.train.targets.get(row, 0), 1.0);
        assert!(gen_parity(1, &mut Rng::new(0)).is_err());
        assert!(gen_parity(11, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn idx_single_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 51, 102, 255, 17, 34];
        let (img, lab) = encode_idx(&pixels, 1, 2, 3, &[3]);
        fs::write(dir.path().join("i"), img).unwrap();
        fs::write(dir.path().join("l"), lab).unwrap();
        let s = load_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap();
        assert_eq!(s.inputs.shape(), (1, 6));
        for (got, &raw) in s.inputs.as_slice().iter().zip(&pixels) {
            assert_eq!(*got, f64::from(raw) / 255.0);
        }
        let mut onehot = vec![0.0; 10];
        onehot[3] = 1.0;
        assert_eq!(s.targets.row(0), onehot.as_slice());
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        let (img, lab) = encode_idx(&[1, 2, 3, 4], 2, 1, 2, &[0]);
        fs::write(p("img"), &img).unwrap();
        fs::write(p("lab"), &lab).unwrap();
        assert!(matches!(
            load_idx(&p("img"), &p("lab")),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));

        fs::write(p("short"), &img[..img.len() - 1]).unwrap();
        assert!(matches!(load_idx(&p("short"), &p("lab")), Err(Error::Truncated { .. })));

        let mut bad = img.clone();
        bad[3] = 0x01;
        fs::write(p("bad"), bad).unwrap();
        assert!(matches!(
            load_idx(&p("bad"), &p("lab")),
            Err(Error::BadMagic { found: 0x801, .. })
        ));

        let (_, lab) = encode_idx(&[], 0, 0, 0, &[12, 1]);
        fs::write(p("lab12"), lab).unwrap();
        assert!(matches!(
            load_idx(&p("img"), &p("lab12")),
            Err(Error::LabelOutOfRange { label: 12, .. })
        ));

        assert!(matches!(load_idx(&p("missing"), &p("lab")), Err(Error::Io { .. })));
    }

    #[test]
    fn split_takes_consecutive_rows() {
        let d = gen_parity(3, &mut Rng::new(0)).unwrap();
        let s = Dataset::split(&d.train, 5, 3).unwrap();
        assert_eq!(s.train.len(), 5);
        assert_eq!(s.validation.inputs.row(0), d.train.inputs.row(5));
        assert!(Dataset::split(&d.train, 6, 3).is_err());
    }
}

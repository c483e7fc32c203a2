//! Desk-scale datasets: a two-bit synthetic task with an unidentifiable
//! concept relabeling, digit-image addition over an IDX-format pool, and
//! grid path planning, plus a versioned binary dataset cache.

use std::path::{Path, PathBuf};

use crate::diffusion::MaskedSeq;
use crate::error::{Error, Result};
use crate::program::{dijkstra_path, GridShortestPath, GridSpec, Program};
use crate::rng::RandomSource;

/// One supervised pair. Ground-truth concepts ride along for evaluation
/// only; training reads nothing but the features and the output.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y0: MaskedSeq,
    pub concepts: Option<MaskedSeq>,
}

/// A labeled dataset and the shape metadata shared by every example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub feat_dim: usize,
    pub concept_len: usize,
    pub concept_vocab: u32,
    pub output_len: usize,
    pub output_vocab: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Directory searched for digit image files. Defaults to `data/` under the
/// working directory; the `NESYDIFF_DATA_DIR` environment variable overrides.
pub fn data_dir() -> PathBuf {
    std::env::var_os("NESYDIFF_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Two hidden bits, features a noisy one-hot per bit, output their XOR.
/// Swapping the meaning of the two bit values everywhere fits the data
/// exactly as well as the true assignment, so concept identifiability is
/// out of reach by construction and only calibration can reveal it.
pub fn make_xor_task(n_examples: usize, noise_sigma: f64, rng: &mut RandomSource) -> Dataset {
    let mut examples = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let b1 = rng.below(2) as u32;
        let b2 = rng.below(2) as u32;
        let mut x = vec![0.0; 4];
        x[b1 as usize] = 1.0;
        x[2 + b2 as usize] = 1.0;
        for v in &mut x {
            *v += noise_sigma * rng.normal();
        }
        examples.push(LabeledExample {
            x,
            y0: MaskedSeq::from_values(2, &[u32::from(b1 != b2)]).expect("bit output"),
            concepts: Some(MaskedSeq::from_values(2, &[b1, b2]).expect("bit concepts")),
        });
    }
    Dataset {
        examples,
        feat_dim: 4,
        concept_len: 2,
        concept_vocab: 2,
        output_len: 1,
        output_vocab: 2,
    }
}

/// Grayscale digit images with labels; pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitPool {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl DigitPool {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(at..at + 4)
        .ok_or_else(|| Error::Data(format!("truncated {what} header")))?
        .try_into()
        .expect("sliced exactly four bytes");
    Ok(u32::from_be_bytes(bytes))
}

/// Loads a paired image/label file set in the big-endian IDX container
/// format and scales pixels to `[0, 1]`.
pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<DigitPool> {
    let img = std::fs::read(images_path)?;
    let magic = be_u32(&img, 0, "image file")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "bad image magic {magic:#010x}, want {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let n = be_u32(&img, 4, "image file")? as usize;
    let rows = be_u32(&img, 8, "image file")? as usize;
    let cols = be_u32(&img, 12, "image file")? as usize;
    let want = 16 + n * rows * cols;
    if img.len() < want {
        return Err(Error::Data(format!(
            "truncated image payload: {} bytes, want {want}",
            img.len()
        )));
    }
    if img.len() > want {
        return Err(Error::Data(format!(
            "image file has {} trailing bytes",
            img.len() - want
        )));
    }

    let lab = std::fs::read(labels_path)?;
    let magic = be_u32(&lab, 0, "label file")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Data(format!(
            "bad label magic {magic:#010x}, want {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let n_lab = be_u32(&lab, 4, "label file")? as usize;
    let want = 8 + n_lab;
    if lab.len() < want {
        return Err(Error::Data(format!(
            "truncated label payload: {} bytes, want {want}",
            lab.len()
        )));
    }
    if lab.len() > want {
        return Err(Error::Data(format!(
            "label file has {} trailing bytes",
            lab.len() - want
        )));
    }
    if n != n_lab {
        return Err(Error::Data(format!(
            "image/label count mismatch: {n} images, {n_lab} labels"
        )));
    }

    let images = img[16..]
        .chunks_exact(rows * cols)
        .map(|c| c.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    let labels = lab[8..].to_vec();
    for (i, &l) in labels.iter().enumerate() {
        if l > 9 {
            return Err(Error::Data(format!("label {l} at index {i} outside 0..=9")));
        }
    }
    Ok(DigitPool {
        rows,
        cols,
        images,
        labels,
    })
}

/// Writes a digit pool as an IDX image/label file pair; pixels are quantized
/// to bytes, so values on the `k/255` grid round-trip exactly.
pub fn write_idx_pair(images_path: &Path, labels_path: &Path, pool: &DigitPool) -> Result<()> {
    let mut img = Vec::with_capacity(16 + pool.len() * pool.rows * pool.cols);
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(pool.len() as u32).to_be_bytes());
    img.extend_from_slice(&(pool.rows as u32).to_be_bytes());
    img.extend_from_slice(&(pool.cols as u32).to_be_bytes());
    for image in &pool.images {
        if image.len() != pool.rows * pool.cols {
            return Err(Error::shape(format!(
                "image of {} pixels in a {}x{} pool",
                image.len(),
                pool.rows,
                pool.cols
            )));
        }
        for &p in image {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("pixel {p} outside [0, 1]")));
            }
            img.push((p * 255.0).round() as u8);
        }
    }
    let mut lab = Vec::with_capacity(8 + pool.len());
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(pool.len() as u32).to_be_bytes());
    lab.extend_from_slice(&pool.labels);
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}

const GLYPH_SIDE: usize = 28;

/// Clean 28x28 seven-segment rendering of a digit, intensities 0 or 1.
pub fn digit_glyph(digit: u8) -> Vec<f64> {
    assert!(digit <= 9, "digit {digit} outside 0..=9");
    // Segment order: top, top-right, bottom-right, bottom, bottom-left,
    // top-left, middle.
    const LIT: [[bool; 7]; 10] = [
        [true, true, true, true, true, true, false],
        [false, true, true, false, false, false, false],
        [true, true, false, true, true, false, true],
        [true, true, true, true, false, false, true],
        [false, true, true, false, false, true, true],
        [true, false, true, true, false, true, true],
        [true, false, true, true, true, true, true],
        [true, true, true, false, false, false, false],
        [true, true, true, true, true, true, true],
        [true, true, true, true, false, true, true],
    ];
    // Each segment is a (row range, column range) rectangle.
    const RECTS: [(usize, usize, usize, usize); 7] = [
        (3, 6, 8, 20),
        (4, 14, 19, 22),
        (14, 24, 19, 22),
        (22, 25, 8, 20),
        (14, 24, 6, 9),
        (4, 14, 6, 9),
        (12, 15, 8, 20),
    ];
    let mut pix = vec![0.0; GLYPH_SIDE * GLYPH_SIDE];
    for (seg, &(r0, r1, c0, c1)) in RECTS.iter().enumerate() {
        if !LIT[digit as usize][seg] {
            continue;
        }
        for r in r0..r1 {
            for c in c0..c1 {
                pix[r * GLYPH_SIDE + c] = 1.0;
            }
        }
    }
    pix
}

/// Procedurally rendered digit pool: `per_digit` noisy copies of each glyph,
/// labels balanced and interleaved. Stands in for a digit photo corpus when
/// none is on disk.
pub fn synthetic_digit_pool(
    per_digit: usize,
    noise_sigma: f64,
    rng: &mut RandomSource,
) -> DigitPool {
    let mut images = Vec::with_capacity(per_digit * 10);
    let mut labels = Vec::with_capacity(per_digit * 10);
    let glyphs: Vec<Vec<f64>> = (0..10).map(|d| digit_glyph(d as u8)).collect();
    for _ in 0..per_digit {
        for (d, glyph) in glyphs.iter().enumerate() {
            let image = glyph
                .iter()
                .map(|&p| (p + noise_sigma * rng.normal()).clamp(0.0, 1.0))
                .collect();
            images.push(image);
            labels.push(d as u8);
        }
    }
    DigitPool {
        rows: GLYPH_SIDE,
        cols: GLYPH_SIDE,
        images,
        labels,
    }
}

/// Sum-of-two-numbers task over a digit pool: each example concatenates
/// `2 * n_digits` digit images (most significant digit first per operand)
/// and labels them with the `n_digits + 1` digits of the sum. The pool is
/// permuted once and partitioned, so every source digit appears in exactly
/// one example; a remainder smaller than one example is dropped.
pub fn make_addition_task(
    pool: &DigitPool,
    n_digits: usize,
    rng: &mut RandomSource,
) -> Result<Dataset> {
    if n_digits == 0 {
        return Err(Error::domain("need at least one digit per operand"));
    }
    let per_example = 2 * n_digits;
    if pool.len() < per_example {
        return Err(Error::domain(format!(
            "digit pool of {} cannot fill an example of {per_example} digits",
            pool.len()
        )));
    }
    let prog = crate::program::DigitAddition::new(n_digits)?;
    let perm = rng.permutation(pool.len());
    let img_dim = pool.rows * pool.cols;
    let n_examples = pool.len() / per_example;
    let mut examples = Vec::with_capacity(n_examples);
    for chunk in perm.chunks_exact(per_example) {
        let mut x = Vec::with_capacity(per_example * img_dim);
        let mut digits = Vec::with_capacity(per_example);
        for &i in chunk {
            x.extend_from_slice(&pool.images[i]);
            digits.push(pool.labels[i] as u32);
        }
        let concepts = MaskedSeq::from_values(10, &digits)?;
        let y0 = prog.eval(&concepts)?;
        examples.push(LabeledExample {
            x,
            y0,
            concepts: Some(concepts),
        });
    }
    Ok(Dataset {
        examples,
        feat_dim: per_example * img_dim,
        concept_len: per_example,
        concept_vocab: 10,
        output_len: n_digits + 1,
        output_vocab: 10,
    })
}

/// Grid navigation task: hidden per-cell cost indices drawn uniformly,
/// features a noisy one-hot per cell, output the least-cost path mask.
pub fn make_path_task(
    spec: &GridSpec,
    n_examples: usize,
    noise_sigma: f64,
    rng: &mut RandomSource,
) -> Dataset {
    let prog = GridShortestPath::new(spec.clone());
    let levels = spec.costs.len();
    let cells = spec.cells();
    let mut examples = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let idx: Vec<u32> = (0..cells).map(|_| rng.below(levels) as u32).collect();
        let mut x = vec![0.0; cells * levels];
        for (cell, &k) in idx.iter().enumerate() {
            x[cell * levels + k as usize] = 1.0;
        }
        for v in &mut x {
            *v += noise_sigma * rng.normal();
        }
        let concepts = MaskedSeq::from_values(levels as u32, &idx).expect("indices below levels");
        let y0 = prog.eval(&concepts).expect("generated grid is valid");
        examples.push(LabeledExample {
            x,
            y0,
            concepts: Some(concepts),
        });
    }
    Dataset {
        examples,
        feat_dim: cells * levels,
        concept_len: cells,
        concept_vocab: levels as u32,
        output_len: cells,
        output_vocab: 2,
    }
}

/// Least cost from the top-left to the bottom-right cell of a generated
/// instance, for checking emitted labels against an independent planner.
pub fn instance_path_cost(spec: &GridSpec, concepts: &MaskedSeq) -> Result<f64> {
    let idx = concepts.values()?;
    let path = dijkstra_path(spec, &idx)?;
    spec.path_cost(&idx, &path)
}

const DATASET_MAGIC: &[u8; 4] = b"NSDS";
const DATASET_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data("truncated dataset file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Serializes a dataset to a versioned binary cache file.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.feat_dim as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.concept_len as u64).to_le_bytes());
    buf.extend_from_slice(&ds.concept_vocab.to_le_bytes());
    buf.extend_from_slice(&(ds.output_len as u64).to_le_bytes());
    buf.extend_from_slice(&ds.output_vocab.to_le_bytes());
    buf.extend_from_slice(&(ds.examples.len() as u64).to_le_bytes());
    for ex in &ds.examples {
        if ex.x.len() != ds.feat_dim {
            return Err(Error::shape(format!(
                "example with {} features in a dataset of {}",
                ex.x.len(),
                ds.feat_dim
            )));
        }
        for &v in &ex.x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let y = ex.y0.values()?;
        if y.len() != ds.output_len {
            return Err(Error::shape(format!(
                "output of {} positions in a dataset of {}",
                y.len(),
                ds.output_len
            )));
        }
        for v in y {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        match &ex.concepts {
            None => buf.push(0),
            Some(c) => {
                buf.push(1);
                let vals = c.values()?;
                if vals.len() != ds.concept_len {
                    return Err(Error::shape(format!(
                        "concepts of {} positions in a dataset of {}",
                        vals.len(),
                        ds.concept_len
                    )));
                }
                for v in vals {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Loads a dataset written by [`save_dataset`], refusing unknown versions,
/// truncation, and trailing bytes.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::Data("bad dataset magic".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset version {version}, want {DATASET_VERSION}"
        )));
    }
    let feat_dim = r.u64()? as usize;
    let concept_len = r.u64()? as usize;
    let concept_vocab = r.u32()?;
    let output_len = r.u64()? as usize;
    let output_vocab = r.u32()?;
    let n = r.u64()? as usize;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = Vec::with_capacity(feat_dim);
        for _ in 0..feat_dim {
            x.push(r.f64()?);
        }
        let mut y = Vec::with_capacity(output_len);
        for _ in 0..output_len {
            y.push(r.u32()?);
        }
        let y0 = MaskedSeq::from_values(output_vocab, &y)
            .map_err(|e| Error::Data(format!("invalid stored output: {e}")))?;
        let concepts = match r.take(1)?[0] {
            0 => None,
            1 => {
                let mut c = Vec::with_capacity(concept_len);
                for _ in 0..concept_len {
                    c.push(r.u32()?);
                }
                Some(
                    MaskedSeq::from_values(concept_vocab, &c)
                        .map_err(|e| Error::Data(format!("invalid stored concepts: {e}")))?,
                )
            }
            tag => return Err(Error::Data(format!("unknown concept tag {tag}"))),
        };
        examples.push(LabeledExample { x, y0, concepts });
    }
    if r.pos != buf.len() {
        return Err(Error::Data(format!(
            "dataset file has {} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(Dataset {
        examples,
        feat_dim,
        concept_len,
        concept_vocab,
        output_len,
        output_vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn xor_examples_satisfy_their_label() {
        let mut rng = RandomSource::from_seed(3);
        let ds = make_xor_task(200, 0.0, &mut rng);
        assert_eq!(ds.len(), 200);
        for ex in &ds.examples {
            // Noise-free features are exact one-hots, so the bits read back.
            let b1 = u32::from(ex.x[1] == 1.0);
            let b2 = u32::from(ex.x[3] == 1.0);
            assert_eq!(ex.x[b1 as usize], 1.0);
            assert_eq!(ex.x[2 + b2 as usize], 1.0);
            let truth = ex.concepts.as_ref().unwrap().values().unwrap();
            assert_eq!(truth, vec![b1, b2]);
            assert_eq!(ex.y0.values().unwrap(), vec![u32::from(b1 != b2)]);
        }
    }

    #[test]
    fn xor_labels_are_roughly_balanced() {
        let mut rng = RandomSource::from_seed(5);
        let ds = make_xor_task(10_000, 0.1, &mut rng);
        let ones: usize = ds
            .examples
            .iter()
            .map(|e| e.y0.values().unwrap()[0] as usize)
            .sum();
        let balance = ones as f64 / ds.len() as f64;
        assert!((balance - 0.5).abs() < 0.02, "label balance {balance}");
    }

    #[test]
    fn generators_are_deterministic_per_seed() {
        let a = make_xor_task(50, 0.3, &mut RandomSource::from_seed(7));
        let b = make_xor_task(50, 0.3, &mut RandomSource::from_seed(7));
        assert_eq!(a, b);
        let spec = GridSpec::new(3, GridSpec::DEFAULT_COSTS.to_vec(), false).unwrap();
        let a = make_path_task(&spec, 20, 0.5, &mut RandomSource::from_seed(9));
        let b = make_path_task(&spec, 20, 0.5, &mut RandomSource::from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn idx_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images.idx");
        let labels = dir.path().join("labels.idx");
        // Pixels on the k/255 grid survive byte quantization exactly.
        let pool = DigitPool {
            rows: 2,
            cols: 3,
            images: vec![
                vec![0.0, 1.0, 128.0 / 255.0, 17.0 / 255.0, 254.0 / 255.0, 3.0 / 255.0],
                vec![1.0, 1.0, 0.0, 0.0, 77.0 / 255.0, 200.0 / 255.0],
            ],
            labels: vec![7, 0],
        };
        write_idx_pair(&images, &labels, &pool).unwrap();
        let back = load_idx_pair(&images, &labels).unwrap();
        assert_eq!(back, pool);
    }

    #[test]
    fn idx_loader_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images.idx");
        let labels = dir.path().join("labels.idx");
        let pool = synthetic_digit_pool(1, 0.0, &mut RandomSource::from_seed(1));
        write_idx_pair(&images, &labels, &pool).unwrap();

        let good_img = std::fs::read(&images).unwrap();
        let good_lab = std::fs::read(&labels).unwrap();

        let mut bad = good_img.clone();
        bad[3] = 0x99;
        std::fs::write(&images, &bad).unwrap();
        let err = load_idx_pair(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("image magic"), "{err}");

        std::fs::write(&images, &good_img[..good_img.len() - 5]).unwrap();
        let err = load_idx_pair(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("truncated image"), "{err}");

        let mut trailing = good_img.clone();
        trailing.push(0);
        std::fs::write(&images, &trailing).unwrap();
        let err = load_idx_pair(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");

        std::fs::write(&images, &good_img).unwrap();
        let mut bad = good_lab.clone();
        bad[3] = 0x99;
        std::fs::write(&labels, &bad).unwrap();
        let err = load_idx_pair(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("label magic"), "{err}");

        // One label fewer than images: rewrite with a smaller count.
        let mut short = Vec::new();
        short.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        short.extend_from_slice(&(pool.len() as u32 - 1).to_be_bytes());
        short.extend_from_slice(&good_lab[8..good_lab.len() - 1]);
        std::fs::write(&labels, &short).unwrap();
        let err = load_idx_pair(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn synthetic_digits_are_separable_by_nearest_glyph() {
        let mut rng = RandomSource::from_seed(11);
        let pool = synthetic_digit_pool(3, 0.1, &mut rng);
        assert_eq!(pool.len(), 30);
        let glyphs: Vec<Vec<f64>> = (0..10).map(|d| digit_glyph(d as u8)).collect();
        for (image, &label) in pool.images.iter().zip(&pool.labels) {
            let nearest = (0..10)
                .min_by(|&a, &b| {
                    let da: f64 = glyphs[a]
                        .iter()
                        .zip(image)
                        .map(|(g, p)| (g - p) * (g - p))
                        .sum();
                    let db: f64 = glyphs[b]
                        .iter()
                        .zip(image)
                        .map(|(g, p)| (g - p) * (g - p))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest as u8, label);
        }
    }

    #[test]
    fn addition_uses_each_digit_exactly_once() {
        let mut rng = RandomSource::from_seed(13);
        let pool = synthetic_digit_pool(4, 0.05, &mut rng);
        let ds = make_addition_task(&pool, 2, &mut rng).unwrap();
        assert_eq!(ds.len(), 10);
        let mut emitted = [0usize; 10];
        for ex in &ds.examples {
            for v in ex.concepts.as_ref().unwrap().values().unwrap() {
                emitted[v as usize] += 1;
            }
        }
        // The pool holds four of each digit; partitioning must preserve the
        // multiset.
        assert_eq!(emitted, [4; 10]);
    }

    #[test]
    fn addition_drops_only_the_indivisible_remainder() {
        let mut rng = RandomSource::from_seed(17);
        let pool = synthetic_digit_pool(1, 0.0, &mut rng);
        let ds = make_addition_task(&pool, 2, &mut rng).unwrap();
        // Ten digits in groups of four: two examples, two digits unused.
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn addition_outputs_are_grade_school_sums() {
        let mut rng = RandomSource::from_seed(19);
        let pool = synthetic_digit_pool(6, 0.05, &mut rng);
        for n_digits in [1usize, 2] {
            let ds = make_addition_task(&pool, n_digits, &mut rng).unwrap();
            for ex in &ds.examples {
                let digits = ex.concepts.as_ref().unwrap().values().unwrap();
                let number = |ds: &[u32]| ds.iter().fold(0u64, |acc, &d| acc * 10 + d as u64);
                let sum = number(&digits[..n_digits]) + number(&digits[n_digits..]);
                assert_eq!(number(&ex.y0.values().unwrap()), sum);
                assert_eq!(ex.x.len(), 2 * n_digits * 28 * 28);
            }
        }
    }

    #[test]
    fn addition_rejects_a_pool_smaller_than_one_example() {
        let mut rng = RandomSource::from_seed(23);
        let pool = DigitPool {
            rows: 1,
            cols: 1,
            images: vec![vec![0.5]],
            labels: vec![3],
        };
        assert!(matches!(
            make_addition_task(&pool, 1, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn path_labels_match_the_brute_force_planner() {
        let spec = GridSpec::new(3, GridSpec::DEFAULT_COSTS.to_vec(), false).unwrap();
        let mut rng = RandomSource::from_seed(29);
        let ds = make_path_task(&spec, 25, 0.0, &mut rng);
        for ex in &ds.examples {
            let concepts = ex.concepts.as_ref().unwrap();
            let idx = concepts.values().unwrap();
            // Noise-free features are exact one-hots of the cost indices.
            for (cell, &k) in idx.iter().enumerate() {
                assert_eq!(ex.x[cell * 5 + k as usize], 1.0);
            }
            // Both corner cells sit on every path.
            let y = ex.y0.values().unwrap();
            assert_eq!(y[0], 1);
            assert_eq!(y[spec.cells() - 1], 1);
            let cost = instance_path_cost(&spec, concepts).unwrap();
            let oracle_cost = oracle::brute_force_shortest_path(&spec, &idx).unwrap();
            assert!((cost - oracle_cost).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_cache_round_trips_and_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.nsds");
        let mut rng = RandomSource::from_seed(31);
        let ds = make_xor_task(17, 0.2, &mut rng);
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(load_dataset(&path).unwrap_err().to_string().contains("magic"));

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(load_dataset(&path)
            .unwrap_err()
            .to_string()
            .contains("version"));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(load_dataset(&path)
            .unwrap_err()
            .to_string()
            .contains("truncated"));

        let mut bad = good.clone();
        bad.extend_from_slice(&[1, 2]);
        std::fs::write(&path, &bad).unwrap();
        assert!(load_dataset(&path)
            .unwrap_err()
            .to_string()
            .contains("trailing"));
    }

    #[test]
    fn data_dir_honors_the_environment_override() {
        // Read-only check against the ambient environment: with no override
        // the default is relative, with one it echoes the variable.
        match std::env::var_os("NESYDIFF_DATA_DIR") {
            None => assert_eq!(data_dir(), PathBuf::from("data")),
            Some(v) => assert_eq!(data_dir(), PathBuf::from(v)),
        }
    }
}

//! FER-2013 ingestion: CSV parsing, usage-based splitting, normalization,
//! one-hot targets and seeded mini-batching.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

/// Side length of a FER-2013 image.
pub const IMAGE_SIDE: usize = 48;
/// Pixels per FER-2013 image.
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Class names in label order.
pub const EMOTIONS: [&str; NUM_CLASSES] =
    ["angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"];

pub fn emotion_name(label: usize) -> &'static str {
    EMOTIONS.get(label).copied().unwrap_or("?")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Usage {
    Training,
    PublicTest,
    PrivateTest,
}

impl FromStr for Usage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Training" => Ok(Usage::Training),
            "PublicTest" => Ok(Usage::PublicTest),
            "PrivateTest" => Ok(Usage::PrivateTest),
            other => Err(format!("unknown usage {other:?}")),
        }
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Usage::Training => "Training",
            Usage::PublicTest => "PublicTest",
            Usage::PrivateTest => "PrivateTest",
        })
    }
}

/// One CSV row: label, 48×48 row-major pixels, optional usage tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FerRecord {
    pub emotion: u8,
    pub pixels: Vec<u8>,
    pub usage: Option<Usage>,
}

impl FerRecord {
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * IMAGE_SIDE + col]
    }
}

fn parse_pixels(field: &str, row: usize) -> Result<Vec<u8>> {
    let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
    for token in field.split_ascii_whitespace() {
        let value: u32 = token.parse().map_err(|_| Error::Csv {
            row,
            msg: format!("pixel {} is not an integer: {token:?}", pixels.len()),
        })?;
        let value = u8::try_from(value).map_err(|_| Error::Csv {
            row,
            msg: format!("pixel {} = {value} exceeds 255", pixels.len()),
        })?;
        pixels.push(value);
    }
    if pixels.len() != IMAGE_PIXELS {
        return Err(Error::Csv {
            row,
            msg: format!("expected {IMAGE_PIXELS} pixel values, found {}", pixels.len()),
        });
    }
    Ok(pixels)
}

fn unquote(field: &str) -> &str {
    let f = field.trim();
    f.strip_prefix('"')
        .and_then(|f| f.strip_suffix('"'))
        .unwrap_or(f)
}

/// Parse a FER-2013 CSV stream. The header must be `emotion,pixels,Usage`
/// (or `emotion,pixels` for files without a usage column). Rows are
/// numbered from 1 with the header as row 1.
pub fn parse_fer_csv(reader: impl BufRead) -> Result<Vec<FerRecord>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::Csv { row: 1, msg: "missing header".into() }),
    };
    let header = header.trim_start_matches('\u{feff}').trim_end();
    let columns: Vec<&str> = header.split(',').map(unquote).collect();
    let has_usage = match columns.as_slice() {
        ["emotion", "pixels", "Usage"] => true,
        ["emotion", "pixels"] => false,
        _ => {
            return Err(Error::Csv {
                row: 1,
                msg: format!("expected header `emotion,pixels,Usage`, found {header:?}"),
            })
        }
    };
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Csv {
                row,
                msg: format!("expected {} columns, found {}", columns.len(), fields.len()),
            });
        }
        let emotion_field = unquote(fields[0]);
        let emotion: u8 = emotion_field
            .parse()
            .ok()
            .filter(|&e: &u8| (e as usize) < NUM_CLASSES)
            .ok_or_else(|| Error::Csv {
                row,
                msg: format!("emotion {emotion_field:?} is not in 0..=6"),
            })?;
        let pixels = parse_pixels(unquote(fields[1]), row)?;
        let usage = if has_usage {
            Some(unquote(fields[2]).parse().map_err(|msg| Error::Csv { row, msg })?)
        } else {
            None
        };
        records.push(FerRecord {
            emotion,
            pixels,
            usage,
        });
    }
    Ok(records)
}

/// Write records in the FER-2013 CSV layout.
pub fn write_fer_csv(records: &[FerRecord], mut out: impl Write) -> std::io::Result<()> {
    let with_usage = records.iter().all(|r| r.usage.is_some());
    if with_usage {
        writeln!(out, "emotion,pixels,Usage")?;
    } else {
        writeln!(out, "emotion,pixels")?;
    }
    for r in records {
        write!(out, "{},", r.emotion)?;
        for (i, p) in r.pixels.iter().enumerate() {
            if i > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{p}")?;
        }
        match r.usage {
            Some(u) if with_usage => writeln!(out, ",{u}")?,
            _ => writeln!(out)?,
        }
    }
    Ok(())
}

/// Pixel value to the `[0, 1]` training range.
pub fn normalize(pixel: u8) -> f32 {
    pixel as f32 / 255.0
}

/// Inverse of [`normalize`], rounding to the nearest gray level.
pub fn denormalize(value: f32) -> u8 {
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `e_label` over the seven classes.
pub fn one_hot(label: usize) -> Result<Tensor<f32>> {
    if label >= NUM_CLASSES {
        return Err(Error::LabelOutOfRange(label));
    }
    let mut t = Tensor::zeros(&[NUM_CLASSES]);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// Images with integer labels. Pixels are stored raw and normalized on access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    /// Position of each sample in the source record list.
    ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(height: usize, width: usize) -> Self {
        LabeledDataset {
            height,
            width,
            pixels: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    /// All records in order, ids are record positions.
    pub fn from_records(records: &[FerRecord]) -> Self {
        Self::from_indexed(records.iter().enumerate())
    }

    fn from_indexed<'a>(records: impl Iterator<Item = (usize, &'a FerRecord)>) -> Self {
        let mut ds = LabeledDataset::new(IMAGE_SIDE, IMAGE_SIDE);
        for (id, r) in records {
            ds.push_with_id(&r.pixels, r.emotion as usize, id)
                .expect("records are validated on parse");
        }
        ds
    }

    pub fn push(&mut self, pixels: &[u8], label: usize) -> Result<()> {
        let id = self.len();
        self.push_with_id(pixels, label, id)
    }

    fn push_with_id(&mut self, pixels: &[u8], label: usize, id: usize) -> Result<()> {
        if pixels.len() != self.height * self.width {
            return Err(Error::shape(
                "dataset",
                format!(
                    "image has {} pixels, dataset images are {}x{}",
                    pixels.len(),
                    self.height,
                    self.width
                ),
            ));
        }
        if label >= NUM_CLASSES {
            return Err(Error::LabelOutOfRange(label));
        }
        self.pixels.extend_from_slice(pixels);
        self.labels.push(label as u8);
        self.ids.push(id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self, index: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[index * n..(index + 1) * n]
    }

    /// Normalized `[1, H, W]` image.
    pub fn image(&self, index: usize) -> Tensor<f32> {
        let data = self.pixels(index).iter().map(|&p| normalize(p)).collect();
        Tensor::new(&[1, self.height, self.width], data).expect("consistent dims")
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    pub fn onehot(&self, index: usize) -> Tensor<f32> {
        one_hot(self.label(index)).expect("labels validated on insert")
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut ds = LabeledDataset::new(self.height, self.width);
        for &i in indices {
            ds.push_with_id(self.pixels(i), self.label(i), self.ids[i])
                .expect("same dims");
        }
        ds
    }

    /// First `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Stack samples at `indices` into a `[B, 1, H, W]` batch with `[B, 7]`
    /// targets. Panics if `indices` is empty.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        assert!(!indices.is_empty(), "empty batch");
        let (h, w) = (self.height, self.width);
        let mut images = Vec::with_capacity(indices.len() * h * w);
        let mut onehots = vec![0.0f32; indices.len() * NUM_CLASSES];
        let mut labels = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            images.extend(self.pixels(i).iter().map(|&p| normalize(p)));
            onehots[b * NUM_CLASSES + self.label(i)] = 1.0;
            labels.push(self.label(i));
        }
        let n = indices.len();
        Batch {
            images: Tensor::new(&[n, 1, h, w], images).expect("consistent dims"),
            onehots: Tensor::new(&[n, NUM_CLASSES], onehots).expect("consistent dims"),
            labels,
            indices: indices.to_vec(),
        }
    }
}

/// Training = usage `Training`; test = `PublicTest` ∪ `PrivateTest`.
pub fn split_dataset(records: &[FerRecord]) -> Result<(LabeledDataset, LabeledDataset)> {
    if let Some(row) = records.iter().position(|r| r.usage.is_none()) {
        return Err(Error::InvalidConfig(format!(
            "record {row} has no usage tag; use random_split for usage-less files"
        )));
    }
    let train = LabeledDataset::from_indexed(
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.usage == Some(Usage::Training)),
    );
    let test = LabeledDataset::from_indexed(
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.usage != Some(Usage::Training)),
    );
    Ok((train, test))
}

/// Seeded shuffle split with `round(train_fraction * n)` training samples.
pub fn random_split(
    records: &[FerRecord],
    train_fraction: f64,
    seed: u64,
) -> (LabeledDataset, LabeledDataset) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction.clamp(0.0, 1.0) * records.len() as f64).round() as usize;
    let (train_idx, test_idx) = order.split_at(cut);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        LabeledDataset::from_indexed(idx.into_iter().map(|i| (i, &records[i])))
    };
    (pick(train_idx), pick(test_idx))
}

/// Usage split when every record is tagged, otherwise a seeded 80:20 split.
pub fn split_or_random(records: &[FerRecord], seed: u64) -> (LabeledDataset, LabeledDataset) {
    match split_dataset(records) {
        Ok(split) => split,
        Err(_) => random_split(records, 0.8, seed),
    }
}

pub fn class_histogram(dataset: &LabeledDataset) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for l in dataset.labels() {
        counts[l] += 1;
    }
    counts
}

pub fn record_histogram(records: &[FerRecord]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for r in records {
        counts[r.emotion as usize] += 1;
    }
    counts
}

/// `label,emotion,count,fraction` rows.
pub fn write_histogram_csv(counts: &[usize; NUM_CLASSES], mut out: impl Write) -> std::io::Result<()> {
    let total: usize = counts.iter().sum();
    writeln!(out, "label,emotion,count,fraction")?;
    for (label, &count) in counts.iter().enumerate() {
        let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        writeln!(out, "{label},{},{count},{frac:.6}", EMOTIONS[label])?;
    }
    Ok(())
}

/// A stacked mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 1, H, W]`, normalized.
    pub images: Tensor<f32>,
    /// `[B, 7]`.
    pub onehots: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Dataset positions of the samples.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One epoch of shuffled mini-batches; the final batch may be short.
pub struct Batches<'a> {
    dataset: &'a LabeledDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Batches<'a> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Seeded permutation of the dataset cut into batches of `batch_size`.
pub fn batches(dataset: &LabeledDataset, batch_size: usize, seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Batches {
        dataset,
        order,
        batch_size,
        pos: 0,
    })
}

/// Deterministic FER-shaped data: per-class stripe patterns with noise.
pub mod synthetic {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{FerRecord, Usage, IMAGE_SIDE};
    use crate::NUM_CLASSES;

    /// Full-size class counts of FER-2013, in label order.
    pub const FER2013_CLASS_COUNTS: [usize; NUM_CLASSES] = [4953, 547, 5121, 8989, 6077, 4002, 6198];
    /// Usage counts of FER-2013: Training, PublicTest, PrivateTest.
    pub const FER2013_USAGE_COUNTS: [usize; 3] = [28_709, 3_589, 3_589];

    /// A single synthetic face-sized image for `label`.
    pub fn image(label: usize, rng: &mut impl Rng) -> Vec<u8> {
        let s = IMAGE_SIDE as f32;
        let angle = label as f32 * std::f32::consts::PI / NUM_CLASSES as f32;
        let freq = 2.0 + label as f32 * 0.5;
        let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let (ca, sa) = (angle.cos(), angle.sin());
        let mut px = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                let (x, y) = (c as f32 / s, r as f32 / s);
                let t = (x * ca + y * sa) * freq * std::f32::consts::TAU + phase;
                let noise: f32 = rng.random_range(-30.0..30.0);
                let v = 128.0 + 80.0 * t.sin() + noise;
                px.push(v.clamp(0.0, 255.0) as u8);
            }
        }
        px
    }

    /// `n` records with labels drawn uniformly and usage left empty.
    pub fn records(n: usize, seed: u64) -> Vec<FerRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let label = rng.random_range(0..NUM_CLASSES);
                FerRecord {
                    emotion: label as u8,
                    pixels: image(label, &mut rng),
                    usage: None,
                }
            })
            .collect()
    }

    /// Records matching the published FER-2013 composition exactly: class
    /// counts and usage counts, with labels shuffled across usages.
    pub fn fer2013_replica(seed: u64) -> Vec<FerRecord> {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = FER2013_CLASS_COUNTS
            .iter()
            .enumerate()
            .flat_map(|(l, &n)| std::iter::repeat_n(l, n))
            .collect();
        labels.shuffle(&mut rng);
        let usages = [Usage::Training, Usage::PublicTest, Usage::PrivateTest];
        let usage_iter = usages
            .iter()
            .zip(FER2013_USAGE_COUNTS)
            .flat_map(|(&u, n)| std::iter::repeat_n(u, n));
        labels
            .into_iter()
            .zip(usage_iter)
            .map(|(label, usage)| FerRecord {
                emotion: label as u8,
                pixels: image(label, &mut rng),
                usage: Some(usage),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(emotion: &str, pixels: &str, usage: &str) -> String {
        format!("{emotion},{pixels},{usage}\n")
    }

    fn counting_pixels() -> String {
        (0..IMAGE_PIXELS).map(|i| (i % 256).to_string()).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn parses_row_major() {
        let csv = format!("emotion,pixels,Usage\r\n{}", row("3", &counting_pixels(), "Training"));
        let recs = parse_fer_csv(csv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].emotion, 3);
        assert_eq!(recs[0].usage, Some(Usage::Training));
        for r in [0, 1, 5, 47] {
            for c in [0, 2, 47] {
                assert_eq!(recs[0].pixel(r, c) as usize, (48 * r + c) % 256);
            }
        }
    }

    #[test]
    fn short_row_names_row() {
        let short: String = (0..2303).map(|_| "0").collect::<Vec<_>>().join(" ");
        let csv = format!(
            "emotion,pixels,Usage\n{}{}",
            row("0", &counting_pixels(), "Training"),
            row("1", &short, "Training")
        );
        let err = parse_fer_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Csv { row: 3, .. }), "{err}");
        assert!(err.to_string().contains("2303"));
    }

    #[test]
    fn rejects_malformed_rows() {
        let px = counting_pixels();
        let cases = [
            row("7", &px, "Training"),
            row("x", &px, "Training"),
            row("0", &px.replacen("0", "256", 1), "Training"),
            row("0", &px.replacen("1", "a", 1), "Training"),
            row("0", &px, "Validation"),
            format!("0,{px}\n"),
        ];
        for case in cases {
            let csv = format!("emotion,pixels,Usage\n{case}");
            assert!(matches!(parse_fer_csv(csv.as_bytes()), Err(Error::Csv { row: 2, .. })));
        }
        assert!(parse_fer_csv("a,b,c\n".as_bytes()).is_err());
        assert!(parse_fer_csv("".as_bytes()).is_err());
    }

    #[test]
    fn usage_less_files_parse() {
        let csv = format!("emotion,pixels\n0,\"{}\"\n", counting_pixels());
        let recs = parse_fer_csv(csv.as_bytes()).unwrap();
        assert_eq!(recs[0].usage, None);
        assert!(split_dataset(&recs).is_err());
    }

    #[test]
    fn write_then_parse() {
        let recs = synthetic::records(5, 1);
        let mut buf = Vec::new();
        write_fer_csv(&recs, &mut buf).unwrap();
        assert_eq!(parse_fer_csv(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn split_is_partition() {
        let mut recs = synthetic::records(20, 2);
        for (i, r) in recs.iter_mut().enumerate() {
            r.usage = Some([Usage::Training, Usage::PublicTest, Usage::PrivateTest][i % 3]);
        }
        let (train, test) = split_dataset(&recs).unwrap();
        assert_eq!(train.len() + test.len(), recs.len());
        assert_eq!(train.len(), 7);
        assert!(train.ids().iter().all(|id| !test.ids().contains(id)));
        let (a, b) = split_dataset(&[]).unwrap();
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn random_split_sizes() {
        let recs = synthetic::records(50, 3);
        let (train, test) = random_split(&recs, 0.8, 4);
        assert_eq!((train.len(), test.len()), (40, 10));
        assert!(train.ids().iter().all(|id| !test.ids().contains(id)));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(3).unwrap().data(), &[0., 0., 0., 1., 0., 0., 0.]);
        assert_eq!(one_hot(0).unwrap().data(), &[1., 0., 0., 0., 0., 0., 0.]);
        for l in 0..7 {
            assert_eq!(one_hot(l).unwrap().sum(), 1.0);
        }
        assert!(matches!(one_hot(7), Err(Error::LabelOutOfRange(7))));
    }

    #[test]
    fn histogram_examples() {
        let empty = LabeledDataset::new(48, 48);
        assert_eq!(class_histogram(&empty), [0; 7]);
        let ds = LabeledDataset::from_records(&synthetic::records(30, 5));
        assert_eq!(class_histogram(&ds).iter().sum::<usize>(), 30);
        let mut out = Vec::new();
        write_histogram_csv(&class_histogram(&ds), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("label,emotion,count,fraction\n0,angry,"));
    }

    #[test]
    fn normalization_round_trip() {
        assert_eq!(normalize(0), 0.0);
        assert_eq!(normalize(255), 1.0);
        for p in 0..=255u8 {
            let back = normalize(p) * 255.0;
            assert!((back - p as f32).abs() <= 255.0 / 510.0);
            assert_eq!(denormalize(normalize(p)), p);
        }
    }

    #[test]
    fn batch_sizes_and_order() {
        let ds = LabeledDataset::from_records(&synthetic::records(10, 6));
        let sizes: Vec<usize> = batches(&ds, 4, 1).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let first: Vec<usize> = batches(&ds, 4, 1).unwrap().flat_map(|b| b.indices).collect();
        let again: Vec<usize> = batches(&ds, 4, 1).unwrap().flat_map(|b| b.indices).collect();
        let other: Vec<usize> = batches(&ds, 4, 2).unwrap().flat_map(|b| b.indices).collect();
        assert_eq!(first, again);
        assert_ne!(first, other);
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert!(batches(&ds, 0, 1).is_err());

        let b = ds.gather(&[3, 1]);
        assert_eq!(b.images.shape(), &[2, 1, 48, 48]);
        assert_eq!(b.onehots.shape(), &[2, 7]);
        assert_eq!(b.onehots.data()[ds.label(3)], 1.0);
    }

    #[test]
    fn replica_matches_published_counts() {
        let recs = synthetic::fer2013_replica(0);
        assert_eq!(recs.len(), 35_887);
        assert_eq!(record_histogram(&recs)[1], 547);
        let (train, test) = split_dataset(&recs).unwrap();
        assert_eq!((train.len(), test.len()), (28_709, 7_178));
    }
}

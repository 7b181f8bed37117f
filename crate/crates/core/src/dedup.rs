//! Near-duplicate detection for gallery exclusion.
//!
//! Consecutive film frames are often nearly identical, which makes retrieval
//! trivial if a query's neighbouring frames sit in the gallery. Each image
//! gets a 64-bit DCT perceptual hash; images within a Hamming threshold are
//! linked, and the connected components become exclusion groups.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side of the square the luma plane is resampled to before the DCT.
pub const RESAMPLE_SIZE: usize = 32;
/// Side of the low-frequency coefficient block that forms the hash.
pub const BLOCK_SIZE: usize = 8;
/// Default linking threshold, in bits out of 64.
pub const DEFAULT_THRESHOLD: u32 = 10;

/// Coefficients are snapped to this grid before binarization so that
/// rounding noise on coefficients that are analytically zero cannot flip
/// bits.
const COEFF_QUANTUM: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("image is {width}x{height}; both sides must be at least 8")]
    TooSmall { width: u32, height: u32 },
    #[error("cannot decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("threshold {0} exceeds 64 bits")]
    ThresholdOutOfRange(u32),
    #[error("image id `{0}` appears more than once")]
    DuplicateImageId(String),
    #[error("invalid hash `{value}` for `{image_id}`")]
    InvalidHash { image_id: String, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PHash64 {
    pub image_id: String,
    pub bits: u64,
}

impl PHash64 {
    pub fn new(image_id: impl Into<String>, bits: u64) -> Self {
        Self {
            image_id: image_id.into(),
            bits,
        }
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }

    pub fn distance(&self, other: &PHash64) -> u32 {
        hamming(self.bits, other.bits)
    }
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// BT.601 luma of every pixel, row-major.
fn luma_plane(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
fn resample(plane: &[f64], width: usize, height: usize, size: usize) -> Vec<f64> {
    let axis = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / size as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let (y0, y1, fy) = axis(y, height);
        for x in 0..size {
            let (x0, x1, fx) = axis(x, width);
            let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
            let bottom = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
            out[y * size + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Orthonormal DCT-II basis rows for the first `BLOCK_SIZE` frequencies.
fn dct_basis() -> Vec<[f64; RESAMPLE_SIZE]> {
    let n = RESAMPLE_SIZE as f64;
    (0..BLOCK_SIZE)
        .map(|u| {
            let scale = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let mut row = [0.0; RESAMPLE_SIZE];
            for (x, v) in row.iter_mut().enumerate() {
                *v = scale * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2.0 * n)).cos();
            }
            row
        })
        .collect()
}

/// Top-left `BLOCK_SIZE`² block of the 2-D DCT-II of a 32×32 plane,
/// row-major with the vertical frequency as the row index.
fn low_frequency_block(plane: &[f64]) -> Vec<f64> {
    let basis = dct_basis();
    // rows first: partial[y][v] = sum_x plane[y][x] * basis[v][x]
    let mut partial = vec![[0.0; BLOCK_SIZE]; RESAMPLE_SIZE];
    for (y, row) in plane.chunks_exact(RESAMPLE_SIZE).enumerate() {
        for (v, b) in basis.iter().enumerate() {
            partial[y][v] = row.iter().zip(b).map(|(p, c)| p * c).sum();
        }
    }
    let mut block = Vec::with_capacity(BLOCK_SIZE * BLOCK_SIZE);
    for b in &basis {
        block.extend((0..BLOCK_SIZE).map(|v| (0..RESAMPLE_SIZE).map(|y| b[y] * partial[y][v]).sum::<f64>()));
    }
    block
}

/// Bit i is set iff coefficient i lies above the median of the block.
pub(crate) fn binarize(block: &[f64]) -> u64 {
    let quantized: Vec<i64> = block
        .iter()
        .map(|c| (c / COEFF_QUANTUM).round() as i64)
        .collect();
    let mut sorted = quantized.clone();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    // compare against the mean of the two middle values without dividing
    let twice_median = sorted[mid - 1] + sorted[mid];
    quantized
        .iter()
        .enumerate()
        .filter(|(_, &q)| 2 * q > twice_median)
        .fold(0u64, |acc, (i, _)| acc | (1 << i))
}

/// 64-bit DCT perceptual hash of an RGB raster.
pub fn phash(image: &RgbImage) -> Result<u64, DedupError> {
    let (width, height) = image.dimensions();
    if width < 8 || height < 8 {
        return Err(DedupError::TooSmall { width, height });
    }
    let plane = luma_plane(image);
    let small = resample(&plane, width as usize, height as usize, RESAMPLE_SIZE);
    Ok(binarize(&low_frequency_block(&small)))
}

pub fn phash_file(path: &Path) -> Result<u64, DedupError> {
    let img = image::open(path).map_err(|source| DedupError::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    phash(&img.to_rgb8())
}

/// Hashes every PNG/JPEG file in `dir`; image ids are file stems. Files are
/// hashed in parallel and returned in file-name order.
pub fn hash_directory(dir: &Path) -> Result<Vec<PHash64>, DedupError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false)
    });
    files.sort();
    files
        .par_iter()
        .map(|path| {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(PHash64::new(id, phash_file(path)?))
        })
        .collect()
}

pub fn read_hash_csv(path: &Path) -> Result<Vec<PHash64>, DedupError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let image_id = row.get(0).unwrap_or_default().to_string();
        let value = row.get(1).unwrap_or_default().trim();
        let hex = value.trim_start_matches("0x");
        let bits = u64::from_str_radix(hex, 16).map_err(|_| DedupError::InvalidHash {
            image_id: image_id.clone(),
            value: value.to_string(),
        })?;
        out.push(PHash64::new(image_id, bits));
    }
    Ok(out)
}

pub fn write_hash_csv(path: &Path, hashes: &[PHash64]) -> Result<(), DedupError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["image_id", "hash_hex"])?;
    for h in hashes {
        writer.write_record([h.image_id.as_str(), h.to_hex().as_str()])?;
    }
    writer.flush()?;
    Ok(())
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Near-duplicate groups keyed by image id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub threshold: u32,
    pub groups: BTreeMap<String, usize>,
}

impl GroupAssignment {
    pub fn group_of(&self, image_id: &str) -> Option<usize> {
        self.groups.get(image_id).copied()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.values().max().map_or(0, |m| m + 1)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("groups serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DedupError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// How candidate pairs are found. Both strategies produce identical groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSearch {
    /// Compare every pair.
    Pairwise,
    /// Index the four 16-bit bands of each hash. Two hashes within distance
    /// `t` agree within `t / 4` bits on at least one band, so probing each
    /// band's neighbourhood finds every linked pair.
    Banded,
}

/// Groups hashes into connected components of the "distance ≤ threshold"
/// graph, comparing every pair.
pub fn group(hashes: &[PHash64], threshold: u32) -> Result<GroupAssignment, DedupError> {
    group_with(hashes, threshold, PairSearch::Pairwise)
}

pub fn group_with(
    hashes: &[PHash64],
    threshold: u32,
    search: PairSearch,
) -> Result<GroupAssignment, DedupError> {
    if threshold > 64 {
        return Err(DedupError::ThresholdOutOfRange(threshold));
    }
    let mut seen = HashSet::new();
    for h in hashes {
        if !seen.insert(h.image_id.as_str()) {
            return Err(DedupError::DuplicateImageId(h.image_id.clone()));
        }
    }

    let mut uf = UnionFind::new(hashes.len());
    let radius = threshold / 4;
    match search {
        // beyond radius 4 each probe enumerates thousands of band values
        PairSearch::Banded if radius <= 4 => link_banded(hashes, threshold, radius, &mut uf),
        _ => {
            for i in 0..hashes.len() {
                for j in i + 1..hashes.len() {
                    if hamming(hashes[i].bits, hashes[j].bits) <= threshold {
                        uf.union(i, j);
                    }
                }
            }
        }
    }

    // number components by their smallest image id
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..hashes.len() {
        members.entry(uf.find(i)).or_default().push(i);
    }
    let mut components: Vec<(&str, Vec<usize>)> = members
        .into_values()
        .map(|m| {
            let first = m
                .iter()
                .map(|&i| hashes[i].image_id.as_str())
                .min()
                .expect("non-empty component");
            (first, m)
        })
        .collect();
    components.sort_by(|a, b| a.0.cmp(b.0));

    let mut groups = BTreeMap::new();
    for (gid, (_, m)) in components.into_iter().enumerate() {
        for i in m {
            groups.insert(hashes[i].image_id.clone(), gid);
        }
    }
    Ok(GroupAssignment { threshold, groups })
}

fn band(bits: u64, b: usize) -> u16 {
    (bits >> (16 * b)) as u16
}

/// All 16-bit values within `radius` bits of `value`.
fn band_neighbours(value: u16, radius: u32) -> Vec<u16> {
    let mut out = vec![value];
    let mut frontier = vec![(value, 0u32)];
    // flip bits in increasing position order to enumerate each subset once
    for _ in 0..radius {
        let mut next = Vec::new();
        for &(v, min_bit) in &frontier {
            for bit in min_bit..16 {
                let flipped = v ^ (1 << bit);
                out.push(flipped);
                next.push((flipped, bit + 1));
            }
        }
        frontier = next;
    }
    out
}

fn link_banded(hashes: &[PHash64], threshold: u32, radius: u32, uf: &mut UnionFind) {
    let mut index: [HashMap<u16, Vec<usize>>; 4] = Default::default();
    for (i, h) in hashes.iter().enumerate() {
        for (b, map) in index.iter_mut().enumerate() {
            map.entry(band(h.bits, b)).or_default().push(i);
        }
    }
    for (i, h) in hashes.iter().enumerate() {
        for (b, map) in index.iter().enumerate() {
            for probe in band_neighbours(band(h.bits, b), radius) {
                let Some(candidates) = map.get(&probe) else { continue };
                for &j in candidates {
                    if j > i && hamming(h.bits, hashes[j].bits) <= threshold {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn constant(color: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(40, 24, Rgb(color))
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(0xdead_beef, 0xdead_beef), 0);
        assert_eq!(hamming(0x1234, !0x1234), 64);
        assert_eq!(hamming(0x0f, 0x00), 4);
    }

    #[test]
    fn deterministic() {
        let img = RgbImage::from_fn(50, 70, |x, y| Rgb([(x * 5) as u8, (y * 3) as u8, ((x ^ y) * 7) as u8]));
        assert_eq!(phash(&img).unwrap(), phash(&img).unwrap());
    }

    #[test]
    fn constant_colours_collide() {
        let a = phash(&constant([200, 30, 30])).unwrap();
        let b = phash(&constant([10, 90, 250])).unwrap();
        assert_eq!(hamming(a, b), 0);
        // only the DC coefficient is non-zero
        assert_eq!(a, 1);
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(
            phash(&RgbImage::new(7, 30)),
            Err(DedupError::TooSmall { .. })
        ));
    }

    /// Direct, non-separable 2-D DCT-II of a 32×32 luma plane followed by
    /// a plain median threshold.
    fn oracle_hash(plane: &[f64]) -> u64 {
        let n = RESAMPLE_SIZE;
        let alpha = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        let mut coeffs = Vec::with_capacity(64);
        for v in 0..8 {
            for u in 0..8 {
                let mut sum = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        let cx = (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
                        let cy = (std::f64::consts::PI * (2 * y + 1) as f64 * v as f64 / (2 * n) as f64).cos();
                        sum += plane[y * n + x] * cx * cy;
                    }
                }
                coeffs.push(alpha(u) * alpha(v) * sum);
            }
        }
        let mut sorted = coeffs.clone();
        sorted.sort_by(f64::total_cmp);
        let median = (sorted[31] + sorted[32]) / 2.0;
        coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c - median > 1e-6)
            .fold(0, |acc, (i, _)| acc | (1u64 << i))
    }

    fn checkerboard(cell: u32) -> RgbImage {
        RgbImage::from_fn(32, 32, |x, y| {
            let v = if (x / cell + y / cell) % 2 == 1 { 255 } else { 0 };
            Rgb([v, v, v])
        })
    }

    fn horizontal_gradient() -> RgbImage {
        RgbImage::from_fn(32, 32, |x, _| {
            let v = (x * 8) as u8;
            Rgb([v, v, v])
        })
    }

    #[test]
    fn matches_direct_dct_oracle() {
        let mut images = vec![horizontal_gradient(), RgbImage::from_pixel(32, 32, Rgb([90, 90, 90]))];
        images.extend([3, 5, 7, 8].map(checkerboard));
        images.push(RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 7 + y * 3) as u8, (x * y) as u8, (x ^ y) as u8 * 8])));
        for img in &images {
            assert_eq!(phash(img).unwrap(), oracle_hash(&luma_plane(img)));
        }
    }

    #[test]
    fn checkerboard_far_from_gradient() {
        let g = phash(&horizontal_gradient()).unwrap();
        // a ramp has only horizontal-frequency energy, all of it below the DC term
        assert_eq!(g, 1);
        // reference values from an independent floating-point DCT
        assert_eq!(phash(&checkerboard(5)).unwrap(), 0x7f80_8095_859f_859f);
        for cell in [3, 5, 7] {
            let d = hamming(phash(&checkerboard(cell)).unwrap(), g);
            assert!(d >= 16, "cell {cell}: distance {d}");
        }
        // a board whose period divides 32 has almost no low-frequency energy
        assert_eq!(phash(&checkerboard(4)).unwrap(), g);
    }

    #[test]
    fn resample_identity_at_target_size() {
        let plane: Vec<f64> = (0..RESAMPLE_SIZE * RESAMPLE_SIZE).map(|i| (i % 97) as f64).collect();
        assert_eq!(resample(&plane, RESAMPLE_SIZE, RESAMPLE_SIZE, RESAMPLE_SIZE), plane);
    }

    #[test]
    fn band_neighbour_counts() {
        assert_eq!(band_neighbours(0, 0).len(), 1);
        assert_eq!(band_neighbours(0, 1).len(), 17);
        let two = band_neighbours(0xabcd, 2);
        assert_eq!(two.len(), 1 + 16 + 120);
        let distinct: HashSet<u16> = two.iter().copied().collect();
        assert_eq!(distinct.len(), two.len());
        assert!(two.iter().all(|v| (v ^ 0xabcd).count_ones() <= 2));
    }

    fn hashes(bits: &[u64]) -> Vec<PHash64> {
        bits.iter()
            .enumerate()
            .map(|(i, &b)| PHash64::new(format!("img{i:03}"), b))
            .collect()
    }

    #[test]
    fn identical_hashes_form_one_group() {
        let g = group(&hashes(&[42, 42, 42]), 0).unwrap();
        assert_eq!(g.num_groups(), 1);
    }

    #[test]
    fn grouping_is_transitive() {
        let t = 4;
        let a = 0u64;
        let b = 0b1111u64;
        let c = 0b1111_1111u64;
        assert_eq!(hamming(a, b), t);
        assert_eq!(hamming(b, c), t);
        assert_eq!(hamming(a, c), 2 * t);
        let g = group(&hashes(&[a, b, c]), t).unwrap();
        assert_eq!(g.num_groups(), 1);
    }

    #[test]
    fn singletons_and_numbering() {
        let hs = vec![
            PHash64::new("c", 0),
            PHash64::new("a", u64::MAX),
            PHash64::new("b", 1),
        ];
        let g = group(&hs, 1).unwrap();
        assert_eq!(g.group_of("a"), Some(0));
        assert_eq!(g.group_of("b"), Some(1));
        assert_eq!(g.group_of("c"), Some(1));
        assert_eq!(g.group_of("zzz"), None);
    }

    #[test]
    fn group_errors() {
        assert!(matches!(
            group(&hashes(&[1]), 65),
            Err(DedupError::ThresholdOutOfRange(65))
        ));
        let dup = vec![PHash64::new("x", 1), PHash64::new("x", 2)];
        assert!(matches!(group(&dup, 3), Err(DedupError::DuplicateImageId(_))));
    }

    #[test]
    fn groups_json_round_trip() {
        let g = group(&hashes(&[1, 3, 0xff00, 7]), 2).unwrap();
        let back = GroupAssignment::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["threshold"], 2);
        assert!(v["groups"].is_object());
    }

    #[test]
    fn hash_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let hs = hashes(&[0, u64::MAX, 0x0123_4567_89ab_cdef]);
        write_hash_csv(&path, &hs).unwrap();
        assert_eq!(read_hash_csv(&path).unwrap(), hs);
        std::fs::write(&path, "image_id,hash_hex\nx,zz\n").unwrap();
        assert!(matches!(read_hash_csv(&path), Err(DedupError::InvalidHash { .. })));
    }

    fn clustered_bits() -> impl Strategy<Value = Vec<u64>> {
        // a few centres with sparse bit flips so that groups actually form
        (prop::collection::vec(any::<u64>(), 1..6), prop::collection::vec((0usize..6, any::<u64>(), any::<u64>()), 1..40))
            .prop_map(|(centres, picks)| {
                picks
                    .into_iter()
                    .map(|(c, m1, m2)| centres[c % centres.len()] ^ (m1 & m2 & (m1 >> 7)))
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn banded_matches_pairwise(bits in clustered_bits(), threshold in 0u32..=24) {
            let hs = hashes(&bits);
            prop_assert_eq!(
                group_with(&hs, threshold, PairSearch::Pairwise).unwrap(),
                group_with(&hs, threshold, PairSearch::Banded).unwrap()
            );
        }

        #[test]
        fn permutation_invariant(bits in clustered_bits(), threshold in 0u32..=16, seed in any::<u64>()) {
            let hs = hashes(&bits);
            let mut shuffled = hs.clone();
            // simple deterministic shuffle driven by the seed
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(group(&hs, threshold).unwrap(), group(&shuffled, threshold).unwrap());
        }

        #[test]
        fn threshold_zero_groups_equal_hashes(bits in prop::collection::vec(0u64..6, 1..30)) {
            let hs = hashes(&bits);
            let g = group(&hs, 0).unwrap();
            for a in &hs {
                for b in &hs {
                    prop_assert_eq!(g.group_of(&a.image_id) == g.group_of(&b.image_id), a.bits == b.bits);
                }
            }
        }
    }
}

//! Three-phase voxel geometries on the unit cube.
//!
//! A geometry is stored as two bit-packed masks over the `n_h³` voxels, one
//! for free pores and one for washcoat; every voxel in neither mask is solid.
//! Voxels are indexed `x + n_h * (y + n_h * z)`, i.e. x fastest, then y, then
//! z. The inlet face is `x = 0` and the outlet face is `x = n_h - 1`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest resolution accepted by [`generate_sample`].
pub const MIN_GENERATED_RESOLUTION: usize = 8;
/// Sphere placement attempts per generation try.
pub const PLACEMENT_ATTEMPTS: usize = 20_000;
/// Regeneration tries (each with a derived sub-seed) before giving up.
pub const GENERATION_RETRIES: usize = 16;
/// A sphere is rejected when it would push the washcoat fraction this far past the target.
pub const OVERSHOOT_TOLERANCE: f64 = 0.03;

const PVX_MAGIC: &[u8; 4] = b"PVX1";
const PVX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Free,
    Washcoat,
    Solid,
}

/// Fixed-length bit set packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    len: usize,
    words: Vec<u64>,
}

impl BitMask {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn filled(len: usize) -> Self {
        let mut m = Self {
            len,
            words: vec![u64::MAX; len.div_ceil(64)],
        };
        m.clear_tail();
        m
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions set in both masks.
    pub fn and_count(&self, other: &BitMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let t = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + t)
                }
            })
        })
    }

    /// Little-endian bit order within bytes: bit `i` is bit `i % 8` of byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(nbytes);
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Self {
        let mut m = Self::new(len);
        for (wi, chunk) in bytes.chunks(8).enumerate().take(m.words.len()) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            m.words[wi] = u64::from_le_bytes(buf);
        }
        m.clear_tail();
        m
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mask length {got} does not match n_h³ = {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("free and washcoat masks overlap at voxel {0}")]
    Overlap(usize),
    #[error("resolution must be positive")]
    ZeroResolution,
}

/// Three-phase voxel geometry. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGeometry {
    n_h: usize,
    free: BitMask,
    washcoat: BitMask,
}

impl VoxelGeometry {
    pub fn new(n_h: usize, free: BitMask, washcoat: BitMask) -> Result<Self, GeometryError> {
        if n_h == 0 {
            return Err(GeometryError::ZeroResolution);
        }
        let n = n_h * n_h * n_h;
        for m in [&free, &washcoat] {
            if m.len() != n {
                return Err(GeometryError::MaskLength {
                    expected: n,
                    got: m.len(),
                });
            }
        }
        if free.and_count(&washcoat) != 0 {
            let i = (0..n).find(|&i| free.get(i) && washcoat.get(i)).unwrap();
            return Err(GeometryError::Overlap(i));
        }
        Ok(Self { n_h, free, washcoat })
    }

    /// Builds a geometry by evaluating `phase(x, y, z)` at every voxel.
    pub fn from_fn(n_h: usize, mut phase: impl FnMut(usize, usize, usize) -> Phase) -> Self {
        assert!(n_h > 0, "resolution must be positive");
        let n = n_h * n_h * n_h;
        let mut free = BitMask::new(n);
        let mut washcoat = BitMask::new(n);
        for z in 0..n_h {
            for y in 0..n_h {
                for x in 0..n_h {
                    let i = x + n_h * (y + n_h * z);
                    match phase(x, y, z) {
                        Phase::Free => free.set(i, true),
                        Phase::Washcoat => washcoat.set(i, true),
                        Phase::Solid => {}
                    }
                }
            }
        }
        Self { n_h, free, washcoat }
    }

    pub fn uniform(n_h: usize, phase: Phase) -> Self {
        Self::from_fn(n_h, |_, _, _| phase)
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    /// Voxel edge length in domain units.
    pub fn h(&self) -> f64 {
        1.0 / self.n_h as f64
    }

    pub fn n_voxels(&self) -> usize {
        self.n_h * self.n_h * self.n_h
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.n_h * (y + self.n_h * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let n = self.n_h;
        (i % n, (i / n) % n, i / (n * n))
    }

    pub fn free_mask(&self) -> &BitMask {
        &self.free
    }

    pub fn washcoat_mask(&self) -> &BitMask {
        &self.washcoat
    }

    #[inline]
    pub fn is_free(&self, x: usize, y: usize, z: usize) -> bool {
        self.free.get(self.index(x, y, z))
    }

    #[inline]
    pub fn phase_at(&self, i: usize) -> Phase {
        if self.free.get(i) {
            Phase::Free
        } else if self.washcoat.get(i) {
            Phase::Washcoat
        } else {
            Phase::Solid
        }
    }

    pub fn phase(&self, x: usize, y: usize, z: usize) -> Phase {
        self.phase_at(self.index(x, y, z))
    }

    pub fn free_count(&self) -> usize {
        self.free.count_ones()
    }

    pub fn washcoat_count(&self) -> usize {
        self.washcoat.count_ones()
    }

    pub fn solid_count(&self) -> usize {
        self.n_voxels() - self.free_count() - self.washcoat_count()
    }

    /// `[free; washcoat]` as a 0/1 vector of length `2 n_h³`.
    pub fn flatten(&self) -> Vec<bool> {
        let n = self.n_voxels();
        let mut v = Vec::with_capacity(2 * n);
        v.extend((0..n).map(|i| self.free.get(i)));
        v.extend((0..n).map(|i| self.washcoat.get(i)));
        v
    }

    /// Positions of the ones in [`flatten`](Self::flatten), ascending.
    pub fn flat_ones(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.n_voxels();
        self.free
            .iter_ones()
            .chain(self.washcoat.iter_ones().map(move |i| i + n))
    }

    pub fn unflatten(n_h: usize, z: &[bool]) -> Result<Self, GeometryError> {
        let n = n_h * n_h * n_h;
        if z.len() != 2 * n {
            return Err(GeometryError::MaskLength {
                expected: 2 * n,
                got: z.len(),
            });
        }
        let mut free = BitMask::new(n);
        let mut washcoat = BitMask::new(n);
        for i in 0..n {
            free.set(i, z[i]);
            washcoat.set(i, z[n + i]);
        }
        Self::new(n_h, free, washcoat)
    }

    /// Whether free voxels connect the inlet face to the outlet face (6-connectivity).
    pub fn free_path_connected(&self) -> bool {
        let n = self.n_h;
        let mut seen = BitMask::new(self.n_voxels());
        let mut queue = VecDeque::new();
        for z in 0..n {
            for y in 0..n {
                let i = self.index(0, y, z);
                if self.free.get(i) {
                    seen.set(i, true);
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, _, _) = self.coords(i);
            if x == n - 1 {
                return true;
            }
            for j in self.neighbors6(i) {
                if self.free.get(j) && !seen.get(j) {
                    seen.set(j, true);
                    queue.push_back(j);
                }
            }
        }
        false
    }

    /// In-domain 6-neighbours of voxel `i`.
    pub fn neighbors6(&self, i: usize) -> impl Iterator<Item = usize> {
        let n = self.n_h;
        let (x, y, z) = self.coords(i);
        let s = [1, n, n * n];
        let c = [x, y, z];
        (0..6).filter_map(move |k| {
            let axis = k / 2;
            if k % 2 == 0 {
                (c[axis] > 0).then(|| i - s[axis])
            } else {
                (c[axis] + 1 < n).then(|| i + s[axis])
            }
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(PVX_MAGIC)?;
        w.write_all(&PVX_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_h as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&self.free.to_bytes())?;
        w.write_all(&self.washcoat.to_bytes())?;
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PvxError> {
        let mut header = [0u8; 16];
        read_exact_or_truncated(&mut r, &mut header)?;
        if &header[0..4] != PVX_MAGIC {
            return Err(PvxError::BadMagic([
                header[0], header[1], header[2], header[3],
            ]));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != PVX_VERSION {
            return Err(PvxError::UnsupportedVersion(version));
        }
        let n_h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if n_h == 0 {
            return Err(PvxError::Invalid(GeometryError::ZeroResolution));
        }
        let n = n_h * n_h * n_h;
        let nbytes = n.div_ceil(8);
        let mut payload = vec![0u8; 2 * nbytes];
        read_exact_or_truncated(&mut r, &mut payload)?;
        let free = BitMask::from_bytes(n, &payload[..nbytes]);
        let washcoat = BitMask::from_bytes(n, &payload[nbytes..]);
        Self::new(n_h, free, washcoat).map_err(PvxError::Invalid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PvxError> {
        let f = File::create(path)?;
        self.write_to(BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PvxError> {
        let f = File::open(path)?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), PvxError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => PvxError::Truncated,
        _ => PvxError::Io(e),
    })
}

#[derive(Debug, Error)]
pub enum PvxError {
    #[error("not a .pvx file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported .pvx version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated .pvx payload")]
    Truncated,
    #[error("invalid geometry in .pvx file: {0}")]
    Invalid(GeometryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parameters of the sphere-piling generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub n_h: usize,
    pub target_washcoat_fraction: f64,
    pub sphere_radius_range: [f64; 2],
    pub binder_fraction: f64,
    pub rng_seed: u64,
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.n_h < MIN_GENERATED_RESOLUTION {
            return Err(GenerateError::ResolutionTooSmall(self.n_h));
        }
        let [r_min, r_max] = self.sphere_radius_range;
        if !(r_min > 0.0 && r_min <= r_max && r_max < 0.5) {
            return Err(GenerateError::InvalidConfig(format!(
                "sphere radius range [{r_min}, {r_max}] must satisfy 0 < r_min <= r_max < 0.5"
            )));
        }
        let wf = self.target_washcoat_fraction;
        if !(wf > 0.0 && wf < 1.0) {
            return Err(GenerateError::InvalidConfig(format!(
                "target washcoat fraction {wf} outside (0, 1)"
            )));
        }
        let bf = self.binder_fraction;
        if !(0.0..1.0).contains(&bf) {
            return Err(GenerateError::InvalidConfig(format!(
                "binder fraction {bf} outside [0, 1)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("resolution n_h = {0} is below the minimum of 8")]
    ResolutionTooSmall(usize),
    #[error("invalid geometry config: {0}")]
    InvalidConfig(String),
    #[error("washcoat target {target} not reached after {tries} tries (best achieved {achieved})")]
    UnreachableTarget {
        target: f64,
        achieved: f64,
        tries: usize,
    },
    #[error("no free-pore path from inlet to outlet after {tries} tries")]
    Disconnected { tries: usize },
}

/// Sub-seed for regeneration try `k` (splitmix64 of the base seed and try index).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a geometry by random sequential addition of washcoat spheres
/// followed by binder placement on the washcoat surface.
///
/// Spheres may overlap each other. A sphere is rejected only if it would push
/// the washcoat fraction past `target + OVERSHOOT_TOLERANCE`; placement stops
/// as soon as the fraction reaches the target. Binder converts a random
/// `binder_fraction` of the free voxels 6-adjacent to washcoat into solid.
/// If the free pores do not connect inlet and outlet the sample is redrawn
/// with a derived sub-seed.
///
/// Radii below half a voxel cannot be resolved on the grid; if even `r_max`
/// is that small no washcoat is placed and the result is all free pores.
pub fn generate_sample(config: &GeometryConfig) -> Result<VoxelGeometry, GenerateError> {
    config.validate()?;
    let n_h = config.n_h;
    let h = 1.0 / n_h as f64;
    if config.sphere_radius_range[1] < 0.5 * h {
        return Ok(VoxelGeometry::uniform(n_h, Phase::Free));
    }

    let mut best_fraction = 0.0f64;
    let mut any_reached = false;
    for k in 0..GENERATION_RETRIES {
        let seed = if k == 0 {
            config.rng_seed
        } else {
            derive_seed(config.rng_seed, k as u64)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (washcoat, fraction) = pile_spheres(config, &mut rng);
        best_fraction = best_fraction.max(fraction);
        if fraction < config.target_washcoat_fraction {
            continue;
        }
        any_reached = true;
        let geom = place_binder(n_h, washcoat, config.binder_fraction, &mut rng);
        if geom.free_path_connected() {
            return Ok(geom);
        }
    }
    if any_reached {
        Err(GenerateError::Disconnected {
            tries: GENERATION_RETRIES,
        })
    } else {
        Err(GenerateError::UnreachableTarget {
            target: config.target_washcoat_fraction,
            achieved: best_fraction,
            tries: GENERATION_RETRIES,
        })
    }
}

fn pile_spheres(config: &GeometryConfig, rng: &mut ChaCha8Rng) -> (BitMask, f64) {
    let n_h = config.n_h;
    let n = n_h * n_h * n_h;
    let h = 1.0 / n_h as f64;
    let [r_min, r_max] = config.sphere_radius_range;
    let target = config.target_washcoat_fraction;
    let limit = ((target + OVERSHOOT_TOLERANCE) * n as f64).floor() as usize;

    let mut mask = BitMask::new(n);
    let mut count = 0usize;
    let mut fresh = Vec::new();
    for _ in 0..PLACEMENT_ATTEMPTS {
        if count as f64 >= target * n as f64 {
            break;
        }
        let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let r = if r_max > r_min {
            rng.gen_range(r_min..=r_max)
        } else {
            r_min
        };
        fresh.clear();
        let lo = |ci: f64| (((ci - r) / h - 0.5).ceil().max(0.0)) as usize;
        let hi = |ci: f64| ((((ci + r) / h - 0.5).floor()).min(n_h as f64 - 1.0)) as isize;
        let (x0, y0, z0) = (lo(c[0]), lo(c[1]), lo(c[2]));
        let (x1, y1, z1) = (hi(c[0]), hi(c[1]), hi(c[2]));
        let r2 = r * r;
        for z in z0 as isize..=z1 {
            let dz = (z as f64 + 0.5) * h - c[2];
            for y in y0 as isize..=y1 {
                let dy = (y as f64 + 0.5) * h - c[1];
                for x in x0 as isize..=x1 {
                    let dx = (x as f64 + 0.5) * h - c[0];
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        let i = x as usize + n_h * (y as usize + n_h * z as usize);
                        if !mask.get(i) {
                            fresh.push(i);
                        }
                    }
                }
            }
        }
        if fresh.is_empty() || count + fresh.len() > limit {
            continue;
        }
        for &i in &fresh {
            mask.set(i, true);
        }
        count += fresh.len();
    }
    (mask, count as f64 / n as f64)
}

fn place_binder(
    n_h: usize,
    washcoat: BitMask,
    binder_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> VoxelGeometry {
    let n = n_h * n_h * n_h;
    let mut free = BitMask::filled(n);
    for i in washcoat.iter_ones() {
        free.set(i, false);
    }
    let mut geom = VoxelGeometry {
        n_h,
        free,
        washcoat,
    };
    let candidates: Vec<usize> = (0..n)
        .filter(|&i| geom.free.get(i) && geom.neighbors6(i).any(|j| geom.washcoat.get(j)))
        .collect();
    let amount = (binder_fraction * candidates.len() as f64).floor() as usize;
    if amount > 0 {
        for k in index::sample(rng, candidates.len(), amount) {
            geom.free.set(candidates[k], false);
        }
    }
    geom
}

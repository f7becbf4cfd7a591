//! PCA feature map from the leading left singular vectors of the training
//! voxel matrix.
//!
//! The thin SVD is obtained from the small `n_train × n_train` matrix `ZᵀZ`:
//! its eigenpairs give `V` and `Σ²`, and `U = Z V Σ⁻¹`. For voxel data `ZᵀZ`
//! is a table of popcounts of mask intersections and `Z V` is accumulated by
//! visiting the set bits only.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::voxelgeom::VoxelGeometry;

const PCAB_MAGIC: &[u8; 4] = b"PCAB";
const PCAB_VERSION: u32 = 1;
const FLAG_CENTERED: u32 = 1;

/// Eigenvalues of `ZᵀZ` below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("requested {requested} components but the training matrix has numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("requested {requested} components from {available} training samples")]
    TooFewSamples { requested: usize, available: usize },
    #[error("at least one component and one sample are required")]
    Empty,
    #[error("vector length {got} does not match basis length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("training geometries have different resolutions")]
    MixedResolution,
    #[error("not a .pcab file")]
    BadMagic,
    #[error("unsupported .pcab version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated .pcab payload")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcaOptions {
    /// Subtract the mean training column before the SVD (off by default).
    pub center: bool,
}

/// Leading `n_f` left singular vectors and singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    /// `rows × n_f`, orthonormal columns.
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Mean column, present when fitted with centering.
    pub mean: Option<DVector<f64>>,
    /// Identifier of the training split the basis was fitted on.
    pub source_split: String,
}

/// A fitted basis plus the matching right singular vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub basis: PcaBasis,
    /// `n_train × n_f`.
    pub v: DMatrix<f64>,
}

impl PcaBasis {
    pub fn n_features(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_len(&self) -> usize {
        self.u.nrows()
    }

    /// `Uᵀ (z − mean)` for a dense vector.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>, PcaError> {
        if z.len() != self.input_len() {
            return Err(PcaError::LengthMismatch {
                expected: self.input_len(),
                got: z.len(),
            });
        }
        let mut zv = DVector::from_column_slice(z);
        if let Some(m) = &self.mean {
            zv -= m;
        }
        Ok((self.u.transpose() * zv).as_slice().to_vec())
    }

    /// Projection of a flattened geometry, summing the rows of `U` at its set bits.
    pub fn project_geometry(&self, g: &VoxelGeometry) -> Result<Vec<f64>, PcaError> {
        let len = 2 * g.n_voxels();
        if len != self.input_len() {
            return Err(PcaError::LengthMismatch {
                expected: self.input_len(),
                got: len,
            });
        }
        let nf = self.n_features();
        let mut out = vec![0.0; nf];
        for i in g.flat_ones() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.u[(i, j)];
            }
        }
        if let Some(m) = &self.mean {
            let shift = self.u.transpose() * m;
            for j in 0..nf {
                out[j] -= shift[j];
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let flags = if self.mean.is_some() { FLAG_CENTERED } else { 0 };
        w.write_all(PCAB_MAGIC)?;
        w.write_all(&PCAB_VERSION.to_le_bytes())?;
        w.write_all(&(self.input_len() as u64).to_le_bytes())?;
        w.write_all(&(self.n_features() as u32).to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        let id = self.source_split.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        for s in &self.singular_values {
            w.write_all(&s.to_le_bytes())?;
        }
        // column-major: U[:, 0], U[:, 1], ...
        for v in self.u.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(m) = &self.mean {
            for v in m.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PcaError> {
        let mut head = [0u8; 24];
        read_exact(&mut r, &mut head)?;
        if &head[0..4] != PCAB_MAGIC {
            return Err(PcaError::BadMagic);
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != PCAB_VERSION {
            return Err(PcaError::UnsupportedVersion(version));
        }
        let rows = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let nf = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
        let flags = u32::from_le_bytes(head[20..24].try_into().unwrap());
        let mut len = [0u8; 4];
        read_exact(&mut r, &mut len)?;
        let mut id = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact(&mut r, &mut id)?;
        let source_split = String::from_utf8_lossy(&id).into_owned();
        let singular_values = read_f64s(&mut r, nf)?;
        let u = DMatrix::from_vec(rows, nf, read_f64s(&mut r, rows * nf)?);
        let mean = if flags & FLAG_CENTERED != 0 {
            Some(DVector::from_vec(read_f64s(&mut r, rows)?))
        } else {
            None
        };
        Ok(Self {
            u,
            singular_values,
            mean,
            source_split,
        })
    }

    /// Writes the basis and returns the SHA-256 of the file content.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String, PcaError> {
        let bytes = self.to_bytes();
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PcaError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), PcaError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => PcaError::Truncated,
        _ => PcaError::Io(e),
    })
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, PcaError> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Eigen-decomposes the (optionally centered) Gram matrix and returns
/// `(σ, V)` for the leading `n_f` components.
fn leading_right_vectors(
    gram: &DMatrix<f64>,
    n_f: usize,
) -> Result<(Vec<f64>, DMatrix<f64>), PcaError> {
    let n = gram.nrows();
    if n_f == 0 || n == 0 {
        return Err(PcaError::Empty);
    }
    if n_f > n {
        return Err(PcaError::TooFewSamples {
            requested: n_f,
            available: n,
        });
    }
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOLERANCE * top)
        .count();
    if n_f > rank {
        return Err(PcaError::RankDeficient {
            requested: n_f,
            rank,
        });
    }
    let sigma = order[..n_f]
        .iter()
        .map(|&i| eig.eigenvalues[i].sqrt())
        .collect();
    let v = DMatrix::from_fn(n, n_f, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((sigma, v))
}

/// Flips each column so its largest-magnitude entry of `U` is non-negative.
/// Magnitudes within a relative `1e-9` of the maximum count as tied and the
/// lowest row index wins, so binary data with repeated entries gets a stable sign.
fn fix_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let top = col.amax();
        let Some(imax) = col.iter().position(|x| x.abs() >= top * (1.0 - 1e-9)) else {
            continue;
        };
        if u[(imax, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
}

fn center_gram(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows() as f64;
    let row_mean: Vec<f64> = (0..gram.nrows()).map(|i| gram.row(i).sum() / n).collect();
    let all = gram.sum() / (n * n);
    DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| {
        gram[(i, j)] - row_mean[i] - row_mean[j] + all
    })
}

/// Fits a basis to the columns of a dense `rows × n_train` matrix.
pub fn fit_pca_dense(z: &DMatrix<f64>, n_f: usize, opts: PcaOptions) -> Result<PcaFit, PcaError> {
    let (zc, mean) = if opts.center {
        let m = z.column_mean();
        let mut zc = z.clone();
        for mut c in zc.column_iter_mut() {
            c -= &m;
        }
        (zc, Some(m))
    } else {
        (z.clone(), None)
    };
    let gram = zc.transpose() * &zc;
    let (sigma, mut v) = leading_right_vectors(&gram, n_f)?;
    let mut u = &zc * &v;
    for (j, s) in sigma.iter().enumerate() {
        u.column_mut(j).apply(|x| *x /= s);
    }
    fix_signs(&mut u, &mut v);
    Ok(PcaFit {
        basis: PcaBasis {
            u,
            singular_values: sigma,
            mean,
            source_split: String::new(),
        },
        v,
    })
}

/// `ZᵀZ` for flattened geometries: popcounts of mask intersections.
pub fn geometry_gram(geoms: &[&VoxelGeometry]) -> DMatrix<f64> {
    let n = geoms.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = geoms[i].free_mask().and_count(geoms[j].free_mask())
                + geoms[i].washcoat_mask().and_count(geoms[j].washcoat_mask());
            g[(i, j)] = c as f64;
            g[(j, i)] = c as f64;
        }
    }
    g
}

/// Fits a basis to flattened training geometries without materializing `Z`.
pub fn fit_pca_geometries(
    geoms: &[&VoxelGeometry],
    n_f: usize,
    opts: PcaOptions,
) -> Result<PcaFit, PcaError> {
    let Some(first) = geoms.first() else {
        return Err(PcaError::Empty);
    };
    if geoms.iter().any(|g| g.n_h() != first.n_h()) {
        return Err(PcaError::MixedResolution);
    }
    let rows = 2 * first.n_voxels();
    let n = geoms.len() as f64;
    let raw = geometry_gram(geoms);
    let gram = if opts.center { center_gram(&raw) } else { raw };
    let (sigma, mut v) = leading_right_vectors(&gram, n_f)?;

    let mut u = DMatrix::zeros(rows, n_f);
    for (s, g) in geoms.iter().enumerate() {
        for i in g.flat_ones() {
            for j in 0..n_f {
                u[(i, j)] += v[(s, j)];
            }
        }
    }
    let mean = if opts.center {
        let mut m = DVector::zeros(rows);
        for g in geoms {
            for i in g.flat_ones() {
                m[i] += 1.0 / n;
            }
        }
        for j in 0..n_f {
            let vs = v.column(j).sum();
            u.column_mut(j).axpy(-vs, &m, 1.0);
        }
        Some(m)
    } else {
        None
    };
    for (j, s) in sigma.iter().enumerate() {
        u.column_mut(j).apply(|x| *x /= s);
    }
    fix_signs(&mut u, &mut v);
    Ok(PcaFit {
        basis: PcaBasis {
            u,
            singular_values: sigma,
            mean,
            source_split: String::new(),
        },
        v,
    })
}

/// Dense `2N_V × n` matrix of flattened geometries (tests and small grids only).
pub fn geometry_matrix(geoms: &[&VoxelGeometry]) -> DMatrix<f64> {
    let rows = geoms.first().map_or(0, |g| 2 * g.n_voxels());
    let mut z = DMatrix::zeros(rows, geoms.len());
    for (s, g) in geoms.iter().enumerate() {
        for i in g.flat_ones() {
            z[(i, s)] = 1.0;
        }
    }
    z
}

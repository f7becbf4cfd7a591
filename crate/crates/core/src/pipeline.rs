//! End-to-end study: synthetic sample design, per-split training of the four
//! model variants (MF/PCA features × shallow/two-layered kernels), the
//! summary report and the PCA feature-count sweep.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{matrix_to_rows, Kernel, KernelError, KernelFamily, KernelSpec};
use crate::modelselect::{
    fit_selected, loocv_select_1l, loocv_select_2l, relative_test_error, split, CvRow, Dataset,
    FeatureKind, HyperGrid, Sample, SelectError, Split, DEFAULT_GREEDY_SIZE,
};
use crate::morphology::compute_features;
use crate::pca::{fit_pca_geometries, PcaBasis, PcaError, PcaOptions};
use crate::twolayer::{singular_spectrum, TwoLayerTrainConfig};
use crate::vkoga::KernelModel;
use crate::voxelgeom::{derive_seed, GeometryConfig, VoxelGeometry};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{0}")]
    Mismatch(String),
    #[error("malformed table: {0}")]
    Table(String),
}

/// Parameter ranges of the synthetic study; each sample draws its washcoat
/// target and binder fraction uniformly from the ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyDesign {
    pub count: usize,
    pub n_h: usize,
    pub washcoat_range: [f64; 2],
    pub sphere_radius_range: [f64; 2],
    pub binder_range: [f64; 2],
    pub seed: u64,
}

impl Default for StudyDesign {
    fn default() -> Self {
        Self {
            count: 59,
            n_h: 24,
            washcoat_range: [0.15, 0.5],
            sphere_radius_range: [0.05, 0.15],
            binder_range: [0.0, 0.3],
            seed: 2024,
        }
    }
}

pub fn sample_id(i: usize) -> String {
    format!("s{i:03}")
}

pub fn study_configs(design: &StudyDesign) -> Vec<(String, GeometryConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let draw = |rng: &mut ChaCha8Rng, [a, b]: [f64; 2]| if b > a { rng.gen_range(a..b) } else { a };
    (0..design.count)
        .map(|i| {
            let target = draw(&mut rng, design.washcoat_range);
            let binder = draw(&mut rng, design.binder_range);
            (
                sample_id(i),
                GeometryConfig {
                    n_h: design.n_h,
                    target_washcoat_fraction: target,
                    sphere_radius_range: design.sphere_radius_range,
                    binder_fraction: binder,
                    rng_seed: derive_seed(design.seed, i as u64),
                },
            )
        })
        .collect()
}

/// Per-feature affine map of the training features onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let min = (0..x.ncols()).map(|j| x.column(j).min()).collect();
        let max = (0..x.ncols()).map(|j| x.column(j).max()).collect();
        Self { min, max }
    }

    /// Constant training features map to 0.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, &x)| {
                let range = self.max[j] - self.min[j];
                if range > 0.0 {
                    (x - self.min[j]) / range
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for (j, v) in self.apply(&row).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    None,
    #[default]
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layers {
    #[serde(rename = "1L")]
    One,
    #[serde(rename = "2L")]
    Two,
}

impl Layers {
    pub fn name(self) -> &'static str {
        match self {
            Self::One => "1L",
            Self::Two => "2L",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMapDescriptor {
    Mf,
    Pca {
        basis: String,
        sha256: String,
        n_f: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub index: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// A trained surrogate: feature map, optional scaler and the kernel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub feature_map: FeatureMapDescriptor,
    pub scaler: Option<MinMaxScaler>,
    pub layers: Layers,
    pub split: SplitInfo,
    pub cv_score: f64,
    pub model: KernelModel,
}

impl SurrogateModel {
    /// Prediction from raw (unscaled) features.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>, KernelError> {
        let x = match &self.scaler {
            Some(s) => s.apply(features),
            None => features.to_vec(),
        };
        Ok(self.model.predict(&x)?.as_slice().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train_count: usize,
    pub split_seeds: Vec<u64>,
    pub grid: HyperGrid,
    pub two_layer: TwoLayerTrainConfig,
    pub n_greedy: usize,
    pub pca_components: usize,
    pub pca_center: bool,
    pub scaling: Scaling,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_count: 47,
            split_seeds: vec![0, 1, 2],
            grid: HyperGrid::default(),
            two_layer: TwoLayerTrainConfig::default(),
            n_greedy: DEFAULT_GREEDY_SIZE,
            pca_components: 6,
            pca_center: false,
            scaling: Scaling::MinMax,
        }
    }
}

/// Hyperparameters and scores of one trained variant on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub feature: FeatureKind,
    pub layers: Layers,
    pub split: usize,
    pub split_seed: u64,
    pub e_rel: f64,
    pub family: KernelFamily,
    /// `None` for two-layered kernels, whose shape is absorbed into `a`.
    pub shape: Option<f64>,
    pub lambda: f64,
    pub cv_score: f64,
    pub a: Option<Vec<Vec<f64>>>,
    pub a_singular_values: Option<Vec<f64>>,
    pub cv_table: Vec<CvRow>,
    pub loss_history: Vec<f64>,
}

pub struct TrainedVariant {
    pub result: VariantResult,
    pub model: SurrogateModel,
    pub wall_time_s: f64,
}

/// Selects hyperparameters on the training split, fits the final greedy
/// model and scores it on the test split.
pub fn train_variant(
    ds: &Dataset,
    sp: &Split,
    split_index: usize,
    layers: Layers,
    feature_map: FeatureMapDescriptor,
    cfg: &ExperimentConfig,
) -> Result<TrainedVariant, PipelineError> {
    let start = Instant::now();
    let (x_raw, y) = ds.train_data(&sp.train);
    let (xt_raw, yt) = ds.test_data(&sp.test);
    let scaler = match cfg.scaling {
        Scaling::MinMax => Some(MinMaxScaler::fit(&x_raw)),
        Scaling::None => None,
    };
    let scale = |m: &DMatrix<f64>| scaler.as_ref().map_or_else(|| m.clone(), |s| s.apply_rows(m));
    let (x, xt) = (scale(&x_raw), scale(&xt_raw));

    let (kernel, family, shape, lambda, cv_score, cv_table, a, loss_history) = match layers {
        Layers::One => {
            let sel = loocv_select_1l(&x, &y, &cfg.grid, cfg.n_greedy)?;
            let k: Kernel = KernelSpec::new(sel.best.family, sel.best.shape)?.into();
            (
                k,
                sel.best.family,
                Some(sel.best.shape),
                sel.best.lambda,
                sel.cv_score,
                sel.table,
                None,
                Vec::new(),
            )
        }
        Layers::Two => {
            let sel = loocv_select_2l(
                &x,
                &y,
                &cfg.grid.families,
                &cfg.grid.lambdas,
                &cfg.two_layer,
                cfg.n_greedy,
            )?;
            let k: Kernel = sel.kernel().into();
            (
                k,
                sel.family,
                None,
                sel.lambda,
                sel.cv_score,
                sel.table,
                Some(sel.first_layer.a.clone()),
                sel.first_layer.loss_history,
            )
        }
    };
    let fit = fit_selected(&x, &y, &kernel, lambda, cfg.n_greedy)?;
    let pred = fit.model.predict_batch(&xt)?;
    let e_rel = relative_test_error(&yt, &pred)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| ds.samples()[i].id.clone()).collect();
    let split_info = SplitInfo {
        index: split_index,
        seed: sp.seed,
        train_ids: ids(&sp.train.0),
        test_ids: ids(&sp.test.0),
    };
    let result = VariantResult {
        feature: ds.kind(),
        layers,
        split: split_index,
        split_seed: sp.seed,
        e_rel,
        family,
        shape,
        lambda,
        cv_score,
        a_singular_values: a.as_ref().map(|a| singular_spectrum(a).values),
        a: a.as_ref().map(matrix_to_rows),
        cv_table,
        loss_history,
    };
    Ok(TrainedVariant {
        result,
        model: SurrogateModel {
            feature_map,
            scaler,
            layers,
            split: split_info,
            cv_score,
            model: fit.model,
        },
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Geometries with their curves, in matching order.
pub struct StudyData<'a> {
    pub ids: &'a [String],
    pub geometries: &'a [VoxelGeometry],
    pub curves: &'a [Vec<f64>],
}

impl StudyData<'_> {
    fn check(&self) -> Result<(), PipelineError> {
        if self.ids.len() != self.geometries.len() || self.ids.len() != self.curves.len() {
            return Err(PipelineError::Mismatch(format!(
                "{} ids, {} geometries, {} curves",
                self.ids.len(),
                self.geometries.len(),
                self.curves.len()
            )));
        }
        Ok(())
    }

    pub fn dataset(&self, features: Vec<Vec<f64>>, kind: FeatureKind) -> Result<Dataset, PipelineError> {
        let samples = self
            .ids
            .iter()
            .zip(features)
            .zip(self.curves)
            .map(|((id, f), c)| Sample {
                id: id.clone(),
                features: f,
                curve: c.clone(),
            })
            .collect();
        Ok(Dataset::new(samples, kind)?)
    }

    pub fn mf_features(&self) -> Vec<Vec<f64>> {
        self.geometries
            .iter()
            .map(|g| compute_features(g).to_array().to_vec())
            .collect()
    }
}

/// Basis fitted on the training geometries of `sp` only.
pub fn fit_split_basis(
    geometries: &[VoxelGeometry],
    sp: &Split,
    n_f: usize,
    center: bool,
) -> Result<PcaBasis, PipelineError> {
    let train: Vec<&VoxelGeometry> = sp.train.0.iter().map(|&i| &geometries[i]).collect();
    let mut basis = fit_pca_geometries(&train, n_f, PcaOptions { center })?.basis;
    basis.source_split = format!("seed-{}", sp.seed);
    Ok(basis)
}

pub fn pca_features(basis: &PcaBasis, geometries: &[VoxelGeometry]) -> Result<Vec<Vec<f64>>, PipelineError> {
    geometries
        .iter()
        .map(|g| basis.project_geometry(g).map_err(PipelineError::from))
        .collect()
}

/// Every trained variant of a study plus the per-split PCA bases.
pub struct StudyOutcome {
    pub splits: Vec<Split>,
    pub bases: Vec<Option<PcaBasis>>,
    pub variants: Vec<TrainedVariant>,
}

/// Trains `variants` on every split of `cfg`. PCA models reference their
/// basis through `basis_name(split)` and the content hash.
pub fn run_study(
    data: &StudyData,
    cfg: &ExperimentConfig,
    variants: &[(FeatureKind, Layers)],
    basis_name: impl Fn(usize) -> String,
) -> Result<StudyOutcome, PipelineError> {
    data.check()?;
    let n = data.ids.len();
    let splits: Vec<Split> = cfg
        .split_seeds
        .iter()
        .map(|&s| split(n, cfg.train_count, s))
        .collect::<Result<_, _>>()?;
    let needs_mf = variants.iter().any(|v| v.0 == FeatureKind::Mf);
    let needs_pca = variants.iter().any(|v| v.0 == FeatureKind::Pca);
    let mf = if needs_mf {
        Some(data.dataset(data.mf_features(), FeatureKind::Mf)?)
    } else {
        None
    };
    let mut bases = Vec::new();
    let mut out = Vec::new();
    for (si, sp) in splits.iter().enumerate() {
        let pca = if needs_pca {
            let basis = fit_split_basis(data.geometries, sp, cfg.pca_components, cfg.pca_center)?;
            let feats = pca_features(&basis, data.geometries)?;
            let ds = data.dataset(feats, FeatureKind::Pca)?;
            let desc = FeatureMapDescriptor::Pca {
                basis: basis_name(si),
                sha256: crate::pca::sha256_hex(&basis.to_bytes()),
                n_f: basis.n_features(),
            };
            bases.push(Some(basis));
            Some((ds, desc))
        } else {
            bases.push(None);
            None
        };
        for &(kind, layers) in variants {
            let trained = match kind {
                FeatureKind::Mf => {
                    let ds = mf.as_ref().expect("MF dataset built");
                    train_variant(ds, sp, si, layers, FeatureMapDescriptor::Mf, cfg)?
                }
                FeatureKind::Pca => {
                    let (ds, desc) = pca.as_ref().expect("PCA dataset built");
                    train_variant(ds, sp, si, layers, desc.clone(), cfg)?
                }
            };
            out.push(trained);
        }
    }
    Ok(StudyOutcome {
        splits,
        bases,
        variants: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub feature: FeatureKind,
    pub layers: Layers,
    pub split: usize,
    pub split_seed: u64,
    pub e_rel: f64,
    pub family: KernelFamily,
    pub shape: Option<f64>,
    pub lambda: f64,
    pub a_singular_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub feature: FeatureKind,
    pub layers: Layers,
    pub n_splits: usize,
    pub mean_e_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub splits: Vec<ReportRow>,
    pub means: Vec<MeanRow>,
}

impl Report {
    pub fn mean(&self, feature: FeatureKind, layers: Layers) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.feature == feature && m.layers == layers)
            .map(|m| m.mean_e_rel)
    }
}

/// Per-split rows plus the mean `e_rel` of each variant, in first-seen order.
pub fn build_report(results: &[VariantResult]) -> Report {
    let splits: Vec<ReportRow> = results
        .iter()
        .map(|r| ReportRow {
            feature: r.feature,
            layers: r.layers,
            split: r.split,
            split_seed: r.split_seed,
            e_rel: r.e_rel,
            family: r.family,
            shape: r.shape,
            lambda: r.lambda,
            a_singular_values: r.a_singular_values.clone(),
        })
        .collect();
    let mut order: Vec<(FeatureKind, Layers)> = Vec::new();
    let mut acc: HashMap<(FeatureKind, Layers), (usize, f64)> = HashMap::new();
    for r in &splits {
        let key = (r.feature, r.layers);
        if !acc.contains_key(&key) {
            order.push(key);
        }
        let e = acc.entry(key).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += r.e_rel;
    }
    let means = order
        .into_iter()
        .map(|key| {
            let (n, s) = acc[&key];
            MeanRow {
                feature: key.0,
                layers: key.1,
                n_splits: n,
                mean_e_rel: s / n as f64,
            }
        })
        .collect();
    Report { splits, means }
}

/// Rows mirroring the per-split tables: split, error, kernel, shape or `A`, λ.
pub fn split_table_csv(results: &[VariantResult]) -> String {
    let mut s = String::from("feature,layers,split,e_rel,family,shape,lambda\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{:.16e},{},{},{:.16e}\n",
            r.feature.name(),
            r.layers.name(),
            r.split,
            r.e_rel,
            r.family.name(),
            r.shape.map_or_else(|| "A".to_string(), |v| format!("{v:.16e}")),
            r.lambda
        ));
    }
    s
}

pub fn matrix_csv(a: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in a {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn loss_history_csv(loss: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in loss.iter().enumerate() {
        s.push_str(&format!("{i},{l:.16e}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_f: usize,
    pub layers: Layers,
    pub e_rel: Vec<f64>,
    pub mean_e_rel: f64,
}

/// Mean PCA test error for each feature count.
pub fn sweep_nf(
    data: &StudyData,
    cfg: &ExperimentConfig,
    n_fs: &[usize],
    layers: &[Layers],
) -> Result<Vec<SweepRow>, PipelineError> {
    let mut rows = Vec::new();
    for &n_f in n_fs {
        let c = ExperimentConfig {
            pca_components: n_f,
            ..cfg.clone()
        };
        let variants: Vec<(FeatureKind, Layers)> = layers.iter().map(|&l| (FeatureKind::Pca, l)).collect();
        let out = run_study(data, &c, &variants, |i| format!("sweep-{n_f}-{i}"))?;
        for &l in layers {
            let e: Vec<f64> = out
                .variants
                .iter()
                .filter(|v| v.result.layers == l)
                .map(|v| v.result.e_rel)
                .collect();
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            rows.push(SweepRow {
                n_f,
                layers: l,
                e_rel: e,
                mean_e_rel: mean,
            });
        }
    }
    Ok(rows)
}

/// Header plus `id,v0,v1,…` rows with 17 significant digits.
pub fn write_table(header: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for (id, vals) in rows {
        s.push_str(id);
        for v in vals {
            s.push_str(&format!(",{v:.16e}"));
        }
        s.push('\n');
    }
    s
}

/// Parses an `id,…` table with a header row.
pub fn read_table(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>), PipelineError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| PipelineError::Table("missing header".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let id = cells.next().unwrap_or_default().trim().to_string();
        let vals = cells
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| PipelineError::Table(format!("row {}: {e}", n + 1)))?;
        if vals.len() + 1 != header.len() {
            return Err(PipelineError::Table(format!(
                "row {} has {} columns, header has {}",
                n + 1,
                vals.len() + 1,
                header.len()
            )));
        }
        rows.push((id, vals));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_maps_training_range_to_unit_interval() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 5.0, 2.0, 5.0, 4.0, 5.0]);
        let s = MinMaxScaler::fit(&x);
        let y = s.apply_rows(&x);
        assert_eq!(y.column(0).as_slice(), &[0.0, 0.5, 1.0]);
        assert_eq!(y.column(1).as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn report_means_are_averages() {
        let base = VariantResult {
            feature: FeatureKind::Mf,
            layers: Layers::One,
            split: 0,
            split_seed: 0,
            e_rel: 1e-3,
            family: KernelFamily::Matern1,
            shape: Some(1.0),
            lambda: 1e-2,
            cv_score: 0.0,
            a: None,
            a_singular_values: None,
            cv_table: vec![],
            loss_history: vec![],
        };
        let rs: Vec<VariantResult> = [1e-3, 2e-3, 3e-3]
            .iter()
            .enumerate()
            .map(|(i, &e)| VariantResult {
                split: i,
                e_rel: e,
                ..base.clone()
            })
            .collect();
        let r = build_report(&rs);
        assert_eq!(r.means.len(), 1);
        assert!((r.mean(FeatureKind::Mf, Layers::One).unwrap() - 2e-3).abs() < 1e-18);
        assert!(r.mean(FeatureKind::Pca, Layers::One).is_none());
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![("a".to_string(), vec![0.1, 1.0 / 3.0]), ("b".into(), vec![-2.5, 7e-300])];
        let text = write_table(&["id", "x", "y"], &rows);
        let (h, back) = read_table(&text).unwrap();
        assert_eq!(h, vec!["id", "x", "y"]);
        assert_eq!(back, rows);
        assert!(read_table("id,x\na,1,2\n").is_err());
    }

    #[test]
    fn study_design_is_deterministic() {
        let d = StudyDesign {
            count: 5,
            ..Default::default()
        };
        let a = study_configs(&d);
        assert_eq!(a, study_configs(&d));
        assert_eq!(a[3].0, "s003");
        for (_, c) in &a {
            assert!((0.15..0.5).contains(&c.target_washcoat_fraction));
            c.validate().unwrap();
        }
    }
}

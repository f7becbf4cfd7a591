use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use poresurr::fomlite::{curves_csv, simulate, CdrParams, SolverStats};
use poresurr::kernels::{matrix_to_rows, Kernel};
use poresurr::modelselect::{relative_test_error, FeatureKind};
use poresurr::morphology::{compute_features, MorphFeatures};
use poresurr::pca::{sha256_hex, PcaBasis};
use poresurr::pipeline::{
    build_report, fit_split_basis, loss_history_csv, matrix_csv, pca_features, read_table,
    run_study, split_table_csv, study_configs, sweep_nf, write_table, FeatureMapDescriptor, Layers,
    StudyData, SurrogateModel, VariantResult,
};
use poresurr::twolayer::singular_spectrum;
use poresurr::voxelgeom::{generate_sample, GeometryConfig, VoxelGeometry};

use crate::config::PipelineConfig;
use crate::error::CliError;

const LOCK_NAME: &str = ".poresurr.lock";
const GEOMETRY_MANIFEST: &str = "geometries.json";

pub struct Ctx {
    pub verbose: bool,
}

impl Ctx {
    pub fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock(PathBuf);

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Config(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub id: String,
    pub config: GeometryConfig,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct GenGeomsArgs {
    pub seed: Option<u64>,
    pub n_h: Option<usize>,
    pub target_wf: Option<f64>,
    pub binder_frac: Option<f64>,
    pub count: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn gen_geoms(ctx: &Ctx, cfg: &PipelineConfig, args: &GenGeomsArgs) -> Result<(), CliError> {
    let mut design = cfg.design.clone();
    if let Some(s) = args.seed {
        design.seed = s;
    }
    if let Some(n) = args.n_h {
        design.n_h = n;
    }
    if let Some(t) = args.target_wf {
        design.washcoat_range = [t, t];
    }
    if let Some(b) = args.binder_frac {
        design.binder_range = [b, b];
    }
    if let Some(c) = args.count {
        design.count = c;
    }
    if design.count == 0 {
        return Err(CliError::Config("sample count must be positive".into()));
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.geometry_dir.clone());
    let _lock = DirLock::acquire(&out)?;
    let configs = study_configs(&design);
    for (_, c) in &configs {
        c.validate()?;
    }
    let results: Vec<_> = configs
        .par_iter()
        .map(|(id, c)| (id, c, generate_sample(c)))
        .collect();
    let mut records = Vec::new();
    let mut ok = 0;
    for (id, c, r) in results {
        let error = match r {
            Ok(g) => {
                g.save(out.join(format!("{id}.pvx")))?;
                ok += 1;
                None
            }
            Err(e) => {
                eprintln!("warning: sample {id}: {e}");
                Some(e.to_string())
            }
        };
        records.push(GeometryRecord {
            id: id.clone(),
            config: c.clone(),
            error,
        });
    }
    write(&out.join(GEOMETRY_MANIFEST), to_json(&records))?;
    ctx.log(format!("wrote {ok}/{} geometries to {}", records.len(), out.display()));
    if ok == 0 {
        return Err(CliError::Numeric("every geometry failed to generate".into()));
    }
    Ok(())
}

/// `.pvx` files of a directory, sorted by id.
pub fn list_geometries(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "pvx") {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((id, p));
        }
    }
    if out.is_empty() {
        return Err(CliError::Missing(format!("no .pvx files in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

fn load_geometries(dir: &Path) -> Result<(Vec<String>, Vec<VoxelGeometry>), CliError> {
    let list = list_geometries(dir)?;
    let geoms = list
        .par_iter()
        .map(|(_, p)| VoxelGeometry::load(p).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((list.into_iter().map(|(id, _)| id).collect(), geoms))
}

pub fn features(ctx: &Ctx, input: &Path, out: &Path) -> Result<(), CliError> {
    let (ids, geoms) = load_geometries(input)?;
    let rows: Vec<(String, Vec<f64>)> = ids
        .into_iter()
        .zip(geoms.par_iter().map(|g| compute_features(g).to_array().to_vec()).collect::<Vec<_>>())
        .collect();
    let mut header = vec!["id"];
    header.extend(MorphFeatures::NAMES);
    write(out, write_table(&header, &rows))?;
    ctx.log(format!("wrote features of {} samples to {}", rows.len(), out.display()));
    Ok(())
}

fn load_curves(dataset_dir: &Path) -> Result<HashMap<String, Vec<f64>>, CliError> {
    let path = dataset_dir.join("curves.csv");
    let (_, rows) = read_table(&read(&path)?)?;
    Ok(rows.into_iter().collect())
}

/// Geometries that have a curve, sorted by id, with their curves.
fn load_study(
    geometry_dir: &Path,
    dataset_dir: &Path,
) -> Result<(Vec<String>, Vec<VoxelGeometry>, Vec<Vec<f64>>), CliError> {
    let curves = load_curves(dataset_dir)?;
    let list: Vec<(String, PathBuf)> = list_geometries(geometry_dir)?
        .into_iter()
        .filter(|(id, _)| curves.contains_key(id))
        .collect();
    if list.len() != curves.len() {
        let have: std::collections::HashSet<&String> = list.iter().map(|(id, _)| id).collect();
        let mut missing: Vec<&String> = curves.keys().filter(|id| !have.contains(id)).collect();
        missing.sort();
        return Err(CliError::Missing(format!("geometries for curves {missing:?}")));
    }
    let geoms = list
        .par_iter()
        .map(|(_, p)| VoxelGeometry::load(p).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = list.into_iter().map(|(id, _)| id).collect();
    let cv = ids.iter().map(|id| curves[id].clone()).collect();
    Ok((ids, geoms, cv))
}

pub fn pca_fit(
    ctx: &Ctx,
    cfg: &PipelineConfig,
    geoms_dir: &Path,
    dataset_dir: &Path,
    split_index: usize,
    n_f: usize,
    out: &Path,
) -> Result<(), CliError> {
    let (ids, geoms) = if dataset_dir.join("curves.csv").exists() {
        let (ids, g, _) = load_study(geoms_dir, dataset_dir)?;
        (ids, g)
    } else {
        load_geometries(geoms_dir)?
    };
    let seed = *cfg.experiment.split_seeds.get(split_index).ok_or_else(|| {
        CliError::Config(format!(
            "split {split_index} not configured ({} split seeds)",
            cfg.experiment.split_seeds.len()
        ))
    })?;
    let sp = poresurr::modelselect::split(ids.len(), cfg.experiment.train_count, seed)?;
    let basis = fit_split_basis(&geoms, &sp, n_f, cfg.experiment.pca_center)?;
    let hash = basis.save(out)?;
    println!("{hash}  {}", out.display());
    ctx.log(format!("σ = {:?}", basis.singular_values));
    Ok(())
}

pub fn pca_project(ctx: &Ctx, geoms_dir: &Path, basis: &Path, out: &Path) -> Result<(), CliError> {
    let b = PcaBasis::load(basis)?;
    let (ids, geoms) = load_geometries(geoms_dir)?;
    let feats = pca_features(&b, &geoms)?;
    let names: Vec<String> = (0..b.n_features()).map(|j| format!("pc_{j}")).collect();
    let mut header = vec!["id"];
    header.extend(names.iter().map(String::as_str));
    write(out, write_table(&header, &ids.into_iter().zip(feats).collect::<Vec<_>>()))?;
    ctx.log(format!("wrote {} PCA features to {}", b.n_features(), out.display()));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FomRecord {
    pub id: String,
    pub seed: Option<u64>,
    pub config: Option<GeometryConfig>,
    pub error: Option<String>,
    pub stats: Option<SolverStats>,
    pub cg_iterations: Option<usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FomManifest {
    pub params: CdrParams,
    pub u_in: f64,
    pub samples: Vec<FomRecord>,
}

pub fn fom(ctx: &Ctx, params: &CdrParams, u_in: f64, geoms_dir: &Path, out: &Path) -> Result<(), CliError> {
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let _lock = DirLock::acquire(out)?;
    let (ids, geoms) = load_geometries(geoms_dir)?;
    let known: HashMap<String, GeometryConfig> = match read(&geoms_dir.join(GEOMETRY_MANIFEST)) {
        Ok(text) => serde_json::from_str::<Vec<GeometryRecord>>(&text)
            .map_err(|e| CliError::Config(format!("{GEOMETRY_MANIFEST}: {e}")))?
            .into_iter()
            .map(|r| (r.id, r.config))
            .collect(),
        Err(_) => HashMap::new(),
    };
    let results: Vec<_> = geoms
        .par_iter()
        .map(|g| {
            let t = Instant::now();
            let r = simulate(g, params, u_in);
            (r, t.elapsed().as_secs_f64())
        })
        .collect();
    let mut samples = Vec::new();
    let mut rows: Vec<(&str, Vec<f64>)> = Vec::new();
    for (id, (r, wall)) in ids.iter().zip(results) {
        let cfg = known.get(id).cloned();
        let mut rec = FomRecord {
            id: id.clone(),
            seed: cfg.as_ref().map(|c| c.rng_seed),
            config: cfg,
            error: None,
            stats: None,
            cg_iterations: None,
            wall_time_s: wall,
        };
        match r {
            Ok((curve, stats, cg)) => {
                rec.stats = Some(stats);
                rec.cg_iterations = Some(cg);
                rows.push((id, curve.values));
            }
            Err(e) => {
                eprintln!("warning: sample {id}: {e}");
                rec.error = Some(e.to_string());
            }
        }
        samples.push(rec);
    }
    write(
        &out.join("curves.csv"),
        curves_csv(rows.iter().map(|(id, v)| (*id, v.as_slice())), params.n_t),
    )?;
    write(
        &out.join("manifest.json"),
        to_json(&FomManifest {
            params: params.clone(),
            u_in,
            samples,
        }),
    )?;
    ctx.log(format!("solved {}/{} samples", rows.len(), ids.len()));
    if rows.is_empty() {
        return Err(CliError::Numeric("every FOM solve failed".into()));
    }
    Ok(())
}

fn model_file(kind: FeatureKind, layers: Layers, split: usize) -> String {
    format!("{}-{}-split{split}.json", kind.name(), layers.name())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub file: String,
    pub wall_time_s: f64,
}

pub fn train(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let p = &cfg.paths;
    let (ids, geoms, curves) = load_study(&p.geometry_dir, &p.dataset_dir)?;
    let _lock = DirLock::acquire(&p.models_dir)?;
    let variants: Vec<(FeatureKind, Layers)> = cfg
        .feature_modes
        .iter()
        .flat_map(|&k| cfg.layers.iter().map(move |&l| (k, l)))
        .collect();
    if variants.is_empty() {
        return Err(CliError::Config("no feature modes or layers selected".into()));
    }
    let _pca_lock = if variants.iter().any(|v| v.0 == FeatureKind::Pca) {
        Some(DirLock::acquire(&p.pca_dir)?)
    } else {
        None
    };
    let basis_path = |i: usize| p.pca_dir.join(format!("split{i}.pcab"));
    let data = StudyData {
        ids: &ids,
        geometries: &geoms,
        curves: &curves,
    };
    ctx.log(format!("training {} variants on {} samples", variants.len(), ids.len()));
    let out = run_study(&data, &cfg.experiment, &variants, |i| {
        basis_path(i).display().to_string()
    })?;
    for (i, b) in out.bases.iter().enumerate() {
        if let Some(b) = b {
            b.save(basis_path(i))?;
        }
    }
    let md = &p.models_dir;
    let mut timings = Vec::new();
    let mut results: Vec<VariantResult> = Vec::new();
    for v in &out.variants {
        let r = &v.result;
        let name = model_file(r.feature, r.layers, r.split);
        write(&md.join(&name), to_json(&v.model))?;
        let stem = format!("{}-{}-split{}", r.feature.name(), r.layers.name(), r.split);
        write(
            &md.join(format!("cv-{stem}.csv")),
            poresurr::modelselect::cv_table_csv(&r.cv_table),
        )?;
        if let Some(a) = &r.a {
            write(&md.join(format!("A-{stem}.csv")), matrix_csv(a))?;
            write(&md.join(format!("loss-{stem}.csv")), loss_history_csv(&r.loss_history))?;
        }
        ctx.log(format!(
            "{stem}: e_rel {:.3e}, {} λ={:e}",
            r.e_rel,
            r.family.name(),
            r.lambda
        ));
        timings.push(Timing {
            file: name,
            wall_time_s: v.wall_time_s,
        });
        results.push(r.clone());
    }
    write(&md.join("results.json"), to_json(&results))?;
    write(&md.join("tables.csv"), split_table_csv(&results))?;
    write(&md.join("timings.json"), to_json(&timings))?;
    Ok(())
}

/// Model files of a directory, sorted by name.
fn list_models(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().unwrap_or_default().to_string_lossy();
            n.ends_with(".json") && n.contains("-split") && !n.starts_with("cv-")
        })
        .collect();
    if out.is_empty() {
        return Err(CliError::Missing(format!("no trained models in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

fn kernel_summary(k: &Kernel) -> (poresurr::kernels::KernelFamily, Option<f64>, Option<Vec<Vec<f64>>>) {
    match k {
        Kernel::Shallow(s) => (s.family, Some(s.shape), None),
        Kernel::TwoLayer(t) => (t.base.family, None, Some(matrix_to_rows(&t.a))),
    }
}

pub fn report(ctx: &Ctx, cfg: &PipelineConfig) -> Result<(), CliError> {
    let p = &cfg.paths;
    let models = list_models(&p.models_dir)?;
    let (ids, geoms, curves) = load_study(&p.geometry_dir, &p.dataset_dir)?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut mf_cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut results = Vec::new();
    let mut heatmaps = Vec::new();
    for path in &models {
        let m: SurrogateModel = serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        let test: Vec<usize> = m
            .split
            .test_ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| CliError::Missing(format!("sample {id} of {}", path.display())))
            })
            .collect::<Result<_, _>>()?;
        let basis = match &m.feature_map {
            FeatureMapDescriptor::Mf => None,
            FeatureMapDescriptor::Pca { basis, sha256, .. } => {
                let bp = PathBuf::from(basis);
                let bytes = fs::read(&bp).map_err(|e| CliError::io(&bp, e))?;
                if sha256_hex(&bytes) != *sha256 {
                    return Err(CliError::Missing(format!(
                        "{} does not match the hash recorded in {}",
                        bp.display(),
                        path.display()
                    )));
                }
                Some(PcaBasis::read_from(&bytes[..])?)
            }
        };
        let n_t = m.model.output_dim();
        let mut targets = nalgebra::DMatrix::zeros(test.len(), n_t);
        let mut preds = nalgebra::DMatrix::zeros(test.len(), n_t);
        for (r, &i) in test.iter().enumerate() {
            let f = match &basis {
                None => mf_cache
                    .entry(i)
                    .or_insert_with(|| compute_features(&geoms[i]).to_array().to_vec())
                    .clone(),
                Some(b) => b.project_geometry(&geoms[i])?,
            };
            let s = m
                .predict(&f)
                .map_err(|e| CliError::Numeric(format!("{}: {e}", path.display())))?;
            for t in 0..n_t {
                targets[(r, t)] = curves[i][t];
                preds[(r, t)] = s[t];
            }
        }
        let e_rel = relative_test_error(&targets, &preds)?;
        let (family, shape, a) = kernel_summary(&m.model.kernel);
        let kind = match m.feature_map {
            FeatureMapDescriptor::Mf => FeatureKind::Mf,
            FeatureMapDescriptor::Pca { .. } => FeatureKind::Pca,
        };
        if let Some(a) = &a {
            heatmaps.push((
                format!("A-{}-split{}.csv", kind.name(), m.split.index),
                matrix_csv(a),
            ));
        }
        results.push(VariantResult {
            feature: kind,
            layers: m.layers,
            split: m.split.index,
            split_seed: m.split.seed,
            e_rel,
            family,
            shape,
            lambda: m.model.lambda,
            cv_score: m.cv_score,
            a_singular_values: m.model.kernel.first_layer().map(|a| singular_spectrum(a).values),
            a,
            cv_table: Vec::new(),
            loss_history: Vec::new(),
        });
    }
    // stable order: feature, layers, split
    results.sort_by_key(|r| (r.feature.name(), r.layers.name(), r.split));
    let rep = build_report(&results);
    let rd = &p.reports_dir;
    let _lock = DirLock::acquire(rd)?;
    write(&rd.join("report.json"), to_json(&rep))?;
    write(&rd.join("splits.csv"), split_table_csv(&results))?;
    let mut means = String::from("feature,layers,n_splits,mean_e_rel\n");
    for m in &rep.means {
        means.push_str(&format!(
            "{},{},{},{:.16e}\n",
            m.feature.name(),
            m.layers.name(),
            m.n_splits,
            m.mean_e_rel
        ));
    }
    write(&rd.join("means.csv"), &means)?;
    for (name, csv) in heatmaps {
        write(&rd.join(name), csv)?;
    }
    if ctx.verbose {
        eprint!("{means}");
    }
    Ok(())
}

pub fn sweep(ctx: &Ctx, cfg: &PipelineConfig, n_fs: &[usize], layers: &[Layers]) -> Result<(), CliError> {
    if n_fs.is_empty() || n_fs.contains(&0) {
        return Err(CliError::Config("n_f list must be non-empty and positive".into()));
    }
    let p = &cfg.paths;
    let (ids, geoms, curves) = load_study(&p.geometry_dir, &p.dataset_dir)?;
    let data = StudyData {
        ids: &ids,
        geometries: &geoms,
        curves: &curves,
    };
    let rows = sweep_nf(&data, &cfg.experiment, n_fs, layers)?;
    let rd = &p.reports_dir;
    let _lock = DirLock::acquire(rd)?;
    let mut csv = String::from("n_f,layers,mean_e_rel\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{:.16e}\n", r.n_f, r.layers.name(), r.mean_e_rel));
        ctx.log(format!("n_f {} {}: {:.3e}", r.n_f, r.layers.name(), r.mean_e_rel));
    }
    write(&rd.join("sweep_nf.csv"), csv)?;
    write(&rd.join("sweep_nf.json"), to_json(&rows))?;
    Ok(())
}

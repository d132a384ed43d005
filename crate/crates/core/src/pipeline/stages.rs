use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{fraction_label, SplitMode};
use super::io::{read_text, write_text};
use super::summary::ExperimentSummary;
use super::{Pipeline, Stage};
use crate::augment::{build_augmented_set, KdeModel, Original};
use crate::error::{Error, Result};
use crate::eval::{
    infer as infer_one, mean_mesh, reconstruct_surface, select_test_sets, signed_distance_transform, surface_distance,
    EvalReport, ModelKind, SampleResult,
};
use crate::mesh::Vec3;
use crate::network::{train_with, Dataset, LossSchedule, NetParams, TrainConfig};
use crate::seeds;
use crate::shapemodel::{ModeSelection, PcaSubspace, ScoreVector};
use crate::supershapes::{
    extract_mesh, foreground_mask, rasterize, sample_params, shape_frame, surface_points, ShapeSample,
    SupershapeParams,
};
use crate::uncertainty::{interpolate_to_mesh, uncertainty_fields, write_field, write_vertex_scalars};
use crate::volume::{NormStats, Volume3D};

pub const TEST_SETS: [&str; 3] = ["control", "aleatoric", "epistemic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub lobes: u32,
    pub c1: f64,
    pub c2: f64,
    pub blur: f64,
}

impl SampleRecord {
    pub fn params(&self) -> Result<SupershapeParams> {
        SupershapeParams::new(self.lobes, self.c1, self.c2)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train: Vec<usize>,
    pub control: Vec<usize>,
    pub aleatoric: Vec<usize>,
    pub epistemic: Vec<usize>,
    pub overlap: Vec<usize>,
}

impl SplitRecord {
    pub fn set(&self, name: &str) -> &[usize] {
        match name {
            "control" => &self.control,
            "aleatoric" => &self.aleatoric,
            "epistemic" => &self.epistemic,
            _ => &self.train,
        }
    }
}

/// Index of the generated samples and their split into training originals
/// and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub samples: Vec<SampleRecord>,
    pub split: SplitRecord,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput {
                path: path.into(),
                hint: "run `probshape generate` first".into(),
            });
        }
        let m: Self = serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))?;
        if m.version != 1 {
            return Err(Error::format(path, format!("manifest version {} is not supported", m.version)));
        }
        Ok(m)
    }

    pub fn sample(&self, id: usize) -> &SampleRecord {
        &self.samples[id]
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

fn numbered(dir: &Path, id: usize, ext: &str) -> PathBuf {
    dir.join(format!("{id:04}.{ext}"))
}

fn load_image(dir: &Path, id: usize, dims: [usize; 3]) -> Result<Volume3D> {
    let v = Volume3D::read(&numbered(dir, id, "vol"))?;
    if v.dims() != dims {
        return Err(Error::format(
            numbered(dir, id, "vol"),
            format!("dims {:?} differ from configured {:?}", v.dims(), dims),
        ));
    }
    let (origin, spacing) = shape_frame(dims);
    v.with_geometry(origin, spacing)
}

pub(super) fn generate(p: &Pipeline) -> Result<()> {
    let cfg = &p.cfg;
    let d = &cfg.data;
    let dir = p.stage_dir(Stage::Generate);
    let mut records: Vec<SampleRecord> = Vec::new();
    let push = |params: &SupershapeParams, blur: f64, records: &mut Vec<SampleRecord>| {
        records.push(SampleRecord {
            id: records.len(),
            lobes: params.lobes,
            c1: params.c1,
            c2: params.c2,
            blur,
        });
        records.len() - 1
    };
    let base_blur = cfg.imaging.blur_sigma;
    let mut split = SplitRecord::default();
    match d.split {
        SplitMode::Synthetic => {
            let groups = [
                ("train", d.lobes, d.count, base_blur),
                ("control", d.lobes, d.test_size, base_blur),
                ("aleatoric", d.lobes, d.test_size, d.aleatoric_blur),
                ("epistemic", d.epistemic_lobes, d.test_size, base_blur),
            ];
            for (name, lobes, n, blur) in groups {
                let params = sample_params(lobes, d.exponents, seeds::derive(cfg.seed, &format!("generate/{name}")), n)?;
                let ids: Vec<usize> = params.iter().map(|q| push(q, blur, &mut records)).collect();
                match name {
                    "train" => split.train = ids,
                    "control" => split.control = ids,
                    "aleatoric" => split.aleatoric = ids,
                    _ => split.epistemic = ids,
                }
            }
        }
        SplitMode::Principled => {
            let pool_seed = seeds::derive(cfg.seed, "generate/pool");
            for i in 0..d.count {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::child(pool_seed, i as u64));
                let lobes = if rng.random_bool(d.pool_epistemic_share) { d.epistemic_lobes } else { d.lobes };
                let blur = if rng.random_bool(d.pool_aleatoric_share) { d.aleatoric_blur } else { base_blur };
                let q = sample_params(lobes, d.exponents, rng.random(), 1)?.remove(0);
                push(&q, blur, &mut records);
            }
        }
    }

    let image_seed = seeds::derive(cfg.seed, "generate/image");
    let mut images = Vec::new();
    let mut sdts = Vec::new();
    for r in &records {
        let params = r.params()?;
        let imaging = crate::volume::ImagingConfig {
            blur_sigma: r.blur,
            ..cfg.imaging
        };
        let image = rasterize(&params, d.dims, &imaging, seeds::child(image_seed, r.id as u64))?;
        image.write(&numbered(&dir.join("images"), r.id, "vol"))?;
        surface_points(&params, d.lattice)?.write(&numbered(&dir.join("shapes"), r.id, "pts"))?;
        if d.split == SplitMode::Principled {
            let (_, spacing) = shape_frame(d.dims);
            sdts.push(signed_distance_transform(&foreground_mask(&params, d.dims)?, d.dims, spacing[0]));
            images.push(image.into_data());
        }
    }
    if d.split == SplitMode::Principled {
        let ip: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
        let sp: Vec<&[f32]> = sdts.iter().map(Vec::as_slice).collect();
        let sel = select_test_sets(&ip, &sp, d.test_size, seeds::derive(cfg.seed, "generate/control"))?;
        write_text(&dir.join("selection.json"), &to_json(&sel))?;
        split = SplitRecord {
            train: sel.remainder,
            control: sel.control,
            aleatoric: sel.aleatoric,
            epistemic: sel.epistemic,
            overlap: sel.overlap,
        };
    }
    let manifest = Manifest {
        version: 1,
        samples: records,
        split,
    };
    write_text(&dir.join("manifest.json"), &to_json(&manifest))
}

fn manifest(p: &Pipeline) -> Result<Manifest> {
    Manifest::read(&p.stage_dir(Stage::Generate).join("manifest.json"))
}

/// Training originals used at each fraction: nested prefixes of one seeded
/// permutation.
fn fraction_subsets(p: &Pipeline, m: &Manifest) -> Vec<(f64, Vec<usize>)> {
    let mut perm = m.split.train.clone();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive(p.cfg.seed, "augment/subset")));
    p.cfg
        .augment
        .fractions
        .iter()
        .map(|&f| (f, perm[..p.cfg.originals_at(f, perm.len())].to_vec()))
        .collect()
}

fn write_targets(path: &Path, targets: &[Vec<f64>]) -> Result<()> {
    let mut s = String::new();
    for t in targets {
        let row: Vec<String> = t.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    write_text(path, &s)
}

fn read_targets(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_text(path)?
        .lines()
        .map(|line| {
            line.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::format(path, format!("{v:?}: {e}"))))
                .collect()
        })
        .collect()
}

pub(super) fn augment(p: &Pipeline) -> Result<()> {
    let cfg = &p.cfg;
    let m = manifest(p)?;
    let gen = p.stage_dir(Stage::Generate);
    let dir = p.stage_dir(Stage::Augment);
    for (f, ids) in fraction_subsets(p, &m) {
        let label = fraction_label(f);
        let fdir = dir.join(&label);
        let originals = ids
            .iter()
            .map(|&id| {
                Ok(Original {
                    image: load_image(&gen.join("images"), id, cfg.data.dims)?,
                    shape: ShapeSample::read(&numbered(&gen.join("shapes"), id, "pts"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let shapes: Vec<ShapeSample> = originals.iter().map(|o| o.shape.clone()).collect();
        let pca = PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(cfg.augment.pca_variance))?;
        pca.write(&fdir.join("pca.bin"))?;
        let scores = shapes.iter().map(|s| pca.encode(s)).collect::<Result<Vec<_>>>()?;
        let kde = KdeModel::fit(&pca, &scores, cfg.augment.kernel)?;
        let (n_train, n_val) = cfg.counts_at(f);
        let mut stats = None;
        for (part, n) in [("train", n_train), ("val", n_val)] {
            p.log(format!("augment {label}: {n} {part} samples from {} originals", ids.len()));
            let seed = seeds::derive(cfg.seed, &format!("augment/{label}/{part}"));
            let set = build_augmented_set(&pca, &kde, &originals, n, seed, cfg.augment.tps_lambda)?;
            if part == "train" {
                stats = Some(NormStats::from_volumes(set.iter().map(|a| &a.image))?);
            }
            let mut targets = Vec::with_capacity(n);
            let mut prov = String::from("index,original,seed\n");
            for (i, a) in set.iter().enumerate() {
                a.image.write(&numbered(&fdir.join(part), i, "vol"))?;
                targets.push(pca.whiten(&a.scores)?.values);
                writeln!(prov, "{i},{},{}", ids[a.provenance.source_index], a.provenance.seed).unwrap();
            }
            write_targets(&fdir.join(format!("{part}_targets.csv")), &targets)?;
            write_text(&fdir.join(format!("{part}_provenance.csv")), &prov)?;
        }
        write_text(&fdir.join("norm.json"), &to_json(&stats.expect("train part ran")))?;
        write_text(&fdir.join("originals.json"), &to_json(&ids))?;
    }
    Ok(())
}

struct FractionInputs {
    label: String,
    pca: PcaSubspace,
    stats: NormStats,
}

fn fraction_inputs(p: &Pipeline, f: f64) -> Result<FractionInputs> {
    let label = fraction_label(f);
    let fdir = p.stage_dir(Stage::Augment).join(&label);
    let pca = PcaSubspace::read(&fdir.join("pca.bin"))?;
    let stats: NormStats = read_json(&fdir.join("norm.json"))?;
    stats.check()?;
    Ok(FractionInputs { label, pca, stats })
}

fn load_dataset(p: &Pipeline, inp: &FractionInputs, part: &str) -> Result<Dataset> {
    let fdir = p.stage_dir(Stage::Augment).join(&inp.label);
    let targets = read_targets(&fdir.join(format!("{part}_targets.csv")))?;
    let inputs = (0..targets.len())
        .map(|i| Ok(load_image(&fdir.join(part), i, p.cfg.data.dims)?.normalize(&inp.stats)?.into_data()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(inputs, targets)
}

/// Models trained at fraction `f`.
fn models_at(p: &Pipeline, f: f64) -> Vec<ModelKind> {
    let last = *p.cfg.augment.fractions.last().unwrap();
    let mut models = vec![ModelKind::Uncertain];
    if p.cfg.training.baseline && f == last {
        models.push(ModelKind::Baseline);
    }
    models
}

pub(super) fn train(p: &Pipeline) -> Result<()> {
    let cfg = &p.cfg;
    let dir = p.stage_dir(Stage::Train);
    for &f in &cfg.augment.fractions {
        let inp = fraction_inputs(p, f)?;
        let train_set = load_dataset(p, &inp, "train")?;
        let val_set = load_dataset(p, &inp, "val")?;
        let net_cfg = cfg.network.net_config(cfg.data.dims, inp.pca.num_modes());
        for model in models_at(p, f) {
            let name = model.as_str();
            let tag = format!("train/{}/{name}", inp.label);
            let params = NetParams::<f32>::init(&net_cfg, seeds::derive(cfg.seed, &format!("{tag}/init")))?;
            let tcfg = TrainConfig {
                lr: cfg.training.lr,
                batch_size: cfg.training.batch_size,
                epochs: cfg.training.epochs,
                seed: seeds::derive(cfg.seed, &tag),
                dropout: model == ModelKind::Uncertain,
                schedule: match model {
                    ModelKind::Uncertain => LossSchedule::L2ThenBayesian,
                    ModelKind::Baseline => LossSchedule::L2Only,
                },
            };
            let out = train_with(params, &train_set, &val_set, &tcfg, |r| {
                p.log(format!(
                    "train {} {name}: epoch {} {} train {:.5} val {:.5}",
                    inp.label, r.epoch, r.loss_kind, r.train_loss, r.val_loss
                ))
            })?;
            let fdir = dir.join(&inp.label);
            let net_path = fdir.join(format!("{name}.net"));
            out.params.write(&net_path)?;
            crate::network::write_history(&fdir.join(format!("{name}_history.csv")), &out.history)?;
            if let Some(msg) = out.aborted {
                return Err(Error::Numerical(format!(
                    "{msg}; last good parameters saved to {}",
                    net_path.display()
                )));
            }
        }
    }
    Ok(())
}

/// Normalized test images per set, as `(set name, [(sample id, image)])`.
pub fn load_test_sets(
    generate_dir: &Path,
    manifest: &Manifest,
    dims: [usize; 3],
    stats: &NormStats,
) -> Result<Vec<(&'static str, Vec<(usize, Volume3D)>)>> {
    TEST_SETS
        .iter()
        .map(|&name| {
            let images = manifest
                .split
                .set(name)
                .iter()
                .map(|&id| Ok((id, load_image(&generate_dir.join("images"), id, dims)?.normalize(stats)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((name, images))
        })
        .collect()
}

fn prediction_header(l: usize) -> String {
    let mut cols = vec!["set".to_string(), "sample".to_string()];
    for prefix in ["z", "aleatoric", "epistemic"] {
        cols.extend((0..l).map(|i| format!("{prefix}_{i}")));
    }
    cols.push("mean_aleatoric".into());
    cols.push("mean_epistemic".into());
    cols.join(",")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(super) fn infer(p: &Pipeline) -> Result<()> {
    let cfg = &p.cfg;
    let m = manifest(p)?;
    let gen = p.stage_dir(Stage::Generate);
    let dir = p.stage_dir(Stage::Infer);
    let last = *cfg.augment.fractions.last().unwrap();
    for &f in &cfg.augment.fractions {
        let inp = fraction_inputs(p, f)?;
        let l = inp.pca.num_modes();
        let sets = load_test_sets(&gen, &m, cfg.data.dims, &inp.stats)?;
        let mesh = mean_mesh(&inp.pca, cfg.data.lattice, cfg.inference.mesh_subdivisions)?;
        for model in models_at(p, f) {
            let name = model.as_str();
            let net = NetParams::read(&p.stage_dir(Stage::Train).join(&inp.label).join(format!("{name}.net")))?;
            let mdir = dir.join(&inp.label).join(name);
            let mut csv = prediction_header(l);
            csv.push('\n');
            for (set, images) in &sets {
                p.log(format!("infer {} {name}: {set} ({} images)", inp.label, images.len()));
                let set_seed = seeds::derive(cfg.seed, &format!("infer/{}/{set}", inp.label));
                for (k, (id, image)) in images.iter().enumerate() {
                    let seed = seeds::child(set_seed, *id as u64);
                    let pred = infer_one(&net, &inp.pca, image, model, cfg.inference.samples, seed)?;
                    let empty = vec![String::new(); l].join(",");
                    let (a, e, ma, me) = match &pred.mc {
                        Some(mc) => (
                            join(&mc.aleatoric_var),
                            join(&mc.epistemic_var),
                            mc.mean_aleatoric().to_string(),
                            mc.mean_epistemic().to_string(),
                        ),
                        None => (empty.clone(), empty, String::new(), String::new()),
                    };
                    writeln!(csv, "{set},{id},{},{a},{e},{ma},{me}", join(&pred.z.values)).unwrap();
                    if let (Some(mc), true) = (&pred.mc, f == last && k < cfg.inference.field_images) {
                        let fields = uncertainty_fields(&inp.pca, mc, cfg.inference.field_draws, seed)?;
                        let surface = reconstruct_surface(&inp.pca, &mesh, &pred.z)?;
                        let points: Vec<Vec3> = inp.pca.decode(&pred.z)?.points().collect();
                        let fdir = mdir.join("fields");
                        surface.write_off(&fdir.join(format!("{set}_{id:04}.off")))?;
                        for field in &fields {
                            let kind = field.kind.as_str();
                            write_field(&fdir.join(format!("{set}_{id:04}_{kind}.txt")), &field.values)?;
                            let scalars = interpolate_to_mesh(&field.values, &points, &surface)?;
                            write_vertex_scalars(&fdir.join(format!("{set}_{id:04}_{kind}_vertices.csv")), &scalars)?;
                        }
                    }
                }
            }
            write_text(&mdir.join("predictions.csv"), &csv)?;
        }
    }
    Ok(())
}

struct PredictionRow {
    set: String,
    sample: usize,
    z: Vec<f64>,
    mean_aleatoric: Option<f64>,
    mean_epistemic: Option<f64>,
}

fn read_predictions(path: &Path, l: usize) -> Result<Vec<PredictionRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(prediction_header(l).as_str()) {
        return Err(Error::format(path, format!("header does not match a {l}-mode shape model")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::format(path, format!("{s:?}: {e}")));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    lines
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 3 * l + 4 {
                return Err(Error::format(path, format!("row has {} columns, expected {}", c.len(), 3 * l + 4)));
            }
            Ok(PredictionRow {
                set: c[0].to_string(),
                sample: c[1].parse().map_err(|e| Error::format(path, format!("sample id: {e}")))?,
                z: c[2..2 + l].iter().map(|s| num(s)).collect::<Result<_>>()?,
                mean_aleatoric: opt(c[3 * l + 2])?,
                mean_epistemic: opt(c[3 * l + 3])?,
            })
        })
        .collect()
}

pub(super) fn evaluate(p: &Pipeline) -> Result<()> {
    let cfg = &p.cfg;
    let m = manifest(p)?;
    let dir = p.stage_dir(Stage::Evaluate);
    let mut truths = std::collections::BTreeMap::new();
    for name in TEST_SETS {
        for &id in m.split.set(name) {
            truths.insert(id, extract_mesh(&m.sample(id).params()?, cfg.data.eval_lattice)?);
        }
    }
    for &f in &cfg.augment.fractions {
        let inp = fraction_inputs(p, f)?;
        let mesh = mean_mesh(&inp.pca, cfg.data.lattice, cfg.inference.mesh_subdivisions)?;
        let mut rows = Vec::new();
        for model in models_at(p, f) {
            let path = p
                .stage_dir(Stage::Infer)
                .join(&inp.label)
                .join(model.as_str())
                .join("predictions.csv");
            if !path.exists() {
                return Err(Error::MissingInput {
                    path,
                    hint: "run `probshape infer` first".into(),
                });
            }
            p.log(format!("evaluate {} {}", inp.label, model.as_str()));
            for r in read_predictions(&path, inp.pca.num_modes())? {
                let truth = truths
                    .get(&r.sample)
                    .ok_or_else(|| Error::format(&path, format!("sample {} is not a test sample", r.sample)))?;
                let surface = reconstruct_surface(&inp.pca, &mesh, &ScoreVector::raw(r.z))?;
                rows.push(SampleResult {
                    model: model.as_str().into(),
                    set: r.set,
                    sample: r.sample,
                    distance: surface_distance(&surface, truth)?,
                    mean_aleatoric: r.mean_aleatoric,
                    mean_epistemic: r.mean_epistemic,
                });
            }
        }
        let fdir = dir.join(&inp.label);
        EvalReport::new(rows).write(&fdir.join("report.csv"), &fdir.join("report.json"))?;
    }
    Ok(())
}

pub(super) fn report(p: &Pipeline) -> Result<()> {
    let mut reports = Vec::new();
    for &f in &p.cfg.augment.fractions {
        let path = p.stage_dir(Stage::Evaluate).join(fraction_label(f)).join("report.csv");
        if !path.exists() {
            return Err(Error::MissingInput {
                path,
                hint: "run `probshape evaluate` first".into(),
            });
        }
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        let rows = rdr
            .deserialize::<SampleResult>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(&path, e.to_string()))?;
        reports.push((f, EvalReport::new(rows)));
    }
    let summary = ExperimentSummary::from_reports(p.cfg.seed, &reports);
    summary.write(&p.stage_dir(Stage::Report))
}

//! The four subcommands, callable without going through argument parsing.

use std::path::{Path, PathBuf};

use log::{info, warn};
use vesselscreen_core::evalkit::{
    self, dice, dilate, mean_sd, pixel_overlap, region_overlap, roc_auc, threshold_grid, ConfusionCounts,
    Prediction,
};
use vesselscreen_core::phantom::{self, GENERATOR_VERSION};
use vesselscreen_core::pipeline::{self, PreprocessedVolume};
use vesselscreen_core::saliency::{binarize, grad_cam, SaliencyMap};
use vesselscreen_core::trainer::{self, CvResult, FoldResult, TrainConfig, VesselPrediction};
use vesselscreen_core::vesselnet::VesselNetParams;
use vesselscreen_core::{Dims3, RawVesselVolume, VesselLabel};

use crate::error::{Error, Result};
use crate::manifest::{self, Manifest, ManifestEntry, SubjectEntry};
use crate::reports::{self, LocalizationRow};
use crate::v3d::{self, Voxels};
use crate::{checkpoint, config, fsutil};

/// Environment variable that replaces the configured training seed.
pub const SEED_ENV: &str = "VESSELSCREEN_SEED";
/// Dilation radius applied to lesion masks when checking saliency peaks.
pub const PEAK_DILATION: usize = 2;

#[derive(Debug, Clone)]
pub struct PhantomArgs {
    pub n: usize,
    pub abnormal_frac: f64,
    pub dims: Dims3,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSummary {
    pub subjects: usize,
    pub abnormal_subjects: usize,
    pub vessels: usize,
    pub abnormal_vessels: usize,
    pub manifest: PathBuf,
}

pub fn volume_file(vessel_id: &str) -> String {
    format!("volumes/{}.v3d", vessel_id)
}

pub fn mask_file(vessel_id: &str) -> String {
    format!("masks/{}_mask.v3d", vessel_id)
}

pub fn phantom(args: &PhantomArgs) -> Result<PhantomSummary> {
    if !(args.abnormal_frac > 0.0 && args.abnormal_frac < 1.0) {
        return Err(Error::Usage(format!("--abnormal-frac must lie in (0, 1), got {}", args.abnormal_frac)));
    }
    if args.n < 10 {
        return Err(Error::Usage(format!("--n must be at least 10, got {}", args.n)));
    }
    let ds = phantom::generate_dataset(args.n, args.abnormal_frac, args.dims, args.seed)?;
    fsutil::create_dir(&args.out.join("volumes"))?;
    fsutil::create_dir(&args.out.join("masks"))?;
    let mut entries = Vec::with_capacity(ds.vessels.len());
    for v in &ds.vessels {
        let vp = volume_file(&v.vessel_id);
        let mp = mask_file(&v.vessel_id);
        v3d::write(&args.out.join(&vp), &v3d::Volume { dims: v.dims, voxels: Voxels::U16(v.intensities.clone()) })?;
        let mask = v.mask.clone().unwrap_or_else(|| vec![0; v.dims.len()]);
        v3d::write(&args.out.join(&mp), &v3d::Volume { dims: v.dims, voxels: Voxels::U8(mask) })?;
        entries.push(ManifestEntry {
            vessel_id: v.vessel_id.clone(),
            subject_id: v.subject_id.clone(),
            volume_path: vp,
            mask_path: Some(mp),
            label: v.label.into(),
        });
    }
    let m = Manifest {
        generator_version: Some(GENERATOR_VERSION),
        dims: [ds.dims.w, ds.dims.h, ds.dims.l],
        seed: Some(ds.seed),
        subjects: ds
            .subjects
            .iter()
            .map(|s| SubjectEntry { subject_id: s.subject_id.clone(), label: s.label.into() })
            .collect(),
        entries,
    };
    let path = args.out.join("manifest.json");
    manifest::save(&path, &m)?;
    let summary = PhantomSummary {
        subjects: ds.subjects.len(),
        abnormal_subjects: ds.subjects.iter().filter(|s| s.label.is_abnormal()).count(),
        vessels: ds.vessels.len(),
        abnormal_vessels: ds.vessels.iter().filter(|v| v.label.is_abnormal()).count(),
        manifest: path,
    };
    Ok(summary)
}

/// Command-line settings that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub balance_target: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: TrainOverrides,
    pub jobs: usize,
}

/// Effective configuration: defaults, then the file, then the seed variable,
/// then flags. Without a `processing_dimension` key the manifest dims apply.
pub fn resolve_config(args: &TrainArgs, m: &Manifest, env_seed: Option<&str>) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => {
            let f = config::load(p)?;
            let mut c = f.config.clone();
            if !f.has("processing_dimension") {
                c.dims = m.dims();
            }
            c
        }
        None => TrainConfig { dims: m.dims(), ..TrainConfig::default() },
    };
    if let Some(s) = env_seed {
        c.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{} must be an unsigned integer, got {:?}", SEED_ENV, s)))?;
    }
    let o = &args.overrides;
    if let Some(v) = o.lr {
        c.lr = v;
    }
    if let Some(v) = o.max_epochs {
        c.max_epochs = v;
        c.patience = c.patience.min(v.saturating_sub(1));
    }
    if let Some(v) = o.patience {
        c.patience = v;
    }
    if let Some(v) = o.folds {
        c.folds = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if o.balance_target.is_some() {
        c.balance_target = o.balance_target;
    }
    c.validate()?;
    Ok(c)
}

pub fn fold_file(out: &Path, fold: usize, suffix: &str) -> PathBuf {
    out.join(format!("fold_{}{}", fold, suffix))
}

pub fn train(args: &TrainArgs) -> Result<CvResult> {
    if args.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let m = manifest::load(&args.manifest)?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = resolve_config(args, &m, env_seed.as_deref())?;
    let volumes = manifest::load_volumes(&args.manifest, &m)?;
    let subjects = m.subject_ids();
    let pre = trainer::preprocess_all(&volumes, &cfg)?;
    let splits = trainer::split_folds(&subjects, cfg.folds, cfg.seed)?;
    drop(volumes);

    fsutil::create_dir(&args.out)?;
    fsutil::write_atomic(&args.out.join("run_config.txt"), config::render(&cfg).as_bytes())?;
    crate::tune_allocator();
    info!("training {} folds on {} vessels, dims {}, lr {:e}", cfg.folds, pre.len(), cfg.dims, cfg.lr);

    let write_fold = |f: &FoldResult| -> Result<()> {
        let i = f.split.fold_index;
        checkpoint::save(&fold_file(&args.out, i, ".vnck"), &f.outcome.params)?;
        reports::write_train_log(&fold_file(&args.out, i, "_log.csv"), &f.outcome.log)?;
        reports::write_predictions(&fold_file(&args.out, i, "_predictions.csv"), &f.predictions)
    };
    let mut folds = Vec::with_capacity(splits.len());
    if args.jobs == 1 {
        for split in splits {
            let f = trainer::run_fold(split, &pre, &cfg)?;
            write_fold(&f)?;
            folds.push(f);
        }
    } else {
        let mut pending = splits;
        while !pending.is_empty() {
            let wave: Vec<_> = pending.drain(..args.jobs.min(pending.len())).collect();
            let results: Vec<Result<FoldResult>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .into_iter()
                    .map(|split| s.spawn(|| trainer::run_fold(split, &pre, &cfg).map_err(Error::from)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
            });
            for r in results {
                let f = r?;
                write_fold(&f)?;
                folds.push(f);
            }
        }
    }
    let cv = trainer::summarize(folds);
    let refs: Vec<&FoldResult> = cv.folds.iter().collect();
    reports::write_fold_summary(&args.out.join("folds.csv"), &refs)?;
    reports::write_splits(&args.out.join("splits.csv"), &refs)?;
    Ok(cv)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Training output directory with `fold_<i>_predictions.csv` files (and
    /// checkpoints for localization).
    pub run: Option<PathBuf>,
    /// Extra prediction files, each treated as one fold.
    pub predictions: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub localize: bool,
    pub tau: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSummary {
    /// Correctly classified abnormal vessels that were evaluated.
    pub vessels: usize,
    /// Of those, how many have the saliency peak inside the dilated lesion.
    pub peak_hits: usize,
    pub pixel: ConfusionCounts,
    pub region: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub fold_aucs: Vec<Option<f64>>,
    pub pooled_auc: Option<f64>,
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
    pub localization: Option<LocalizationSummary>,
}

/// Prediction files of a run directory, in fold order.
pub fn run_prediction_files(run: &Path) -> Vec<(usize, PathBuf)> {
    (0..)
        .map(|i| (i, fold_file(run, i, "_predictions.csv")))
        .take_while(|(_, p)| p.exists())
        .collect()
}

pub fn eval(args: &EvalArgs) -> Result<EvalSummary> {
    let mut sources: Vec<(Option<usize>, PathBuf)> = Vec::new();
    if let Some(run) = &args.run {
        let files = run_prediction_files(run);
        if files.is_empty() {
            return Err(Error::input(run, "no fold_<i>_predictions.csv files"));
        }
        sources.extend(files.into_iter().map(|(i, p)| (Some(i), p)));
    }
    sources.extend(args.predictions.iter().map(|p| (None, p.clone())));
    if sources.is_empty() {
        return Err(Error::Usage("give --run or at least one --predictions file".into()));
    }
    if args.localize && (args.run.is_none() || args.manifest.is_none()) {
        return Err(Error::Usage("--localize needs --run and --manifest".into()));
    }
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(Error::Usage(format!("--tau must lie in (0, 1), got {}", args.tau)));
    }
    let folds: Vec<(Option<usize>, Vec<VesselPrediction>)> = sources
        .iter()
        .map(|(i, p)| Ok((*i, reports::read_predictions(p)?)))
        .collect::<Result<_>>()?;
    let pooled: Vec<Prediction> = folds.iter().flat_map(|(_, f)| f.iter().map(VesselPrediction::as_prediction)).collect();
    if pooled.is_empty() {
        return Err(Error::Usage("prediction files hold no rows".into()));
    }
    fsutil::create_dir(&args.out)?;
    let rows = evalkit::threshold_sweep(&pooled, &threshold_grid())?;
    reports::write_metrics(&args.out.join("metrics.csv"), &rows)?;

    let mut fold_aucs = Vec::with_capacity(folds.len());
    for (k, (i, preds)) in folds.iter().enumerate() {
        let p: Vec<Prediction> = preds.iter().map(VesselPrediction::as_prediction).collect();
        let roc = roc_auc(&p).ok();
        if let Some(r) = &roc {
            reports::write_roc(&args.out.join(format!("roc_fold{}.csv", i.unwrap_or(k))), r)?;
        }
        fold_aucs.push(roc.map(|r| r.auc));
    }
    let localization = if args.localize {
        let run = args.run.as_deref().expect("checked above");
        let mpath = args.manifest.as_deref().expect("checked above");
        Some(localize(run, mpath, &folds, args.tau, &args.out)?)
    } else {
        None
    };
    let defined: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
    let (mean_auc, sd_auc) = mean_sd(&defined).map_or((None, None), |(m, s)| (Some(m), s));
    let pooled_roc = roc_auc(&pooled);
    let mut auc_rows: Vec<(String, Option<f64>)> = folds
        .iter()
        .enumerate()
        .map(|(k, (i, _))| (format!("fold{}", i.unwrap_or(k)), fold_aucs[k]))
        .collect();
    auc_rows.push(("pooled".into(), pooled_roc.as_ref().ok().map(|r| r.auc)));
    auc_rows.push(("mean".into(), mean_auc));
    auc_rows.push(("sd".into(), sd_auc));
    reports::write_auc(&args.out.join("auc.csv"), &auc_rows)?;
    let roc = pooled_roc?;
    reports::write_roc(&args.out.join("roc.csv"), &roc)?;
    Ok(EvalSummary { fold_aucs, pooled_auc: Some(roc.auc), mean_auc, sd_auc, localization })
}

/// Binary lesion annotation of a vessel padded to `l` frames.
pub fn annotation(raw: &RawVesselVolume, l: usize) -> Vec<bool> {
    let mut a: Vec<bool> = match &raw.mask {
        Some(m) => m.iter().map(|&v| v != 0).collect(),
        None => vec![false; raw.dims.len()],
    };
    a.resize(raw.dims.frame_len() * l, false);
    a
}

/// Whether the map's first global maximum lies in the lesion mask dilated
/// by [`PEAK_DILATION`].
pub fn peak_in_lesion(map: &SaliencyMap, lesion: &[bool]) -> Result<bool> {
    let grown = dilate(map.dims, lesion, PEAK_DILATION)?;
    Ok(!map.is_zero() && grown[map.argmax()])
}

fn localize(
    run: &Path,
    manifest_path: &Path,
    folds: &[(Option<usize>, Vec<VesselPrediction>)],
    tau: f64,
    out: &Path,
) -> Result<LocalizationSummary> {
    let m = manifest::load(manifest_path)?;
    let mut rows = Vec::new();
    let (mut pixel, mut region) = (ConfusionCounts::default(), ConfusionCounts::default());
    let (mut vessels, mut peak_hits) = (0, 0);
    for (i, preds) in folds {
        let Some(i) = i else { continue };
        let params: VesselNetParams<f32> = checkpoint::load(&fold_file(run, *i, ".vnck"))?;
        let l = params.config.input_dims.l;
        for p in preds.iter().filter(|p| p.label == VesselLabel::Abnormal && p.p_abnormal >= 0.5) {
            let entry = m
                .entries
                .iter()
                .find(|e| e.vessel_id == p.vessel_id)
                .ok_or_else(|| Error::input(manifest_path, format!("vessel {} not in manifest", p.vessel_id)))?;
            let raw = manifest::load_entry(manifest_path, &m, entry)?;
            let vol = pipeline::preprocess(&raw, l)?;
            let map = grad_cam(&params, &vol, VesselLabel::Abnormal.class_index())?;
            let ann = annotation(&raw, l);
            let sal = binarize(&map, tau)?;
            let pc = pixel_overlap(vol.dims, &sal, &ann)?;
            let rc = region_overlap(vol.dims, &sal, &ann)?;
            vessels += 1;
            peak_hits += usize::from(peak_in_lesion(&map, &ann)?);
            rows.push(loc_row(&p.vessel_id, "pixel", pc, true));
            rows.push(loc_row(&p.vessel_id, "region", rc, false));
            pixel += pc;
            region += rc;
        }
    }
    if vessels > 0 {
        rows.push(loc_row("ALL", "pixel", pixel, true));
        rows.push(loc_row("ALL", "region", region, false));
    }
    reports::write_localization(&out.join("localization.csv"), &rows)?;
    info!("localization: saliency peak inside the dilated lesion for {}/{} vessels", peak_hits, vessels);
    Ok(LocalizationSummary { vessels, peak_hits, pixel, region })
}

fn loc_row(vessel_id: &str, level: &'static str, c: ConfusionCounts, tn_defined: bool) -> LocalizationRow {
    let sensitivity = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
    LocalizationRow { vessel_id: vessel_id.into(), level, counts: c, tn_defined, dice: dice(c), sensitivity }
}

#[derive(Debug, Clone)]
pub struct SaliencyArgs {
    pub model: PathBuf,
    pub volume: PathBuf,
    pub tau: f64,
    pub class_index: usize,
    /// Heat map path; the slice image and mask are written next to it.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyOutputs {
    pub map: PathBuf,
    pub slice: PathBuf,
    pub mask: PathBuf,
    pub zero_map: bool,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{}{}", stem, suffix))
}

/// Loads a volume for a model with input `model`: raw `u16` volumes are
/// clamped and normalized, `f32` volumes must already lie in `[0, 1]`.
fn load_for_model(path: &Path, model: Dims3) -> Result<PreprocessedVolume> {
    let vol = v3d::read(path)?;
    let d = vol.dims;
    if d.w != model.w || d.h != model.h || d.l > model.l {
        return Err(Error::input(path, format!("volume dims {} do not fit model input {}", d, model)));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let pre = match vol.voxels {
        Voxels::U16(intensities) => {
            let raw = RawVesselVolume {
                dims: d,
                intensities,
                mask: None,
                subject_id: String::new(),
                vessel_id: id,
                label: VesselLabel::Normal,
            };
            pipeline::normalize(&pipeline::clamp(&raw)?)?
        }
        Voxels::F32(values) => {
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::input(path, "f32 volumes must hold normalized values in [0, 1]"));
            }
            let mut v = pipeline::blank(d, &id, VesselLabel::Normal);
            v.values = values;
            v
        }
        Voxels::U8(_) => return Err(Error::input(path, "expected a u16 or f32 volume, found a u8 mask")),
    };
    Ok(pipeline::pad_to_length(&pre, model.l)?)
}

/// Central longitudinal slice (`y` at the middle row) as an 8-bit PGM with
/// one column per frame.
pub fn central_slice_pgm(map: &SaliencyMap) -> Vec<u8> {
    let d = map.dims;
    let y = d.h / 2;
    let mut out = format!("P5\n{} {}\n255\n", d.l, d.w).into_bytes();
    for x in 0..d.w {
        for z in 0..d.l {
            out.push((map.values[d.index(x, y, z)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn saliency(args: &SaliencyArgs) -> Result<SaliencyOutputs> {
    let params = checkpoint::load(&args.model)?;
    let model = params.config.input_dims;
    let original = v3d::read(&args.volume)?.dims;
    let vol = load_for_model(&args.volume, model)?;
    let full = grad_cam(&params, &vol, args.class_index)?;
    let mut map = full.clone();
    map.dims = original;
    map.values.truncate(original.len());
    if map.is_zero() {
        warn!("saliency map for {} is identically zero", args.volume.display());
    }
    let mask = binarize(&map, args.tau)?;
    let outputs = SaliencyOutputs {
        map: args.out.clone(),
        slice: sibling(&args.out, "_slice.pgm"),
        mask: sibling(&args.out, "_mask.v3d"),
        zero_map: map.is_zero(),
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fsutil::create_dir(dir)?;
    }
    v3d::write(&outputs.map, &v3d::Volume { dims: original, voxels: Voxels::F32(map.values.clone()) })?;
    fsutil::write_atomic(&outputs.slice, &central_slice_pgm(&map))?;
    let mask_u8 = mask.iter().map(|&b| u8::from(b)).collect();
    v3d::write(&outputs.mask, &v3d::Volume { dims: original, voxels: Voxels::U8(mask_u8) })?;
    Ok(outputs)
}

/// Formats an optional value for console output.
pub fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.4}", x))
}

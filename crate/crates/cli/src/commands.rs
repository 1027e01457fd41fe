use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use facealign::attention::FeatureMap;
use facealign::config::{KeyValueConfig, RunConfig};
use facealign::dataset::{
    dataset_bytes, generate_dataset, read_dataset, render_sample_with, write_dataset, Dataset,
    SamplerConfig,
};
use facealign::evaluation::{
    evaluate, nme, report_csv, report_text, write_overlay, ConstantPredictor, PerfectPredictor,
    Predictor,
};
use facealign::gradcheck::{self, GradcheckOptions};
use facealign::hash::sha256_hex;
use facealign::morphable_model::{
    basis_bytes, export_mesh, generate_synthetic_basis, load_basis, project, save_basis,
    synthesize_shape,
};
use facealign::regressor::{predict, train, Checkpoint};
use facealign::{Error, Landmarks2D, MorphableBasis, ParamVector};

use crate::image::read_ppm;
use crate::{CliError, CliResult, Command};

fn set<T: ToString>(cfg: &mut RunConfig, key: &str, value: Option<T>) -> CliResult {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn dispatch(command: Command, cfg: &mut RunConfig) -> CliResult {
    match command {
        Command::GenBasis { seed, vertices, out } => {
            set(cfg, "basis.seed", seed)?;
            set(cfg, "basis.vertices", vertices)?;
            cfg.basis.validate()?;
            gen_basis(cfg, &out)
        }
        Command::GenData { basis, out, count, size, seed } => {
            set(cfg, "sampler.count", count)?;
            set(cfg, "sampler.size", size)?;
            set(cfg, "backbone.input_size", size)?;
            set(cfg, "sampler.seed", seed)?;
            cfg.validate()?;
            gen_data(cfg, &basis, &out)
        }
        Command::Train {
            basis,
            data,
            out,
            metrics,
            epochs,
            lr0,
            decay,
            patience,
            loss,
            batch_size,
        } => {
            set(cfg, "train.epochs", epochs)?;
            set(cfg, "train.lr0", lr0)?;
            set(cfg, "train.decay", decay)?;
            set(cfg, "train.patience", patience)?;
            set(cfg, "train.loss", loss)?;
            set(cfg, "train.batch_size", batch_size)?;
            cfg.validate()?;
            cmd_train(cfg, &basis, &data, &out, &metrics)
        }
        Command::Eval {
            basis,
            data,
            checkpoint,
            perfect,
            mean_shape,
            report,
            csv,
            overlays,
            overlay_count,
        } => {
            cfg.validate()?;
            let opts = EvalOptions {
                checkpoint: checkpoint.as_deref(),
                perfect,
                mean_shape,
                report: report.as_deref(),
                csv: csv.as_deref(),
                overlays: overlays.as_deref(),
                overlay_count,
            };
            cmd_eval(cfg, &basis, &data, &opts)
        }
        Command::Fit { checkpoint, basis, data, index, image, out_dir } => {
            let source = match (data, index, image) {
                (Some(d), Some(i), None) => Source::Record(d, i),
                (None, None, Some(p)) => Source::Image(p),
                _ => {
                    return Err(CliError::Usage(
                        "fit needs either --data with --index, or --image".into(),
                    ))
                }
            };
            cmd_fit(&checkpoint, &basis, source, &out_dir)
        }
        Command::ExportMesh { basis, params, out } => cmd_export_mesh(&basis, &params, &out),
        Command::Gradcheck { seed, seeds, inject_fault } => {
            let flip_wing_sign = match inject_fault.as_deref() {
                None => false,
                Some("wing") => true,
                Some(other) => {
                    return Err(CliError::Usage(format!(
                        "unknown fault {other:?}; only \"wing\" can be injected"
                    )))
                }
            };
            if seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            cmd_gradcheck(&GradcheckOptions { seed, seeds, flip_wing_sign })
        }
    }
}

fn gen_basis(cfg: &RunConfig, out: &Path) -> CliResult {
    let basis = generate_synthetic_basis(cfg.basis.seed, cfg.basis.vertices)?;
    save_basis(&basis, out)?;
    println!("{}  {}", sha256_hex(&basis_bytes(&basis)), out.display());
    log::info!(
        "basis: {} vertices, fingerprint {}",
        basis.num_vertices(),
        basis.fingerprint()
    );
    Ok(())
}

fn gen_data(cfg: &RunConfig, basis_path: &Path, out: &Path) -> CliResult {
    let basis = load_basis(basis_path)?;
    let ds = generate_dataset(&cfg.sampler, &basis, cfg.workers)?;
    write_dataset(&ds, out)?;
    let occluded = ds.records.iter().filter(|r| r.occluded).count();
    println!("{}  {}", sha256_hex(&dataset_bytes(&ds)), out.display());
    log::info!(
        "dataset: {} records of {}×{}, {occluded} occluded, config {}",
        ds.len(),
        ds.size,
        ds.size,
        ds.config_hash
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, basis_path: &Path, data: &Path, out: &Path, metrics: &Path) -> CliResult {
    let basis = load_basis(basis_path)?;
    let ds = read_dataset(data)?;
    let outcome = train(&ds, &basis, &cfg.backbone, &cfg.train, cfg.workers)?;
    outcome.checkpoint.save(out)?;
    write(metrics, outcome.metrics_csv())?;
    let first = outcome.metrics.first().map_or(f64::NAN, |m| m.val_nme);
    let last = outcome.metrics.last().map_or(f64::NAN, |m| m.val_nme);
    println!(
        "trained {} epochs: val NME {:.4} (epoch 0) {first:.4} (epoch 1) {last:.4} (final), config {}",
        outcome.metrics.len(),
        outcome.baseline_val_nme,
        outcome.checkpoint.config_hash
    );
    Ok(())
}

struct EvalOptions<'a> {
    checkpoint: Option<&'a Path>,
    perfect: bool,
    mean_shape: bool,
    report: Option<&'a Path>,
    csv: Option<&'a Path>,
    overlays: Option<&'a Path>,
    overlay_count: usize,
}

fn load_checkpoint(path: &Path, basis: &MorphableBasis) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    ck.check_basis(basis.fingerprint())?;
    Ok(ck)
}

fn cmd_eval(cfg: &RunConfig, basis_path: &Path, data: &Path, opts: &EvalOptions) -> CliResult {
    let basis = load_basis(basis_path)?;
    let ds = read_dataset(data)?;
    ds.check_basis(&basis)?;
    let mut predictors: Vec<Box<dyn Predictor>> = Vec::new();
    if let Some(path) = opts.checkpoint {
        predictors.push(Box::new(load_checkpoint(path, &basis)?));
    }
    if opts.mean_shape {
        predictors.push(Box::new(ConstantPredictor::mean_shape(&ds)));
    }
    if opts.perfect {
        predictors.push(Box::new(PerfectPredictor));
    }
    if predictors.is_empty() {
        return Err(CliError::Usage(
            "eval needs --checkpoint, --perfect or --mean-shape".into(),
        ));
    }
    let tables = predictors
        .iter()
        .map(|p| evaluate(p.as_ref(), &ds, &basis, cfg.workers))
        .collect::<Result<Vec<_>, _>>()?;
    let text = report_text(&tables);
    print!("{text}");
    if let Some(path) = opts.report {
        write(path, &text)?;
    }
    if let Some(path) = opts.csv {
        write(path, report_csv(&tables))?;
    }
    if let Some(dir) = opts.overlays {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let predictor = predictors[0].as_ref();
        for (i, record) in ds.records.iter().take(opts.overlay_count).enumerate() {
            let pred = project(&basis, &predictor.predict(record)?)?;
            write_overlay(
                &dir.join(format!("overlay_{i:04}.ppm")),
                &record.image,
                ds.size,
                &record.landmarks_g,
                &pred,
            )?;
        }
    }
    Ok(())
}

enum Source {
    Record(std::path::PathBuf, usize),
    Image(std::path::PathBuf),
}

struct Fitted {
    params: ParamVector,
    landmarks: Landmarks2D,
}

fn fit_image(ck: &Checkpoint, basis: &MorphableBasis, image: &[f32]) -> CliResult<Fitted> {
    let s = ck.backbone_config.input_size;
    let map = FeatureMap::new(3, s, s, image.iter().map(|&v| v as f64).collect())?;
    let params = predict(&map, ck, &ck.whitening)?;
    let landmarks = project(basis, &params)?;
    Ok(Fitted { params, landmarks })
}

fn load_record(data: &Path, index: usize, basis: &MorphableBasis) -> CliResult<Dataset> {
    let ds = read_dataset(data)?;
    ds.check_basis(basis)?;
    if index >= ds.len() {
        return Err(CliError::Usage(format!(
            "--index {index} out of range for {} records in {}",
            ds.len(),
            data.display()
        )));
    }
    Ok(ds)
}

fn cmd_fit(ck_path: &Path, basis_path: &Path, source: Source, out_dir: &Path) -> CliResult {
    let basis = load_basis(basis_path)?;
    let ck = load_checkpoint(ck_path, &basis)?;
    let s = ck.backbone_config.input_size;
    let (image, truth, dataset) = match &source {
        Source::Record(data, index) => {
            let ds = load_record(data, *index, &basis)?;
            if ds.size != s {
                return Err(Error::Shape(format!(
                    "{} holds {}×{} crops, checkpoint expects {s}×{s}",
                    data.display(),
                    ds.size,
                    ds.size
                ))
                .into());
            }
            let r = &ds.records[*index];
            (r.image.clone(), Some(r.landmarks_g.clone()), Some((ds, *index)))
        }
        Source::Image(path) => {
            let (w, h, pixels) = read_ppm(path)?;
            if (w, h) != (s, s) {
                return Err(Error::Shape(format!(
                    "{} is {w}×{h}, checkpoint expects {s}×{s}",
                    path.display()
                ))
                .into());
            }
            (pixels, None, None)
        }
    };

    let fitted = fit_image(&ck, &basis, &image)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut params = String::new();
    for v in fitted.params.as_slice() {
        let _ = writeln!(params, "{v}");
    }
    write(&out_dir.join("params.txt"), params)?;
    let mut csv = String::from("x,y\n");
    for p in fitted.landmarks.points() {
        let _ = writeln!(csv, "{},{}", p[0], p[1]);
    }
    write(&out_dir.join("landmarks.csv"), csv)?;
    let shape = synthesize_shape(&basis, fitted.params.alpha_id(), fitted.params.alpha_exp())?;
    export_mesh(&shape, &basis, &out_dir.join("mesh.obj"))?;
    // Without labels the crosses mark the prediction as well.
    let truth_or_pred = truth.as_ref().unwrap_or(&fitted.landmarks);
    write_overlay(&out_dir.join("overlay.ppm"), &image, s, truth_or_pred, &fitted.landmarks)?;

    if let Some(truth) = &truth {
        println!("NME {:.4}", nme(&fitted.landmarks, truth)?);
    }
    if let Some((ds, index)) = dataset {
        let sampler = SamplerConfig::parse(&ds.config_text)?;
        let record = &ds.records[index];
        let mut line = String::new();
        for (label, occlude) in [("clean", false), ("occluded", true)] {
            let mut r = render_sample_with(&record.p_g, &basis, &sampler, index as u64, Some(occlude), None)?;
            r.quantize();
            let f = fit_image(&ck, &basis, &r.image)?;
            let e = nme(&f.landmarks, &r.landmarks_g)?;
            write_overlay(&out_dir.join(format!("overlay_{label}.ppm")), &r.image, s, &r.landmarks_g, &f.landmarks)?;
            let _ = write!(line, "{label} NME {e:.4}  ");
        }
        println!("{}", line.trim_end());
    }
    Ok(())
}

fn cmd_export_mesh(basis_path: &Path, params_path: &Path, out: &Path) -> CliResult {
    let basis = load_basis(basis_path)?;
    let text = fs::read_to_string(params_path).map_err(|e| Error::io(params_path, e))?;
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse {
            path: params_path.to_path_buf(),
            offset: 0,
            record: None,
            message: format!("invalid number: {e}"),
        })?;
    let params = ParamVector::from_slice(&values)?;
    let shape = synthesize_shape(&basis, params.alpha_id(), params.alpha_exp())?;
    export_mesh(&shape, &basis, out)?;
    println!("{} vertices, {} triangles  {}", basis.num_vertices(), basis.triangles().len(), out.display());
    Ok(())
}

fn cmd_gradcheck(opts: &GradcheckOptions) -> CliResult {
    let report = gradcheck::run(opts)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: {}",
            report.failures().join(", ")
        )))
    }
}

use std::path::Path;

use anyhow::{Context, Result};
use freqct::checkpoint::{load_checkpoint, save_parameters};
use freqct::config::{ModelConfig, TrainConfig};
use freqct::geometry::io::{load_geometry, read_projections, read_volume, write_atomic, write_projections, write_volume};
use freqct::geometry::phantom::{random_ellipsoids, rasterize, shepp_logan_ellipsoids};
use freqct::geometry::{forward_project, ConeBeamGeometry};
use freqct::metrics::{evaluate_case, metrics_csv};
use freqct::model::Model;
use freqct::sart::sart_reconstruct;
use freqct::spectral::{saving_ratio, Ratio};
use freqct::train::{loss_log_csv, LossRecord, TrainingCase};
use serde::Serialize;

use crate::data::{self, Case};
use crate::manifest::Run;
use crate::{usage, CountArgs, EvaluateArgs, Phantom, ReconstructArgs, SartArgs, SimulateArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct SimulateConfig {
    phantom: String,
    size: usize,
    views: usize,
    geometry: ConeBeamGeometry,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut run = Run::start("simulate");
    if a.views == 0 {
        return Err(usage("--views must be at least 1"));
    }
    let mut geom = match &a.geometry {
        Some(p) => {
            run.input(p);
            load_geometry(p)?
        }
        None => {
            let n = a.size.unwrap_or(48);
            ConeBeamGeometry { vol_shape: [n; 3], ..ConeBeamGeometry::desk(a.views) }
        }
    };
    let size = a.size.unwrap_or(geom.vol_shape[0]);
    if geom.vol_shape != [size; 3] {
        return Err(usage(format!("--size {size} does not match the geometry's volume shape {:?}", geom.vol_shape)));
    }
    geom.angles_deg = ConeBeamGeometry::uniform_angles(a.views);
    let (_, spacing) = geom.volume_layout();
    let ellipsoids = match a.phantom {
        Phantom::Shepp3d => shepp_logan_ellipsoids(),
        Phantom::RandomEllipsoids => random_ellipsoids(a.seed),
    };
    let volume = rasterize::<f32>(&ellipsoids, size, spacing)?;
    let proj = forward_project(&volume, &geom)?;

    create_dir(&a.out)?;
    let (pp, vp) = (a.out.join(data::PROJ), a.out.join(data::VOLUME));
    write_projections(&pp, &proj)?;
    write_volume(&vp, &volume)?;
    run.output(&pp);
    run.output(&vp);
    let phantom = match a.phantom {
        Phantom::Shepp3d => "shepp3d",
        Phantom::RandomEllipsoids => "random_ellipsoids",
    };
    let cfg = SimulateConfig { phantom: phantom.into(), size, views: a.views, geometry: geom };
    run.finish(&a.out, &cfg, Some(a.seed))?;
    Ok(())
}

/// Loads a training configuration, naming the offending key on failure.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// Trains a fresh model; with `out`, writes the initial checkpoint, one every `ckpt_every`
/// epochs, the final one and the loss log.
pub fn train_model(cfg: &TrainConfig, cases: &[Case], out: Option<&Path>, ckpt_every: usize) -> Result<(Model<f32>, Vec<LossRecord>)> {
    let det = cases[0].data.projections.geometry.det_pixels;
    let mut model = Model::<f32>::new(&cfg.model, (det[0], det[1]), cfg.seed).map_err(|e| usage(e.to_string()))?;
    let ckpt = out.map(|o| o.join("model.json"));
    if let Some(p) = &ckpt {
        save_parameters(p, &model.network, &model.params, 0)?;
    }
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let network = model.network.clone();
    let steps_per_epoch = cases.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let training: Vec<TrainingCase<f32>> = cases.iter().map(|c| c.data.clone()).collect();
    let log = freqct::train::train(&mut model, &training, cfg, |rec, params| {
        let end_of_epoch = (rec.step + 1) % steps_per_epoch == 0;
        let due = end_of_epoch && ((rec.epoch + 1) % ckpt_every == 0 || rec.step + 1 == total);
        if let (Some(p), true) = (&ckpt, due) {
            save_parameters(p, &network, params, rec.step + 1)?;
        }
        Ok(())
    })
    .context("training stopped; the last saved checkpoint is kept")?;
    if let Some(o) = out {
        write_atomic(&o.join("loss.csv"), loss_log_csv(&log).as_bytes())?;
    }
    Ok((model, log))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut run = Run::start("train");
    let mut cfg = load_train_config(&a.config)?;
    run.input(&a.config);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.ckpt_every == 0 {
        return Err(usage("--ckpt-every must be at least 1"));
    }
    let cases = data::load_cases(&a.data)?;
    run.input(&a.data);
    create_dir(&a.out)?;
    let (_, log) = train_model(&cfg, &cases, Some(&a.out), a.ckpt_every)?;
    run.output(&a.out.join("model.json"));
    if !log.is_empty() {
        run.output(&a.out.join("loss.csv"));
        let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
        println!("trained {} steps, initial loss {:.6e}, final loss {:.6e}", log.len(), log[0].loss, last);
    }
    run.finish(&a.out, &cfg, Some(cfg.seed))?;
    Ok(())
}

#[derive(Serialize)]
struct ReconstructConfig {
    chunk: usize,
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let mut run = Run::start("reconstruct");
    if a.chunk == 0 {
        return Err(usage("--chunk must be at least 1"));
    }
    let (model, manifest) = load_checkpoint::<f32>(&a.ckpt)?;
    let proj = read_projections::<f32>(&a.proj)?;
    run.input(&a.ckpt);
    run.input(&a.proj);
    if proj.geometry.det_pixels != manifest.det_pixels {
        return Err(usage(format!(
            "projections have detector {:?} but the checkpoint was built for {:?}",
            proj.geometry.det_pixels, manifest.det_pixels
        )));
    }
    let vol = model.reconstruct(&proj, a.chunk)?;
    create_parent(&a.out)?;
    write_volume(&a.out, &vol)?;
    run.output(&a.out);
    run.finish(&a.out, &ReconstructConfig { chunk: a.chunk }, None)?;
    Ok(())
}

#[derive(Serialize)]
struct SartConfig {
    iterations: usize,
    relaxation: f64,
}

pub fn baseline_sart(a: SartArgs) -> Result<()> {
    let mut run = Run::start("baseline-sart");
    let proj = read_projections::<f32>(&a.proj)?;
    run.input(&a.proj);
    let vol = sart_reconstruct(&proj, a.iters, a.lambda)?;
    create_parent(&a.out)?;
    write_volume(&a.out, &vol)?;
    run.output(&a.out);
    run.finish(&a.out, &SartConfig { iterations: a.iters, relaxation: a.lambda }, None)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluateConfig {
    case_id: String,
    roi: bool,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut run = Run::start("evaluate");
    let pred = read_volume::<f64>(&a.pred)?;
    let gt = read_volume::<f64>(&a.gt)?;
    run.input(&a.pred);
    run.input(&a.gt);
    let roi = match &a.roi {
        Some(p) => {
            run.input(p);
            Some(read_volume::<f64>(p)?)
        }
        None => None,
    };
    let case_id = a.case_id.clone().unwrap_or_else(|| a.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let row = evaluate_case(&case_id, &pred, &gt, roi.as_ref())?;
    create_parent(&a.out)?;
    write_atomic(&a.out, metrics_csv(std::slice::from_ref(&row)).as_bytes())?;
    run.output(&a.out);
    println!("{case_id}: psnr {:.3} dB, ssim {:.3}%, w-psnr {:.3} dB, w-ssim {:.3}%", row.psnr_db, row.ssim_pct, row.w_psnr_db, row.w_ssim_pct);
    run.finish(&a.out, &EvaluateConfig { case_id, roi: a.roi.is_some() }, None)?;
    Ok(())
}

#[derive(Serialize)]
pub struct CountRow {
    pub layer: String,
    pub c_in: u64,
    pub c_out: u64,
    pub modes1: u64,
    pub modes2: u64,
    pub full_params: u64,
    pub scf_params: u64,
}

fn ratio_cells(full: u64, scf: u64) -> (String, String) {
    let r = Ratio::new(scf, full);
    let pct = 100.0 * scf as f64 / full as f64;
    (format!("{}/{}", r.numer(), r.denom()), format!("{pct:.2}%"))
}

fn count_csv(rows: &[CountRow]) -> String {
    let mut s = String::from("layer,c_in,c_out,modes1,modes2,full_params,scf_params,ratio,ratio_pct\n");
    for r in rows {
        let (ratio, pct) = ratio_cells(r.full_params, r.scf_params);
        s.push_str(&format!("{},{},{},{},{},{},{},{},{}\n", r.layer, r.c_in, r.c_out, r.modes1, r.modes2, r.full_params, r.scf_params, ratio, pct));
    }
    s
}

/// Model or training configuration, told apart by the `model` key.
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let cfg: ModelConfig = if value.get("model").is_some() {
        serde_json::from_value::<TrainConfig>(value).map(|t| t.model)
    } else {
        serde_json::from_value(value)
    }
    .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct CountConfig {
    model: Option<ModelConfig>,
    det_pixels: Vec<usize>,
    layer: Option<Vec<u64>>,
}

pub fn count_params(a: CountArgs) -> Result<()> {
    let mut run = Run::start("count-params");
    let mut model_cfg = None;
    let mut rows = Vec::new();
    let mut other = None;
    if a.det_pixels.len() != 2 {
        return Err(usage("--det-pixels takes H,W"));
    }
    if let Some(l) = &a.layer {
        if l.len() != 4 {
            return Err(usage("--layer takes C_in,C_out,M1,M2"));
        }
        let (c_in, c_out, m1, m2) = (l[0], l[1], l[2], l[3]);
        let full = freqct::spectral::count_params_full(c_in, c_out, m1, m2).map_err(|e| usage(e.to_string()))?;
        let scf = freqct::spectral::count_params_scf(c_in, c_out, m1, m2)?;
        rows.push(CountRow { layer: "layer".into(), c_in, c_out, modes1: m1, modes2: m2, full_params: full, scf_params: scf });
    } else if let Some(p) = &a.config {
        run.input(p);
        let cfg = load_model_config(p)?;
        let det = (a.det_pixels[0], a.det_pixels[1]);
        let m = Model::<f32>::new(&ModelConfig { factorized: true, ..cfg.clone() }, det, 0).map_err(|e| usage(e.to_string()))?;
        for l in m.network.spectral_layers() {
            rows.push(CountRow {
                layer: l.name,
                c_in: l.c_in as u64,
                c_out: l.c_out as u64,
                modes1: l.modes1 as u64,
                modes2: l.modes2 as u64,
                full_params: l.full_params,
                scf_params: l.scf_params,
            });
        }
        let scf_total: u64 = rows.iter().map(|r| r.scf_params).sum();
        other = Some(m.params.count() as u64 - scf_total);
        model_cfg = Some(cfg);
    } else {
        return Err(usage("give --config or --layer"));
    }

    println!("{:<22} {:>6} {:>6} {:>4} {:>4} {:>14} {:>12} {:>12} {:>8}", "layer", "c_in", "c_out", "m1", "m2", "full", "scf", "ratio", "pct");
    for r in &rows {
        let (ratio, pct) = ratio_cells(r.full_params, r.scf_params);
        let note = if r.scf_params > r.full_params { "  (factorization not beneficial)" } else { "" };
        println!(
            "{:<22} {:>6} {:>6} {:>4} {:>4} {:>14} {:>12} {:>12} {:>8}{note}",
            r.layer, r.c_in, r.c_out, r.modes1, r.modes2, r.full_params, r.scf_params, ratio, pct
        );
        if r.layer == "layer" {
            let closed = Ratio::new(1, r.modes1 * r.modes2) + Ratio::new(1, r.c_out);
            let exact = saving_ratio(r.c_in, r.c_out, r.modes1, r.modes2)?;
            println!("1/(M1*M2) + 1/C_out = {}/{} ({})", closed.numer(), closed.denom(), if closed == exact { "equal" } else { "DIFFERS" });
        }
    }
    let (full, scf): (u64, u64) = (rows.iter().map(|r| r.full_params).sum(), rows.iter().map(|r| r.scf_params).sum());
    let mut csv = count_csv(&rows);
    if rows.len() > 1 {
        let (ratio, pct) = ratio_cells(full, scf);
        println!("{:<22} {:>6} {:>6} {:>4} {:>4} {:>14} {:>12} {:>12} {:>8}", "spectral total", "", "", "", "", full, scf, ratio, pct);
        csv.push_str(&format!("spectral_total,,,,,{full},{scf},{ratio},{pct}\n"));
    }
    if let Some(o) = other {
        let (ratio, pct) = ratio_cells(o + full, o + scf);
        println!("{:<22} {:>6} {:>6} {:>4} {:>4} {:>14} {:>12} {:>12} {:>8}", "model total", "", "", "", "", o + full, o + scf, ratio, pct);
        csv.push_str(&format!("model_total,,,,,{},{},{ratio},{pct}\n", o + full, o + scf));
    }
    create_parent(&a.out)?;
    write_atomic(&a.out, csv.as_bytes())?;
    run.output(&a.out);
    run.finish(&a.out, &CountConfig { model: model_cfg, det_pixels: a.det_pixels.clone(), layer: a.layer.clone() }, None)?;
    Ok(())
}

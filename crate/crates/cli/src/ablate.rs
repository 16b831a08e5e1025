use anyhow::Result;
use freqct::config::{ModelConfig, TrainConfig};
use freqct::geometry::io::write_atomic;
use freqct::metrics::evaluate_case;
use serde::Serialize;

use crate::commands::{load_train_config, train_model};
use crate::data::{self, Case};
use crate::manifest::Run;
use crate::{usage, AblateArgs, Sweep};

fn default_values(sweep: Sweep) -> Vec<String> {
    let v: &[&str] = match sweep {
        Sweep::Modes | Sweep::Patch => &["8", "16", "32"],
        Sweep::Lhif => &["on", "off"],
        Sweep::Fusion => &["caff", "spatial_ca", "add", "concat"],
        Sweep::Qkv => &["spatial_query", "frequency_query"],
    };
    v.iter().map(|s| s.to_string()).collect()
}

fn parse_enum<E: serde::de::DeserializeOwned>(v: &str) -> Result<E> {
    serde_json::from_value(serde_json::Value::String(v.into())).map_err(|_| usage(format!("unknown sweep value {v:?}")))
}

/// `base` with one knob set to `value`.
pub fn variant(base: &ModelConfig, sweep: Sweep, value: &str) -> Result<ModelConfig> {
    let mut m = base.clone();
    let int = || value.parse::<usize>().map_err(|_| usage(format!("{sweep:?} values must be integers, got {value:?}")));
    match sweep {
        Sweep::Modes => {
            let n = int()?;
            (m.modes1, m.modes2) = (n, n);
        }
        Sweep::Patch => m.patch = int()?,
        Sweep::Lhif => {
            m.enable_lhif = match value {
                "on" => true,
                "off" => false,
                _ => return Err(usage(format!("lhif values are on/off, got {value:?}"))),
            }
        }
        Sweep::Fusion => m.fusion = parse_enum(value)?,
        Sweep::Qkv => m.qkv_roles = parse_enum(value)?,
    }
    m.validate().map_err(|e| usage(e.to_string()))?;
    Ok(m)
}

#[derive(Serialize)]
struct Row {
    sweep: String,
    value: String,
    total_params: usize,
    spectral_params: u64,
    final_loss: f64,
    psnr_db: f64,
    ssim_pct: f64,
    w_psnr_db: f64,
    w_ssim_pct: f64,
}

fn csv(rows: &[Row]) -> String {
    let mut s = String::from("sweep,value,total_params,spectral_params,final_loss,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:e},{:.6},{:.6},{:.6},{:.6}\n",
            r.sweep, r.value, r.total_params, r.spectral_params, r.final_loss, r.psnr_db, r.ssim_pct, r.w_psnr_db, r.w_ssim_pct
        ));
    }
    s
}

fn score(model: &freqct::model::Model<f32>, cases: &[Case]) -> Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    for c in cases {
        let pred = model.reconstruct(&c.data.projections, 8192)?;
        let r = evaluate_case(&c.name, &pred, &c.data.volume, c.roi.as_ref())?;
        for (a, v) in acc.iter_mut().zip([r.psnr_db, r.ssim_pct, r.w_psnr_db, r.w_ssim_pct]) {
            *a += v / cases.len() as f64;
        }
    }
    Ok(acc)
}

#[derive(Serialize)]
struct AblateConfig {
    sweep: String,
    values: Vec<String>,
    train: TrainConfig,
}

pub fn run(a: AblateArgs) -> Result<()> {
    let mut run = Run::start("ablate");
    let mut base = load_train_config(&a.config)?;
    run.input(&a.config);
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    let values = a.values.clone().unwrap_or_else(|| default_values(a.sweep));
    // every variant is validated before any training starts
    let models = values.iter().map(|v| variant(&base.model, a.sweep, v)).collect::<Result<Vec<_>>>()?;
    let train_cases = data::load_cases(&a.data)?;
    run.input(&a.data);
    let test_cases = match &a.test {
        Some(t) => {
            run.input(t);
            data::load_cases(t)?
        }
        None => Vec::new(),
    };
    let eval = if test_cases.is_empty() { &train_cases } else { &test_cases };
    let sweep = format!("{:?}", a.sweep).to_lowercase();
    if let Some(p) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }

    let mut rows = Vec::new();
    for (value, model_cfg) in values.iter().zip(models) {
        let cfg = TrainConfig { model: model_cfg, ..base.clone() };
        let (model, log) = train_model(&cfg, &train_cases, None, 1)?;
        let per_epoch = train_cases.len().div_ceil(cfg.batch_size);
        let tail = &log[log.len().saturating_sub(per_epoch)..];
        let final_loss = if tail.is_empty() { f64::NAN } else { tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64 };
        let spectral_params = model
            .network
            .spectral_layers()
            .iter()
            .map(|l| if cfg.model.factorized { l.scf_params } else { l.full_params })
            .sum();
        let [psnr_db, ssim_pct, w_psnr_db, w_ssim_pct] = score(&model, eval)?;
        println!("{sweep}={value}: params {}, final loss {final_loss:.4e}, psnr {psnr_db:.3} dB", model.params.count());
        rows.push(Row {
            sweep: sweep.clone(),
            value: value.clone(),
            total_params: model.params.count(),
            spectral_params,
            final_loss,
            psnr_db,
            ssim_pct,
            w_psnr_db,
            w_ssim_pct,
        });
        // rewritten after every variant so an interrupted sweep keeps its finished rows
        write_atomic(&a.out, csv(&rows).as_bytes())?;
    }
    run.output(&a.out);
    run.finish(&a.out, &AblateConfig { sweep, values, train: base.clone() }, Some(base.seed))?;
    Ok(())
}

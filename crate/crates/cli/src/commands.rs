use std::fs::File;
use std::io::BufWriter;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use cdiff_core::cdiff::{self, batch, CdiffError, TrainEvent};
use cdiff_core::codec::ContainerError;
use cdiff_core::data::{self, build_pairs, load_idx, load_pairs, save_pairs, synth_corpus, ImageSet};
use cdiff_core::eval::{self, read_pgm, triptych, write_csv, write_pgm, EvalError, Gray, SweepSetup};
use cdiff_core::nn::{estimate_flops, Checkpoint, DenoiserModel, OptimizerState, Tensor};
use cdiff_core::schedule::ScheduleTable;
use cdiff_core::StreamRng;

use crate::config::{RunConfig, SourceKind};
use crate::CliError;

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Data(d) => data_err(d),
        EvalError::Cdiff(CdiffError::ScheduleMismatch { .. }) => CliError::Config(format!(
            "{e}; the [schedule] section must match the one the checkpoint was trained with"
        )),
        e => CliError::Run(e.to_string()),
    }
}

/// Training images followed by the held-out images.
fn images(cfg: &RunConfig) -> Result<(ImageSet, ImageSet), CliError> {
    let d = &cfg.data;
    match d.source {
        SourceKind::Synthetic => {
            let all = synth_corpus(d.count + d.test_count, cfg.seed).map_err(data_err)?;
            Ok((all.take(d.count), all.skip(d.count)))
        }
        SourceKind::Mnist => {
            let path = d
                .images
                .as_deref()
                .ok_or_else(|| CliError::Config("data.images is not set (IDX image file)".into()))?;
            let train = data::prepare(&load_idx(path, d.labels.as_deref()).map_err(data_err)?).map_err(data_err)?;
            let test = match &d.test_images {
                Some(p) => data::prepare(&load_idx(p, None).map_err(data_err)?).map_err(data_err)?,
                None => train.skip(d.count),
            };
            Ok((train.take(d.count), test.take(d.test_count)))
        }
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.pairs_path()?;
    let (train, _) = images(cfg)?;
    let ds = build_pairs(&train, &cfg.pair_config()).map_err(data_err)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_pairs(&ds, out).map_err(data_err)?;
    println!("wrote {} pairs to {}", ds.len(), out.display());
    Ok(())
}

fn epoch_path(path: &Path, epoch: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}.epoch{epoch}.cdif"))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let pairs_path = cfg.pairs_path()?;
    let ds = load_pairs(pairs_path).map_err(data_err)?;
    let tc = cfg.train_config();
    let tbl = cfg.schedule()?;
    let mut model = DenoiserModel::new(cfg.unet(), cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut opt = OptimizerState::new(&model, tc.adam(), tc.ema_decay);
    let ckpt_path = cfg.checkpoint_path();
    let mut save_err = None;
    let result = cdiff::train(&ds.pairs, &tc, &tbl, &mut model, &mut opt, |ev| {
        if let TrainEvent::EpochEnd {
            epoch,
            mean_loss,
            model,
            optimizer,
        } = ev
        {
            println!("epoch {epoch}: mean loss {mean_loss:.6}");
            if cfg.train.save_epochs {
                let c = Checkpoint {
                    schedule: tbl.clone(),
                    model: model.clone(),
                    optimizer: optimizer.clone(),
                };
                if let Err(e) = c.save(&epoch_path(&ckpt_path, epoch)) {
                    save_err = Some(e);
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    });
    if let Some(e) = save_err {
        return Err(CliError::Run(e.to_string()));
    }
    let ckpt = Checkpoint {
        schedule: tbl.clone(),
        model,
        optimizer: opt,
    };
    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    ckpt.save(&ckpt_path).map_err(|e| CliError::Run(e.to_string()))?;
    let report = match result {
        Ok(r) => r,
        Err(e @ CdiffError::Diverged { .. }) => {
            return Err(CliError::Run(format!("{e}; last finite state saved to {}", ckpt_path.display())))
        }
        Err(e @ (CdiffError::Shape(_) | CdiffError::Range | CdiffError::EmptyDataset)) => return Err(data_err(e)),
        Err(e) => return Err(CliError::Run(e.to_string())),
    };
    let loss_path = cfg.output_dir.join("loss.csv");
    cdiff::write_loss_csv(&report.losses, create(&loss_path)?).map_err(|e| CliError::Run(e.to_string()))?;
    println!(
        "trained {} steps; checkpoint {}; losses {}",
        report.losses.len(),
        ckpt_path.display(),
        loss_path.display()
    );
    Ok(())
}

/// The EMA model of the configured checkpoint, checked against the
/// configured schedule.
fn load_model(cfg: &RunConfig) -> Result<(ScheduleTable, DenoiserModel), CliError> {
    let path = cfg.checkpoint_path();
    let ckpt = Checkpoint::load(&path).map_err(|e| match e {
        ContainerError::Io(io) => data_err(format!("{}: {io}", path.display())),
        e => data_err(format!("{}: {e}", path.display())),
    })?;
    let tbl = cfg.schedule()?;
    if ckpt.schedule != tbl {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained with T = {}, beta {:.3e}..{:.3e}; [schedule] asks for T = {}, beta {:.3e}..{:.3e}",
            path.display(),
            ckpt.schedule.steps(),
            ckpt.schedule.beta(1),
            ckpt.schedule.beta(ckpt.schedule.steps()),
            tbl.steps(),
            tbl.beta(1),
            tbl.beta(tbl.steps()),
        )));
    }
    Ok((tbl, ckpt.sampling_model()))
}

fn to_tensor(px: &[u8], h: usize, w: usize) -> Tensor {
    Tensor::new(vec![1, h, w], px.iter().map(|&p| data::pixel_to_unit(p)).collect()).expect("size checked")
}

fn to_pixels(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|&v| data::unit_to_pixel(v)).collect()
}

pub fn sample(cfg: &RunConfig, input: &Path, output: &Path, snr: Option<f64>) -> Result<(), CliError> {
    let bytes = std::fs::read(input).map_err(|e| data_err(format!("{}: {e}", input.display())))?;
    let img = read_pgm(&bytes).map_err(|e| data_err(format!("{}: {e}", input.display())))?;
    let (h, w) = (img.height, img.width);
    let (tbl, model) = load_model(cfg)?;
    let rng = StreamRng::new(cfg.seed).split_named("sample");

    let (x0, xhat) = match snr {
        Some(g) => {
            let set = ImageSet {
                pixels: img.pixels.clone(),
                count: 1,
                height: h,
                width: w,
                labels: None,
                source: data::Source::Synthetic,
            };
            let link = cdiff_core::data::PairConfig {
                snr_db: (g, g),
                kappa_t: (cfg.sweep.kappa[0], cfg.sweep.kappa[0]),
                kappa_r: (cfg.sweep.kappa[1], cfg.sweep.kappa[1]),
                ..cfg.eval_pair_config()
            };
            let ds = build_pairs(&set, &link).map_err(data_err)?;
            (Some(img.pixels.clone()), ds.pairs[0].xhat().clone())
        }
        None => (None, to_tensor(&img.pixels, h, w)),
    };
    let xb = batch(&[xhat.clone()]).map_err(|e| CliError::Run(e.to_string()))?;
    let rec = cdiff::sample(&xb, &tbl, &model, &rng, cfg.sample_options()).map_err(|e| match e {
            CdiffError::Nn(n) => data_err(format!("{}: {n}", input.display())),
            e => CliError::Run(e.to_string()),
        })?;
    let rec_px = to_pixels(&rec);
    let out = match x0 {
        Some(orig) => {
            let xh = to_pixels(&xhat);
            let clean = eval::to_unit_interval(to_tensor(&orig, h, w).data());
            let received = eval::psnr(&clean, &eval::to_unit_interval(xhat.data())).map_err(eval_err)?;
            let restored = eval::psnr(&clean, &eval::to_unit_interval(rec.data())).map_err(eval_err)?;
            println!("PSNR received {received:.2} dB, reconstructed {restored:.2} dB");
            triptych(&[&orig, &xh, &rec_px], w, h)
        }
        None => Gray {
            width: w,
            height: h,
            pixels: rec_px,
        },
    };
    write_pgm(&out, create(output)?).map_err(eval_err)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn setup<'a>(
    cfg: &RunConfig,
    experiment: &str,
    tbl: &'a ScheduleTable,
    model: &'a DenoiserModel,
    images: &'a ImageSet,
) -> SweepSetup<'a> {
    SweepSetup {
        experiment: experiment.to_string(),
        model,
        schedule: tbl,
        images,
        link: cfg.eval_pair_config(),
        sampling: cfg.sample_options(),
        batch_size: cfg.sample.batch_size,
    }
}

pub fn sweep_snr(cfg: &RunConfig) -> Result<(), CliError> {
    let (tbl, model) = load_model(cfg)?;
    let (_, test) = images(cfg)?;
    let s = setup(cfg, "sweep_snr", &tbl, &model, &test);
    let dump = cfg.sweep.dump_images.then(|| cfg.output_dir.join("sweep_snr"));
    let k = cfg.sweep.kappa;
    let rows = eval::sweep_snr(&s, &cfg.sweep.snr_grid, (k[0], k[1]), dump.as_deref()).map_err(eval_err)?;
    let path = cfg.output_dir.join("sweep_snr.csv");
    write_csv(&rows, create(&path)?).map_err(eval_err)?;
    for r in &rows {
        println!(
            "SNR {:>6.1} dB: naive {:6.2} dB, cdiff {:6.2} dB",
            r.snr_db, r.psnr_naive, r.psnr_cdiff
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn sweep_impair(cfg: &RunConfig) -> Result<(), CliError> {
    let (tbl, model) = load_model(cfg)?;
    let (_, test) = images(cfg)?;
    let test = test.take(cfg.sweep.impair_images);
    let s = setup(cfg, "sweep_impair", &tbl, &model, &test);
    let dump = cfg.sweep.dump_images.then(|| cfg.output_dir.join("sweep_impair"));
    let sw = &cfg.sweep;
    let rows = eval::sweep_impairment(
        &s,
        &sw.kappa_r_grid,
        sw.impair_snr_db,
        sw.impair_kappa_t,
        sw.realizations,
        dump.as_deref(),
    )
    .map_err(eval_err)?;
    let path = cfg.output_dir.join("sweep_impair.csv");
    write_csv(&rows, create(&path)?).map_err(eval_err)?;
    for r in &rows {
        println!(
            "kappa_r {:.4}: median mse naive {:.5}, cdiff {:.5}",
            r.kappa_r, r.mse_naive_median, r.mse_cdiff_median
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn inspect(cfg: &RunConfig, table: bool) -> Result<(), CliError> {
    let tbl = cfg.schedule()?;
    let t = tbl.steps();
    let unet = cfg.unet();
    println!("T = {t}");
    println!("beta = {:.6e} .. {:.6e} (linear)", tbl.beta(1), tbl.beta(t));
    println!("alpha_bar_T = {:.6}", tbl.alpha_bar(t));
    println!("delta_T = {:.6}", tbl.delta(t));
    println!("fingerprint = {:016x}", tbl.fingerprint());
    println!("widths = {:?}, time_dim = {}", unet.widths, unet.time_dim);
    println!(
        "FLOP estimate (T x 32x32 convolutions) = {}",
        estimate_flops(3, t, 32, 32, unet.widths[0], unet.depth())
    );
    let path = cfg.checkpoint_path();
    match Checkpoint::load(&path) {
        Ok(c) => {
            println!("checkpoint {}", path.display());
            println!("  parameters = {}", c.model.params().numel());
            println!("  optimiser steps = {}", c.optimizer.step_count());
            println!("  ema decay = {}", c.optimizer.ema_decay);
            println!("  trained T = {}", c.schedule.steps());
            println!(
                "  schedule matches config = {}",
                if c.schedule == tbl { "yes" } else { "no" }
            );
        }
        Err(ContainerError::Io(_)) => println!("checkpoint {} not found", path.display()),
        Err(e) => return Err(data_err(format!("{}: {e}", path.display()))),
    }
    if table {
        println!("t,beta,alpha_bar,lambda,delta,delta_cond,psi_x,psi_xhat,psi_eps");
        for s in 1..=t {
            let c = tbl.reverse_coeffs(s).expect("in range");
            println!(
                "{s},{},{},{},{},{},{},{},{}",
                tbl.beta(s),
                tbl.alpha_bar(s),
                tbl.lambda(s),
                tbl.delta(s),
                tbl.delta_cond(s),
                c.x,
                c.xhat,
                c.eps
            );
        }
    }
    Ok(())
}

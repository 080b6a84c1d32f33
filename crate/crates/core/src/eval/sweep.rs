//! SNR and impairment sweeps comparing the naive receiver with the
//! diffusion reconstruction.

use std::path::Path;

use rand::RngCore;
use serde::Serialize;

use super::{psnr_from_mse, triptych, unit_mse, write_pgm, EvalError, MetricRecord};
use crate::cdiff::{batch, sample, SampleOptions};
use crate::data::{build_pairs, unit_to_pixel, ImageSet, PairConfig, PairDataset};
use crate::nn::{DenoiserModel, Tensor};
use crate::schedule::ScheduleTable;
use crate::StreamRng;

const MAX_DUMPS: usize = 16;

/// Everything a sweep needs besides its grid.
pub struct SweepSetup<'a> {
    pub experiment: String,
    /// Sampling weights, normally the EMA shadow.
    pub model: &'a DenoiserModel,
    pub schedule: &'a ScheduleTable,
    pub images: &'a ImageSet,
    /// Modem settings and seed; the SNR and impairment ranges are replaced
    /// per sweep point.
    pub link: PairConfig,
    pub sampling: SampleOptions,
    pub batch_size: usize,
}

/// Per-image errors for one evaluated dataset, in the `[0, 1]` domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub mse_naive: Vec<f64>,
    pub mse_cdiff: Vec<f64>,
    pub reconstructions: Vec<Tensor>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl PointResult {
    fn mean_psnr(v: &[f64]) -> f64 {
        mean(&v.iter().map(|&m| psnr_from_mse(m)).collect::<Vec<_>>())
    }

    pub fn record(&self, experiment: &str, cfg: &PairConfig) -> MetricRecord {
        MetricRecord {
            experiment: experiment.to_string(),
            snr_db: cfg.snr_db.0,
            kappa_t: cfg.kappa_t.0,
            kappa_r: cfg.kappa_r.0,
            code_rate: cfg.code_rate(),
            mse_naive: mean(&self.mse_naive),
            mse_cdiff: mean(&self.mse_cdiff),
            psnr_naive: Self::mean_psnr(&self.mse_naive),
            psnr_cdiff: Self::mean_psnr(&self.mse_cdiff),
            n_images: self.mse_naive.len(),
            seed: cfg.seed,
        }
    }
}

/// Runs the sampler over every pair of `ds` and scores both receivers.
pub fn reconstruct(
    ds: &PairDataset,
    model: &DenoiserModel,
    schedule: &ScheduleTable,
    sampling: SampleOptions,
    batch_size: usize,
    rng: &StreamRng,
) -> Result<PointResult, EvalError> {
    if batch_size == 0 {
        return Err(EvalError::Sweep("batch size must be positive".into()));
    }
    let mut out = PointResult {
        mse_naive: Vec::with_capacity(ds.len()),
        mse_cdiff: Vec::with_capacity(ds.len()),
        reconstructions: Vec::with_capacity(ds.len()),
    };
    for (c, chunk) in ds.pairs.chunks(batch_size).enumerate() {
        let xhat: Vec<Tensor> = chunk.iter().map(|p| p.xhat().clone()).collect();
        let rec = sample(&batch(&xhat)?, schedule, model, &rng.split(c as u64), sampling)?;
        let per = rec.numel() / chunk.len();
        for (i, p) in chunk.iter().enumerate() {
            let r = Tensor::new(p.x0().shape().to_vec(), rec.data()[i * per..(i + 1) * per].to_vec())
                .map_err(crate::cdiff::CdiffError::from)?;
            out.mse_naive.push(unit_mse(p.x0(), p.xhat())?);
            out.mse_cdiff.push(unit_mse(p.x0(), &r)?);
            out.reconstructions.push(r);
        }
    }
    Ok(out)
}

fn pixels(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|&v| unit_to_pixel(v)).collect()
}

fn dump(dir: &Path, tag: &str, ds: &PairDataset, res: &PointResult, count: usize) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for (i, (p, r)) in ds.pairs.iter().zip(&res.reconstructions).take(count).enumerate() {
        let s = p.x0().shape();
        let (a, b, c) = (pixels(p.x0()), pixels(p.xhat()), pixels(r));
        let img = triptych(&[&a, &b, &c], s[2], s[1]);
        let file = std::fs::File::create(dir.join(format!("{tag}_{i:02}.pgm")))?;
        write_pgm(&img, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn point_rng(setup: &SweepSetup, label: &str, index: usize) -> StreamRng {
    StreamRng::new(setup.link.seed).split_named(label).split(index as u64)
}

/// One record per SNR grid point at fixed impairments. Every point reuses
/// the link seed, so the points differ only in the noise level. When
/// `dump_dir` is given, up to 16 (x0, x̂, reconstruction) triptychs are
/// written, spread over the grid.
pub fn sweep_snr(
    setup: &SweepSetup,
    grid: &[f64],
    kappa: (f64, f64),
    dump_dir: Option<&Path>,
) -> Result<Vec<MetricRecord>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::Sweep("empty SNR grid".into()));
    }
    let per_point = (MAX_DUMPS / grid.len()).max(1);
    let mut out = Vec::with_capacity(grid.len());
    for (k, &g) in grid.iter().enumerate() {
        let cfg = PairConfig {
            snr_db: (g, g),
            kappa_t: (kappa.0, kappa.0),
            kappa_r: (kappa.1, kappa.1),
            ..setup.link
        };
        let ds = build_pairs(setup.images, &cfg)?;
        let res = reconstruct(
            &ds,
            setup.model,
            setup.schedule,
            setup.sampling,
            setup.batch_size,
            &point_rng(setup, "sweep-snr", k),
        )?;
        if let Some(dir) = dump_dir {
            if k * per_point < MAX_DUMPS {
                dump(dir, &format!("snr{k:02}"), &ds, &res, per_point)?;
            }
        }
        out.push(res.record(&setup.experiment, &cfg));
    }
    Ok(out)
}

/// Impairment sweep point: statistics over independent link realisations of
/// the per-realisation mean MSE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpairmentRecord {
    pub experiment: String,
    pub snr_db: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    pub code_rate: f64,
    pub realizations: usize,
    pub n_images: usize,
    pub mse_naive_mean: f64,
    pub mse_naive_q1: f64,
    pub mse_naive_median: f64,
    pub mse_naive_q3: f64,
    pub mse_cdiff_mean: f64,
    pub mse_cdiff_q1: f64,
    pub mse_cdiff_median: f64,
    pub mse_cdiff_q3: f64,
    pub seed: u64,
}

/// First quartile, median and third quartile with linear interpolation
/// between order statistics.
pub fn quartiles(v: &[f64]) -> (f64, f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let x = q * (s.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        s[lo] + (x - lo as f64) * (s[hi] - s[lo])
    };
    (at(0.25), at(0.5), at(0.75))
}

/// One record per receiver impairment level, `realizations` link draws each.
/// Realisation `j` uses the same seed at every grid point.
pub fn sweep_impairment(
    setup: &SweepSetup,
    grid: &[f64],
    snr_db: f64,
    kappa_t: f64,
    realizations: usize,
    dump_dir: Option<&Path>,
) -> Result<Vec<ImpairmentRecord>, EvalError> {
    if grid.is_empty() || realizations == 0 {
        return Err(EvalError::Sweep("empty impairment grid or zero realizations".into()));
    }
    let per_point = (MAX_DUMPS / grid.len()).max(1);
    let mut out = Vec::with_capacity(grid.len());
    for (k, &kr) in grid.iter().enumerate() {
        let mut naive = Vec::with_capacity(realizations);
        let mut cdiff = Vec::with_capacity(realizations);
        let mut cfg = setup.link;
        for j in 0..realizations {
            cfg = PairConfig {
                snr_db: (snr_db, snr_db),
                kappa_t: (kappa_t, kappa_t),
                kappa_r: (kr, kr),
                seed: StreamRng::new(setup.link.seed).split_named("realization").split(j as u64).next_u64(),
                ..setup.link
            };
            let ds = build_pairs(setup.images, &cfg)?;
            let res = reconstruct(
                &ds,
                setup.model,
                setup.schedule,
                setup.sampling,
                setup.batch_size,
                &point_rng(setup, "sweep-impair", j),
            )?;
            if j == 0 && k * per_point < MAX_DUMPS {
                if let Some(dir) = dump_dir {
                    dump(dir, &format!("impair{k:02}"), &ds, &res, per_point)?;
                }
            }
            naive.push(mean(&res.mse_naive));
            cdiff.push(mean(&res.mse_cdiff));
        }
        let (nq1, nmed, nq3) = quartiles(&naive);
        let (cq1, cmed, cq3) = quartiles(&cdiff);
        out.push(ImpairmentRecord {
            experiment: setup.experiment.clone(),
            snr_db,
            kappa_t,
            kappa_r: kr,
            code_rate: cfg.code_rate(),
            realizations,
            n_images: setup.images.len(),
            mse_naive_mean: mean(&naive),
            mse_naive_q1: nq1,
            mse_naive_median: nmed,
            mse_naive_q3: nq3,
            mse_cdiff_mean: mean(&cdiff),
            mse_cdiff_q1: cq1,
            mse_cdiff_median: cmed,
            mse_cdiff_q3: cq3,
            seed: setup.link.seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_pairs, save_pairs, synth_corpus};
    use crate::eval::write_csv;
    use crate::nn::UNetConfig;
    use crate::schedule::LambdaShape;

    fn setup_parts() -> (ScheduleTable, DenoiserModel, ImageSet) {
        let tbl = ScheduleTable::build(4, 0.1, 0.4, LambdaShape::Linear).unwrap();
        let mut model = DenoiserModel::new(
            UNetConfig {
                widths: vec![2, 4],
                time_dim: 4,
                steps: 4,
                zero_init_output: false,
            },
            3,
        )
        .unwrap();
        model.bind_schedule(tbl.fingerprint());
        (tbl, model, synth_corpus(3, 8).unwrap())
    }

    fn setup<'a>(tbl: &'a ScheduleTable, model: &'a DenoiserModel, images: &'a ImageSet) -> SweepSetup<'a> {
        SweepSetup {
            experiment: "t".into(),
            model,
            schedule: tbl,
            images,
            link: PairConfig {
                order: 16,
                seed: 5,
                ..PairConfig::default()
            },
            sampling: SampleOptions::default(),
            batch_size: 2,
        }
    }

    #[test]
    fn quartile_values() {
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), (2.0, 3.0, 4.0));
        assert_eq!(quartiles(&[1.0, 2.0]), (1.25, 1.5, 1.75));
    }

    #[test]
    fn snr_sweep_rows_and_determinism() {
        let (tbl, model, images) = setup_parts();
        let s = setup(&tbl, &model, &images);
        let dir = tempfile::tempdir().unwrap();
        let rows = sweep_snr(&s, &[-5.0, 0.0, 5.0], (0.05, 0.1), Some(dir.path())).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].snr_db, 0.0);
        assert_eq!(rows[1].n_images, 3);
        let again = sweep_snr(&s, &[-5.0, 0.0, 5.0], (0.05, 0.1), None).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&rows, &mut a).unwrap();
        write_csv(&again, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);
        let dumped = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(dumped, 9);
    }

    #[test]
    fn naive_metrics_match_stored_pairs() {
        let (tbl, model, images) = setup_parts();
        let s = setup(&tbl, &model, &images);
        let rows = sweep_snr(&s, &[2.0], (0.05, 0.0), None).unwrap();

        let cfg = PairConfig {
            snr_db: (2.0, 2.0),
            kappa_t: (0.05, 0.05),
            kappa_r: (0.0, 0.0),
            ..s.link
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.cdpr");
        save_pairs(&build_pairs(&images, &cfg).unwrap(), &path).unwrap();
        let stored = load_pairs(&path).unwrap();
        let direct: Vec<f64> = stored.pairs.iter().map(|p| unit_mse(p.x0(), p.xhat()).unwrap()).collect();
        assert_eq!(rows[0].mse_naive, mean(&direct));
    }

    #[test]
    fn impairment_sweep_shape() {
        let (tbl, model, images) = setup_parts();
        let s = setup(&tbl, &model, &images);
        let rows = sweep_impairment(&s, &[0.0, 0.0225], 0.0, 0.05, 3, None).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.realizations, 3);
            assert!(r.mse_cdiff_q1 <= r.mse_cdiff_median && r.mse_cdiff_median <= r.mse_cdiff_q3);
        }
        assert_eq!(rows, sweep_impairment(&s, &[0.0, 0.0225], 0.0, 0.05, 3, None).unwrap());
    }
}

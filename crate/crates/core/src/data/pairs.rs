//! Builds `(x0, x̂)` pairs by sending images through the simulated link, and
//! the `CDPR` container that stores them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pixel_to_unit, DataError, ImageSet};
use crate::cdiff::{PairMeta, SamplePair};
use crate::codec::{self, ContainerError, Reader, Writer};
use crate::link::{
    bits_to_bytes, bytes_to_bits, naive_receive, repetition_decode, repetition_encode, transmit, ChannelConfig,
    ConstellationSpec, Fading, MAX_IMPAIRMENT,
};
use crate::nn::Tensor;
use crate::StreamRng;

pub const MAGIC: &[u8; 4] = b"CDPR";
pub const VERSION: u32 = 1;

/// Link settings for pair generation. Each image draws its SNR and both
/// impairment levels uniformly from the given closed ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub snr_db: (f64, f64),
    pub kappa_t: (f64, f64),
    pub kappa_r: (f64, f64),
    pub order: usize,
    pub repetition: usize,
    pub fading: Fading,
    pub power: f64,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            snr_db: (-15.0, 15.0),
            kappa_t: (0.0, 0.0225),
            kappa_r: (0.0, 0.0225),
            order: 64,
            repetition: 1,
            fading: Fading::Rayleigh,
            power: 1.0,
            seed: 0,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        let (lo, hi) = self.snr_db;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return bad(format!("empty SNR range [{lo}, {hi}]"));
        }
        for (name, (lo, hi)) in [("kappa_t", self.kappa_t), ("kappa_r", self.kappa_r)] {
            if !(0.0 <= lo && lo <= hi && hi <= MAX_IMPAIRMENT) {
                return bad(format!("{name} range [{lo}, {hi}] outside [0, {MAX_IMPAIRMENT}]"));
            }
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad(format!("power must be positive, got {}", self.power));
        }
        ConstellationSpec::new(self.order)?;
        repetition_encode(&[], self.repetition)?;
        Ok(())
    }

    /// Code rate of the repetition code.
    pub fn code_rate(&self) -> f64 {
        1.0 / self.repetition as f64
    }

    fn draw(&self, rng: &mut StreamRng) -> (f64, f64, f64) {
        let g = rng.uniform(self.snr_db.0, self.snr_db.1);
        let kt = rng.uniform(self.kappa_t.0, self.kappa_t.1);
        let kr = rng.uniform(self.kappa_r.0, self.kappa_r.1);
        (g, kt, kr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<SamplePair>,
    pub config: PairConfig,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Sends one image through modem, channel and naive receiver and returns the
/// decoded bytes.
fn transceive(
    pixels: &[u8],
    cfg: &PairConfig,
    spec: &ConstellationSpec,
    ch: &ChannelConfig,
    rng: &mut StreamRng,
) -> Result<Vec<u8>, DataError> {
    let mut bits = repetition_encode(&bytes_to_bits(pixels), cfg.repetition)?;
    let n = bits.len();
    let bps = spec.bits_per_symbol();
    bits.resize(n.div_ceil(bps) * bps, 0);
    let s = spec.modulate(&bits)?;
    let (y, h) = transmit(&s, ch, rng)?;
    let mut rx = naive_receive(&y, &h, ch, spec)?;
    rx.truncate(n);
    Ok(bits_to_bytes(&repetition_decode(&rx, cfg.repetition)?))
}

/// Pairs every image of `set` with its reconstruction after the link.
///
/// Image `i` uses its own random stream derived from `cfg.seed`, so each pair
/// is independent of the others and of the set size.
pub fn build_pairs(set: &ImageSet, cfg: &PairConfig) -> Result<PairDataset, DataError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(DataError::Empty);
    }
    let spec = ConstellationSpec::new(cfg.order)?;
    let base = StreamRng::new(cfg.seed).split_named("pairs");
    let shape = vec![1, set.height, set.width];
    let to_tensor = |px: &[u8]| Tensor::new(shape.clone(), px.iter().map(|&p| pixel_to_unit(p)).collect());
    let mut pairs = Vec::with_capacity(set.count);
    for i in 0..set.count {
        let mut rng = base.split(i as u64);
        let (snr_db, kappa_t, kappa_r) = cfg.draw(&mut rng);
        let ch = ChannelConfig {
            power: cfg.power,
            noise_var: cfg.power / 10f64.powf(snr_db / 10.0),
            kappa_t,
            kappa_r,
            fading: cfg.fading,
            seed: cfg.seed,
        };
        let px = set.image(i);
        let rx = transceive(px, cfg, &spec, &ch, &mut rng)?;
        let meta = PairMeta {
            snr_db,
            kappa_t,
            kappa_r,
            seed: cfg.seed,
        };
        pairs.push(SamplePair::new(
            to_tensor(px).map_err(crate::cdiff::CdiffError::from)?,
            to_tensor(&rx).map_err(crate::cdiff::CdiffError::from)?,
            meta,
        )?);
    }
    Ok(PairDataset { pairs, config: *cfg })
}

fn encode(ds: &PairDataset) -> Vec<u8> {
    let c = &ds.config;
    let mut w = Writer::default();
    for v in [c.snr_db.0, c.snr_db.1, c.kappa_t.0, c.kappa_t.1, c.kappa_r.0, c.kappa_r.1, c.power] {
        w.f64(v);
    }
    w.u32(c.order as u32);
    w.u32(c.repetition as u32);
    w.u8(match c.fading {
        Fading::Rayleigh => 0,
        Fading::AwgnOnly => 1,
    });
    w.u64(c.seed);
    w.u64(ds.pairs.len() as u64);
    for p in &ds.pairs {
        let s = p.x0().shape();
        w.u32(s[1] as u32);
        w.u32(s[2] as u32);
        let m = p.meta;
        w.f64(m.snr_db);
        w.f64(m.kappa_t);
        w.f64(m.kappa_r);
        w.u64(m.seed);
        w.f64s(p.x0().data());
        w.f64s(p.xhat().data());
    }
    codec::frame(MAGIC, VERSION, &w.finish())
}

fn decode(bytes: &[u8]) -> Result<PairDataset, DataError> {
    let payload = codec::unframe(bytes, MAGIC, VERSION)?;
    let mut r = Reader::new(payload, 16);
    let mut f = [0.0; 7];
    for v in &mut f {
        *v = r.f64()?;
    }
    let order = r.u32()? as usize;
    let repetition = r.u32()? as usize;
    let fading = match r.u8()? {
        0 => Fading::Rayleigh,
        1 => Fading::AwgnOnly,
        k => return Err(ContainerError::Malformed(format!("fading tag {k}")).into()),
    };
    let config = PairConfig {
        snr_db: (f[0], f[1]),
        kappa_t: (f[2], f[3]),
        kappa_r: (f[4], f[5]),
        power: f[6],
        order,
        repetition,
        fading,
        seed: r.u64()?,
    };
    let n = r.u64()? as usize;
    let mut pairs = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let meta = PairMeta {
            snr_db: r.f64()?,
            kappa_t: r.f64()?,
            kappa_r: r.f64()?,
            seed: r.u64()?,
        };
        let malformed = |e: crate::nn::NnError| ContainerError::Malformed(e.to_string());
        let x0 = Tensor::new(vec![1, h, w], r.f64s()?).map_err(malformed)?;
        let xhat = Tensor::new(vec![1, h, w], r.f64s()?).map_err(malformed)?;
        pairs.push(SamplePair::new(x0, xhat, meta)?);
    }
    r.finish()?;
    Ok(PairDataset { pairs, config })
}

pub fn save_pairs(ds: &PairDataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode(ds)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_pairs(path: &Path) -> Result<PairDataset, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, Source};

    fn psnr(p: &SamplePair) -> f64 {
        let mse = p
            .x0()
            .data()
            .iter()
            .zip(p.xhat().data())
            .map(|(a, b)| ((a - b) / 2.0).powi(2))
            .sum::<f64>()
            / p.x0().numel() as f64;
        -10.0 * mse.log10()
    }

    #[test]
    fn clean_channel_is_identity() {
        let set = synth_corpus(8, 1).unwrap();
        for order in [4, 16, 64] {
            let cfg = PairConfig {
                snr_db: (300.0, 300.0),
                kappa_t: (0.0, 0.0),
                kappa_r: (0.0, 0.0),
                order,
                ..PairConfig::default()
            };
            let ds = build_pairs(&set, &cfg).unwrap();
            assert!(ds.pairs.iter().all(|p| p.x0() == p.xhat()));
        }
    }

    #[test]
    fn impaired_channel_degrades() {
        let set = synth_corpus(16, 2).unwrap();
        let cfg = PairConfig {
            snr_db: (0.0, 0.0),
            kappa_t: (0.1, 0.1),
            kappa_r: (0.15, 0.15),
            ..PairConfig::default()
        };
        let ds = build_pairs(&set, &cfg).unwrap();
        let mean = ds.pairs.iter().map(psnr).sum::<f64>() / ds.len() as f64;
        assert!(mean.is_finite() && mean < 30.0, "{mean}");
        assert!(ds.pairs.iter().all(|p| p.meta.snr_db == 0.0 && p.meta.kappa_r == 0.15));
    }

    #[test]
    fn repetition_helps() {
        let set = synth_corpus(16, 3).unwrap();
        let mk = |repetition| PairConfig {
            snr_db: (5.0, 5.0),
            kappa_t: (0.0, 0.0),
            kappa_r: (0.0, 0.0),
            order: 16,
            repetition,
            ..PairConfig::default()
        };
        let avg = |ds: PairDataset| ds.pairs.iter().map(psnr).sum::<f64>() / ds.len() as f64;
        assert!(avg(build_pairs(&set, &mk(3)).unwrap()) > avg(build_pairs(&set, &mk(1)).unwrap()));
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let set = synth_corpus(6, 4).unwrap();
        let cfg = PairConfig {
            seed: 17,
            ..PairConfig::default()
        };
        let a = build_pairs(&set, &cfg).unwrap();
        assert_eq!(encode(&a), encode(&build_pairs(&set, &cfg).unwrap()));
        let b = build_pairs(&set.take(3), &cfg).unwrap();
        assert_eq!(a.pairs[..3], b.pairs[..]);
    }

    #[test]
    fn snr_draws_cover_every_decile() {
        let set = ImageSet {
            pixels: vec![128; 10_000],
            count: 10_000,
            height: 1,
            width: 1,
            labels: None,
            source: Source::Synthetic,
        };
        let cfg = PairConfig {
            order: 4,
            ..PairConfig::default()
        };
        let ds = build_pairs(&set, &cfg).unwrap();
        let mut bins = [0usize; 10];
        for p in &ds.pairs {
            let g = p.meta.snr_db;
            assert!((-15.0..=15.0).contains(&g));
            bins[(((g + 15.0) / 3.0) as usize).min(9)] += 1;
        }
        assert!(bins.iter().all(|&b| b > 0), "{bins:?}");
    }

    #[test]
    fn config_validation() {
        let empty = PairConfig {
            snr_db: (5.0, -5.0),
            ..PairConfig::default()
        };
        assert!(matches!(empty.validate(), Err(DataError::Config(_))));
        let even = PairConfig {
            repetition: 2,
            ..PairConfig::default()
        };
        assert!(even.validate().is_err());
        let order = PairConfig {
            order: 8,
            ..PairConfig::default()
        };
        assert!(order.validate().is_err());
    }

    #[test]
    fn container_roundtrip_and_rejections() {
        let set = synth_corpus(3, 5).unwrap();
        let ds = build_pairs(&set, &PairConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cdpr");
        save_pairs(&ds, &path).unwrap();
        assert_eq!(load_pairs(&path).unwrap(), ds);

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(decode(&bytes), Err(DataError::Container(ContainerError::Checksum { .. }))));

        let mut other = encode(&ds);
        other[..4].copy_from_slice(b"CDIF");
        assert!(matches!(
            decode(&other),
            Err(DataError::Container(ContainerError::WrongContainer { .. }))
        ));
        let mut v2 = encode(&ds);
        v2[4] = 2;
        assert!(matches!(
            decode(&v2),
            Err(DataError::Container(ContainerError::UnsupportedVersion { .. }))
        ));
    }
}

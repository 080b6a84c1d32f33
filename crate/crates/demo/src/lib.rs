//! Browser bindings for three interactive views: the received constellation
//! under fading and hardware impairments, the diffusion schedule curves, and
//! an image sent over the link next to its conditional forward-noised copy.

use cdiff_core::cdiff::{forward_diffuse_cond, forward_coeffs};
use cdiff_core::data::{build_pairs, pixel_to_unit, synth_corpus, unit_to_pixel, ImageSet, PairConfig, Source};
use cdiff_core::eval::{psnr, sigma2_for};
use cdiff_core::link::{transmit, ChannelConfig, ConstellationSpec, Fading};
use cdiff_core::nn::Tensor;
use cdiff_core::schedule::{LambdaShape, ScheduleTable};
use cdiff_core::StreamRng;
use wasm_bindgen::prelude::*;

const SIDE: usize = 32;

/// Ideal points followed by `n` zero-forced received symbols, each as
/// interleaved `(re, im)`.
pub fn scatter(order: usize, snr_db: f64, kappa_t: f64, kappa_r: f64, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let spec = ConstellationSpec::new(order).map_err(|e| e.to_string())?;
    let cfg = ChannelConfig {
        noise_var: sigma2_for(snr_db, 1.0),
        kappa_t,
        kappa_r,
        fading: Fading::Rayleigh,
        seed,
        ..ChannelConfig::default()
    };
    let mut rng = cfg.stream();
    let bits: Vec<u8> = (0..n * spec.bits_per_symbol()).map(|_| rng.bit()).collect();
    let s = spec.modulate(&bits).map_err(|e| e.to_string())?;
    let (y, h) = transmit(&s, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(2 * (order + n));
    for p in spec.points() {
        out.extend([p.re, p.im]);
    }
    for (k, hk) in h.iter().enumerate() {
        let eq = y.get(k) / (hk * cfg.power.sqrt());
        out.extend([eq.re, eq.im]);
    }
    Ok(out)
}

/// Rows `t = 1..=T` of `(ᾱ, λ, δ, ψ_x, ψ_x̂, ψ_ε)`, flattened.
pub fn schedule_rows(steps: usize, beta_start: f64, beta_end: f64) -> Result<Vec<f64>, String> {
    let tbl = ScheduleTable::build(steps, beta_start, beta_end, LambdaShape::Linear).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(6 * steps);
    for t in 1..=steps {
        let c = tbl.reverse_coeffs(t).map_err(|e| e.to_string())?;
        out.extend([tbl.alpha_bar(t), tbl.lambda(t), tbl.delta(t), c.x, c.xhat, c.eps]);
    }
    Ok(out)
}

/// One procedural 32×32 test image.
pub fn synth_image(seed: u64) -> Vec<u8> {
    synth_corpus(1, seed).expect("n = 1").pixels
}

/// Sends a 32×32 image through modem, channel and naive receiver. Returns
/// the received pixels.
pub fn send_image(
    pixels: &[u8],
    order: usize,
    repetition: usize,
    snr_db: f64,
    kappa_t: f64,
    kappa_r: f64,
    seed: u64,
) -> Result<Vec<u8>, String> {
    if pixels.len() != SIDE * SIDE {
        return Err(format!("expected {} pixels, got {}", SIDE * SIDE, pixels.len()));
    }
    let set = ImageSet {
        pixels: pixels.to_vec(),
        count: 1,
        height: SIDE,
        width: SIDE,
        labels: None,
        source: Source::Synthetic,
    };
    let cfg = PairConfig {
        snr_db: (snr_db, snr_db),
        kappa_t: (kappa_t, kappa_t),
        kappa_r: (kappa_r, kappa_r),
        order,
        repetition,
        seed,
        ..PairConfig::default()
    };
    let ds = build_pairs(&set, &cfg).map_err(|e| e.to_string())?;
    Ok(ds.pairs[0].xhat().data().iter().map(|&v| unit_to_pixel(v)).collect())
}

/// `x_t` drawn from the conditional forward process for clean `x0` and
/// received `xhat`, mapped back to pixels for display.
pub fn forward_image(
    x0: &[u8],
    xhat: &[u8],
    t: usize,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    seed: u64,
) -> Result<Vec<u8>, String> {
    if x0.len() != xhat.len() {
        return Err("image sizes differ".into());
    }
    let tbl = ScheduleTable::build(steps, beta_start, beta_end, LambdaShape::Linear).map_err(|e| e.to_string())?;
    let tensor = |px: &[u8]| Tensor::new(vec![px.len()], px.iter().map(|&p| pixel_to_unit(p)).collect());
    let a = tensor(x0).map_err(|e| e.to_string())?;
    let b = tensor(xhat).map_err(|e| e.to_string())?;
    let mut rng = StreamRng::new(seed);
    let (xt, _) = forward_diffuse_cond(&a, &b, t, &tbl, &mut rng).map_err(|e| e.to_string())?;
    // rescale by the mean gain so the image stays visible as ᾱ shrinks
    let (ca, cb, _) = forward_coeffs(&tbl, t);
    let g = (ca + cb).max(1e-6);
    Ok(xt.data().iter().map(|&v| unit_to_pixel(v / g)).collect())
}

/// PSNR in dB between two 8-bit images.
pub fn image_psnr(a: &[u8], b: &[u8]) -> Result<f64, String> {
    let unit = |p: &[u8]| p.iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>();
    psnr(&unit(a), &unit(b)).map_err(|e| e.to_string())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = constellationScatter)]
pub fn constellation_scatter(
    order: usize,
    snr_db: f64,
    kappa_t: f64,
    kappa_r: f64,
    n: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    scatter(order, snr_db, kappa_t, kappa_r, n, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = scheduleCurves)]
pub fn schedule_curves(steps: usize, beta_start: f64, beta_end: f64) -> Result<Vec<f64>, JsError> {
    schedule_rows(steps, beta_start, beta_end).map_err(js)
}

#[wasm_bindgen(js_name = synthImage)]
pub fn synth_image_js(seed: u32) -> Vec<u8> {
    synth_image(seed as u64)
}

#[wasm_bindgen(js_name = transmitImage)]
pub fn transmit_image(
    pixels: &[u8],
    order: usize,
    repetition: usize,
    snr_db: f64,
    kappa_t: f64,
    kappa_r: f64,
    seed: u32,
) -> Result<Vec<u8>, JsError> {
    send_image(pixels, order, repetition, snr_db, kappa_t, kappa_r, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = forwardPreview)]
pub fn forward_preview(
    x0: &[u8],
    xhat: &[u8],
    t: usize,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    seed: u32,
) -> Result<Vec<u8>, JsError> {
    forward_image(x0, xhat, t, steps, beta_start, beta_end, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = imagePsnr)]
pub fn image_psnr_js(a: &[u8], b: &[u8]) -> Result<f64, JsError> {
    image_psnr(a, b).map_err(js)
}

use super::{NnError, Tape, Tensor, Var};
use crate::StreamRng;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetConfig {
    /// Channel width per resolution level; `widths.len()` is the depth.
    pub widths: Vec<usize>,
    pub time_dim: usize,
    /// Number of diffusion steps `T` the model serves.
    pub steps: usize,
    /// Zero the final convolution so an untrained model predicts zero.
    pub zero_init_output: bool,
}

impl UNetConfig {
    /// Depth 4 with widths (32, 64, 128, 256).
    pub fn full(steps: usize) -> Self {
        Self {
            widths: vec![32, 64, 128, 256],
            time_dim: 64,
            steps,
            zero_init_output: true,
        }
    }

    /// Depth 3 with widths (16, 32, 32), sized for CPU experiments.
    pub fn desk(steps: usize) -> Self {
        Self {
            widths: vec![16, 32, 32],
            time_dim: 64,
            steps,
            zero_init_output: true,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(NnError::Config(format!("bad widths {:?}", self.widths)));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(NnError::Config(format!(
                "time_dim must be positive and even, got {}",
                self.time_dim
            )));
        }
        if self.steps == 0 {
            return Err(NnError::Config("steps must be positive".into()));
        }
        Ok(())
    }

    /// Parameter names, shapes and init fan-in, in the order `forward` binds them.
    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let w = &self.widths;
        let d = self.time_dim;
        let mut out = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, init: Init| {
            out.push((format!("{name}.w"), vec![cout, cin, 3, 3], init));
            out.push((format!("{name}.b"), vec![cout], Init::Zero));
        };
        conv("in".into(), 2, w[0], Init::FanIn(2 * 9));
        for i in 0..w.len() {
            conv(format!("enc{i}"), w[i], w[i], Init::FanIn(w[i] * 9));
            if i + 1 < w.len() {
                conv(format!("down{i}"), w[i], w[i + 1], Init::FanIn(w[i] * 9));
            }
        }
        for i in (0..w.len() - 1).rev() {
            conv(format!("up{i}"), w[i + 1], w[i], Init::FanIn(w[i + 1] * 9));
            conv(format!("dec{i}"), 2 * w[i], w[i], Init::FanIn(2 * w[i] * 9));
        }
        let out_init = if self.zero_init_output { Init::Zero } else { Init::FanIn(w[0] * 9) };
        conv("out".into(), w[0], 1, out_init);
        // time projections: one per encoder level and one per decoder level
        for i in 0..w.len() {
            out.push((format!("enc{i}.t.w"), vec![w[i], d], Init::Linear(d)));
            out.push((format!("enc{i}.t.b"), vec![w[i]], Init::Zero));
        }
        for i in (0..w.len() - 1).rev() {
            out.push((format!("dec{i}.t.w"), vec![w[i], d], Init::Linear(d)));
            out.push((format!("dec{i}.t.b"), vec![w[i]], Init::Zero));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zero,
    /// He-uniform, bound `√(6 / fan_in)`.
    FanIn(usize),
    /// Uniform, bound `1 / √fan_in`.
    Linear(usize),
}

/// Sinusoidal embedding of integer steps, `[B, dim]`: the first half holds
/// `sin(t ω_j)`, the second `cos(t ω_j)`, with `ω_j = 10000^(-j / (dim/2))`.
pub fn sinusoidal_embedding(t: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; t.len() * dim];
    for (row, &step) in data.chunks_exact_mut(dim).zip(t) {
        for j in 0..half {
            let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
            let a = step as f64 * freq;
            row[j] = a.sin();
            row[half + j] = a.cos();
        }
    }
    Tensor::new(vec![t.len(), dim], data).expect("consistent shape")
}

/// Noise predictor `ε_θ(x_t, x̂, t)`: a U-Net over the channel concatenation of
/// `x_t` and `x̂`, with an additive per-level time embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: UNetConfig,
    params: ParamSet,
    trained_with: Option<u64>,
}

struct Binder<'a> {
    params: &'a ParamSet,
    next: usize,
}

impl Binder<'_> {
    fn bind(&mut self, tape: &mut Tape) -> Var {
        let i = self.next;
        self.next += 1;
        tape.param(i, self.params.name(i), self.params.get(i).clone())
    }

    fn conv(&mut self, tape: &mut Tape) -> (Var, Var) {
        (self.bind(tape), self.bind(tape))
    }
}

impl DenoiserModel {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = StreamRng::new(seed).split_named("init");
        let mut params = ParamSet::default();
        for (name, shape, init) in config.layout() {
            let n: usize = shape.iter().product();
            let bound = match init {
                Init::Zero => 0.0,
                Init::FanIn(f) => (6.0 / f as f64).sqrt(),
                Init::Linear(f) => 1.0 / (f as f64).sqrt(),
            };
            let data = (0..n)
                .map(|_| if bound > 0.0 { rng.uniform(-bound, bound) } else { 0.0 })
                .collect();
            params.push(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            params,
            trained_with: None,
        })
    }

    /// Reassembles a model from stored parts; the layout must match `config`.
    pub fn from_parts(
        config: UNetConfig,
        params: ParamSet,
        trained_with: Option<u64>,
    ) -> Result<Self, NnError> {
        config.validate()?;
        let expect = config.layout();
        if expect.len() != params.len()
            || expect
                .iter()
                .zip(params.iter())
                .any(|((n, s, _), (pn, pt))| n != pn || s.as_slice() != pt.shape())
        {
            return Err(NnError::Config("parameter layout does not match configuration".into()));
        }
        Ok(Self {
            config,
            params,
            trained_with,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Fingerprint of the schedule this model was trained with, if any.
    pub fn trained_with(&self) -> Option<u64> {
        self.trained_with
    }

    pub fn bind_schedule(&mut self, fingerprint: u64) {
        self.trained_with = Some(fingerprint);
    }

    /// Same model with the parameters replaced (e.g. by an EMA shadow).
    pub fn with_params(&self, params: ParamSet) -> Result<Self, NnError> {
        if !self.params.same_layout(&params) {
            return Err(NnError::Config("parameter layout mismatch".into()));
        }
        Ok(Self {
            config: self.config.clone(),
            params,
            trained_with: self.trained_with,
        })
    }

    fn check_inputs(&self, x_t: &Tensor, x_hat: &Tensor, t: &[usize]) -> Result<(), NnError> {
        let s = x_t.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(NnError::Shape(format!("x_t must be [B, 1, H, W], got {s:?}")));
        }
        if x_hat.shape() != s {
            return Err(NnError::Shape(format!("x_hat {:?} vs x_t {s:?}", x_hat.shape())));
        }
        if t.len() != s[0] {
            return Err(NnError::Shape(format!("{} steps for batch of {}", t.len(), s[0])));
        }
        let m = 1usize << (self.config.depth() - 1);
        if s[2] == 0 || s[3] == 0 || s[2] % m != 0 || s[3] % m != 0 {
            return Err(NnError::Shape(format!(
                "spatial size {}x{} must be a positive multiple of {m}",
                s[2], s[3]
            )));
        }
        if let Some(&bad) = t.iter().find(|&&v| v == 0 || v > self.config.steps) {
            return Err(NnError::StepOutOfRange {
                t: bad,
                steps: self.config.steps,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the prediction node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x_t: &Tensor,
        x_hat: &Tensor,
        t: &[usize],
    ) -> Result<Var, NnError> {
        self.check_inputs(x_t, x_hat, t)?;
        let levels = self.config.depth();
        let mut p = Binder {
            params: &self.params,
            next: 0,
        };

        // time projections are stored after the convolutions; bind them first
        let n_conv = 2 * (1 + levels + (levels - 1) + 2 * (levels - 1) + 1);
        let emb = tape.leaf(sinusoidal_embedding(t, self.config.time_dim));
        let mut tp = Binder {
            params: &self.params,
            next: n_conv,
        };
        let mut enc_t = Vec::with_capacity(levels);
        for _ in 0..levels {
            let (w, b) = tp.conv(tape);
            enc_t.push(tape.linear(emb, w, b)?);
        }
        let mut dec_t = Vec::with_capacity(levels - 1);
        for _ in 0..levels - 1 {
            let (w, b) = tp.conv(tape);
            dec_t.push(tape.linear(emb, w, b)?);
        }
        dec_t.reverse(); // index by level

        let a = tape.leaf(x_t.clone());
        let c = tape.leaf(x_hat.clone());
        let input = tape.concat(a, c)?;
        let (w, b) = p.conv(tape);
        let h = tape.conv2d(input, w, b, 1)?;
        let mut h = tape.silu(h);

        let mut skips = Vec::with_capacity(levels);
        for (i, te) in enc_t.iter().enumerate() {
            let (w, b) = p.conv(tape);
            let z = tape.conv2d(h, w, b, 1)?;
            let z = tape.add_channel(z, *te)?;
            h = tape.silu(z);
            skips.push(h);
            if i + 1 < levels {
                let (w, b) = p.conv(tape);
                let z = tape.conv2d(h, w, b, 2)?;
                h = tape.silu(z);
            }
        }
        for i in (0..levels - 1).rev() {
            let u = tape.upsample2x(h)?;
            let (w, b) = p.conv(tape);
            let z = tape.conv2d(u, w, b, 1)?;
            let z = tape.silu(z);
            let cat = tape.concat(z, skips[i])?;
            let (w, b) = p.conv(tape);
            let z = tape.conv2d(cat, w, b, 1)?;
            let z = tape.add_channel(z, dec_t[i])?;
            h = tape.silu(z);
        }
        let (w, b) = p.conv(tape);
        let out = tape.conv2d(h, w, b, 1)?;
        debug_assert_eq!(p.next, n_conv);
        debug_assert_eq!(tp.next, self.params.len());
        tape.check_finite()?;
        Ok(out)
    }

    /// Inference-only forward pass.
    pub fn predict(&self, x_t: &Tensor, x_hat: &Tensor, t: &[usize]) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x_t, x_hat, t)?;
        Ok(tape.value(out).clone())
    }

    /// Operation count of one full sampling run on `h × w` inputs.
    pub fn estimate_flops(&self, h: usize, w: usize) -> u128 {
        super::estimate_flops(3, self.config.steps, h, w, self.config.widths[0], self.config.depth())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(zero_out: bool) -> DenoiserModel {
        DenoiserModel::new(
            UNetConfig {
                widths: vec![4, 8, 8],
                time_dim: 16,
                steps: 200,
                zero_init_output: zero_out,
            },
            3,
        )
        .unwrap()
    }

    fn inputs(b: usize, seed: u64) -> (Tensor, Tensor) {
        let mut r = StreamRng::new(seed);
        let mut a = vec![0.0; b * 64];
        let mut c = vec![0.0; b * 64];
        r.fill_normal(&mut a);
        r.fill_normal(&mut c);
        (
            Tensor::new(vec![b, 1, 8, 8], a).unwrap(),
            Tensor::new(vec![b, 1, 8, 8], c).unwrap(),
        )
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let m = tiny(true);
        let (x, c) = inputs(2, 1);
        let y = m.predict(&x, &c, &[5, 100]).unwrap();
        assert_eq!(y.shape(), &[2, 1, 8, 8]);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_equals_concatenated_singles() {
        let m = tiny(false);
        let (x, c) = inputs(2, 2);
        let both = m.predict(&x, &c, &[3, 170]).unwrap();
        let a = m.predict(&x.slice_batch(0, 1), &c.slice_batch(0, 1), &[3]).unwrap();
        let b = m.predict(&x.slice_batch(1, 1), &c.slice_batch(1, 1), &[170]).unwrap();
        assert_eq!(both, Tensor::stack(&[a, b]).unwrap());
    }

    #[test]
    fn deterministic_construction_and_forward() {
        let (x, c) = inputs(1, 3);
        let y1 = tiny(false).predict(&x, &c, &[7]).unwrap();
        let y2 = tiny(false).predict(&x, &c, &[7]).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn time_embedding_reaches_output() {
        let m = tiny(false);
        let (x, c) = inputs(1, 4);
        let a = m.predict(&x, &c, &[1]).unwrap();
        let b = m.predict(&x, &c, &[200]).unwrap();
        let linf = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(linf > 0.0);
    }

    #[test]
    fn output_shape_matches_input_for_valid_sizes() {
        let m = tiny(false);
        for (h, w) in [(4, 4), (8, 12), (16, 8), (32, 32)] {
            let x = Tensor::zeros(&[1, 1, h, w]);
            assert_eq!(m.predict(&x, &x, &[1]).unwrap().shape(), &[1, 1, h, w]);
        }
    }

    #[test]
    fn input_validation() {
        let m = tiny(true);
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        assert!(matches!(
            m.predict(&x, &x, &[0]),
            Err(NnError::StepOutOfRange { t: 0, steps: 200 })
        ));
        assert!(matches!(m.predict(&x, &x, &[201]), Err(NnError::StepOutOfRange { .. })));
        let odd = Tensor::zeros(&[1, 1, 6, 6]);
        assert!(matches!(m.predict(&odd, &odd, &[1]), Err(NnError::Shape(_))));
        let y = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(m.predict(&x, &y, &[1]), Err(NnError::Shape(_))));
        assert!(matches!(m.predict(&x, &x, &[1, 2]), Err(NnError::Shape(_))));
    }

    #[test]
    fn full_config_layout() {
        let m = DenoiserModel::new(UNetConfig::full(200), 0).unwrap();
        assert_eq!(m.params().get(0).shape(), &[32, 2, 3, 3]);
        assert!(m.params().names().iter().any(|n| n == "enc3.w"));
        assert!(m.params().iter().any(|(n, t)| n == "enc3.w" && t.shape() == [256, 256, 3, 3]));
    }

    #[test]
    fn embedding_values() {
        let e = sinusoidal_embedding(&[0, 1], 4);
        assert_eq!(&e.data()[..4], &[0.0, 0.0, 1.0, 1.0]);
        assert!((e.data()[4] - 1f64.sin()).abs() < 1e-15);
        assert!((e.data()[5] - 0.01f64.sin()).abs() < 1e-15);
    }
}

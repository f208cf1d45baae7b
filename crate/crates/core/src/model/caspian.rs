//! The encoder/bottleneck/decoder network with a parallel pooling path.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::grid::{Grid, SusceptibilityMap};
use crate::nn::kernels::{pool2d_forward, ConvSpec, Padding, PoolMode, PoolSpec};
use crate::nn::var::{self, Activation};
use crate::nn::{checkpoint, Init, ParamStore, Scalar, Tensor, Var};

/// Kernel and bias parameter ids of one layer.
#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    down: Layer,
    pointwise: Layer,
}

#[derive(Debug, Clone)]
struct ResBlock {
    expand: Layer,
    grouped: Layer,
    project: Layer,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    up: Layer,
    pointwise: Layer,
}

#[derive(Debug, Clone)]
struct Modulation {
    hidden: Layer,
    gate: Layer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    pub init: Init,
}

#[derive(Default)]
struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    fn layer(&mut self, name: &str, shape: [usize; 4], init: Init) -> Layer {
        let w = self.specs.len();
        self.specs.push(ParamSpec {
            name: format!("{name}.kernel"),
            shape,
            init,
        });
        self.specs.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: [1, 1, 1, shape[3]],
            init: Init::Zeros,
        });
        Layer { w, b: w + 1 }
    }
}

/// Indicator channels `[x == +1, x == -1]` of a `(n, h, w, 1)` map.
pub fn class_indicators<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, h, w, c] = x.shape();
    assert_eq!(c, 1, "susceptibility input has one channel");
    let mut out = Vec::with_capacity(n * h * w * 2);
    for &v in x.data() {
        let pos = v == T::one();
        let neg = v == -T::one();
        assert!(pos || neg || v == T::zero(), "susceptibility value {v} outside {{-1, 0, 1}}");
        out.push(if pos { T::one() } else { T::zero() });
        out.push(if neg { T::one() } else { T::zero() });
    }
    Tensor::from_vec([n, h, w, 2], out).expect("shape")
}

/// Class indicators max-pooled once: `(n, h/2, w/2, 2)`.
pub fn segregated_pooling<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    halve(&class_indicators(x))
}

fn halve<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    pool2d_forward(t, &PoolSpec::halve(PoolMode::Max)).expect("valid pooling").0
}

/// Levels `1..=k`: the segregated pooling output and `k - 1` further halvings.
pub fn pooling_cascade<T: Scalar>(seg: &Tensor<T>, k: usize) -> Vec<Tensor<T>> {
    let mut levels = Vec::with_capacity(k);
    if k == 0 {
        return levels;
    }
    levels.push(seg.clone());
    for _ in 1..k {
        let next = halve(levels.last().expect("non-empty"));
        levels.push(next);
    }
    levels
}

/// Closed-form parameter count of one bottleneck block.
pub fn resnext_param_count(f: usize, c: usize, w: usize) -> usize {
    let d = c * w;
    (f * d + d) + (9 * w * d + d) + (d * f + f)
}

/// Architecture plus parameter layout; parameters live separately so the
/// same network runs in 32-bit inference and 64-bit gradient checks.
#[derive(Debug, Clone)]
pub struct Caspian {
    cfg: ModelConfig,
    specs: Vec<ParamSpec>,
    encoder: Vec<EncoderBlock>,
    bottleneck: Vec<ResBlock>,
    decoder: Vec<DecoderBlock>,
    modulation: Option<Modulation>,
    head: Layer,
}

impl Caspian {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.filters;
        let d = cfg.bottleneck_width();
        let extra = if cfg.has_pooling_path() { 2 } else { 0 };
        let init = cfg.init;
        let mut lay = Layout::default();
        let mut encoder = Vec::new();
        for k in 1..=cfg.depth {
            let down = if k == 1 {
                lay.layer(&format!("enc{k}/conv"), [3, 3, 1, f], init)
            } else {
                lay.layer(&format!("enc{k}/depthwise"), [3, 3, 1, f], init)
            };
            let pointwise = lay.layer(&format!("enc{k}/pointwise"), [1, 1, f + extra, f], init);
            encoder.push(EncoderBlock { down, pointwise });
        }
        let mut bottleneck = Vec::new();
        for m in 1..=cfg.effective_blocks() {
            bottleneck.push(ResBlock {
                expand: lay.layer(&format!("res{m}/expand"), [1, 1, f, d], init),
                grouped: lay.layer(&format!("res{m}/grouped"), [3, 3, cfg.group_width, d], init),
                project: lay.layer(&format!("res{m}/project"), [1, 1, d, f], init),
            });
        }
        let mut decoder = Vec::new();
        let mut modulation = None;
        for j in 1..=cfg.depth {
            let up = lay.layer(&format!("dec{j}/transposed"), [2, 2, f, f], init);
            let pointwise = lay.layer(&format!("dec{j}/pointwise"), [1, 1, f + extra, f], init);
            decoder.push(DecoderBlock { up, pointwise });
            if cfg.has_modulation() && j == cfg.modulation_level {
                let r = cfg.r();
                modulation = Some(Modulation {
                    hidden: lay.layer("modulation/hidden", [1, 1, 2, r], init),
                    gate: lay.layer("modulation/gate", [1, 1, r, f], init),
                });
            }
        }
        let head = lay.layer("head/pointwise", [1, 1, f, 1], init);
        Ok(Self {
            cfg: cfg.clone(),
            specs: lay.specs,
            encoder,
            bottleneck,
            decoder,
            modulation,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Fresh parameters; identical seeds give bit-identical stores.
    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in &self.specs {
            store.init(&s.name, s.shape, s.init, &mut rng).expect("unique names");
        }
        store
    }

    /// Checks that `store` has exactly this network's names and shapes.
    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        if store.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, architecture needs {}",
                store.len(),
                self.specs.len()
            )));
        }
        for (spec, e) in self.specs.iter().zip(store.entries()) {
            if spec.name != e.name || spec.shape != e.tensor.shape() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    e.name,
                    e.tensor.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Runs the network on `(n, H, W, 1)` susceptibility maps.
    pub fn forward<T: Scalar>(&self, params: &[Var<T>], input: &Tensor<T>) -> Result<Var<T>> {
        let indicators = self.cfg.has_pooling_path().then(|| class_indicators(input));
        self.forward_parts(params, &Var::constant(input.clone()), indicators.as_ref())
    }

    /// Forward with the convolutional input and the class-indicator map given
    /// separately. The indicators are piecewise constant in the input, so
    /// this form lets gradient checks differentiate through the conv path.
    pub fn forward_parts<T: Scalar>(
        &self,
        params: &[Var<T>],
        conv_input: &Var<T>,
        indicators: Option<&Tensor<T>>,
    ) -> Result<Var<T>> {
        let cfg = &self.cfg;
        if params.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "{} parameter tensors supplied, {} expected",
                params.len(),
                self.specs.len()
            )));
        }
        let [_, h, w, c] = conv_input.shape();
        if (h, w, c) != (cfg.height, cfg.width, 1) {
            return Err(Error::Shape(format!(
                "input {:?} does not match a {}x{}x1 grid",
                conv_input.shape(),
                cfg.height,
                cfg.width
            )));
        }
        // Pooling path: level 0 is the unpooled indicator map.
        let levels: Vec<Var<T>> = match (cfg.has_pooling_path(), indicators) {
            (true, Some(ind)) => {
                let mut v = vec![Var::constant(ind.clone())];
                let seg = halve(ind);
                v.extend(pooling_cascade(&seg, cfg.depth).into_iter().map(Var::constant));
                v
            }
            (true, None) => return Err(Error::Config("pooling path requires indicator maps".into())),
            (false, _) => Vec::new(),
        };
        let p = |l: &Layer| (&params[l.w], &params[l.b]);
        let act = cfg.activation;
        let f = cfg.filters;

        let mut h = conv_input.clone();
        for (idx, block) in self.encoder.iter().enumerate() {
            let k = idx + 1;
            let (dw, db) = p(&block.down);
            let groups = if k == 1 { 1 } else { f };
            let mut z = var::conv2d(&h, dw, db, ConvSpec::new(3, 3, 2, groups, Padding::Same))?;
            if !levels.is_empty() {
                z = var::concat_channels(&[z, levels[k].clone()])?;
            }
            let (pw, pb) = p(&block.pointwise);
            let mut out = var::activation(&var::conv2d(&z, pw, pb, ConvSpec::pointwise())?, act);
            if k > 1 {
                let skip = var::pool2d(&h, PoolSpec::halve(PoolMode::Avg))?;
                out = var::add(&out, &skip)?;
            }
            h = out;
        }

        for block in &self.bottleneck {
            h = self.resnext(&h, block, params)?;
        }

        let mut gate: Option<Var<T>> = None;
        for (idx, block) in self.decoder.iter().enumerate() {
            let j = idx + 1;
            let level = cfg.depth - j;
            let (uw, ub) = p(&block.up);
            let mut u = var::conv_transpose2d(&h, uw, ub, 2)?;
            if !levels.is_empty() {
                u = var::concat_channels(&[u, levels[level].clone()])?;
            }
            let (pw, pb) = p(&block.pointwise);
            let mut d = var::activation(&var::conv2d(&u, pw, pb, ConvSpec::pointwise())?, act);
            if let (Some(m), true) = (&self.modulation, j == cfg.modulation_level) {
                gate = Some(self.modulation_weights(&levels[level], m, params)?);
            }
            if let Some(g) = &gate {
                d = var::scale_channels(&d, g)?;
            }
            h = d;
        }

        let (hw, hb) = p(&self.head);
        let mut y = var::conv2d(&h, hw, hb, ConvSpec::pointwise())?;
        if cfg.has_channel_sum() {
            y = var::add(&y, &var::channel_sum(&h))?;
        }
        Ok(var::relu(&y))
    }

    fn resnext<T: Scalar>(&self, x: &Var<T>, b: &ResBlock, params: &[Var<T>]) -> Result<Var<T>> {
        let act = self.cfg.activation;
        let e = var::conv2d(x, &params[b.expand.w], &params[b.expand.b], ConvSpec::pointwise())?;
        let e = var::activation(&e, act);
        let g = var::conv2d(
            &e,
            &params[b.grouped.w],
            &params[b.grouped.b],
            ConvSpec::new(3, 3, 1, self.cfg.cardinality, Padding::Same),
        )?;
        let g = var::activation(&g, act);
        let out = var::conv2d(&g, &params[b.project.w], &params[b.project.b], ConvSpec::pointwise())?;
        var::add(x, &out)
    }

    fn modulation_weights<T: Scalar>(&self, maps: &Var<T>, m: &Modulation, params: &[Var<T>]) -> Result<Var<T>> {
        let pooled = var::global_avg_pool(maps);
        let hidden = var::tanh(&var::dense(&pooled, &params[m.hidden.w], &params[m.hidden.b])?);
        Ok(var::sigmoid(&var::dense(&hidden, &params[m.gate.w], &params[m.gate.b])?))
    }
}

/// One bottleneck block on explicit parameters, ordered expand kernel/bias,
/// grouped kernel/bias, projection kernel/bias.
pub fn resnext_block<T: Scalar>(
    x: &Var<T>,
    cardinality: usize,
    group_width: usize,
    params: &[Var<T>; 6],
    activation: Activation,
) -> Result<Var<T>> {
    let f = x.shape()[3];
    let d = cardinality * group_width;
    if params[0].shape() != [1, 1, f, d] {
        return Err(Error::Config(format!(
            "expansion kernel {:?} does not map {f} to {d} channels",
            params[0].shape()
        )));
    }
    let e = var::activation(&var::conv2d(x, &params[0], &params[1], ConvSpec::pointwise())?, activation);
    let g = var::conv2d(&e, &params[2], &params[3], ConvSpec::new(3, 3, 1, cardinality, Padding::Same))?;
    let g = var::activation(&g, activation);
    let out = var::conv2d(&g, &params[4], &params[5], ConvSpec::pointwise())?;
    var::add(x, &out)
}

/// Squeeze-style channel weights from 2-channel pooling maps.
pub fn modulation_block<T: Scalar>(maps: &Var<T>, params: &[Var<T>; 4]) -> Result<Var<T>> {
    if maps.shape()[3] != 2 {
        return Err(Error::Shape(format!("modulation expects 2 channels, got {:?}", maps.shape())));
    }
    let pooled = var::global_avg_pool(maps);
    let hidden = var::tanh(&var::dense(&pooled, &params[0], &params[1])?);
    Ok(var::sigmoid(&var::dense(&hidden, &params[2], &params[3])?))
}

/// A network together with trained (or freshly initialized) weights.
#[derive(Debug, Clone)]
pub struct CaspianModel {
    arch: Caspian,
    params: ParamStore<f32>,
}

impl CaspianModel {
    pub fn new(arch: Caspian, params: ParamStore<f32>) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Caspian {
        &self.arch
    }

    pub fn config(&self) -> &ModelConfig {
        self.arch.config()
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<f32> {
        self.params
    }

    /// Inference on a batch of maps; no graph is retained.
    pub fn predict_batch(&self, maps: &[&SusceptibilityMap]) -> Result<Vec<Grid<f32>>> {
        let input = maps_to_tensor(maps, self.config())?;
        let y = self.arch.forward(&self.params.vars(false), &input)?;
        let out = y.value();
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        let cells = out.h() * out.w();
        Ok(out
            .data()
            .chunks_exact(cells)
            .map(|c| Grid {
                h: out.h(),
                w: out.w(),
                data: c.to_vec(),
            })
            .collect())
    }

    pub fn predict(&self, map: &SusceptibilityMap) -> Result<Grid<f32>> {
        Ok(self.predict_batch(&[map])?.pop().expect("one output"))
    }

    /// Writes a checkpoint directory and returns its fingerprint.
    pub fn save(&self, dir: &Path) -> Result<String> {
        checkpoint::save(dir, &serde_json::to_value(self.config())?, &self.params)
    }

    /// Loads a checkpoint, returning the model and its fingerprint.
    pub fn load(dir: &Path) -> Result<(Self, String)> {
        let loaded = checkpoint::load(dir)?;
        let cfg: ModelConfig = serde_json::from_value(loaded.config)?;
        Ok((Self::new(Caspian::new(&cfg)?, loaded.params)?, loaded.fingerprint))
    }
}

pub fn build_caspian(cfg: &ModelConfig, seed: u64) -> Result<CaspianModel> {
    let arch = Caspian::new(cfg)?;
    let params = arch.init_params(seed);
    CaspianModel::new(arch, params)
}

pub fn build_ablation(cfg: &ModelConfig, variant: Variant, seed: u64) -> Result<CaspianModel> {
    build_caspian(&cfg.clone().with_variant(variant), seed)
}

pub fn count_params(model: &CaspianModel) -> usize {
    model.params().count()
}

/// Stacks maps into a `(n, H, W, 1)` tensor.
pub fn maps_to_tensor<T: Scalar>(maps: &[&SusceptibilityMap], cfg: &ModelConfig) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(maps.len() * cfg.height * cfg.width);
    for m in maps {
        if m.h() != cfg.height || m.w() != cfg.width {
            return Err(Error::Shape(format!(
                "map is {}x{}, model expects {}x{}",
                m.h(),
                m.w(),
                cfg.height,
                cfg.width
            )));
        }
        data.extend(m.grid.data.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Tensor::from_vec([maps.len(), cfg.height, cfg.width, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(cfg: &ModelConfig) -> Caspian {
        Caspian::new(cfg).unwrap()
    }

    #[test]
    fn segregated_pooling_hand_example() {
        let mut x = Tensor::<f32>::zeros([1, 4, 4, 1]);
        x.data_mut()[0] = 1.0;
        x.data_mut()[15] = -1.0;
        let s = segregated_pooling(&x);
        assert_eq!(s.shape(), [1, 2, 2, 2]);
        let ch0: Vec<f32> = s.data().iter().step_by(2).copied().collect();
        let ch1: Vec<f32> = s.data().iter().skip(1).step_by(2).copied().collect();
        assert_eq!(ch0, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ch1, vec![0.0, 0.0, 0.0, 1.0]);

        let zeros = segregated_pooling(&Tensor::<f32>::zeros([1, 4, 4, 1]));
        assert!(zeros.data().iter().all(|&v| v == 0.0));
        let ones = segregated_pooling(&Tensor::<f32>::full([1, 4, 4, 1], 1.0));
        assert!(ones.data().chunks(2).all(|c| c == [1.0, 0.0]));
    }

    #[test]
    #[should_panic]
    fn out_of_set_values_assert() {
        segregated_pooling(&Tensor::<f32>::full([1, 2, 2, 1], 0.5));
    }

    #[test]
    fn cascade_shapes() {
        let seg = Tensor::<f32>::full([1, 512, 512, 2], 1.0);
        let levels = pooling_cascade(&seg, 4);
        let shapes: Vec<usize> = levels.iter().map(|l| l.h()).collect();
        assert_eq!(shapes, vec![512, 256, 128, 64]);
        assert!(levels.iter().all(|l| l.data().iter().all(|&v| v == 1.0)));
        assert_eq!(pooling_cascade(&seg, 1)[0], seg);
    }

    #[test]
    fn paper_parameter_counts() {
        let full = arch(&ModelConfig::paper()).param_count();
        assert_eq!(full, 332_624);
        let count = |v| arch(&ModelConfig::paper().with_variant(v)).param_count();
        assert_eq!(count(Variant::B), full);
        assert_eq!(full - count(Variant::Gamma), 6 * 24_824);
        assert_eq!(resnext_param_count(72, 34, 4), 24_824);
        assert!(count(Variant::Gamma) < count(Variant::Omega));
        assert!(count(Variant::Omega) < count(Variant::Z));
        assert!(count(Variant::Z) < full);
        assert_eq!(full - count(Variant::Z), 4647);
    }

    #[test]
    fn linear_in_blocks() {
        for m in 2..10 {
            let mut cfg = ModelConfig::paper();
            cfg.blocks = m;
            let mut two = cfg.clone();
            two.blocks = 2;
            assert_eq!(arch(&cfg).param_count() - arch(&two).param_count(), (m - 2) * 24_824);
        }
    }

    #[test]
    fn desk_forward_shape_and_sign() {
        let model = build_caspian(&ModelConfig::desk(), 1).unwrap();
        let mut grid = Grid::filled(128, 128, 0i8);
        for j in 0..128 {
            grid.set(64, j, if j % 3 == 0 { 1 } else { -1 });
        }
        let out = model.predict(&SusceptibilityMap { grid }).unwrap();
        assert_eq!((out.h, out.w), (128, 128));
        assert!(out.data.iter().all(|&v| v >= 0.0 && v.is_finite()));
        let zero = model.predict(&SusceptibilityMap { grid: Grid::filled(128, 128, 0) }).unwrap();
        assert!(zero.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_init() {
        let a = arch(&ModelConfig::desk());
        assert_eq!(a.init_params(5), a.init_params(5));
        assert_ne!(a.init_params(5), a.init_params(6));
    }

    #[test]
    fn zero_resnext_is_identity() {
        let x = Var::constant(crate::nn::gradcheck::random_tensor([1, 4, 4, 8], 1));
        let shapes = [[1, 1, 8, 4], [1, 1, 1, 4], [3, 3, 2, 4], [1, 1, 1, 4], [1, 1, 4, 8], [1, 1, 1, 8]];
        let params = shapes.map(|s| Var::constant(Tensor::zeros(s)));
        let y = resnext_block(&x, 2, 2, &params, Activation::Tanh).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn zero_modulation_is_half() {
        let maps = Var::constant(Tensor::<f64>::zeros([1, 4, 4, 2]));
        let shapes = [[1, 1, 2, 61], [1, 1, 1, 61], [1, 1, 61, 72], [1, 1, 1, 72]];
        let params = shapes.map(|s| Var::constant(Tensor::zeros(s)));
        let g = modulation_block(&maps, &params).unwrap();
        assert_eq!(g.shape(), [1, 1, 1, 72]);
        assert!(g.value().data().iter().all(|&v| v == 0.5));
        let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        assert_eq!(n, 4647);
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = ModelConfig {
            height: 16,
            width: 16,
            filters: 4,
            depth: 2,
            cardinality: 2,
            blocks: 1,
            group_width: 1,
            ..ModelConfig::desk()
        };
        let m = build_caspian(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let fp = m.save(dir.path()).unwrap();
        let (back, fp2) = CaspianModel::load(dir.path()).unwrap();
        assert_eq!(fp, fp2);
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
    }

    #[test]
    fn checkpoint_mismatch_is_rejected() {
        let desk = arch(&ModelConfig::desk());
        let other = arch(&ModelConfig::desk().with_variant(Variant::Omega));
        assert!(CaspianModel::new(desk, other.init_params(0)).is_err());
    }
}

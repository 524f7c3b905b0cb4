use gendistill_nn::{BatchNorm, Conv2d, Graph, Init, Linear, Mode, ParamStore, Real, Var};
use rand::Rng;

use super::{FeatureNet, ForwardOutputs};
use crate::error::Result;

const INIT: Init = Init::FanInUniform;

/// Records `h` as the feature output when `idx` is the selected tap.
fn tap<'g, T: Real>(slot: &mut Option<Var<'g, T>>, selected: usize, idx: usize, h: Var<'g, T>) {
    if selected == idx {
        *slot = Some(h);
    }
}

fn finish<'g, T: Real>(logits: Var<'g, T>, features: Option<Var<'g, T>>) -> ForwardOutputs<'g, T> {
    ForwardOutputs { logits, features: features.expect("tap index validated at construction") }
}

/// Three `[conv3x3 -> BN -> ReLU -> avgpool2]` blocks and a linear head.
pub(super) struct ConvNet3 {
    blocks: Vec<(Conv2d, BatchNorm)>,
    head: Linear,
    tap: usize,
}

impl ConvNet3 {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        width: usize,
        classes: usize,
        tap: usize,
        rng: &mut R,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut c = channels;
        for i in 0..3 {
            let conv = Conv2d::new(store, &format!("block{}.conv", i + 1), c, width, 3, 1, 1, true, INIT, rng);
            let bn = BatchNorm::new(store, &format!("block{}.bn", i + 1), width);
            blocks.push((conv, bn));
            c = width;
        }
        let head = Linear::new(store, "head", width * 4 * 4, classes, true, INIT, rng);
        Self { blocks, head, tap }
    }
}

impl<T: Real> FeatureNet<T> for ConvNet3 {
    fn forward_with_features<'g>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mode: Mode,
    ) -> Result<ForwardOutputs<'g, T>> {
        let mut feat = None;
        let mut h = x;
        for (i, (conv, bn)) in self.blocks.iter().enumerate() {
            h = conv.forward(g, store, h)?;
            h = bn.forward(g, store, h, mode)?.relu().avg_pool2()?;
            tap(&mut feat, self.tap, i, h);
        }
        let logits = self.head.forward(g, store, h.flatten()?)?;
        Ok(finish(logits, feat))
    }
}

struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false, INIT, rng);
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), cout);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, INIT, rng);
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), cout);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            let c = Conv2d::new(store, &format!("{name}.down.conv"), cin, cout, 1, stride, 0, false, INIT, rng);
            (c, BatchNorm::new(store, &format!("{name}.down.bn"), cout))
        });
        Self { conv1, bn1, conv2, bn2, shortcut }
    }

    /// Returns the block output and the activation after its first conv.
    fn forward<'g, T: Real>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>, mode: Mode) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let mid = self.bn1.forward(g, store, self.conv1.forward(g, store, x)?, mode)?.relu();
        let h = self.bn2.forward(g, store, self.conv2.forward(g, store, mid)?, mode)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(g, store, conv.forward(g, store, x)?, mode)?,
            None => x,
        };
        Ok((h.add(skip)?.relu(), mid))
    }
}

/// CIFAR-style ResNet with four stages of basic blocks.
pub(super) struct ResNet {
    stem: (Conv2d, BatchNorm),
    stages: Vec<Vec<BasicBlock>>,
    head: Linear,
    tap: usize,
}

impl ResNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        width: usize,
        classes: usize,
        blocks: [usize; 4],
        tap: usize,
        rng: &mut R,
    ) -> Self {
        let stem = (
            Conv2d::new(store, "stem.conv", channels, width, 3, 1, 1, false, INIT, rng),
            BatchNorm::new(store, "stem.bn", width),
        );
        let mut stages = Vec::new();
        let mut cin = width;
        for (s, &n) in blocks.iter().enumerate() {
            let cout = width << s;
            let mut stage = Vec::new();
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                stage.push(BasicBlock::new(store, &format!("layer{}.{}", s + 1, b), cin, cout, stride, rng));
                cin = cout;
            }
            stages.push(stage);
        }
        let head = Linear::new(store, "head", cin, classes, true, INIT, rng);
        Self { stem, stages, head, tap }
    }
}

impl<T: Real> FeatureNet<T> for ResNet {
    fn forward_with_features<'g>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mode: Mode,
    ) -> Result<ForwardOutputs<'g, T>> {
        let mut feat = None;
        let mut h = self.stem.1.forward(g, store, self.stem.0.forward(g, store, x)?, mode)?.relu();
        tap(&mut feat, self.tap, 0, h);
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                let (out, mid) = block.forward(g, store, h, mode)?;
                if s == 0 && b == 0 {
                    tap(&mut feat, self.tap, 1, mid);
                }
                h = out;
            }
            tap(&mut feat, self.tap, s + 2, h);
        }
        let logits = self.head.forward(g, store, h.global_avg_pool()?)?;
        Ok(finish(logits, feat))
    }
}

/// Five-conv AlexNet variant for 32×32 inputs, without normalization.
pub(super) struct AlexNet {
    convs: Vec<Conv2d>,
    head: Linear,
    tap: usize,
}

impl AlexNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        width: usize,
        classes: usize,
        tap: usize,
        rng: &mut R,
    ) -> Self {
        let widths = [2 * width, 3 * width, 4 * width, 3 * width, 3 * width];
        let kernels = [5, 5, 3, 3, 3];
        let mut convs = Vec::new();
        let mut c = channels;
        for (i, (&w, &k)) in widths.iter().zip(&kernels).enumerate() {
            convs.push(Conv2d::new(store, &format!("conv{}", i + 1), c, w, k, 1, k / 2, true, INIT, rng));
            c = w;
        }
        let head = Linear::new(store, "head", c * 4 * 4, classes, true, INIT, rng);
        Self { convs, head, tap }
    }
}

impl<T: Real> FeatureNet<T> for AlexNet {
    fn forward_with_features<'g>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        _mode: Mode,
    ) -> Result<ForwardOutputs<'g, T>> {
        let mut feat = None;
        let mut h = self.convs[0].forward(g, store, x)?.relu().max_pool2()?;
        tap(&mut feat, self.tap, 0, h);
        h = self.convs[1].forward(g, store, h)?.relu().max_pool2()?;
        tap(&mut feat, self.tap, 1, h);
        for conv in &self.convs[2..] {
            h = conv.forward(g, store, h)?.relu();
        }
        h = h.max_pool2()?;
        tap(&mut feat, self.tap, 2, h);
        let logits = self.head.forward(g, store, h.flatten()?)?;
        Ok(finish(logits, feat))
    }
}

/// VGG-11 with batch normalization; each stage ends in a 2×2 max pool.
pub(super) struct Vgg11 {
    stages: Vec<Vec<(Conv2d, BatchNorm)>>,
    head: Linear,
    tap: usize,
}

impl Vgg11 {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        width: usize,
        classes: usize,
        tap: usize,
        rng: &mut R,
    ) -> Self {
        let plan: [&[usize]; 5] = [&[1], &[2], &[4, 4], &[8, 8], &[8, 8]];
        let mut stages = Vec::new();
        let mut c = channels;
        let mut n = 0;
        for widths in plan {
            let mut stage = Vec::new();
            for &m in widths {
                n += 1;
                let conv = Conv2d::new(store, &format!("conv{n}"), c, m * width, 3, 1, 1, false, INIT, rng);
                stage.push((conv, BatchNorm::new(store, &format!("bn{n}"), m * width)));
                c = m * width;
            }
            stages.push(stage);
        }
        let head = Linear::new(store, "head", c, classes, true, INIT, rng);
        Self { stages, head, tap }
    }
}

impl<T: Real> FeatureNet<T> for Vgg11 {
    fn forward_with_features<'g>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mode: Mode,
    ) -> Result<ForwardOutputs<'g, T>> {
        let mut feat = None;
        let mut h = x;
        for (s, stage) in self.stages.iter().enumerate() {
            for (conv, bn) in stage {
                h = bn.forward(g, store, conv.forward(g, store, h)?, mode)?.relu();
            }
            h = h.max_pool2()?;
            tap(&mut feat, self.tap, s, h);
        }
        let logits = self.head.forward(g, store, h.flatten()?)?;
        Ok(finish(logits, feat))
    }
}

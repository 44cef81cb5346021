//! Deterministic fixture models and datasets.
//!
//! The image task has four classes of 8×8 single-channel pictures: a
//! horizontal line, a vertical line, a diagonal and an anti-diagonal, each at
//! a random offset and brightness over Gaussian background noise. The CNN
//! fixtures use oriented line detectors in their first convolution, batch-norm
//! statistics measured on a training split, and a final dense layer fitted by
//! a short softmax-regression loop on the pooled features.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::format::{save_model, FormatError};
use crate::metrics::{save_dataset, Dataset};
use crate::model::{LayerKind, ModelGraph, Node, Param, BN_PARAM_NAMES};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 8;
pub const SHAPE_CLASSES: usize = 4;
const TRAIN_SEED: u64 = 0x5348_4150_4553_5452;
const TEST_SEED: u64 = 0x5348_4150_4553_5445;
const WEIGHT_SEED: u64 = 0x5745_4947_4854_5331;
const TRAIN_SIZE: usize = 512;
const TEST_SIZE: usize = 256;
const BN_EPSILON: f32 = 1e-3;

struct FixtureRng(ChaCha20Rng);

impl FixtureRng {
    fn new(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }

    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
    Tensor::new(shape, data).expect("fixture shapes are consistent")
}

/// One-hot inputs `[4, 1, 1]` labelled with their hot index.
pub fn onehot_dataset() -> Dataset {
    let images = tensor(vec![4, 4, 1, 1], (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect());
    Dataset::new("onehot4", images, vec![0, 1, 2, 3], 4).expect("valid")
}

/// Two identity dense layers around a ReLU.
pub fn tiny_mlp() -> ModelGraph {
    let eye = || tensor(vec![4, 4], (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect());
    ModelGraph::new(
        "tiny_mlp",
        vec![4, 1, 1],
        4,
        vec![
            Node::new(
                LayerKind::Dense,
                vec![Param::new("weight", eye()), Param::new("bias", tensor(vec![4], vec![0.0; 4]))],
            ),
            Node::new(LayerKind::Relu, vec![]),
            Node::new(
                LayerKind::Dense,
                vec![Param::new("weight", eye()), Param::new("bias", tensor(vec![4], vec![0.0; 4]))],
            ),
        ],
    )
    .expect("valid")
}

/// `count` line images, classes interleaved 0,1,2,3,0,...
pub fn shapes_dataset(name: &str, count: usize, seed: u64) -> Dataset {
    let mut rng = FixtureRng::new(seed);
    let side = IMAGE_SIDE;
    let mut data = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % SHAPE_CLASSES;
        let amplitude = 0.8 + 0.4 * rng.uniform();
        let mut img = vec![0.0f32; side * side];
        match class {
            0 | 1 => {
                let k = 1 + rng.below(side - 2);
                for j in 0..side {
                    let (r, c) = if class == 0 { (k, j) } else { (j, k) };
                    img[r * side + c] = amplitude as f32;
                }
            }
            _ => {
                let d = rng.below(5) as isize - 2;
                for r in 0..side as isize {
                    let c = if class == 2 { r + d } else { side as isize - 1 - r + d };
                    if (0..side as isize).contains(&c) {
                        img[r as usize * side + c as usize] = amplitude as f32;
                    }
                }
            }
        }
        for px in &mut img {
            *px += (0.3 * rng.normal()) as f32;
        }
        data.extend(img);
        labels.push(class as u32);
    }
    Dataset::new(name, tensor(vec![count, 1, side, side], data), labels, SHAPE_CLASSES).expect("valid")
}

pub fn shapes_train() -> Dataset {
    shapes_dataset("shapes4_train", TRAIN_SIZE, TRAIN_SEED)
}

pub fn shapes_test() -> Dataset {
    shapes_dataset("shapes4_test", TEST_SIZE, TEST_SEED)
}

/// Zero-mean 3×3 detectors for the four line orientations.
fn line_detectors(rng: &mut FixtureRng) -> Tensor {
    let on = |class: usize, r: usize, c: usize| match class {
        0 => r == 1,
        1 => c == 1,
        2 => r == c,
        _ => r + c == 2,
    };
    let mut w = Vec::with_capacity(4 * 9);
    for class in 0..4 {
        for r in 0..3 {
            for c in 0..3 {
                let base = if on(class, r, c) { 1.0 } else { -0.5 };
                w.push((base + 0.05 * rng.normal()) as f32);
            }
        }
    }
    tensor(vec![4, 1, 3, 3], w)
}

/// Channel-preserving 3×3 smoothing with mild cross-channel inhibition.
fn mixing_conv(channels: usize, rng: &mut FixtureRng) -> Tensor {
    let mut w = Vec::with_capacity(channels * channels * 9);
    for o in 0..channels {
        for i in 0..channels {
            for tap in 0..9 {
                let base = match (o == i, tap == 4) {
                    (true, true) => 0.4,
                    (true, false) => 0.2,
                    (false, _) => -0.05,
                };
                w.push((base + 0.02 * rng.normal()) as f32);
            }
        }
    }
    tensor(vec![channels, channels, 3, 3], w)
}

fn conv_node(weight: Tensor, rng: &mut FixtureRng) -> Node {
    let o = weight.shape()[0];
    let bias = tensor(vec![o], (0..o).map(|_| (0.01 * rng.normal()) as f32).collect());
    Node::new(
        LayerKind::Conv { stride: 1, padding: 1 },
        vec![Param::new("weight", weight), Param::new("bias", bias)],
    )
}

fn bn_placeholder(channels: usize) -> Node {
    let fill = [1.0, 0.0, 0.0, 1.0];
    Node::new(
        LayerKind::BatchNorm { epsilon: BN_EPSILON },
        BN_PARAM_NAMES
            .iter()
            .zip(fill)
            .map(|(n, v)| Param::new(*n, tensor(vec![channels], vec![v; channels])))
            .collect(),
    )
}

fn dense_placeholder(features: usize, classes: usize) -> Node {
    Node::new(
        LayerKind::Dense,
        vec![
            Param::new("weight", tensor(vec![features, classes], vec![0.0; features * classes])),
            Param::new("bias", tensor(vec![classes], vec![0.0; classes])),
        ],
    )
}

/// Set batch-norm node `node` to the per-channel statistics of its input on
/// `train`, with scale `gamma`.
fn fit_batch_norm(model: &mut ModelGraph, node: usize, train: &Dataset, gamma: f32) {
    let x = model.forward_through(&train.images, node - 1).expect("fixture forward");
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let inner = x.len() / (n * c);
    let mut mean = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for (i, &v) in x.data().iter().enumerate() {
        let ch = (i / inner) % c;
        mean[ch] += f64::from(v);
        sq[ch] += f64::from(v) * f64::from(v);
    }
    let count = (n * inner) as f64;
    let mut values = vec![vec![gamma; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]];
    for ch in 0..c {
        let m = mean[ch] / count;
        values[2][ch] = m as f32;
        values[3][ch] = (sq[ch] / count - m * m).max(0.0) as f32;
    }
    let group = model
        .layer_groups()
        .into_iter()
        .find(|g| g.node == node)
        .expect("batch-norm node has a group");
    model
        .set_params(&group, values.into_iter().map(|v| tensor(vec![c], v)).collect())
        .expect("same shapes");
}

/// Fit the final dense node by full-batch gradient descent on softmax
/// cross-entropy, using the frozen features that feed it.
fn fit_dense_head(model: &mut ModelGraph, train: &Dataset, steps: usize, rate: f64) {
    let last = model.nodes().len() - 1;
    let features = model.forward_through(&train.images, last - 1).expect("fixture forward");
    let (n, f) = (features.shape()[0], features.shape()[1]);
    let k = model.class_count();
    let x: Vec<f64> = features.data().iter().map(|&v| f64::from(v)).collect();
    let mut w = vec![0.0f64; f * k];
    let mut b = vec![0.0f64; k];
    for _ in 0..steps {
        let mut gw = vec![0.0f64; f * k];
        let mut gb = vec![0.0f64; k];
        for (row, &label) in x.chunks_exact(f).zip(&train.labels) {
            let logits: Vec<f64> = (0..k)
                .map(|j| b[j] + row.iter().enumerate().map(|(i, xi)| xi * w[i * k + j]).sum::<f64>())
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..k {
                let err = exps[j] / total - if j == label as usize { 1.0 } else { 0.0 };
                gb[j] += err;
                for i in 0..f {
                    gw[i * k + j] += err * row[i];
                }
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= rate * g / n as f64;
        }
        for (bi, g) in b.iter_mut().zip(&gb) {
            *bi -= rate * g / n as f64;
        }
    }
    let group = model.group(model.group_count()).expect("dense head is the last group");
    model
        .set_params(
            &group,
            vec![
                tensor(vec![f, k], w.iter().map(|&v| v as f32).collect()),
                tensor(vec![k], b.iter().map(|&v| v as f32).collect()),
            ],
        )
        .expect("same shapes");
}

fn fit(mut model: ModelGraph, gammas: &[(usize, f32)]) -> ModelGraph {
    let train = shapes_train();
    for &(node, gamma) in gammas {
        fit_batch_norm(&mut model, node, &train, gamma);
    }
    fit_dense_head(&mut model, &train, 400, 0.5);
    model
}

/// conv → bn → relu → conv → bn → relu → gap → dense: five layer groups.
pub fn tiny_cnn() -> ModelGraph {
    let mut rng = FixtureRng::new(WEIGHT_SEED);
    let nodes = vec![
        conv_node(line_detectors(&mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::Relu, vec![]),
        conv_node(mixing_conv(4, &mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::Relu, vec![]),
        Node::new(LayerKind::GlobalAvgPool, vec![]),
        dense_placeholder(4, SHAPE_CLASSES),
    ];
    let model = ModelGraph::new("tiny_cnn", vec![1, IMAGE_SIDE, IMAGE_SIDE], SHAPE_CLASSES, nodes).expect("valid");
    fit(model, &[(1, 1.0), (4, 1.0)])
}

/// Like [`tiny_cnn`] with the second conv/bn pair wrapped in an identity
/// skip connection.
pub fn tiny_resnet() -> ModelGraph {
    let mut rng = FixtureRng::new(WEIGHT_SEED ^ 1);
    let nodes = vec![
        conv_node(line_detectors(&mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::Relu, vec![]),
        conv_node(mixing_conv(4, &mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::ResidualAdd { source: 2 }, vec![]),
        Node::new(LayerKind::Relu, vec![]),
        Node::new(LayerKind::GlobalAvgPool, vec![]),
        dense_placeholder(4, SHAPE_CLASSES),
    ];
    let model =
        ModelGraph::new("tiny_resnet", vec![1, IMAGE_SIDE, IMAGE_SIDE], SHAPE_CLASSES, nodes).expect("valid");
    fit(model, &[(1, 1.0), (4, 0.5)])
}

/// Three conv/bn/relu blocks and a max-pool: seven layer groups.
pub fn tiny_cnn_deep() -> ModelGraph {
    let mut rng = FixtureRng::new(WEIGHT_SEED ^ 2);
    let nodes = vec![
        conv_node(line_detectors(&mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::Relu, vec![]),
        conv_node(mixing_conv(4, &mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::Relu, vec![]),
        conv_node(mixing_conv(4, &mut rng), &mut rng),
        bn_placeholder(4),
        Node::new(LayerKind::Relu, vec![]),
        Node::new(LayerKind::MaxPool { kernel: 2, stride: 2 }, vec![]),
        Node::new(LayerKind::GlobalAvgPool, vec![]),
        dense_placeholder(4, SHAPE_CLASSES),
    ];
    let model =
        ModelGraph::new("tiny_cnn_deep", vec![1, IMAGE_SIDE, IMAGE_SIDE], SHAPE_CLASSES, nodes).expect("valid");
    fit(model, &[(1, 1.0), (4, 1.0), (7, 1.0)])
}

/// Every fixture model, in a fixed order.
pub fn all_models() -> Vec<ModelGraph> {
    vec![tiny_mlp(), tiny_cnn(), tiny_resnet(), tiny_cnn_deep()]
}

/// Write all fixtures into `dir` and return the paths written.
pub fn write_fixtures(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, FormatError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| FormatError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for model in all_models() {
        let path = dir.join(format!("{}.anb", model.name()));
        save_model(&model, &path)?;
        written.push(path);
    }
    for ds in [onehot_dataset(), shapes_test()] {
        let path = dir.join(format!("{}.and", ds.name));
        save_dataset(&ds, &path)?;
        written.push(path);
    }
    Ok(written)
}

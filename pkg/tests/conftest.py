"""Shared fixtures: a trained digit-classifier MLP, a LeNet-shaped conv net,
engineered edge-case models, and file-based workspaces for CLI tests.

The 8x8 scikit-learn digits set stands in for MNIST: same task, desk-scale
size, bundled with the test dependencies so the suite runs offline.
"""

import numpy as np
import pytest
from sklearn.datasets import load_digits

from axdse import (
    Conv2D,
    Dataset,
    Dense,
    Flatten,
    FloatDataset,
    FloatModel,
    MaxPool2D,
    NetworkModel,
    QuantParams,
    ReLU,
    quantize_dataset,
    quantize_model,
    save_float_dataset,
    save_float_model,
)

TRAIN_SIZE = 797
TEST_SIZE = 1000


@pytest.fixture(scope="session")
def digits():
    data = load_digits()
    images = (data.images / 16.0).astype(np.float32)
    labels = data.target.astype(np.int64)
    order = np.random.default_rng(2024).permutation(len(images))
    images, labels = images[order], labels[order]
    return {
        "train_images": images[:TRAIN_SIZE],
        "train_labels": labels[:TRAIN_SIZE],
        "test_images": images[TRAIN_SIZE : TRAIN_SIZE + TEST_SIZE],
        "test_labels": labels[TRAIN_SIZE : TRAIN_SIZE + TEST_SIZE],
    }


def _train_mlp(images, labels, seed=7, hidden=(32, 16), epochs=400, lr=0.5):
    """Full-batch softmax-regression training, plain numpy."""
    rng = np.random.default_rng(seed)
    x = images.reshape(len(images), -1).astype(np.float64)
    sizes = [x.shape[1], *hidden, 10]
    ws = [rng.normal(0.0, np.sqrt(2.0 / sizes[i]), size=(sizes[i + 1], sizes[i])) for i in range(3)]
    bs = [np.zeros(sizes[i + 1]) for i in range(3)]
    onehot = np.eye(10)[labels]
    n = len(x)
    for _ in range(epochs):
        h1 = np.maximum(x @ ws[0].T + bs[0], 0)
        h2 = np.maximum(h1 @ ws[1].T + bs[1], 0)
        z = h2 @ ws[2].T + bs[2]
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        gw3, gb3 = g.T @ h2, g.sum(0)
        gh2 = g @ ws[2]
        gh2[h2 <= 0] = 0
        gw2, gb2 = gh2.T @ h1, gh2.sum(0)
        gh1 = gh2 @ ws[1]
        gh1[h1 <= 0] = 0
        gw1, gb1 = gh1.T @ x, gh1.sum(0)
        for w, gw, b, gb in zip(ws, (gw1, gw2, gw3), bs, (gb1, gb2, gb3)):
            w -= lr * gw
            b -= lr * gb
    return [w.astype(np.float32) for w in ws], [b.astype(np.float32) for b in bs]


@pytest.fixture(scope="session")
def float_mlp(digits):
    ws, bs = _train_mlp(digits["train_images"], digits["train_labels"])
    return FloatModel(
        name="mlp-digits",
        input_shape=(64,),
        layers=(
            Dense(64, 32, ws[0], bs[0]),
            ReLU(),
            Dense(32, 16, ws[1], bs[1]),
            ReLU(),
            Dense(16, 10, ws[2], bs[2]),
        ),
        num_classes=10,
        meta={},
    )


@pytest.fixture(scope="session")
def mlp_model(float_mlp, digits):
    calib = digits["train_images"][:200].reshape(200, -1)
    return quantize_model(float_mlp, calib)


@pytest.fixture(scope="session")
def mlp_data(mlp_model, digits):
    """The full 1000-image quantized test set."""
    floats = FloatDataset(digits["test_images"].reshape(TEST_SIZE, -1), digits["test_labels"])
    return quantize_dataset(floats, mlp_model.input_qparams)


@pytest.fixture(scope="session")
def mlp_data_500(mlp_data):
    return mlp_data.subset(500)


@pytest.fixture(scope="session")
def lenet_float():
    """LeNet-shaped conv net (conv-pool-conv-pool + three dense) with seeded
    random weights; mechanics and equivalence tests do not need it trained."""
    rng = np.random.default_rng(11)

    def dense(i, o):
        return Dense(i, o, rng.normal(0, 1 / np.sqrt(i), size=(o, i)).astype(np.float32), rng.normal(0, 0.1, size=o).astype(np.float32))

    def conv(kh, kw, ci, co, padding):
        w = rng.normal(0, 1 / np.sqrt(kh * kw * ci), size=(co, kh, kw, ci)).astype(np.float32)
        return Conv2D(kh, kw, ci, co, 1, padding, w, rng.normal(0, 0.1, size=co).astype(np.float32))

    return FloatModel(
        name="lenet-shaped",
        input_shape=(8, 8, 1),
        layers=(
            conv(3, 3, 1, 4, "same"),
            ReLU(),
            MaxPool2D(2, 2, 2),
            conv(3, 3, 4, 8, "valid"),
            ReLU(),
            MaxPool2D(2, 2, 2),
            Flatten(),
            dense(8, 16),
            ReLU(),
            dense(16, 12),
            ReLU(),
            dense(12, 10),
        ),
        num_classes=10,
        meta={},
    )


@pytest.fixture(scope="session")
def lenet_model(lenet_float, digits):
    calib = digits["test_images"][:64].reshape(64, 8, 8, 1)
    return quantize_model(lenet_float, calib)


@pytest.fixture(scope="session")
def dead_model():
    """Zero weights, saturating biases: logits are always [127, -128] and no
    single-bit flip of either logit can move the argmax, so the measured
    fault vulnerability is exactly zero. 2 elements x 8 bits = 16 sites."""
    return NetworkModel(
        name="dead",
        input_shape=(4,),
        input_qparams=QuantParams(1.0, 0),
        layers=(
            Dense(
                4,
                2,
                np.zeros((2, 4), dtype=np.int8),
                np.array([1000, -1000], dtype=np.int32),
                weight_qparams=QuantParams(1.0, 0),
                out_qparams=QuantParams(1.0, 0),
            ),
        ),
        num_classes=2,
    )


@pytest.fixture(scope="session")
def dead_data(dead_model):
    rng = np.random.default_rng(3)
    images = rng.integers(-128, 128, size=(40, 4)).astype(np.int8)
    return Dataset(images, np.zeros(40, dtype=np.int64), dead_model.input_qparams)


@pytest.fixture(scope="session")
def table3_shape_model():
    """conv,pool,conv,pool,flatten,dense,dense,dense: the eight-layer stack
    whose masks read like the published layer-configuration strings."""
    rng = np.random.default_rng(5)

    def conv(ci, co):
        w = rng.normal(0, 0.5, size=(co, 3, 3, ci)).astype(np.float32)
        return Conv2D(3, 3, ci, co, 1, "same", w, np.zeros(co, dtype=np.float32))

    def dense(i, o):
        return Dense(i, o, rng.normal(0, 0.5, size=(o, i)).astype(np.float32), np.zeros(o, dtype=np.float32))

    fm = FloatModel(
        name="table3-shape",
        input_shape=(8, 8, 1),
        layers=(
            conv(1, 2),
            MaxPool2D(2, 2, 2),
            conv(2, 4),
            MaxPool2D(2, 2, 2),
            Flatten(),
            dense(16, 12),
            dense(12, 12),
            dense(12, 10),
        ),
        num_classes=10,
        meta={},
    )
    calib = rng.normal(0, 1, size=(16, 8, 8, 1)).astype(np.float32)
    return quantize_model(fm, calib)


@pytest.fixture(scope="session")
def tiny_float():
    rng = np.random.default_rng(42)
    return FloatModel(
        name="tiny",
        input_shape=(4,),
        layers=(
            Dense(4, 8, rng.normal(size=(8, 4)).astype(np.float32), rng.normal(size=8).astype(np.float32)),
            ReLU(),
            Dense(8, 3, rng.normal(size=(3, 8)).astype(np.float32), rng.normal(size=3).astype(np.float32)),
        ),
        num_classes=3,
        meta={},
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_float):
    rng = np.random.default_rng(43)
    return quantize_model(tiny_float, rng.normal(size=(64, 4)).astype(np.float32))


@pytest.fixture(scope="session")
def tiny_data(tiny_model):
    rng = np.random.default_rng(44)
    floats = FloatDataset(
        rng.normal(size=(64, 4)).astype(np.float32),
        rng.integers(0, 3, size=64).astype(np.int64),
    )
    return quantize_dataset(floats, tiny_model.input_qparams)


@pytest.fixture()
def float_files(tiny_float, tmp_path):
    """Float model + dataset manifests on disk for CLI flows."""
    rng = np.random.default_rng(45)
    save_float_model(tiny_float, tmp_path / "float_model.json")
    data = FloatDataset(
        rng.normal(size=(48, 4)).astype(np.float32),
        rng.integers(0, 3, size=48).astype(np.int64),
    )
    save_float_dataset(data, tmp_path / "float_data.json")
    test = FloatDataset(
        rng.normal(size=(32, 4)).astype(np.float32),
        rng.integers(0, 3, size=32).astype(np.int64),
    )
    save_float_dataset(test, tmp_path / "float_test.json")
    return tmp_path

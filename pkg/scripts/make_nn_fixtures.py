#!/usr/bin/env python3
"""Generate the committed CNN inference fixtures.

Produces a synthetic handwritten-style digit dataset (rendered glyphs with
random affine distortion, stroke-width variation and pixel noise, in the
IDX container format) and a small CNN trained on it with torch.  Outputs:

    src/amcsim/assets/digits_cnn.weights        trained network
    src/amcsim/assets/digits_test_images.idx.gz 1000 test images
    src/amcsim/assets/digits_test_labels.idx.gz matching labels

Run from the repository root:  python scripts/make_nn_fixtures.py

Regenerating with the same seed reproduces the dataset; training uses a
fixed torch seed, so the committed weights are reproducible up to BLAS
thread scheduling.
"""

import os
import sys

import numpy as np
import torch
import torch.nn as tnn
import torch.nn.functional as F
from PIL import Image, ImageDraw, ImageFilter, ImageFont

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from amcsim.mnist import save_idx_images, save_idx_labels  # noqa: E402
from amcsim.nn import Layer, save_weights  # noqa: E402

ASSETS = os.path.join(os.path.dirname(__file__), "..", "src", "amcsim", "assets")

N_TRAIN = 12000
N_TEST = 1000
SEED = 20240901


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    size = int(rng.integers(18, 25))
    font = ImageFont.load_default(size=size)
    canvas = Image.new("L", (48, 48), 0)
    draw = ImageDraw.Draw(canvas)
    draw.text((24, 24), str(digit), fill=255, font=font, anchor="mm")

    # stroke-width variation
    r = rng.random()
    if r < 0.2:
        canvas = canvas.filter(ImageFilter.MaxFilter(3))
    elif r < 0.28:
        canvas = canvas.filter(ImageFilter.MinFilter(3))

    angle = rng.uniform(-15, 15)
    shear = rng.uniform(-0.1, 0.1)
    canvas = canvas.rotate(angle, resample=Image.BILINEAR, center=(24, 24))
    canvas = canvas.transform(
        (48, 48), Image.AFFINE, (1, shear, -shear * 24, 0, 1, 0),
        resample=Image.BILINEAR)

    dx, dy = rng.integers(-3, 4, size=2)
    img = canvas.crop((10 + dx, 10 + dy, 38 + dx, 38 + dy))  # 28x28
    if rng.random() < 0.35:
        img = img.filter(ImageFilter.GaussianBlur(rng.uniform(0.2, 0.5)))

    arr = np.asarray(img, dtype=np.float64)
    peak = arr.max()
    if peak > 0:
        arr = arr * (rng.uniform(0.85, 1.0) * 255.0 / peak)
    arr += rng.normal(0.0, rng.uniform(2.0, 7.0), size=arr.shape)
    # speckle occlusions
    n_spots = rng.integers(0, 3)
    for _ in range(n_spots):
        x, y = rng.integers(0, 27, size=2)
        arr[y:y + 1, x:x + 1] = rng.uniform(0, 140)
    return np.clip(arr, 0, 255).astype(np.uint8)


def make_dataset(count: int, rng: np.random.Generator):
    images = np.empty((count, 28, 28), dtype=np.uint8)
    labels = (np.arange(count) % 10).astype(np.uint8)
    rng.shuffle(labels)
    for i in range(count):
        images[i] = render_digit(int(labels[i]), rng)
    return images, labels


class LeNet(tnn.Module):
    """LeNet-5 variant for 28x28 inputs, with optional weight-noise injection.

    Training with multiplicative weight noise (standard practice when
    deploying onto analog arrays) flattens the loss surface so the model
    tolerates quantization and programming error at inference time.
    """

    def __init__(self):
        super().__init__()
        self.conv1 = tnn.Conv2d(1, 6, 5, padding=2)
        self.conv2 = tnn.Conv2d(6, 16, 5)
        self.fc1 = tnn.Linear(400, 120)
        self.fc2 = tnn.Linear(120, 84)
        self.fc3 = tnn.Linear(84, 10)

    def _noisy(self, w, scale):
        if scale == 0.0:
            return w
        return w + (scale * w.detach().std()) * torch.randn_like(w)

    def forward(self, x, noise=0.0):
        x = F.max_pool2d(F.relu(F.conv2d(
            x, self._noisy(self.conv1.weight, noise), self.conv1.bias, padding=2)), 2)
        x = F.max_pool2d(F.relu(F.conv2d(
            x, self._noisy(self.conv2.weight, noise), self.conv2.bias)), 2)
        x = x.flatten(1)
        x = F.relu(F.linear(x, self._noisy(self.fc1.weight, noise), self.fc1.bias))
        x = F.relu(F.linear(x, self._noisy(self.fc2.weight, noise), self.fc2.bias))
        return F.linear(x, self._noisy(self.fc3.weight, noise), self.fc3.bias)


def train(images, labels, test_images, test_labels, epochs=30):
    torch.manual_seed(SEED)
    model = LeNet()
    # weight decay keeps the weight distributions tight, which the 4-bit
    # full-scale mapping rewards directly
    opt = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=2e-3)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=15, gamma=0.2)
    x = torch.from_numpy(images.astype(np.float32) / 255.0).unsqueeze(1)
    y = torch.from_numpy(labels.astype(np.int64))
    xt = torch.from_numpy(test_images.astype(np.float32) / 255.0).unsqueeze(1)
    yt = torch.from_numpy(test_labels.astype(np.int64))
    n = x.shape[0]
    for epoch in range(epochs):
        perm = torch.randperm(n)
        for start in range(0, n, 64):
            idx = perm[start:start + 64]
            opt.zero_grad()
            loss = F.cross_entropy(model(x[idx], noise=0.05), y[idx])
            loss.backward()
            opt.step()
        sched.step()
        with torch.no_grad():
            acc = (model(xt).argmax(1) == yt).float().mean().item()
        print(f"epoch {epoch}: test accuracy {acc:.4f}")
    return model


def export(model) -> list[Layer]:
    def npy(t):
        return t.detach().numpy().astype(np.float64)

    return [
        Layer("conv", npy(model.conv1.weight), npy(model.conv1.bias), padding=2),
        Layer("conv", npy(model.conv2.weight), npy(model.conv2.bias), padding=0),
        Layer("fc", npy(model.fc1.weight), npy(model.fc1.bias)),
        Layer("fc", npy(model.fc2.weight), npy(model.fc2.bias)),
        Layer("fc", npy(model.fc3.weight), npy(model.fc3.bias)),
    ]


def main():
    rng = np.random.default_rng(SEED)
    train_images, train_labels = make_dataset(N_TRAIN, rng)
    test_images, test_labels = make_dataset(N_TEST, rng)
    model = train(train_images, train_labels, test_images, test_labels)
    layers = export(model)

    os.makedirs(ASSETS, exist_ok=True)
    save_weights(os.path.join(ASSETS, "digits_cnn.weights"), layers)
    save_idx_images(os.path.join(ASSETS, "digits_test_images.idx.gz"), test_images)
    save_idx_labels(os.path.join(ASSETS, "digits_test_labels.idx.gz"), test_labels)
    print("fixtures written to", os.path.abspath(ASSETS))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Independent reference values for the image-quality metrics.

NIQE and PIQE come from pyiqa (0.1.16), with NIQE using the pristine model
shipped in data/. SSIM comes from scikit-image with a gaussian window.
Writes the derived test images and expected.tsv into tests/fixtures/oracle/.
Re-run only when the fixtures or the shipped NIQE model change.
"""
import pathlib

import numpy as np
import torch
from PIL import Image
from pyiqa.archs.niqe_arch import calculate_niqe
from pyiqa.archs.piqe_arch import piqe
from skimage.metrics import structural_similarity

ROOT = pathlib.Path(__file__).resolve().parents[2]
FIX = ROOT / "tests" / "fixtures"
OUT = FIX / "oracle"


def load_u8(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def to_tensor(u8):
    # Same float path as the C++ loader: float32, divided by 255.
    return torch.from_numpy(u8.copy()).permute(2, 0, 1).float().div(255.0).unsqueeze(0)


def load_model(path):
    mu, cov = None, []
    for line in path.read_text().splitlines():
        if line.startswith("mu = "):
            mu = [float(v) for v in line[5:].split()]
        elif line.startswith("cov = "):
            cov.append([float(v) for v in line[6:].split()])
    return torch.tensor(mu, dtype=torch.float64), torch.tensor(cov, dtype=torch.float64)


def luma(u8):
    x = u8.astype(np.float32) / np.float32(255.0)
    x = x.astype(np.float64)
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def ssim_ref(a_u8, b_float):
    ya = luma(a_u8)
    yb = 0.299 * b_float[..., 0] + 0.587 * b_float[..., 1] + 0.114 * b_float[..., 2]
    return structural_similarity(ya, yb, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    scenes = sorted((FIX / "images").glob("scene_*.png"))
    rng = np.random.default_rng(1234)
    derived = {}
    for p in scenes[:4]:
        derived[p.stem] = load_u8(p)
    noisy = load_u8(scenes[4]).astype(np.float64) + rng.normal(0, 12.0, load_u8(scenes[4]).shape)
    derived["noisy"] = np.clip(np.round(noisy), 0, 255).astype(np.uint8)
    derived["crop_150x180"] = load_u8(scenes[5])[10:160, 5:185]
    blur = load_u8(scenes[6]).astype(np.float64)
    k = np.ones(5) / 5.0
    blur = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 0, blur)
    blur = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 1, blur)
    derived["blurred"] = np.clip(np.round(blur), 0, 255).astype(np.uint8)
    big = np.repeat(np.repeat(load_u8(scenes[7]), 2, axis=0), 2, axis=1)
    derived["upscaled_300x260"] = big[:300, :260]

    mu, cov = load_model(ROOT / "data" / "niqe_pristine_v1.txt")
    rows = ["# kind\tname\tvalue"]
    for name, u8 in derived.items():
        Image.fromarray(u8).save(OUT / f"{name}.png")
        x = to_tensor(u8)
        n = calculate_niqe(x, 0, True, "yiq", mu, cov).item()
        q = piqe(x)[0].item()
        rows.append(f"niqe\t{name}\t{n!r}")
        rows.append(f"piqe\t{name}\t{q!r}")

    # SSIM of an image against its negative, and of a clean/noisy pair.
    a = derived[scenes[0].stem]
    neg = 1.0 - (a.astype(np.float32) / np.float32(255.0)).astype(np.float64)
    rows.append(f"ssim_negative\t{scenes[0].stem}\t{float(ssim_ref(a, neg))!r}")
    clean = load_u8(scenes[4])
    noisy_f = (derived["noisy"].astype(np.float32) / np.float32(255.0)).astype(np.float64)
    rows.append(f"ssim_pair\tnoisy\t{float(ssim_ref(clean, noisy_f))!r}")
    (OUT / "expected.tsv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))


if __name__ == "__main__":
    main()

"""Synthetic Gaussian class clusters with a displaced OOD set.

Spec files are TOML::

    dim = 2
    ood_displacement = 10.0      # multiples of each class's largest std-dev

    [[class]]
    name = "a"
    mean = [-3.0, 0.0]
    std = 1.0                    # isotropic, or give a full `cov` matrix
    n_train = 1000
    n_test = 1000
    n_ood = 200
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..errors import InvalidSpec, NotPositiveDefinite
from ..gmm import FeatureSet
from ..numkernel import RngStream, cholesky, sample_gaussian

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_DIRECTION_CANDIDATES = 32
_STREAM_TRAIN, _STREAM_TEST, _STREAM_OOD, _STREAM_DIRECTIONS = 0, 1, 2, 3


@dataclass(frozen=True)
class SynthClass:
    name: str
    mean: np.ndarray
    cov: np.ndarray
    n_train: int
    n_test: int
    n_ood: int = 0


@dataclass(frozen=True)
class SynthSpec:
    dim: int
    classes: tuple[SynthClass, ...]
    ood_displacement: float = 10.0


@dataclass(frozen=True)
class SynthData:
    train: FeatureSet
    test: FeatureSet
    ood: FeatureSet     # labels hold the class each OOD cluster was displaced from
    ood_centers: np.ndarray


def parse_synth_spec(text: str) -> SynthSpec:
    try:
        raw = tomllib.loads(text)
        dim = int(raw["dim"])
        classes = []
        for i, c in enumerate(raw["class"]):
            mean = np.asarray(c["mean"], dtype=np.float64)
            if "cov" in c:
                cov = np.asarray(c["cov"], dtype=np.float64)
            else:
                cov = float(c.get("std", 1.0)) ** 2 * np.eye(dim)
            classes.append(SynthClass(str(c.get("name", f"class{i}")), mean, cov, int(c["n_train"]),
                                      int(c["n_test"]), int(c.get("n_ood", 0))))
        spec = SynthSpec(dim, tuple(classes), float(raw.get("ood_displacement", 10.0)))
    except (KeyError, TypeError, ValueError, tomllib.TOMLDecodeError) as exc:
        raise InvalidSpec(f"cannot parse synthetic spec: {exc}") from None
    validate_spec(spec)
    return spec


def default_spec_text() -> str:
    return resources.files("gmu.data").joinpath("default_synth.toml").read_text()


def validate_spec(spec: SynthSpec) -> None:
    if spec.dim < 1 or not spec.classes:
        raise InvalidSpec("need dim >= 1 and at least one class")
    if spec.ood_displacement < 0:
        raise InvalidSpec("ood_displacement must be non-negative")
    for c in spec.classes:
        if c.mean.shape != (spec.dim,) or c.cov.shape != (spec.dim, spec.dim):
            raise InvalidSpec(f"class {c.name}: mean/cov shapes do not match dim={spec.dim}")
        if c.n_train < 2 or c.n_test < 0 or c.n_ood < 0:
            raise InvalidSpec(f"class {c.name}: need n_train >= 2 and non-negative test/ood counts")
        try:
            cholesky(c.cov)
        except Exception as exc:
            raise InvalidSpec(f"class {c.name}: covariance is not SPD ({exc})") from None


def _draw(spec: SynthSpec, centers, counts, rng: RngStream) -> FeatureSet:
    xs, ys = [], []
    for k, (c, mu, n) in enumerate(zip(spec.classes, centers, counts)):
        if n:
            xs.append(sample_gaussian(mu, cholesky(c.cov), rng, size=n))
            ys.append(np.full(n, k, dtype=np.int64))
    if not xs:
        return None
    return FeatureSet(np.concatenate(xs), np.concatenate(ys))


def ood_centers(spec: SynthSpec, rng: RngStream) -> np.ndarray:
    """Shift each mean by ``displacement * max std-dev``.

    The direction is the candidate (of a fixed number of random unit vectors)
    that lands farthest from every other class mean.
    """
    means = np.stack([c.mean for c in spec.classes])
    out = np.empty_like(means)
    for k, c in enumerate(spec.classes):
        dirs = rng.standard_normal((_DIRECTION_CANDIDATES, spec.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        step = spec.ood_displacement * np.sqrt(np.linalg.eigvalsh(c.cov)[-1])
        cand = c.mean + step * dirs
        others = np.delete(means, k, axis=0)
        if others.size:
            gap = np.linalg.norm(cand[:, None, :] - others[None, :, :], axis=2).min(axis=1)
            out[k] = cand[int(np.argmax(gap))]
        else:
            out[k] = cand[0]
    return out


def synth_generate(spec: SynthSpec, seed: int) -> SynthData:
    validate_spec(spec)
    means = [c.mean for c in spec.classes]
    train = _draw(spec, means, [c.n_train for c in spec.classes], RngStream(seed, _STREAM_TRAIN))
    test = _draw(spec, means, [c.n_test for c in spec.classes], RngStream(seed, _STREAM_TEST))
    centers = ood_centers(spec, RngStream(seed, _STREAM_DIRECTIONS))
    ood = _draw(spec, centers, [c.n_ood for c in spec.classes], RngStream(seed, _STREAM_OOD))
    return SynthData(train=train, test=test, ood=ood, ood_centers=centers)

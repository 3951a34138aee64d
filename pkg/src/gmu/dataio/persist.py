"""Model and ensemble files: a text header followed by tensor payloads.

::

    GMU-MODEL                 (or GMU-ENSEMBLE)
    format_version=1
    key=value ...
    end_header
    <TensorFile blobs in the order listed by ``payloads``>

Factors are recomputed from the stored covariances and absolute jitters on
load; the factorization is deterministic, so scores round-trip bitwise.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..ensemble import GmmEnsemble
from ..errors import BadMagic, CorruptPayload, GmuError, VersionMismatch
from ..gmm import ClassComponent, GmmModel
from ..numkernel import cholesky
from .tensorfile import decode_tensor, encode_tensor

FORMAT_VERSION = 1
MODEL_MAGIC = "GMU-MODEL"
ENSEMBLE_MAGIC = "GMU-ENSEMBLE"
END_HEADER = "end_header"


def _write(path, magic: str, header: dict, payloads: dict[str, np.ndarray]) -> None:
    lines = [magic, f"format_version={FORMAT_VERSION}"]
    lines += [f"{k}={v}" for k, v in header.items()]
    lines.append("payloads=" + ",".join(payloads))
    lines.append(END_HEADER)
    blob = ("\n".join(lines) + "\n").encode("utf-8")
    blob += b"".join(encode_tensor(a) for a in payloads.values())
    Path(path).write_bytes(blob)


def _read(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    first, _, _ = data.partition(b"\n")
    if first.decode("utf-8", "replace") != magic:
        raise BadMagic(f"{path}: expected a {magic} file")
    marker = ("\n" + END_HEADER + "\n").encode()
    cut = data.find(marker)
    if cut < 0:
        raise CorruptPayload(f"{path}: header terminator missing")
    header = {}
    for line in data[:cut].decode("utf-8").splitlines()[1:]:
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptPayload(f"{path}: malformed header line {line!r}")
        header[key] = value
    if header.get("format_version") != str(FORMAT_VERSION):
        raise VersionMismatch(f"{path}: format_version {header.get('format_version')} (expected {FORMAT_VERSION})")
    names = header.get("payloads", "").split(",")
    pos = cut + len(marker)
    payloads = {}
    try:
        for name in names:
            payloads[name], pos = decode_tensor(data, pos)
    except GmuError as exc:
        raise CorruptPayload(f"{path}: payload {name!r}: {exc}") from None
    if pos != len(data):
        raise CorruptPayload(f"{path}: {len(data) - pos} trailing bytes")
    return header, payloads


def _components(mu, sigma, log_pi, counts, jitter) -> tuple[ClassComponent, ...]:
    comps = []
    for c in range(mu.shape[0]):
        comps.append(ClassComponent(c, mu[c], sigma[c], cholesky(sigma[c], float(jitter[c])),
                                    float(log_pi[c]), int(counts[c]), float(jitter[c])))
    return tuple(comps)


def _names_header(names) -> str:
    return json.dumps(list(names) if names is not None else None)


def save_model(model: GmmModel, path) -> None:
    header = {"kind": "model", "d": model.d, "num_classes": model.num_classes,
              "jitter": repr(float(model.jitter)), "class_names": _names_header(model.class_names)}
    payloads = {
        "means": model.means,
        "covariances": model.covariances,
        "log_priors": model.log_pi,
        "counts": model.counts.astype(np.uint32),
        "jitter_abs": np.array([c.jitter for c in model.components]),
    }
    _write(path, MODEL_MAGIC, header, payloads)


def load_model(path) -> GmmModel:
    header, p = _read(path, MODEL_MAGIC)
    try:
        d, c = int(header["d"]), int(header["num_classes"])
        names = json.loads(header["class_names"])
        if p["means"].shape != (c, d) or p["covariances"].shape != (c, d, d):
            raise ValueError("parameter shapes disagree with header")
        comps = _components(p["means"], p["covariances"], p["log_priors"], p["counts"], p["jitter_abs"])
        return GmmModel(d=d, num_classes=c, components=comps, jitter=float(header["jitter"]),
                        class_names=None if names is None else tuple(names))
    except (KeyError, ValueError, IndexError) as exc:
        raise CorruptPayload(f"{path}: {exc}") from None


def save_ensemble(ensemble: GmmEnsemble, path) -> None:
    m0 = ensemble.models[0]
    header = {"kind": "ensemble", "d": m0.d, "num_classes": m0.num_classes, "t": ensemble.t,
              "seed": ensemble.seed, "jitter": repr(float(m0.jitter)),
              "class_names": _names_header(m0.class_names)}
    payloads = {
        "means": np.stack([m.means for m in ensemble.models]),
        "covariances": np.stack([m.covariances for m in ensemble.models]),
        "log_priors": m0.log_pi,
        "counts": m0.counts.astype(np.uint32),
        "jitter_abs": np.array([[c.jitter for c in m.components] for m in ensemble.models]),
    }
    _write(path, ENSEMBLE_MAGIC, header, payloads)


def load_ensemble(path) -> GmmEnsemble:
    header, p = _read(path, ENSEMBLE_MAGIC)
    try:
        d, c, t = int(header["d"]), int(header["num_classes"]), int(header["t"])
        names = json.loads(header["class_names"])
        names = None if names is None else tuple(names)
        if p["means"].shape != (t, c, d) or p["covariances"].shape != (t, c, d, d):
            raise ValueError("parameter shapes disagree with header")
        models = tuple(
            GmmModel(d=d, num_classes=c,
                     components=_components(p["means"][k], p["covariances"][k], p["log_priors"],
                                            p["counts"], p["jitter_abs"][k]),
                     jitter=float(header["jitter"]), class_names=names)
            for k in range(t)
        )
        return GmmEnsemble(models=models, seed=int(header["seed"]))
    except (KeyError, ValueError, IndexError) as exc:
        raise CorruptPayload(f"{path}: {exc}") from None

"""On-disk formats: datasets, model checkpoints, and CSV reports.

Binary files carry a one-line JSON manifest followed by raw little-endian
float64 blocks, so round trips are bit-exact. CSV files are the only
figure-facing output; nothing here draws.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .dictionaries import (RbfDictionary, TrainableDictionary,
                           observable_from_descriptor)
from .dynamics import TrajectoryDataset
from .networks import NetworkSpec
from .operators import AffineControl, Bilinear, ConstantK, NetworkK, PolyExpansion

DATASET_MAGIC = "paramkoop-dataset"
CHECKPOINT_MAGIC = "paramkoop-checkpoint"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0


class FormatError(ValueError):
    """File does not match the expected manifest or payload layout."""


def _write_manifest_and_blocks(path, manifest: dict, blocks):
    manifest = dict(manifest)
    manifest["block_lengths"] = [int(b.size) for b in blocks]
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def _read_manifest_and_blocks(path, magic):
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            manifest = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: not a {magic} file") from exc
        if manifest.get("format") != magic:
            raise FormatError(f"{path}: expected format {magic!r}, "
                              f"found {manifest.get('format')!r}")
        if manifest.get("version_major") != FORMAT_MAJOR:
            raise FormatError(
                f"{path}: unsupported major version {manifest.get('version_major')!r} "
                f"(this build reads major {FORMAT_MAJOR})")
        blocks = []
        for length in manifest["block_lengths"]:
            raw = fh.read(8 * length)
            if len(raw) != 8 * length:
                raise FormatError(f"{path}: truncated payload")
            blocks.append(np.frombuffer(raw, dtype="<f8").astype(np.float64))
    return manifest, blocks


# -- datasets -----------------------------------------------------------------


def save_dataset(path, dataset: TrajectoryDataset):
    manifest = {
        "format": DATASET_MAGIC,
        "version_major": FORMAT_MAJOR,
        "version_minor": FORMAT_MINOR,
        "n_trajectories": dataset.n_trajectories,
        "n_steps": dataset.n_steps,
        "state_dim": dataset.state_dim,
        "param_dim": dataset.param_dim,
        "dt": dataset.dt,
        "system": dataset.system,
        "seed": dataset.seed,
        "trajectories_per_config": dataset.trajectories_per_config,
    }
    _write_manifest_and_blocks(path, manifest,
                               [dataset.states.reshape(-1), dataset.params.reshape(-1)])


def load_dataset(path) -> TrajectoryDataset:
    manifest, blocks = _read_manifest_and_blocks(path, DATASET_MAGIC)
    m = manifest["n_trajectories"]
    n = manifest["n_steps"]
    d = manifest["state_dim"]
    p = manifest["param_dim"]
    states = blocks[0].reshape(m, n + 1, d)
    params = blocks[1].reshape(m, n, p)
    return TrajectoryDataset(states=states, params=params, dt=manifest["dt"],
                             system=manifest["system"], seed=manifest["seed"],
                             trajectories_per_config=manifest["trajectories_per_config"])


# -- checkpoints --------------------------------------------------------------


def _dictionary_blocks(dictionary):
    if isinstance(dictionary, TrainableDictionary):
        return [dictionary.params, dictionary.shift, dictionary.scale]
    if isinstance(dictionary, RbfDictionary):
        return [dictionary.centers.reshape(-1), np.array([dictionary.gamma])]
    raise FormatError(f"cannot serialize dictionary {type(dictionary).__name__}")


def _rebuild_dictionary(desc, blocks):
    obs = observable_from_descriptor(desc["observable"])
    if desc["type"] == "trainable":
        net = desc["net"]
        spec = NetworkSpec(net["input_dim"], tuple(net["hidden_widths"]),
                           net["output_dim"], residual=net["residual"])
        return TrainableDictionary(obs, spec, params=blocks[0],
                                   shift=blocks[1], scale=blocks[2])
    if desc["type"] == "rbf":
        centers = blocks[0].reshape(desc["n_centers"], obs.state_dim)
        return RbfDictionary(obs, centers, float(blocks[1][0]))
    raise FormatError(f"unknown dictionary type {desc['type']!r}")


def _rebuild_model(desc, payload):
    variant = desc["variant"]
    p, n_u = desc["n_psi"], desc["n_u"]
    if variant == "constant":
        return ConstantK(payload.reshape(p, p), n_u=n_u)
    if variant == "affine":
        a = payload[:p * p].reshape(p, p)
        b = payload[p * p:].reshape(p, n_u)
        return AffineControl(a, b)
    if variant == "bilinear":
        a = payload[:p * p].reshape(p, p)
        bs = payload[p * p:].reshape(n_u, p, p)
        return Bilinear(a, list(bs))
    if variant == "poly":
        model = PolyExpansion.zeros(p, n_u, desc["max_degree"])
        return model.with_theta(payload)
    if variant == "network":
        return NetworkK.build(p, n_u, desc["hidden_widths"],
                              fixed_first_row=desc["fixed_first_row"]).with_theta(payload)
    raise FormatError(f"unknown model variant {variant!r}")


def save_checkpoint(path, dictionary, model, dt, system_desc, provenance=""):
    dict_blocks = _dictionary_blocks(dictionary)
    manifest = {
        "format": CHECKPOINT_MAGIC,
        "version_major": FORMAT_MAJOR,
        "version_minor": FORMAT_MINOR,
        "system": system_desc,
        "dictionary": dictionary.descriptor(),
        "model": model.descriptor(),
        "n_psi": dictionary.n_psi,
        "n_y": dictionary.n_y,
        "dt": dt,
        "n_dictionary_blocks": len(dict_blocks),
        "provenance": provenance,
    }
    _write_manifest_and_blocks(path, manifest, dict_blocks + [model.payload()])


def load_checkpoint(path):
    """Returns (dictionary, model, manifest)."""
    manifest, blocks = _read_manifest_and_blocks(path, CHECKPOINT_MAGIC)
    n_dict = manifest["n_dictionary_blocks"]
    dictionary = _rebuild_dictionary(manifest["dictionary"], blocks[:n_dict])
    model = _rebuild_model(manifest["model"], blocks[n_dict])
    return dictionary, model, manifest


def provenance_hash(*texts) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8") if isinstance(t, str) else t)
    return h.hexdigest()[:16]


# -- CSV emitters ----------------------------------------------------------------


def write_loss_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for e, (tr, va, sec) in enumerate(zip(report.train_losses, report.val_losses,
                                              report.epoch_seconds)):
            w.writerow([e, repr(tr), repr(va), f"{sec:.6f}"])


def write_error_csv(path, suite_results, dt):
    """Per-step relative-error rows: (model, trajectory, n, t, E)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "trajectory", "n", "t", "error"])
        for name, row in suite_results.items():
            curves = row.per_trajectory
            for m in range(curves.shape[0]):
                for n in range(curves.shape[1]):
                    w.writerow([name, m, n + 1, repr((n + 1) * dt), repr(curves[m, n])])


def write_control_csv(path, result):
    n_u = result.controls.shape[1]
    n_targets = result.tracked.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = (["n", "t"] + [f"u_{i+1}" for i in range(n_u)]
                  + [f"tracked_{j+1}" for j in range(n_targets)]
                  + [f"reference_{j+1}" for j in range(n_targets)]
                  + ["optimizer_seconds", "iterations"])
        w.writerow(header)
        for n in range(result.controls.shape[0]):
            row = [n, repr(n * result.dt)]
            row += [repr(v) for v in result.controls[n]]
            row += [repr(v) for v in result.tracked[n + 1]]
            row += [repr(v) for v in result.reference[min(n + 1, len(result.reference) - 1)]]
            row += [f"{result.step_seconds[n]:.6f}", result.step_iterations[n]]
            w.writerow(row)


def write_singular_values_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "sigma"])
        for i, s in enumerate(report.singular_values):
            w.writerow([i, repr(s)])


def export_dataset_csv(path, dataset: TrajectoryDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = (["trajectory", "n", "t"]
                  + [f"x_{i+1}" for i in range(dataset.state_dim)]
                  + [f"u_{i+1}" for i in range(dataset.param_dim)])
        w.writerow(header)
        for m in range(dataset.n_trajectories):
            for n in range(dataset.n_steps + 1):
                row = [m, n, repr(n * dataset.dt)]
                row += [repr(v) for v in dataset.states[m, n]]
                if n < dataset.n_steps:
                    row += [repr(v) for v in dataset.params[m, n]]
                else:
                    row += [""] * dataset.param_dim
                w.writerow(row)

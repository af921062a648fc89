"""Session fixtures: the toy dataset and the two-step toy training run.

The toy run backs the quantitative acceptance checks (train-set overfit,
recurrent parity, clean-image safety) and is shared across tests because
it takes the best part of an hour on one CPU core.
"""

import copy

import numpy as np
import pytest
import torch

from mbrestore.evaluate import psnr
from mbrestore.factors import Factor
from mbrestore.network import MultiBranchNet, mbn_restore, rmbn_restore
from mbrestore.training import (CycleSpec, FinetuneSpec, OptimSpec,
                                datasets_from_manifests, finetune_recurrent,
                                train_joint)

from helpers import build_toy_dataset, tiny_model_config, toy_clean_image

TOY_JOINT_ITERS = 2000
TOY_FINETUNE_ITERS = 500


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_data")
    manifests = build_toy_dataset(root, n_images=8, size=64, seed=1234)
    return {"root": root, "manifests": manifests,
            "datasets": datasets_from_manifests(manifests)}


@pytest.fixture(scope="session")
def toy_cycle_spec():
    return CycleSpec(batch_size=4, crop_rain=64, crop_other=64)


@pytest.fixture(scope="session")
def toy_joint(toy_data, toy_cycle_spec):
    """Joint-trained toy model (step 1) plus its loss records."""
    torch.manual_seed(0)
    model = MultiBranchNet(tiny_model_config())
    result = train_joint(model, toy_data["datasets"], OptimSpec(lr=1e-3,
                         plateau_window=400), toy_cycle_spec,
                         iters=TOY_JOINT_ITERS, seed=0, augment=False)
    model.eval()
    return {"model": model, "records": result.records}


@pytest.fixture(scope="session")
def toy_finetuned(toy_joint, toy_data, toy_cycle_spec):
    """Recurrent fine-tuned toy model (step 2) plus its loss records."""
    model = copy.deepcopy(toy_joint["model"])
    model.train()
    result = finetune_recurrent(model, toy_data["datasets"],
                                FinetuneSpec(lr=2e-4, batch_size=2),
                                iters=TOY_FINETUNE_ITERS,
                                cycle_spec=toy_cycle_spec, seed=99)
    model.eval()
    return {"model": model, "records": result.records}


def train_set_psnr(model, datasets, factor=None, recurrent=False):
    """Mean train-set PSNR per factor, via direct restoration."""
    out = {}
    with torch.no_grad():
        for f, dataset in datasets.items():
            if factor is not None and f is not factor:
                continue
            vals = []
            for i in range(len(dataset)):
                degraded, clean = dataset.pair(i)
                d = torch.from_numpy(degraded.transpose(2, 0, 1)).float()[None]
                c = torch.from_numpy(clean.transpose(2, 0, 1)).float()[None]
                restored = (rmbn_restore(model, d).final if recurrent
                            else mbn_restore(model, d, f))
                vals.append(psnr(restored, c))
            out[f] = float(np.mean(vals))
    return out


@pytest.fixture(scope="session")
def held_out_clean_crops():
    rng = np.random.default_rng(777)
    return [torch.from_numpy(toy_clean_image(rng).transpose(2, 0, 1)).float()[None]
            for _ in range(20)]

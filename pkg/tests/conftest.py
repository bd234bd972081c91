import sys

import numpy as np
import pytest
import torch

from flowscan import (FlowPosterior, ModelConfig, PolarGridSpec, TrainConfig,
                      density_weights, pretrain_generative,
                      synth_phantom_dataset)

# a 16-line grid that satisfies the sector geometry exactly:
# half-width (28 - 1) / 2 = 13.5 = 27 * sin(pi / 6)
TINY_SPEC = PolarGridSpec(n_r=16, n_gamma=16, r_max=27.0, cart_h=28,
                          cart_w=28)

TINY_MODEL = ModelConfig(n_r=16, n_gamma=16, latent_dim=8, n_flows=2,
                         n_ortho=2, enc_blocks=2, dec_blocks=2,
                         enc_channels=8, dec_channels=8, head_hidden=32)


@pytest.fixture(scope="session")
def tiny_spec():
    return TINY_SPEC


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return TINY_MODEL


@pytest.fixture()
def tiny_model(tiny_model_cfg):
    torch.manual_seed(7)
    return FlowPosterior(tiny_model_cfg)


@pytest.fixture(scope="session")
def tiny_train_ds(tiny_spec):
    return synth_phantom_dataset(tiny_spec, "train", 0, 3, 4)


@pytest.fixture(scope="session")
def tiny_test_ds(tiny_spec):
    return synth_phantom_dataset(tiny_spec, "test", 0, 2, 3)


@pytest.fixture(scope="session")
def trained_tiny(tiny_spec, tiny_model_cfg, tiny_train_ds):
    """A briefly pretrained tiny model, shared read-only across tests.

    Tests that adapt or otherwise mutate weights must deepcopy it.
    """
    torch.manual_seed(11)
    model = FlowPosterior(tiny_model_cfg)
    cfg = TrainConfig(steps=60, batch_size=4, lr=1e-3, log_every=20,
                      loss_weights=density_weights(tiny_spec))
    pretrain_generative(tiny_train_ds, model, cfg, np.random.default_rng(13))
    model.eval()
    return model


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criteria verdicts after the usual test summary."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "_RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)

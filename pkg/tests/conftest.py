import pytest
import torch

from ncadiff import CellRule, DiffNCA, SeedStream


def randomize_rule_(rule: CellRule, seed: int, scale: float = 0.3) -> None:
    """Give every parameter (including the zero-initialized output layer)
    a nonzero random value, so gradient/oracle tests exercise the full rule."""
    stream = SeedStream(seed)
    with torch.no_grad():
        for name, p in sorted(rule.named_parameters()):
            g = stream.child(name).generator()
            p.uniform_(-scale, scale, generator=g)


@pytest.fixture
def tiny_rule():
    rule = CellRule(8, 16, e_dim=4, enc_dim=4, embed_hidden=16)
    randomize_rule_(rule, seed=7)
    return rule


@pytest.fixture
def tiny_model():
    model = DiffNCA(channels=8, hidden=16, steps=2, e_dim=4, enc_dim=4,
                    embed_hidden=16, fire_rate=1.0, seed=7)
    randomize_rule_(model.rule, seed=7)
    return model

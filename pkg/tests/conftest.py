import numpy as np
import pytest

from linkguard.catalog import EOS_TEXT, SEPARATOR_TEXT, SchemaCatalog, Token
from linkguard.traces import StepOutput


@pytest.fixture
def race_catalog() -> SchemaCatalog:
    """Small fixed catalog: races / lapTimes / drivers with two-piece names."""
    pieces = ["ra", "ces", "lapT", "imes", "dri", "vers"]
    vocabulary = [Token(i, p) for i, p in enumerate(pieces)]
    vocabulary.append(Token(len(vocabulary), SEPARATOR_TEXT, is_separator=True))
    vocabulary.append(Token(len(vocabulary), EOS_TEXT, is_eos=True))
    return SchemaCatalog(
        [("races", ["ra"]), ("lapTimes", ["imes"]), ("drivers", ["vers"])],
        vocabulary,
    )


class ScriptedModel:
    """Emits a fixed token script regardless of the prefix content.

    The script is consumed positionally: the emission at position i is
    script[i]; forcing changes the prefix but not the upcoming script.
    Hidden states are deterministic from the position.
    """

    def __init__(self, script, n_layers=2, dim=3, eos_id=None):
        self.script = list(script)
        self.n_layers = n_layers
        self.dim = dim
        self.eos_id = eos_id

    def step(self, prefix) -> StepOutput:
        i = len(prefix)
        if i < len(self.script):
            token = self.script[i]
        elif self.eos_id is not None:
            token = self.eos_id
        else:
            raise AssertionError(f"scripted model exhausted at position {i}")
        rng = np.random.default_rng((1234, i))
        return StepOutput(token, rng.standard_normal((self.n_layers, self.dim)).astype(np.float32), 0.99)


@pytest.fixture
def scripted_model_factory():
    return ScriptedModel

"""The opaque model interface every audit talks to."""

from __future__ import annotations

import abc
from typing import Any, Sequence

from ..errors import NonConformantOutput
from .schema import InputSchema, ModelInput, OutputSpace


class BlackBoxModel(abc.ABC):
    """A decision function reachable only through queries.

    Subclasses implement :meth:`_predict`. Callers go through :meth:`query`
    or :meth:`query_batch`, which check inputs against the schema and outputs
    against the declared output space.
    """

    schema: InputSchema
    output_space: OutputSpace
    stochastic: bool = False
    cost_per_query: float = 1.0
    #: whether a (input, seed) pair replays to the same output
    replayable: bool = True

    @abc.abstractmethod
    def _predict(self, inputs: Sequence[ModelInput], seeds: Sequence[int]) -> list[Any]:
        ...

    @abc.abstractmethod
    def descriptor(self) -> dict:
        """Identity of the audited object, recorded in evidence provenance."""

    def query(self, x: ModelInput, seed: int = 0) -> Any:
        return self.query_batch([x], [seed])[0]

    def query_batch(self, inputs: Sequence[ModelInput], seeds: Sequence[int]) -> list[Any]:
        if len(inputs) != len(seeds):
            raise ValueError("one seed per input is required")
        for x in inputs:
            self.schema.validate(x)
        outputs = self._predict(inputs, seeds)
        bad = {i: y for i, y in enumerate(outputs) if not self.output_space.contains(y)}
        if bad:
            i, y = next(iter(bad.items()))
            raise NonConformantOutput(
                f"{len(bad)} output(s) outside the declared output space, first {y!r} at position {i}",
                bad,
                list(outputs),
            )
        return outputs


def query(model: BlackBoxModel, x: ModelInput, seed: int = 0) -> Any:
    """Query ``model`` once. For stochastic models the draw is keyed by ``seed``."""
    return model.query(x, seed)

"""Opaque model interface, synthetic zoo and remote client."""

from .model import BlackBoxModel, query
from .remote import EndpointDescriptor, RemoteModel, remote_model
from .schema import (
    BINARY,
    CategoricalFeature,
    FiniteOutputs,
    InputSchema,
    ModelInput,
    NumericFeature,
    OutputSpace,
    ScoreGrid,
    output_space_from_dict,
    schema_from_dict,
)
from .synthetic import (
    GroupThreshold,
    LossPlant,
    ScoreFunction,
    SyntheticModelSpec,
    group_threshold_with_features,
    make_synthetic,
)

__all__ = [
    "BINARY",
    "BlackBoxModel",
    "CategoricalFeature",
    "EndpointDescriptor",
    "FiniteOutputs",
    "GroupThreshold",
    "InputSchema",
    "LossPlant",
    "ModelInput",
    "NumericFeature",
    "OutputSpace",
    "RemoteModel",
    "ScoreFunction",
    "ScoreGrid",
    "SyntheticModelSpec",
    "group_threshold_with_features",
    "make_synthetic",
    "output_space_from_dict",
    "query",
    "remote_model",
    "schema_from_dict",
]

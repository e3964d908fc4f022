"""Certified worst-case output error between two ReLU networks."""
from .network import (Activation, CompactForm, ModelError, NeuralNetwork, build_compact_form, evaluate,
                      forward, load_model, random_network, save_model)
from .qc import ActivationQCConfig, Coupling, Gammas, InputSpec, MultiplierSet, QCError
from .sdp import (BoundCertificate, CertificateReport, ObjectiveWeights, SolverOptions, assemble_lmi,
                  check_certificate, solve)
from .transforms import (FixedPointFormat, PruneSpec, SaturationError, decode_fixed_point, encode_fixed_point,
                         prune_network, quantize, quantize_network)
from .verify import SoundnessViolation, brute_force_worst_error, hill_climb_worst_error, tightness

__version__ = "0.1.0"

__all__ = [
    "Activation", "ActivationQCConfig", "BoundCertificate", "CertificateReport", "CompactForm", "Coupling",
    "FixedPointFormat", "Gammas", "InputSpec", "ModelError", "MultiplierSet", "NeuralNetwork", "ObjectiveWeights",
    "PruneSpec", "QCError", "SaturationError", "SolverOptions", "SoundnessViolation", "assemble_lmi",
    "brute_force_worst_error", "build_compact_form", "check_certificate", "decode_fixed_point",
    "encode_fixed_point", "evaluate", "forward", "hill_climb_worst_error", "load_model", "prune_network",
    "quantize", "quantize_network", "random_network", "save_model", "solve", "tightness",
]

"""vibroaudit: bias audits for acoustic knee-biomarker studies.

The package has three layers:

* synthesis (:mod:`vibroaudit.sigsynth`): causal multi-source acoustic
  worlds with known ground truth, used to manufacture datasets whose
  label-correlated artifacts are planted on purpose;
* pipeline (:mod:`vibroaudit.dsp`, :mod:`vibroaudit.dataset`,
  :mod:`vibroaudit.learn`): the conventional biomarker pipeline under
  audit (filtering, spectral features, MFCCs, leave-one-subject-out
  classification);
* audit (:mod:`vibroaudit.audit`, :mod:`vibroaudit.report`,
  :mod:`vibroaudit.cli`): the battery that hunts for shortcut signals
  in that pipeline and emits machine-readable reports.
"""

from .errors import (
    CapacityError,
    DegeneracyError,
    FormatError,
    ManifestError,
    ParameterError,
    UsageError,
    VibroauditError,
)

__version__ = "0.1.0"

__all__ = [
    "VibroauditError",
    "ParameterError",
    "FormatError",
    "ManifestError",
    "CapacityError",
    "UsageError",
    "DegeneracyError",
    "__version__",
]

"""Food-image dataset curation toolkit with a supervised-contrastive recognition core.

Subsystems: manifest (JSON-Lines provenance + accounting), imaging
(deterministic pixel primitives), dedup (three-hash near-duplicate removal),
foodness (pluggable food/non-food filter), diversity (per-category metrics),
sclcore (two-stage contrastive training), pipeline/calibration/server (stage
orchestration and the human-review HTTP API).
"""

__version__ = "0.1.0"

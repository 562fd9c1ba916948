"""Cross-domain rating prediction with AutoRec embeddings and domain adaptation."""

from .adaptation import DARecNet, LossWeights, darec_loss, grl, grl_backward, predict
from .autorec import AutoRec, autorec_loss, extract_embeddings, train_autorec
from .config import SynthConfig, TrainConfig
from .harness import Report, rmse, run_experiment, synth_generate
from .ratings import AlignedDataset, RatingMatrix, align_domains, ingest_csv, split

__version__ = "0.1.0"

__all__ = [
    "AlignedDataset", "AutoRec", "DARecNet", "LossWeights", "RatingMatrix", "Report",
    "SynthConfig", "TrainConfig", "align_domains", "autorec_loss", "darec_loss",
    "extract_embeddings", "grl", "grl_backward", "ingest_csv", "predict", "rmse",
    "run_experiment", "split", "synth_generate", "train_autorec",
]

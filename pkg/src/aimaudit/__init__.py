"""Crash-narrative mismatch auditing pipeline."""

__version__ = "0.1.0"

from .audit import AimReport, MismatchCategory, MismatchLabel, aggregate, categorize, county_rates
from .classifier import (
    EvalReport,
    NarrativeClassifier,
    PredictionSet,
    evaluate,
    load_external_predictions,
    predict_set,
    stratified_split,
)
from .design import BalancedSample, DesignMatrix, balance, encode
from .glmm import RandomInterceptProbit, multi_start_select, report_anomalies
from .ingest import IngestError, IngestReport, ingest, load_dataset, save_dataset
from .normalize import TokenizedDoc, load_stopwords, normalize, stem
from .records import CrashRecord, Dataset, RecordError
from .redact import RedactedNarrative, Redactor, redact
from .sampling import stratified_sample
from .spatial import Cluster, LocalMoran, SpatialWeights, build_weights
from .synth import SynthSpec, synthesize
from .vectorizer import TfidfVectorizer

__all__ = [
    "AimReport",
    "BalancedSample",
    "Cluster",
    "CrashRecord",
    "Dataset",
    "DesignMatrix",
    "EvalReport",
    "IngestError",
    "IngestReport",
    "LocalMoran",
    "MismatchCategory",
    "MismatchLabel",
    "NarrativeClassifier",
    "PredictionSet",
    "RandomInterceptProbit",
    "RecordError",
    "RedactedNarrative",
    "Redactor",
    "SpatialWeights",
    "SynthSpec",
    "TfidfVectorizer",
    "TokenizedDoc",
    "aggregate",
    "balance",
    "build_weights",
    "categorize",
    "county_rates",
    "encode",
    "evaluate",
    "ingest",
    "load_dataset",
    "load_external_predictions",
    "load_stopwords",
    "multi_start_select",
    "normalize",
    "predict_set",
    "redact",
    "report_anomalies",
    "save_dataset",
    "stem",
    "stratified_sample",
    "stratified_split",
    "synthesize",
]
